#include "lacer/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>

#include <fmt/format.h>

#include "lacer/encoder.hpp"

namespace lacer {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(EvalBackend b) { return b == EvalBackend::surrogate ? "surrogate" : "microflow"; }

EvalBackend eval_backend_from_string(std::string_view s) {
  if (s == "surrogate") return EvalBackend::surrogate;
  if (s == "microflow") return EvalBackend::microflow;
  throw ConfigError(fmt::format("unknown evaluation backend '{}' (expected surrogate or microflow)", s));
}

void RunConfig::check() const {
  searcher.check();
  if (budget == 0) throw ConfigError("budget must be positive");
  if (budget % searcher.batch_size != 0) throw ConfigError("budget not divisible by batch");
  if (!(surrogate_noise >= 0.0)) throw ConfigError("surrogate noise must be nonnegative");
  if (train.episode_length == 0) throw ConfigError("episode length must be positive");
}

// ---------------------------------------------------------------------------
// Config JSON

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", where));
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(fmt::format("unknown field '{}' in {}", key, where));
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("field '{}': {}", key, e.what()));
  }
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["space_id"] = c.space_id;
  const auto& s = c.searcher;
  ordered_json sj;
  sj["kind"] = to_string(s.kind);
  sj["batch_size"] = s.batch_size;
  sj["population"] = s.population;
  sj["tournament"] = s.tournament;
  sj["mutation_rate"] = s.mutation_rate;
  sj["crossover_rate"] = s.crossover_rate;
  sj["budget_schedule"] = s.budget_schedule;
  sj["patience"] = s.patience;
  sj["agent"] = {{"backend", to_string(s.agent.backend)},
                 {"model_id", s.agent.model_id},
                 {"temperature", s.agent.temperature},
                 {"max_parse_retries", s.agent.max_parse_retries},
                 {"endpoint", s.agent.endpoint},
                 {"transcript_path", s.agent.transcript_path}};
  j["searcher"] = sj;
  j["backend"] = to_string(c.backend);
  j["budget"] = c.budget;
  j["seed"] = c.seed;
  j["ablations"] = {{"fi", !c.feedback.feature_info},
                    {"ri", !c.feedback.average_reward},
                    {"ie", !c.feedback.initial_evaluation}};
  j["train"] = {{"train_steps", c.train.train_steps},
                {"eval_steps", c.train.eval_steps},
                {"episode_length", c.train.episode_length}};
  j["trainer"] = {{"learning_rate", c.trainer.learning_rate},
                  {"discount", c.trainer.discount},
                  {"ppo", c.trainer.ppo}};
  j["surrogate"] = {{"noise", c.surrogate_noise}, {"seed", c.surrogate_seed}};
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  j["trace_dir"] = c.trace_dir;
  j["prompt_template"] = kPromptTemplateVersion;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  reject_unknown(j,
                 {"space_id", "searcher", "backend", "budget", "seed", "ablations", "train", "trainer", "surrogate",
                  "out_dir", "workers", "trace_dir", "prompt_template"},
                 "run config");
  read(j, "space_id", c.space_id);
  if (j.contains("searcher")) {
    const auto& sj = j["searcher"];
    reject_unknown(sj,
                   {"kind", "batch_size", "population", "tournament", "mutation_rate", "crossover_rate",
                    "budget_schedule", "patience", "agent"},
                   "searcher");
    auto& s = c.searcher;
    if (sj.contains("kind")) s.kind = searcher_from_string(sj["kind"].get<std::string>());
    read(sj, "batch_size", s.batch_size);
    read(sj, "population", s.population);
    read(sj, "tournament", s.tournament);
    read(sj, "mutation_rate", s.mutation_rate);
    read(sj, "crossover_rate", s.crossover_rate);
    read(sj, "budget_schedule", s.budget_schedule);
    read(sj, "patience", s.patience);
    if (sj.contains("agent")) {
      const auto& aj = sj["agent"];
      reject_unknown(aj, {"backend", "model_id", "temperature", "max_parse_retries", "endpoint", "transcript_path"},
                     "agent");
      if (aj.contains("backend")) s.agent.backend = backend_from_string(aj["backend"].get<std::string>());
      read(aj, "model_id", s.agent.model_id);
      read(aj, "temperature", s.agent.temperature);
      read(aj, "max_parse_retries", s.agent.max_parse_retries);
      read(aj, "endpoint", s.agent.endpoint);
      read(aj, "transcript_path", s.agent.transcript_path);
    }
  }
  if (j.contains("backend")) c.backend = eval_backend_from_string(j["backend"].get<std::string>());
  read(j, "budget", c.budget);
  read(j, "seed", c.seed);
  if (j.contains("ablations")) {
    const auto& aj = j["ablations"];
    reject_unknown(aj, {"fi", "ri", "ie"}, "ablations");
    const auto ablation = [&](const char* key, bool& enabled) {
      bool off = !enabled;
      read(aj, key, off);
      enabled = !off;
    };
    ablation("fi", c.feedback.feature_info);
    ablation("ri", c.feedback.average_reward);
    ablation("ie", c.feedback.initial_evaluation);
  }
  if (j.contains("train")) {
    const auto& tj = j["train"];
    reject_unknown(tj, {"train_steps", "eval_steps", "episode_length"}, "train");
    read(tj, "train_steps", c.train.train_steps);
    read(tj, "eval_steps", c.train.eval_steps);
    read(tj, "episode_length", c.train.episode_length);
  }
  if (j.contains("trainer")) {
    const auto& tj = j["trainer"];
    reject_unknown(tj, {"learning_rate", "discount", "ppo"}, "trainer");
    read(tj, "learning_rate", c.trainer.learning_rate);
    read(tj, "discount", c.trainer.discount);
    read(tj, "ppo", c.trainer.ppo);
  }
  if (j.contains("surrogate")) {
    const auto& sj = j["surrogate"];
    reject_unknown(sj, {"noise", "seed"}, "surrogate");
    read(sj, "noise", c.surrogate_noise);
    read(sj, "seed", c.surrogate_seed);
  }
  read(j, "out_dir", c.out_dir);
  read(j, "workers", c.workers);
  read(j, "trace_dir", c.trace_dir);
  return c;
}

// ---------------------------------------------------------------------------
// Records

ordered_json to_json(const CandidateRecord& r, const CompositeSpace& space) {
  ordered_json j;
  j["run_id"] = r.run_id;
  j["iteration"] = r.iteration;
  j["index"] = r.index;
  j["design"] = design_to_json(space, r.design);
  j["signals"] = to_json(r.signals);
  j["failed"] = r.signals.failed;
  j["expert"] = r.expert;
  j["filled"] = r.filled;
  j["train_steps"] = r.train_steps;
  return j;
}

CandidateRecord candidate_from_json(const json& j) {
  CandidateRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.iteration = j.at("iteration").get<std::size_t>();
  r.index = j.at("index").get<std::size_t>();
  r.design = design_from_json(j.at("design"));
  r.signals = signal_set_from_json(j.at("signals"));
  r.signals.failed = j.value("failed", r.signals.failed);
  r.expert = j.value("expert", false);
  r.filled = j.value("filled", false);
  r.train_steps = j.value("train_steps", std::size_t{0});
  return r;
}

std::vector<double> best_so_far(const std::vector<CandidateRecord>& records) {
  if (records.empty()) throw Error("best-so-far of an empty log");
  std::vector<double> out;
  bool any = false;
  double best = kFailedSentinel;
  for (const auto& r : records) {
    if (!r.signals.failed && (!any || r.signals.task_metric > best)) {
      best = r.signals.task_metric;
      any = true;
    }
    out.push_back(best);
  }
  return out;
}

std::string run_id(const RunConfig& c) {
  return fmt::format("{}-{}-k{}-s{}", c.space_id, to_string(c.searcher.kind), c.searcher.batch_size, c.seed);
}

// ---------------------------------------------------------------------------
// The loop

namespace {

class RunWriter {
 public:
  RunWriter(const RunConfig& config) : dir_(config.out_dir) {
    if (dir_.empty()) return;
    const fs::path d(dir_);
    if (!config.overwrite && (fs::exists(d / "run.jsonl") || fs::exists(d / "config.json")))
      throw ConfigError(fmt::format("'{}' already holds a run; pass --overwrite to replace it", dir_));
    fs::create_directories(d);
    std::ofstream(d / "config.json") << to_json(config).dump(2) << "\n";
    records_.open(d / "run.jsonl", std::ios::trunc);
    timing_.open(d / "timing.csv", std::ios::trunc);
    if (!records_ || !timing_) throw ConfigError(fmt::format("cannot write to '{}'", dir_));
    timing_ << "iteration,index,wall_seconds\n";
    timing_.flush();
  }

  void append(const CandidateRecord& r, const CompositeSpace& space) {
    if (dir_.empty()) return;
    records_ << to_json(r, space).dump() << "\n";
    records_.flush();
    timing_ << fmt::format("{},{},{:.6f}\n", r.iteration, r.index, r.wall_seconds);
    timing_.flush();
  }

  void finish(const std::vector<double>& best) {
    if (dir_.empty()) return;
    std::ofstream out(fs::path(dir_) / "best_so_far.csv");
    out << "candidate_index,best_metric\n";
    for (std::size_t i = 0; i < best.size(); ++i) out << fmt::format("{},{}\n", i, best[i]);
  }

 private:
  std::string dir_;
  std::ofstream records_;
  std::ofstream timing_;
};

std::unique_ptr<Evaluator> make_evaluator(const RunConfig& c, const CompositeSpace& space) {
  if (c.backend == EvalBackend::surrogate)
    return std::make_unique<SurrogateEvaluator>(space, SurrogateSpec::make(space, c.surrogate_seed, c.surrogate_noise));
  // Surface unsupported families before any evaluation.
  Rng rng(c.seed);
  CompositeEncoder::instantiate(space, random_sample(space, rng), microflow_input_shapes(space), 0);
  return std::make_unique<MicroFlowEvaluator>(space, c.train, c.trainer, c.trace_dir);
}

struct Job {
  DesignVector design;
  bool expert = false;
  bool filled = false;
};

std::vector<CandidateRecord> evaluate_batch(const Evaluator& evaluator, const std::vector<Job>& jobs,
                                            std::size_t iteration, std::size_t first_index, std::size_t steps,
                                            const RunConfig& c, const std::string& id) {
  std::vector<CandidateRecord> out(jobs.size());
  const auto eval_root = derive_seed(c.seed, fnv1a("eval"));
  auto work = [&](std::size_t j) {
    auto& r = out[j];
    r.run_id = id;
    r.iteration = iteration;
    r.index = first_index + j;
    r.design = jobs[j].design;
    r.expert = jobs[j].expert;
    r.filled = jobs[j].filled;
    r.train_steps = steps;
    const auto t0 = std::chrono::steady_clock::now();
    r.signals = evaluator.evaluate(r.design, derive_seed(eval_root, iteration, r.index), steps);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const std::size_t workers = std::min(jobs.size(), c.workers == 0 ? c.searcher.batch_size : c.workers);
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) work(j);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.push_back(std::async(std::launch::async, [&] {
      for (std::size_t j = next++; j < jobs.size(); j = next++) work(j);
    }));
  for (auto& f : pool) f.get();  // rethrows the first failure
  return out;
}

}  // namespace

RunLog run(const RunConfig& config) {
  config.check();
  const auto space = resolve_space(config.space_id);
  const auto evaluator = make_evaluator(config, space);
  SearcherConfig sc = config.searcher;
  sc.agent.seed = derive_seed(config.seed, fnv1a("agent"));
  const auto searcher = make_searcher(sc, space, config.feedback, config.seed);
  RunWriter writer(config);

  RunLog log;
  log.config = config;
  const auto id = run_id(config);
  const std::size_t k = config.searcher.batch_size;
  const std::size_t iterations = config.iterations();
  const bool expert_first = config.feedback.initial_evaluation && space.has_defaults();
  const std::size_t base_steps = config.backend == EvalBackend::surrogate ? 0 : config.train.train_steps;
  History history;

  auto record = [&](std::vector<CandidateRecord> batch) {
    for (auto& r : batch) {
      history.push_back({r.design, r.signals});
      writer.append(r, space);
      log.records.push_back(std::move(r));
    }
  };

  try {
    for (std::size_t it = 0; it < iterations; ++it) {
      const auto steps = budget_schedule(it, iterations, base_steps, config.searcher.budget_schedule);
      std::size_t index = 0;
      if (it == 0 && expert_first) {
        record(evaluate_batch(*evaluator, {{expert_default(space), true, false}}, it, 0, steps, config, id));
        index = 1;
      }
      if (index < k) {
        const auto proposal = searcher->propose(history, k - index);
        if (proposal.designs.size() != k - index)
          throw Error(fmt::format("searcher returned {} designs, expected {}", proposal.designs.size(), k - index));
        std::vector<Job> jobs;
        for (std::size_t j = 0; j < proposal.designs.size(); ++j)
          jobs.push_back({proposal.designs[j], false, j + proposal.filled >= proposal.designs.size()});
        record(evaluate_batch(*evaluator, jobs, it, index, steps, config, id));
      }
      log.iterations = it + 1;
    }
    log.complete = true;
  } catch (const std::exception& e) {
    log.error = e.what();
  }
  if (!log.records.empty()) {
    log.best = best_so_far(log.records);
    writer.finish(log.best);
  }
  return log;
}

RunLog load_run(const std::string& dir) {
  const fs::path d(dir);
  std::ifstream cfg(d / "config.json");
  if (!cfg) throw ConfigError(fmt::format("'{}' has no config.json", dir));
  RunLog log;
  try {
    log.config = run_config_from_json(json::parse(cfg));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}/config.json: {}", dir, e.what()));
  }
  std::ifstream in(d / "run.jsonl");
  if (!in) throw ConfigError(fmt::format("'{}' has no run.jsonl", dir));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      log.records.push_back(candidate_from_json(json::parse(line)));
    } catch (const json::exception&) {
      if (in.peek() == std::char_traits<char>::eof()) break;  // torn final write
      throw ConfigError(fmt::format("{}/run.jsonl: malformed record", dir));
    }
  }
  std::set<std::size_t> iterations;
  for (const auto& r : log.records) iterations.insert(r.iteration);
  log.iterations = iterations.size();
  log.complete = log.records.size() == log.config.budget;
  if (!log.records.empty()) log.best = best_so_far(log.records);
  return log;
}

std::vector<SummaryRow> aggregate(const std::vector<RunLog>& logs) {
  if (logs.empty()) throw ConfigError("nothing to aggregate");
  const auto comparable = [](const RunConfig& c) {
    auto j = to_json(c);
    for (const char* key : {"seed", "out_dir", "trace_dir", "workers"}) j.erase(key);
    return j.dump();
  };
  const auto reference = comparable(logs.front().config);
  for (const auto& l : logs) {
    if (comparable(l.config) != reference) throw ConfigError("runs differ in configuration beyond the seed");
    if (l.best.size() != logs.front().best.size()) throw ConfigError("runs differ in length");
  }
  std::vector<SummaryRow> rows;
  const double n = static_cast<double>(logs.size());
  for (std::size_t i = 0; i < logs.front().best.size(); ++i) {
    double mean = 0.0;
    for (const auto& l : logs) mean += l.best[i];
    mean /= n;
    double var = 0.0;
    for (const auto& l : logs) var += (l.best[i] - mean) * (l.best[i] - mean);
    const double se = logs.size() > 1 ? std::sqrt(var / (n - 1.0)) / std::sqrt(n) : 0.0;
    rows.push_back({i, mean, 2.0 * se});
  }
  return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "candidate_index,mean_best,two_se\n";
  for (const auto& r : rows) out << fmt::format("{},{},{}\n", r.candidate_index, r.mean_best, r.two_se);
}

}  // namespace lacer
