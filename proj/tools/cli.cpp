#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lacer/orchestrator.hpp"
#include "lacer/response_parser.hpp"
#include "lacer/signals.hpp"

namespace lacer::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_input(const std::string& path, std::istream& in) {
  std::stringstream ss;
  if (path == "-") {
    ss << in.rdbuf();
  } else {
    std::ifstream f(path);
    if (!f) throw ConfigError(fmt::format("cannot read '{}'", path));
    ss << f.rdbuf();
  }
  return ss.str();
}

FeedbackOptions parse_ablations(const std::string& list) {
  FeedbackOptions f;
  if (list.empty() || list == "none") return f;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "fi") {
      f.feature_info = false;
    } else if (item == "ri") {
      f.average_reward = false;
    } else if (item == "ie") {
      f.initial_evaluation = false;
    } else {
      throw ConfigError(fmt::format("unknown ablation '{}' (expected fi, ri, ie)", item));
    }
  }
  return f;
}

// Pairs implied by trace keys: <m>_in/<m>_out -> <m>_io, <m>_out/fused -> <m>_fused.
std::vector<FeaturePairSpec> default_pairs(const TraceMap& traces) {
  std::vector<FeaturePairSpec> io, fused;
  for (const auto& [key, _] : traces) {
    if (!key.ends_with("_out")) continue;
    const auto m = key.substr(0, key.size() - 4);
    if (traces.count(m + "_in")) io.push_back({m + "_io", m + "_in", key});
    if (traces.count("fused")) fused.push_back({m + "_fused", key, "fused"});
  }
  io.insert(io.end(), fused.begin(), fused.end());
  return io;
}

FeaturePairSpec parse_pair(const std::string& text) {
  const auto eq = text.find('=');
  const auto comma = text.find(',', eq == std::string::npos ? 0 : eq);
  if (eq == std::string::npos || comma == std::string::npos)
    throw ConfigError(fmt::format("pair '{}' must look like NAME=X,Y", text));
  return {text.substr(0, eq), text.substr(eq + 1, comma - eq - 1), text.substr(comma + 1)};
}

struct RunFlags {
  std::string config, space, searcher, backend, llm, endpoint, transcript, model, ablate, out, trace_dir;
  double temperature = 1.0, noise = 0.02;
  std::size_t budget = 50, batch = 1, train_steps = 0, eval_steps = 0, workers = 0;
  std::uint64_t seed = 0, surrogate_seed = 0;
  bool overwrite = false, schedule = false, ppo = false;
};

int do_run(const RunFlags& f, CLI::App& cmd, std::ostream& out, std::ostream& err) {
  RunConfig c;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError(fmt::format("cannot read config '{}'", f.config));
    try {
      c = run_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}: {}", f.config, e.what()));
    }
  }
  const auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
  if (given("--space")) c.space_id = f.space;
  if (given("--searcher")) c.searcher.kind = searcher_from_string(f.searcher);
  if (given("--backend")) c.backend = eval_backend_from_string(f.backend);
  if (given("--llm")) c.searcher.agent.backend = backend_from_string(f.llm);
  if (given("--endpoint")) c.searcher.agent.endpoint = f.endpoint;
  if (given("--transcript")) c.searcher.agent.transcript_path = f.transcript;
  if (given("--model")) c.searcher.agent.model_id = f.model;
  if (given("--temperature")) c.searcher.agent.temperature = f.temperature;
  if (given("--budget")) c.budget = f.budget;
  if (given("--batch")) c.searcher.batch_size = f.batch;
  if (given("--seed")) c.seed = f.seed;
  if (given("--ablate")) c.feedback = parse_ablations(f.ablate);
  if (given("--out")) c.out_dir = f.out;
  if (given("--train-steps")) c.train.train_steps = f.train_steps;
  if (given("--eval-steps")) c.train.eval_steps = f.eval_steps;
  if (given("--workers")) c.workers = f.workers;
  if (given("--surrogate-seed")) c.surrogate_seed = f.surrogate_seed;
  if (given("--noise")) c.surrogate_noise = f.noise;
  if (given("--budget-schedule")) c.searcher.budget_schedule = f.schedule;
  if (given("--ppo")) c.trainer.ppo = f.ppo;
  if (given("--dump-traces")) c.trace_dir = f.trace_dir;
  c.overwrite = f.overwrite;
  if (c.out_dir.empty()) throw ConfigError("an output directory is required (--out or out_dir in the config)");

  const auto log = run(c);
  ordered_json summary;
  summary["run_id"] = run_id(c);
  summary["complete"] = log.complete;
  summary["records"] = log.records.size();
  summary["iterations"] = log.iterations;
  summary["best"] = log.best.empty() ? json(nullptr) : json(log.best.back());
  summary["out_dir"] = c.out_dir;
  out << summary.dump() << "\n";
  if (!log.complete) {
    err << fmt::format("run aborted after {} of {} evaluations: {}\n", log.records.size(), c.budget, log.error);
    return kExitIncomplete;
  }
  return kExitOk;
}

}  // namespace

int main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Composite architecture search with language-model feedback", "lacer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  RunFlags rf;
  auto* run_cmd = app.add_subcommand("run", "Run one search and write its log to a directory");
  run_cmd->add_option("--config", rf.config, "JSON run configuration; flags override its fields");
  run_cmd->add_option("--space", rf.space, "Built-in space id or path to a space document");
  run_cmd->add_option("--searcher", rf.searcher, "random | local | evolutionary | llm");
  run_cmd->add_option("--backend", rf.backend, "Evaluation backend: surrogate | microflow");
  run_cmd->add_option("--llm", rf.llm, "Language-model backend for the llm searcher: mock | replay | http");
  run_cmd->add_option("--endpoint", rf.endpoint, "Chat-completion URL for the http backend");
  run_cmd->add_option("--transcript", rf.transcript, "JSON Lines transcript for the replay backend");
  run_cmd->add_option("--model", rf.model, "Model id sent to the http backend");
  run_cmd->add_option("--temperature", rf.temperature, "Sampling temperature");
  run_cmd->add_option("--budget", rf.budget, "Total number of evaluations");
  run_cmd->add_option("--batch", rf.batch, "Candidates per iteration");
  run_cmd->add_option("--seed", rf.seed, "Run seed");
  run_cmd->add_option("--ablate", rf.ablate, "Comma list of feedback to remove: fi, ri, ie");
  run_cmd->add_option("--out", rf.out, "Output directory");
  run_cmd->add_flag("--overwrite", rf.overwrite, "Replace an existing run in the output directory");
  run_cmd->add_option("--train-steps", rf.train_steps, "Training steps per microflow evaluation");
  run_cmd->add_option("--eval-steps", rf.eval_steps, "Evaluation steps per microflow evaluation");
  run_cmd->add_option("--workers", rf.workers, "Concurrent evaluations (default: batch size)");
  run_cmd->add_option("--surrogate-seed", rf.surrogate_seed, "Seed of the surrogate landscape");
  run_cmd->add_option("--noise", rf.noise, "Surrogate noise scale");
  run_cmd->add_flag("--budget-schedule", rf.schedule, "Grow training steps over iterations (evolutionary)");
  run_cmd->add_flag("--ppo", rf.ppo, "Clipped-surrogate policy updates in microflow training");
  run_cmd->add_option("--dump-traces", rf.trace_dir, "Write microflow evaluation traces as CSV to this directory");

  std::string space_id, module;
  std::size_t limit = 0;
  bool count_only = false;
  auto* enum_cmd = app.add_subcommand("enumerate", "List design vectors (JSON Lines) or count them");
  enum_cmd->add_option("--space", space_id, "Built-in space id or path to a space document")->required();
  enum_cmd->add_option("--module", module, "Restrict to one module's subspace");
  enum_cmd->add_option("--limit", limit, "Stop after this many vectors (0: all)");
  enum_cmd->add_flag("--count", count_only, "Print cardinalities as JSON instead of vectors");

  std::string input = "-";
  auto* validate_cmd = app.add_subcommand("validate", "Check a design vector (JSON) against a space");
  validate_cmd->add_option("--space", space_id, "Built-in space id or path to a space document")->required();
  validate_cmd->add_option("input", input, "Design vector file, - for standard input");

  auto* parse_cmd = app.add_subcommand("parse", "Extract design vectors from a model response");
  parse_cmd->add_option("--space", space_id, "Built-in space id or path to a space document")->required();
  parse_cmd->add_option("input", input, "Response text file, - for standard input");

  std::size_t bins = kDefaultBins;
  std::vector<std::string> pair_texts;
  auto* signals_cmd = app.add_subcommand("signals", "Feature information from a trace CSV");
  signals_cmd->add_option("input", input, "Trace CSV (header: key.column), - for standard input");
  signals_cmd->add_option("--bins", bins, "Equal-frequency bins per column");
  signals_cmd->add_option("--pair", pair_texts, "NAME=X,Y over trace keys; default pairs follow the key names");

  std::vector<std::string> run_dirs;
  std::string summary_out = "-";
  auto* report_cmd = app.add_subcommand("report", "Aggregate run directories into summary CSV");
  report_cmd->add_option("--runs", run_dirs, "Run directories")->required()->expected(1, -1);
  report_cmd->add_option("--out", summary_out, "Summary CSV path, - for standard output");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return do_run(rf, *run_cmd, out, err);

    if (enum_cmd->parsed()) {
      const auto full = resolve_space(space_id);
      const auto space = module.empty() ? full : full.subspace(module);
      if (count_only) {
        ordered_json j;
        j["space_id"] = space.space_id();
        j["cardinality"] = space.cardinality();
        ordered_json mods = ordered_json::object();
        for (const auto& m : space.modules()) mods[m.name] = space.subspace(m.name).cardinality();
        j["modules"] = mods;
        out << j.dump() << "\n";
        return kExitOk;
      }
      DesignEnumerator e(space);
      std::size_t n = 0;
      while (auto v = e.next()) {
        if (limit != 0 && n++ >= limit) break;
        out << design_to_json(space, *v).dump() << "\n";
      }
      return kExitOk;
    }

    if (validate_cmd->parsed()) {
      const auto space = resolve_space(space_id);
      DesignVector v;
      try {
        v = design_from_json(json::parse(read_input(input, in)));
      } catch (const json::exception& e) {
        throw ConfigError(fmt::format("design vector is not valid JSON: {}", e.what()));
      }
      const auto report = validate(space, v);
      ordered_json j;
      j["valid"] = report.ok();
      j["violations"] = json::array();
      for (const auto& x : report.violations) j["violations"].push_back({{"path", x.path}, {"message", x.message}});
      out << j.dump() << "\n";
      return report.ok() ? kExitOk : kExitConfig;
    }

    if (parse_cmd->parsed()) {
      const auto space = resolve_space(space_id);
      const PatternSet patterns(space);
      out << to_json(parse_design_vectors(read_input(input, in), space, patterns), space).dump() << "\n";
      return kExitOk;
    }

    if (signals_cmd->parsed()) {
      std::stringstream ss(read_input(input, in));
      const auto traces = read_traces_csv(ss);
      std::vector<FeaturePairSpec> pairs;
      for (const auto& t : pair_texts) pairs.push_back(parse_pair(t));
      if (pairs.empty()) pairs = default_pairs(traces);
      out << to_json(collect_feature_info(traces, pairs, bins)).dump() << "\n";
      return kExitOk;
    }

    if (report_cmd->parsed()) {
      std::vector<RunLog> logs;
      for (const auto& d : run_dirs) logs.push_back(load_run(d));
      const auto rows = aggregate(logs);
      if (summary_out == "-") {
        write_summary_csv(out, rows);
      } else {
        std::ofstream f(summary_out);
        if (!f) throw ConfigError(fmt::format("cannot write '{}'", summary_out));
        write_summary_csv(f, rows);
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace lacer::cli
