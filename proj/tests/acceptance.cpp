// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. `lacer_acceptance 4 6` runs a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dynamics.hpp"
#include "gradcheck.hpp"
#include "lacer/microflow.hpp"
#include "lacer/orchestrator.hpp"
#include "lacer/response_parser.hpp"
#include "lacer/signals.hpp"
#include "prompts.hpp"
#include "support.hpp"

using namespace lacer;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> check;
};

Outcome search_space_fidelity() {
  const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::uint64_t>>>> expected{
      {"traffic", {{"time", 81}, {"traffic", 81}, {"sequence", 81}, {"fusion", 81}}},
      {"minigrid", {{"image", 896}, {"text", 256}, {"fusion", 256}}}};
  bool ok = true;
  std::string detail;
  for (const auto& [id, modules] : expected) {
    const auto space = builtin_space(id);
    for (const auto& [name, count] : modules) {
      const auto sub = space.subspace(name);
      std::set<std::string> distinct;
      for (const auto& v : enumerate(sub)) distinct.insert(design_to_json(sub, v).dump());
      ok = ok && distinct.size() == count && sub.cardinality() == count;
      detail += fmt::format("{}.{}={} ", id, name, distinct.size());
    }
  }
  const auto t = builtin_space("traffic").cardinality();
  const auto m = builtin_space("minigrid").cardinality();
  ok = ok && t == 43'046'721ULL && m == 58'720'256ULL;
  detail += fmt::format("| full traffic {} (reference ~26 million), full minigrid {} (reference ~19 million)", t, m);
  return {ok, detail};
}

Outcome parser_round_trip() {
  std::size_t trips = 0, failures = 0, garbage = 0, aborts = 0;
  for (const auto& id : {"traffic", "minigrid"}) {
    const auto s = builtin_space(id);
    const PatternSet patterns(s);
    auto round_trip = [&](const DesignVector& v) {
      ++trips;
      const auto r = parse_design_vectors(render_design_vector(v, s), s, patterns);
      failures += !(r.vectors.size() == 1 && r.vectors[0] == v);
    };
    round_trip(expert_default(s));
    Rng rng(fnv1a(id));
    for (int i = 0; i < 1000; ++i) round_trip(random_sample(s, rng));

    const auto base = render_design_vector(expert_default(s), s);
    for (int i = 0; i < 250; ++i) {
      std::string text;
      if (i % 2 == 0) {
        const std::size_t n = uniform_index(rng, 500);
        for (std::size_t j = 0; j < n; ++j) text.push_back(static_cast<char>(uniform_index(rng, 256)));
      } else {
        text = base;
        for (int k = 0; k < 8; ++k) text[uniform_index(rng, text.size())] = static_cast<char>(uniform_index(rng, 256));
      }
      ++garbage;
      try {
        parse_design_vectors(text, s, patterns);
      } catch (...) {
        ++aborts;
      }
    }
  }
  return {failures == 0 && aborts == 0,
          fmt::format("{} round trips, {} failed; {} garbage inputs, {} aborted", trips, failures, garbage, aborts)};
}

Outcome signal_estimators() {
  Rng rng(2024);
  SymbolColumns x(1, std::vector<std::uint32_t>(10000));
  for (auto& s : x[0]) s = static_cast<std::uint32_t>(uniform_index(rng, 4));
  const double self = mutual_information(x, x);

  SampleMatrix a(10000, 1), b(10000, 1);
  for (std::size_t i = 0; i < 10000; ++i) a.values[i] = uniform01(rng), b.values[i] = uniform01(rng);
  const double indep = mutual_information(discretize(a), discretize(b));

  double worst_identity = 0.0;
  bool symmetric = true;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 20 + uniform_index(rng, 500);
    SampleMatrix mx(n, 1 + uniform_index(rng, 3)), my(n, 1 + uniform_index(rng, 3));
    for (auto& v : mx.values) v = standard_normal(rng);
    for (auto& v : my.values) v = standard_normal(rng);
    for (std::size_t i = 0; i < n; ++i) my.at(i, 0) += mx.at(i, 0);
    const auto sx = discretize(mx), sy = discretize(my);
    const double mi = mutual_information(sx, sy);
    worst_identity = std::max(worst_identity, std::abs(redundancy(sx, sy) - mi));
    symmetric = symmetric && mutual_information(sy, sx) == mi;
  }
  const bool ok = self >= 1.95 && self <= 2.05 && indep <= 0.05 && worst_identity <= 1e-9 && symmetric;
  return {ok, fmt::format("MI(X,X)={:.4f} MI(indep)={:.4f} max|R-MI|={:.2e} symmetric={}", self, indep,
                          worst_identity, symmetric)};
}

Outcome encoder_gradients() {
  double worst = 0.0;
  std::string detail;
  for (const auto& r : test::check_all_blocks(50, 2024)) {
    worst = std::max(worst, r.max_error);
    detail += fmt::format("{}={:.1e} ", r.label, r.max_error);
  }
  return {worst <= 1e-4, fmt::format("max relative error {:.2e} [{}]", worst, detail)};
}

Outcome toy_learning() {
  const auto traffic = builtin_space("traffic");
  const auto expert = expert_default(traffic);
  const TrainEvalBudget budget;  // 20k train / 5k eval
  TrainEvalBudget untrained = budget;
  untrained.train_steps = 0;
  std::vector<double> ratios;
  std::string detail;
  bool periodic = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = train_and_evaluate(traffic, expert, budget, seed);
    const auto u = train_and_evaluate(traffic, expert, untrained, seed);
    ratios.push_back(t.signals.task_metric / u.signals.task_metric);
    const auto lag = autocorrelation_peak(t.eval_speeds, kPeriod / 2, 3 * kPeriod / 2);
    periodic = periodic && lag + 5 >= kPeriod && lag <= kPeriod + 5;
    detail += fmt::format("s{}: {:.3f}/{:.3f} lag {}; ", seed, t.signals.task_metric, u.signals.task_metric, lag);
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[2];
  return {median >= 1.2 && periodic, fmt::format("median trained/untrained {:.3f} | {}", median, detail)};
}

Outcome search_dynamics() {
  const auto t = test::search_dynamics(1, 10);
  const bool ok = t.complete == t.runs && t.monotone == t.runs && t.llm_beats_random >= 7 && t.ablated_not_better >= 6;
  return {ok, fmt::format("monotone {}/{} runs; mock-llm >= random on {}/10; ablated <= full on {}/10", t.monotone,
                          t.runs, t.llm_beats_random, t.ablated_not_better)};
}

Outcome protocol_accounting() {
  bool ok = true;
  std::string detail;
  for (std::size_t k : {5, 1}) {
    for (auto kind : {SearcherKind::random, SearcherKind::llm}) {
      const auto log = run(test::surrogate_config(kind, k, 0));
      ok = ok && log.complete && log.records.size() == 50 && log.iterations == 50 / k;
      detail += fmt::format("{} k={}: {} iterations, {} records; ", to_string(kind), k, log.iterations,
                            log.records.size());
    }
  }
  return {ok, detail};
}

Outcome ablation_prompts() {
  const auto full = test::initial_prompt({});
  bool ok = test::matches_snapshot("prompt_full.txt", test::flatten(full));
  std::string detail;
  for (const auto& c : test::ablation_cases()) {
    const auto ablated = test::initial_prompt(c.options);
    const auto diff = test::differing_sections(full[1].content, ablated[1].content);
    const bool one = diff.size() == 1 && ablated[0] == full[0];
    const bool snap = test::matches_snapshot(c.snapshot, test::flatten(ablated));
    ok = ok && one && snap;
    detail += fmt::format("{}: {} section(s) changed{}{}; ", c.flag, diff.size(), diff.empty() ? "" : " [" + diff[0] + "]",
                          snap ? "" : " snapshot mismatch");
  }
  return {ok, detail};
}

Outcome reproducibility() {
  test::TempDir dir("acceptance-repro");
  // replay transcript: ten answers of five random vectors each
  const auto traffic = builtin_space("traffic");
  Rng rng(5);
  std::string transcript;
  for (int i = 0; i < 10; ++i) {
    std::string answer;
    for (int j = 0; j < 5; ++j) answer += render_design_vector(random_sample(traffic, rng), traffic) + "\n";
    transcript += nlohmann::json{{"response", answer}}.dump() + "\n";
  }
  test::spit(dir.path() / "transcript.jsonl", transcript);

  bool ok = true;
  std::string detail;
  for (auto backend : {BackendKind::mock, BackendKind::replay}) {
    std::string logs[2];
    for (int r = 0; r < 2; ++r) {
      auto c = test::surrogate_config(SearcherKind::llm, 5, 21);
      c.searcher.agent.backend = backend;
      c.searcher.agent.transcript_path = dir.str("transcript.jsonl");
      c.out_dir = dir.str(fmt::format("{}-{}", to_string(backend), r));
      const auto log = run(c);
      ok = ok && log.complete;
      logs[r] = test::slurp(std::filesystem::path(c.out_dir) / "run.jsonl");
    }
    const bool same = !logs[0].empty() && logs[0] == logs[1];
    ok = ok && same;
    detail += fmt::format("{}: {} bytes, identical={}; ", to_string(backend), logs[0].size(), same);
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "search-space fidelity", 10, search_space_fidelity},
      {2, "parser round trip", 10, parser_round_trip},
      {3, "signal estimators", 5, signal_estimators},
      {4, "encoder gradients", 60, encoder_gradients},
      {5, "toy RL learning", 900, toy_learning},
      {6, "search dynamics", 60, search_dynamics},
      {7, "protocol accounting", 5, protocol_accounting},
      {8, "ablation prompt diffs", 5, ablation_prompts},
      {9, "reproducibility", 10, reproducibility},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %d (%s): %s in %.1fs (limit %.0fs)%s: %s\n", c.id, c.name, pass ? "PASS" : "FAIL", secs,
                c.limit_seconds, in_time ? "" : " over time", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
