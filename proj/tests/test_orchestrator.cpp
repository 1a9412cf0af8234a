#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "dynamics.hpp"
#include "lacer/orchestrator.hpp"
#include "support.hpp"

using namespace lacer;

namespace {

RunLog fake_log(const std::vector<double>& metrics, std::uint64_t seed = 0) {
  RunLog log;
  log.config.seed = seed;
  for (double m : metrics) {
    CandidateRecord r;
    r.signals.task_metric = m;
    log.records.push_back(r);
  }
  log.best = best_so_far(log.records);
  return log;
}

}  // namespace

TEST_CASE("budget accounting") {
  for (std::size_t k : {1, 5}) {
    const auto log = run(test::surrogate_config(SearcherKind::llm, k, 3));
    CHECK(log.complete);
    CHECK(log.records.size() == 50);
    CHECK(log.iterations == 50 / k);
    CHECK(log.records.front().expert);
    CHECK(log.records.front().iteration == 0);
    std::size_t in_first = 0;
    for (const auto& r : log.records) in_first += r.iteration == 0;
    CHECK(in_first == k);
    for (std::size_t i = 1; i < log.records.size(); ++i) CHECK_FALSE(log.records[i].expert);
  }
  auto ablated = test::surrogate_config(SearcherKind::llm, 5, 3);
  ablated.feedback.initial_evaluation = false;
  const auto log = run(ablated);
  CHECK(log.records.size() == 50);
  CHECK_FALSE(log.records.front().expert);

  auto bad = test::surrogate_config(SearcherKind::random, 3, 0);
  CHECK_THROWS_WITH_AS(run(bad), doctest::Contains("budget not divisible by batch"), ConfigError);
}

TEST_CASE("best_so_far") {
  std::vector<CandidateRecord> rs(3);
  rs[0].signals.task_metric = 1;
  rs[1].signals.task_metric = 3;
  rs[2].signals.task_metric = 2;
  CHECK(best_so_far(rs) == std::vector<double>{1, 3, 3});
  for (auto& r : rs) r.signals.failed = true;
  CHECK(best_so_far(rs) == std::vector<double>(3, kFailedSentinel));
  CHECK(best_so_far({rs[0]}) == std::vector<double>{kFailedSentinel});
  rs.resize(1);
  rs[0].signals.failed = false;
  CHECK(best_so_far(rs) == std::vector<double>{1});
  CHECK_THROWS_AS(best_so_far({}), Error);

  std::vector<CandidateRecord> mixed(3);
  mixed[0].signals.task_metric = 0.5;
  mixed[1].signals = {9.0, 0, {}, true};
  mixed[2].signals.task_metric = 0.4;
  CHECK(best_so_far(mixed) == std::vector<double>{0.5, 0.5, 0.5});
}

TEST_CASE("aggregate") {
  const auto rows = aggregate({fake_log({1.0}, 0), fake_log({3.0}, 1)});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mean_best == doctest::Approx(2.0));
  CHECK(rows[0].two_se == doctest::Approx(2.0));

  std::vector<RunLog> same(8, fake_log({1.0, 2.0, 1.5}));
  for (const auto& r : aggregate(same)) CHECK(r.two_se == 0.0);
  CHECK(aggregate({fake_log({1.0, 2.0})})[1].two_se == 0.0);

  auto other = fake_log({1.0});
  other.config.space_id = "minigrid";
  CHECK_THROWS_AS(aggregate({fake_log({1.0}), other}), ConfigError);

  std::vector<RunLog> study;
  for (std::uint64_t s = 0; s < 8; ++s) study.push_back(run(test::surrogate_config(SearcherKind::random, 1, s)));
  const auto summary = aggregate(study);
  CHECK(summary.size() == 50);
  std::ostringstream csv;
  write_summary_csv(csv, summary);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "candidate_index,mean_best,two_se");
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    CHECK(std::count(line.begin(), line.end(), ',') == 2);
  }
  CHECK(n == 50);
}

TEST_CASE("mock runs are reproducible on disk") {
  test::TempDir dir("repro");
  auto c = test::surrogate_config(SearcherKind::llm, 5, 11);
  c.out_dir = dir.str("a");
  const auto a = run(c);
  c.out_dir = dir.str("b");
  c.workers = 1;
  const auto b = run(c);
  CHECK(a.complete);
  CHECK(test::slurp(dir.path() / "a" / "run.jsonl") == test::slurp(dir.path() / "b" / "run.jsonl"));
  CHECK(std::filesystem::exists(dir.path() / "a" / "best_so_far.csv"));
  CHECK(std::filesystem::exists(dir.path() / "a" / "timing.csv"));

  const auto loaded = load_run(dir.str("a"));
  CHECK(loaded.records.size() == 50);
  CHECK(loaded.complete);
  CHECK(loaded.best == a.best);
  for (std::size_t i = 0; i < 50; ++i) CHECK(loaded.records[i].design == a.records[i].design);

  c.out_dir = dir.str("a");
  c.workers = 0;
  CHECK_THROWS_AS(run(c), ConfigError);
  c.overwrite = true;
  CHECK(run(c).complete);
}

TEST_CASE("a torn final record is ignored") {
  test::TempDir dir("torn");
  auto c = test::surrogate_config(SearcherKind::random, 1, 2);
  c.out_dir = dir.str("r");
  run(c);
  const auto path = dir.path() / "r" / "run.jsonl";
  auto text = test::slurp(path);
  text.resize(text.size() - 40);
  test::spit(path, text);
  const auto log = load_run(dir.str("r"));
  CHECK(log.records.size() == 49);
  CHECK_FALSE(log.complete);
}

TEST_CASE("config json") {
  auto c = test::surrogate_config(SearcherKind::evolutionary, 5, 9);
  c.searcher.budget_schedule = true;
  c.feedback.feature_info = false;
  c.train.train_steps = 1234;
  c.trainer.ppo = true;
  c.surrogate_noise = 0.1;
  const auto j = nlohmann::json::parse(to_json(c).dump());
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == to_json(c));
  CHECK_FALSE(back.feedback.feature_info);
  CHECK(back.train.train_steps == 1234);

  auto extra = j;
  extra["mystery"] = 1;
  CHECK_THROWS_AS(run_config_from_json(extra), ConfigError);
  CHECK(run_id(c) == "traffic-evolutionary-k5-s9");
}

TEST_CASE("unsupported family and backend fail before evaluation") {
  test::TempDir dir("family");
  auto c = test::surrogate_config(SearcherKind::random, 1, 0);
  c.space_id = "minigrid";
  c.backend = EvalBackend::microflow;
  c.out_dir = dir.str("x");
  CHECK_THROWS_AS(run(c), ConfigError);
  CHECK_FALSE(std::filesystem::exists(dir.path() / "x" / "run.jsonl"));
}

TEST_CASE("microflow backend end to end") {
  auto c = test::surrogate_config(SearcherKind::random, 2, 1);
  c.backend = EvalBackend::microflow;
  c.budget = 4;
  c.train = {300, 200, 100};
  const auto log = run(c);
  CHECK(log.complete);
  CHECK(log.records.size() == 4);
  for (const auto& r : log.records) {
    CHECK(r.train_steps == 300);
    CHECK(r.signals.feature_info.size() == 6);
  }
}

TEST_CASE("mock agent responds to feedback") {
  const auto up = test::responsive_runs(10);
  MESSAGE("runs with nondecreasing proposal scores: " << up << "/10");
  CHECK(up >= 8);
}

TEST_CASE("best-so-far is monotone for every searcher") {
  const auto t = test::search_dynamics(5, 3);
  CHECK(t.complete == t.runs);
  CHECK(t.monotone == t.runs);
}
