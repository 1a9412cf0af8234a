#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lacer/microflow.hpp"
#include "lacer/searchers.hpp"
#include "lacer/surrogate.hpp"

namespace lacer {

enum class EvalBackend { surrogate, microflow };
std::string_view to_string(EvalBackend b);
EvalBackend eval_backend_from_string(std::string_view s);

struct RunConfig {
  std::string space_id = "traffic";
  SearcherConfig searcher;
  EvalBackend backend = EvalBackend::surrogate;
  std::size_t budget = 50;
  std::uint64_t seed = 0;
  FeedbackOptions feedback;  // a disabled flag is an ablation
  TrainEvalBudget train;
  TrainerOptions trainer;
  double surrogate_noise = 0.02;
  std::uint64_t surrogate_seed = 0;
  std::string out_dir;  // empty: nothing persisted
  bool overwrite = false;
  std::size_t workers = 0;  // 0: one per batch slot
  std::string trace_dir;

  std::size_t iterations() const { return budget / searcher.batch_size; }
  void check() const;  // throws ConfigError
};

/// JSON mirroring the RunConfig field names. Missing fields keep defaults;
/// unknown fields are rejected.
nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

struct CandidateRecord {
  std::string run_id;
  std::size_t iteration = 0;
  std::size_t index = 0;
  DesignVector design;
  SignalSet signals;
  bool expert = false;
  bool filled = false;  // uniform sample standing in for an unusable answer
  std::size_t train_steps = 0;
  double wall_seconds = 0.0;  // kept out of run.jsonl
};

nlohmann::ordered_json to_json(const CandidateRecord& r, const CompositeSpace& space);
CandidateRecord candidate_from_json(const nlohmann::json& j);

struct RunLog {
  RunConfig config;
  std::vector<CandidateRecord> records;
  std::vector<double> best;  // best-so-far series
  std::size_t iterations = 0;
  bool complete = false;
  std::string error;
};

inline constexpr double kFailedSentinel = 0.0;

/// Prefix maximum of task metric over non-failed records; kFailedSentinel
/// until the first success. Throws Error on an empty log.
std::vector<double> best_so_far(const std::vector<CandidateRecord>& records);

std::string run_id(const RunConfig& c);

/// Runs the search loop. Configuration problems throw ConfigError before any
/// evaluation; failures during the loop end the run early with
/// `complete == false` and the records so far persisted.
RunLog run(const RunConfig& config);

/// Reads config.json and run.jsonl from a run directory. A truncated last line
/// is ignored.
RunLog load_run(const std::string& dir);

struct SummaryRow {
  std::size_t candidate_index = 0;
  double mean_best = 0.0;
  double two_se = 0.0;
};

/// Mean best-so-far and two standard errors per candidate index. Throws
/// ConfigError when the logs differ in anything but seed and output location.
std::vector<SummaryRow> aggregate(const std::vector<RunLog>& logs);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

}  // namespace lacer
