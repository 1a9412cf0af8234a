#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "lacer/encoder.hpp"
#include "lacer/evaluation.hpp"
#include "lacer/signals.hpp"

namespace lacer {

// MicroFlow: a small periodic traffic-like environment with three observation
// sources (a time series of recent traffic readings, the current reading
// vector, and the recent action history).

enum class Action { slow = 0, hold = 1, fast = 2 };
inline constexpr std::size_t kActionCount = 3;

inline constexpr std::size_t kWindow = 8;
inline constexpr std::size_t kPeriod = 250;
inline constexpr std::size_t kEpisodeLength = 200;
inline constexpr std::size_t kTraceSamples = 512;
inline constexpr std::size_t kRepeatRun = 4;
inline constexpr double kRepeatPenalty = 0.2;

struct Observation {
  std::vector<double> time_series;      // kWindow x 3: speed, density, flow
  std::vector<double> traffic_vector;   // speed, density, flow, noise, sin, cos
  std::vector<double> action_sequence;  // kWindow x 3 one-hot, oldest first
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  double speed = 0.0;
  bool penalized = false;
};

class MicroFlow {
 public:
  explicit MicroFlow(std::uint64_t seed) { reset(seed); }

  Observation reset(std::uint64_t seed);
  StepResult step(Action a);

  double speed() const noexcept { return speed_; }
  double phase() const noexcept;
  double demand() const noexcept;
  /// The action that earns the speed bonus at the current step.
  Action favored_action() const noexcept;
  std::uint64_t clock() const noexcept { return clock_; }
  const Observation& observation() const noexcept { return obs_; }

 private:
  Rng rng_;
  double offset_ = 0.0;
  double speed_ = 0.5;
  std::uint64_t clock_ = 0;
  std::deque<std::array<double, 3>> readings_;
  std::deque<int> actions_;  // -1 = none yet
  Observation obs_;

  void observe();
};

/// Scaled-down training/evaluation budget, in environment steps.
struct TrainEvalBudget {
  std::size_t train_steps = 20'000;
  std::size_t eval_steps = 5'000;
  std::size_t episode_length = kEpisodeLength;
};

struct TrainerOptions {
  double learning_rate = 1e-2;
  double discount = 0.99;
  bool ppo = false;  // clipped-surrogate updates instead of plain policy gradient
  std::size_t ppo_epochs = 4;
  double ppo_clip = 0.2;
  std::size_t bins = kDefaultBins;
  std::size_t trace_samples = kTraceSamples;
};

struct TrainResult {
  SignalSet signals;
  std::vector<double> eval_speeds;
  std::vector<double> train_rewards;
  TraceMap traces;
  std::size_t param_count = 0;
};

/// Input shapes of the MicroFlow sources for modules named time, traffic and
/// sequence. Throws ConfigError for other source modules.
InputShapes microflow_input_shapes(const CompositeSpace& space);

/// Trains encoder plus linear policy head end-to-end, then evaluates greedily.
/// Non-finite training yields a failed SignalSet with task metric 0.
TrainResult train_and_evaluate(const CompositeSpace& space, const DesignVector& v, const TrainEvalBudget& budget,
                               std::uint64_t seed, const TrainerOptions& options = {});

/// Lag in [min_lag, max_lag] with the largest sample autocorrelation.
std::size_t autocorrelation_peak(std::span<const double> x, std::size_t min_lag, std::size_t max_lag);
double autocorrelation(std::span<const double> x, std::size_t lag);

class MicroFlowEvaluator : public Evaluator {
 public:
  MicroFlowEvaluator(const CompositeSpace& space, TrainEvalBudget budget, TrainerOptions options = {},
                     std::string trace_dir = {});
  SignalSet evaluate(const DesignVector& v, std::uint64_t eval_seed, std::size_t train_steps) const override;
  std::size_t default_train_steps() const override { return budget_.train_steps; }
  std::string name() const override { return "microflow"; }

 private:
  const CompositeSpace* space_;
  TrainEvalBudget budget_;
  TrainerOptions options_;
  std::string trace_dir_;
};

}  // namespace lacer
