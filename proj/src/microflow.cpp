#include "lacer/microflow.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

namespace lacer {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kDemandMean = 0.5;
constexpr double kDemandAmplitude = 0.15;
constexpr double kBonus = 0.3;
constexpr double kRelax = 0.5;
constexpr double kSpeedNoise = 0.01;
constexpr double kDensityNoise = 0.02;

}  // namespace

Observation MicroFlow::reset(std::uint64_t seed) {
  rng_.seed(derive_seed(seed, fnv1a("microflow")));
  offset_ = uniform01(rng_) * static_cast<double>(kPeriod);
  clock_ = 0;
  speed_ = 1.0 - demand();
  readings_.clear();
  actions_.assign(kWindow, -1);
  const double density = demand();
  readings_.assign(kWindow, {speed_, density, speed_ * density});
  observe();
  return obs_;
}

double MicroFlow::phase() const noexcept {
  return kTwoPi * (static_cast<double>(clock_) + offset_) / static_cast<double>(kPeriod);
}

double MicroFlow::demand() const noexcept { return kDemandMean + kDemandAmplitude * std::sin(phase()); }

// Congestion rising (cos > 0) favors slowing down, falling favors speeding up.
Action MicroFlow::favored_action() const noexcept { return std::cos(phase()) > 0.0 ? Action::slow : Action::fast; }

StepResult MicroFlow::step(Action a) {
  double bonus = 0.0;
  if (a != Action::hold) bonus = a == favored_action() ? kBonus : -kBonus;
  ++clock_;
  const double target = std::clamp(1.0 - demand() + bonus, 0.0, 1.0);
  speed_ = std::clamp(speed_ + kRelax * (target - speed_) + kSpeedNoise * standard_normal(rng_), 0.0, 1.0);

  actions_.push_back(static_cast<int>(a));
  actions_.pop_front();
  const bool repeated = std::all_of(actions_.end() - kRepeatRun, actions_.end(),
                                    [&](int x) { return x == static_cast<int>(a); });

  const double density = std::max(0.0, demand() + kDensityNoise * standard_normal(rng_));
  readings_.push_back({speed_, density, speed_ * density});
  readings_.pop_front();
  observe();

  StepResult r;
  r.speed = speed_;
  r.penalized = repeated;
  r.reward = speed_ - (repeated ? kRepeatPenalty : 0.0);
  r.observation = obs_;
  return r;
}

void MicroFlow::observe() {
  obs_.time_series.clear();
  for (const auto& row : readings_) obs_.time_series.insert(obs_.time_series.end(), row.begin(), row.end());
  const auto& now = readings_.back();
  obs_.traffic_vector = {now[0], now[1], now[2], uniform01(rng_) - 0.5, std::sin(phase()), std::cos(phase())};
  obs_.action_sequence.assign(kWindow * kActionCount, 0.0);
  for (std::size_t i = 0; i < kWindow; ++i)
    if (actions_[i] >= 0) obs_.action_sequence[i * kActionCount + static_cast<std::size_t>(actions_[i])] = 1.0;
}

InputShapes microflow_input_shapes(const CompositeSpace& space) {
  InputShapes shapes;
  for (const auto& m : space.modules()) {
    if (m.family == "fusion") continue;
    if (m.name == "time" || m.name == "sequence") {
      shapes[m.name] = {kWindow, 3};
    } else if (m.name == "traffic") {
      shapes[m.name] = {1, 6};
    } else {
      throw ConfigError(fmt::format("microflow has no observation source for module '{}'", m.name));
    }
  }
  return shapes;
}

namespace {

EncoderInput encoder_input(const CompositeEncoder& e, const Observation& o) {
  EncoderInput x;
  for (const auto& s : e.sources()) {
    if (s.name == "time") {
      x.push_back(o.time_series);
    } else if (s.name == "traffic") {
      x.push_back(o.traffic_vector);
    } else {
      x.push_back(o.action_sequence);
    }
  }
  return x;
}

struct Adam {
  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  std::size_t t = 0;

  Adam(double lr_, std::size_t n) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::span<double> p, std::span<const double> g) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// Linear policy head over the encoder state.
struct PolicyHead {
  std::size_t width = 0;
  std::vector<double> params;  // kActionCount x width weights, then kActionCount biases

  PolicyHead(std::size_t w, Rng& rng) : width(w), params(kActionCount * (w + 1), 0.0) {
    const double a = std::sqrt(6.0 / static_cast<double>(w + kActionCount));
    for (std::size_t i = 0; i < kActionCount * w; ++i) params[i] = a * (2.0 * uniform01(rng) - 1.0);
  }

  std::array<double, kActionCount> probs(const std::vector<double>& s) const {
    std::array<double, kActionCount> z{};
    for (std::size_t a = 0; a < kActionCount; ++a) {
      double acc = params[kActionCount * width + a];
      for (std::size_t i = 0; i < width; ++i) acc += params[a * width + i] * s[i];
      z[a] = acc;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& x : z) sum += (x = std::exp(x - mx));
    for (auto& x : z) x /= sum;
    return z;
  }

  // Accumulates head gradients for dLoss/dlogits; returns dLoss/dstate.
  std::vector<double> backward(const std::vector<double>& s, const std::array<double, kActionCount>& dlogits,
                               std::span<double> g) const {
    std::vector<double> ds(width, 0.0);
    for (std::size_t a = 0; a < kActionCount; ++a) {
      g[kActionCount * width + a] += dlogits[a];
      for (std::size_t i = 0; i < width; ++i) {
        g[a * width + i] += dlogits[a] * s[i];
        ds[i] += dlogits[a] * params[a * width + i];
      }
    }
    return ds;
  }
};

std::size_t greedy(const std::array<double, kActionCount>& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::size_t sample(const std::array<double, kActionCount>& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t a = 0; a + 1 < kActionCount; ++a) {
    acc += p[a];
    if (u < acc) return a;
  }
  return kActionCount - 1;
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

struct StepRecord {
  EncoderCache cache;
  std::vector<double> state;
  std::array<double, kActionCount> probs{};
  std::size_t action = 0;
  double reward = 0.0;
};

}  // namespace

TrainResult train_and_evaluate(const CompositeSpace& space, const DesignVector& v, const TrainEvalBudget& budget,
                               std::uint64_t seed, const TrainerOptions& options) {
  if (budget.episode_length == 0) throw ConfigError("episode length must be positive");
  auto encoder = CompositeEncoder::instantiate(space, v, microflow_input_shapes(space), derive_seed(seed, 1));
  Rng head_rng(derive_seed(seed, 2));
  PolicyHead head(encoder.state_width(), head_rng);
  Rng policy_rng(derive_seed(seed, 3));

  TrainResult result;
  result.param_count = encoder.param_count() + head.params.size();
  Adam enc_opt(options.learning_rate, encoder.param_count());
  Adam head_opt(options.learning_rate, head.params.size());
  std::vector<double> enc_grad(encoder.param_count()), head_grad(head.params.size());
  std::vector<double> baseline(budget.episode_length, 0.0);
  bool baseline_ready = false;
  bool diverged = false;

  MicroFlow env(derive_seed(seed, 4));
  std::vector<StepRecord> segment;
  std::size_t done = 0;
  while (done < budget.train_steps && !diverged) {
    const std::size_t len = std::min(budget.episode_length, budget.train_steps - done);
    segment.assign(len, {});
    for (auto& rec : segment) {
      rec.state = encoder.forward(encoder_input(encoder, env.observation()), rec.cache);
      rec.probs = head.probs(rec.state);
      rec.action = sample(rec.probs, policy_rng);
      rec.reward = env.step(static_cast<Action>(rec.action)).reward;
      result.train_rewards.push_back(rec.reward);
    }
    done += len;

    std::vector<double> adv(len);
    double ret = 0.0;
    for (std::size_t t = len; t-- > 0;) {
      ret = segment[t].reward + options.discount * ret;
      adv[t] = ret - (baseline_ready ? baseline[t] : ret);
      baseline[t] = baseline_ready ? 0.9 * baseline[t] + 0.1 * ret : ret;
    }
    if (!baseline_ready) {
      baseline_ready = true;
      continue;  // the first segment only seeds the baseline
    }

    const std::size_t epochs = options.ppo ? std::max<std::size_t>(1, options.ppo_epochs) : 1;
    for (std::size_t epoch = 0; epoch < epochs && !diverged; ++epoch) {
      std::fill(enc_grad.begin(), enc_grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        auto& rec = segment[t];
        std::array<double, kActionCount> p = rec.probs;
        double weight = adv[t];
        if (options.ppo) {
          EncoderCache fresh;
          EncoderInput x;
          for (const auto& mc : rec.cache.modules) x.push_back(mc.input);
          rec.state = encoder.forward(x, fresh);
          rec.cache = std::move(fresh);
          p = head.probs(rec.state);
          const double ratio = p[rec.action] / rec.probs[rec.action];
          const bool clipped = (adv[t] > 0.0 && ratio > 1.0 + options.ppo_clip) ||
                               (adv[t] < 0.0 && ratio < 1.0 - options.ppo_clip);
          if (clipped) continue;
          weight = adv[t] * ratio;
        }
        std::array<double, kActionCount> dlogits{};
        for (std::size_t a = 0; a < kActionCount; ++a)
          dlogits[a] = -weight * ((a == rec.action ? 1.0 : 0.0) - p[a]) / static_cast<double>(len);
        const auto ds = head.backward(rec.state, dlogits, head_grad);
        encoder.backward(rec.cache, ds, enc_grad);
      }
      if (!all_finite(enc_grad) || !all_finite(head_grad)) {
        diverged = true;
        break;
      }
      enc_opt.step(encoder.params(), enc_grad);
      head_opt.step(head.params, head_grad);
      if (!all_finite(encoder.params()) || !all_finite(head.params)) diverged = true;
    }
  }

  if (diverged) {
    result.signals.failed = true;
    result.signals.task_metric = 0.0;
    return result;
  }

  // Greedy evaluation on a fresh environment, with evenly strided traces.
  MicroFlow eval_env(derive_seed(seed, 5));
  const std::size_t samples = std::min(options.trace_samples, budget.eval_steps);
  std::vector<std::size_t> trace_steps(samples);
  for (std::size_t j = 0; j < samples; ++j) trace_steps[j] = j * budget.eval_steps / samples;
  std::size_t next_trace = 0;
  double reward_sum = 0.0;
  for (std::size_t t = 0; t < budget.eval_steps; ++t) {
    EncoderCache cache;
    const auto state = encoder.forward(encoder_input(encoder, eval_env.observation()), cache);
    if (next_trace < samples && trace_steps[next_trace] == t) {
      for (auto& [key, row] : encoder.trace(cache)) {
        auto& m = result.traces[key];
        if (m.rows == 0) m = SampleMatrix(samples, row.size());
        std::copy(row.begin(), row.end(), m.values.begin() + static_cast<std::ptrdiff_t>(next_trace * m.cols));
      }
      ++next_trace;
    }
    const auto step = eval_env.step(static_cast<Action>(greedy(head.probs(state))));
    result.eval_speeds.push_back(step.speed);
    reward_sum += step.reward;
  }

  auto& s = result.signals;
  if (!result.eval_speeds.empty())
    s.task_metric = std::accumulate(result.eval_speeds.begin(), result.eval_speeds.end(), 0.0) /
                    static_cast<double>(result.eval_speeds.size());
  if (budget.train_steps == 0) {
    s.average_reward = budget.eval_steps > 0 ? reward_sum / static_cast<double>(budget.eval_steps) : 0.0;
  } else {
    const std::size_t tail = std::max<std::size_t>(1, (budget.train_steps + 9) / 10);
    const auto begin = result.train_rewards.end() - static_cast<std::ptrdiff_t>(tail);
    s.average_reward = std::accumulate(begin, result.train_rewards.end(), 0.0) / static_cast<double>(tail);
  }
  if (samples >= 2) s.feature_info = collect_feature_info(result.traces, encoder_feature_pairs(encoder), options.bins);
  if (!std::isfinite(s.task_metric) || !std::isfinite(s.average_reward)) {
    s = SignalSet{};
    s.failed = true;
  }
  return result;
}

double autocorrelation(std::span<const double> x, std::size_t lag) {
  const std::size_t n = x.size();
  if (lag >= n) return 0.0;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  if (var == 0.0) return 0.0;
  double cov = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) cov += (x[i] - mean) * (x[i + lag] - mean);
  return cov / var;
}

std::size_t autocorrelation_peak(std::span<const double> x, std::size_t min_lag, std::size_t max_lag) {
  std::size_t best = min_lag;
  double best_r = -INFINITY;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    const double r = autocorrelation(x, lag);
    if (r > best_r) {
      best_r = r;
      best = lag;
    }
  }
  return best;
}

MicroFlowEvaluator::MicroFlowEvaluator(const CompositeSpace& space, TrainEvalBudget budget, TrainerOptions options,
                                       std::string trace_dir)
    : space_(&space), budget_(budget), options_(options), trace_dir_(std::move(trace_dir)) {
  microflow_input_shapes(space);
}

SignalSet MicroFlowEvaluator::evaluate(const DesignVector& v, std::uint64_t eval_seed, std::size_t train_steps) const {
  auto budget = budget_;
  budget.train_steps = train_steps;
  auto result = train_and_evaluate(*space_, v, budget, eval_seed, options_);
  if (!trace_dir_.empty() && !result.traces.empty()) {
    std::filesystem::create_directories(trace_dir_);
    std::ofstream out(std::filesystem::path(trace_dir_) / fmt::format("traces-{:016x}.csv", eval_seed));
    write_traces_csv(out, result.traces);
  }
  return result.signals;
}

}  // namespace lacer
