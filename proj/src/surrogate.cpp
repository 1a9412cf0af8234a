#include "lacer/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace lacer {

namespace {

constexpr double kFeatureCeiling = 4.0;  // bits

std::size_t module_begin(const CompositeSpace& space, std::size_t m) {
  std::size_t begin = 0;
  for (std::size_t i = 0; i < m; ++i) begin += space.modules()[i].choices.size();
  return begin;
}

}  // namespace

SurrogateSpec SurrogateSpec::make(const CompositeSpace& space, std::uint64_t seed, double noise) {
  SurrogateSpec spec;
  spec.seed = seed;
  spec.noise = noise;
  Rng rng(derive_seed(seed, fnv1a("surrogate-landscape")));
  const double s = spec.utility_scale;

  for (std::size_t f = 0; f < space.choice_count(); ++f) {
    std::vector<double> row(space.choice(f).domain.size());
    for (auto& u : row) u = s * uniform01(rng);
    spec.utilities.push_back(std::move(row));
  }

  const std::size_t n = space.choice_count();
  const std::size_t max_pairs = n * (n - 1) / 2;
  while (spec.interactions.size() < std::min(kInteractionPairs, max_pairs)) {
    std::size_t a = uniform_index(rng, n);
    std::size_t b = uniform_index(rng, n);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    const bool taken = std::any_of(spec.interactions.begin(), spec.interactions.end(),
                                   [&](const InteractionTerm& t) { return t.first == a && t.second == b; });
    if (taken) continue;
    InteractionTerm term{a, b, {}};
    term.table.assign(space.choice(a).domain.size(), std::vector<double>(space.choice(b).domain.size()));
    for (auto& row : term.table)
      for (auto& x : row) x = 2.0 * s * (2.0 * uniform01(rng) - 1.0);
    spec.interactions.push_back(std::move(term));
  }
  // Keeps every noiseless value at least 0.5 above zero.
  spec.offset = 0.5 + 2.0 * s * static_cast<double>(spec.interactions.size());

  for (std::size_t m = 0; m < space.modules().size(); ++m) {
    const auto begin = module_begin(space, m);
    const auto count = space.modules()[m].choices.size();
    double center = 0.0;
    for (std::size_t f = begin; f < begin + count; ++f) {
      double mean = 0.0;
      for (double u : spec.utilities[f]) mean += u;
      center += mean / static_cast<double>(spec.utilities[f].size());
    }
    spec.module_center.push_back(center);
    spec.module_spread.push_back(s * std::sqrt(static_cast<double>(count)) / 2.0);
  }
  return spec;
}

double surrogate_noiseless(const SurrogateSpec& spec, const IndexVector& idx) {
  double total = spec.offset;
  for (std::size_t f = 0; f < idx.size(); ++f) total += spec.utilities[f][idx[f]];
  for (const auto& t : spec.interactions) total += t.table[idx[t.first]][idx[t.second]];
  return total;
}

double surrogate_module_subtotal(const SurrogateSpec& spec, const CompositeSpace& space, std::size_t m,
                                 const IndexVector& idx) {
  const auto begin = module_begin(space, m);
  const auto end = begin + space.modules()[m].choices.size();
  double total = 0.0;
  for (std::size_t f = begin; f < end; ++f) total += spec.utilities[f][idx[f]];
  for (const auto& t : spec.interactions)
    if (t.first >= begin && t.second < end) total += t.table[idx[t.first]][idx[t.second]];
  return total;
}

SignalSet evaluate_surrogate(const SurrogateSpec& spec, const CompositeSpace& space, const DesignVector& v,
                             std::uint64_t eval_seed) {
  const auto report = validate(space, v);
  if (!report.ok())
    throw SpaceError(fmt::format("surrogate: invalid design vector ({}: {})", report.violations.front().path,
                                 report.violations.front().message));
  const auto idx = space.to_indices(v);
  Rng rng(derive_seed(spec.seed, eval_seed, fnv1a("surrogate-noise")));
  SignalSet s;
  const double noise_task = spec.noise * standard_normal(rng);
  const double noise_reward = spec.noise * standard_normal(rng);
  s.task_metric = surrogate_noiseless(spec, idx) + noise_task;
  s.average_reward = 0.8 * s.task_metric + noise_reward;
  for (std::size_t m = 0; m < space.modules().size(); ++m) {
    const double z = (surrogate_module_subtotal(spec, space, m, idx) - spec.module_center[m]) / spec.module_spread[m];
    const double bits = kFeatureCeiling / (1.0 + std::exp(-z));
    s.feature_info.push_back({space.modules()[m].name, bits, bits});
  }
  return s;
}

SurrogateOptimum optimum(const SurrogateSpec& spec, const CompositeSpace& space) {
  SurrogateOptimum best;
  best.value = -std::numeric_limits<double>::infinity();
  IndexVector best_idx;
  if (space.cardinality() <= kExhaustiveLimit) {
    DesignEnumerator e(space);
    while (auto idx = e.next_indices()) {
      const double v = surrogate_noiseless(spec, *idx);
      if (v > best.value) {
        best.value = v;
        best_idx = *idx;
      }
    }
    best.exact = true;
  } else {
    Rng rng(derive_seed(spec.seed, fnv1a("surrogate-optimum")));
    for (std::size_t i = 0; i < kApproximateSamples; ++i) {
      const auto idx = random_indices(space, rng);
      const double v = surrogate_noiseless(spec, idx);
      if (v > best.value) {
        best.value = v;
        best_idx = idx;
      }
    }
    best.exact = false;
  }
  best.design = space.from_indices(best_idx);
  return best;
}

SignalSet SurrogateEvaluator::evaluate(const DesignVector& v, std::uint64_t eval_seed, std::size_t) const {
  return evaluate_surrogate(spec_, *space_, v, eval_seed);
}

}  // namespace lacer
