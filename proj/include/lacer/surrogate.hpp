#pragma once

#include <cstdint>
#include <vector>

#include "lacer/evaluation.hpp"
#include "lacer/search_space.hpp"

namespace lacer {

struct InteractionTerm {
  std::size_t first = 0;   // flat choice index
  std::size_t second = 0;  // flat choice index, > first
  std::vector<std::vector<double>> table;  // [value of first][value of second]
};

/// Seeded synthetic landscape over a space. Utilities are drawn once from the
/// seed, so the noiseless landscape is a pure function of (space, seed).
struct SurrogateSpec {
  std::uint64_t seed = 0;
  double utility_scale = 0.1;
  double noise = 0.02;
  double offset = 0.0;
  std::vector<std::vector<double>> utilities;  // [flat choice][value index]
  std::vector<InteractionTerm> interactions;
  std::vector<double> module_center;  // expected module subtotal
  std::vector<double> module_spread;

  static SurrogateSpec make(const CompositeSpace& space, std::uint64_t seed, double noise = 0.02);
};

inline constexpr std::size_t kInteractionPairs = 4;

double surrogate_noiseless(const SurrogateSpec& spec, const IndexVector& idx);
/// Utilities plus interactions whose two choices both lie in module `m`.
double surrogate_module_subtotal(const SurrogateSpec& spec, const CompositeSpace& space, std::size_t m,
                                 const IndexVector& idx);

/// Throws SpaceError for invalid vectors.
SignalSet evaluate_surrogate(const SurrogateSpec& spec, const CompositeSpace& space, const DesignVector& v,
                             std::uint64_t eval_seed);

struct SurrogateOptimum {
  DesignVector design;
  double value = 0.0;
  bool exact = true;
};

inline constexpr std::uint64_t kExhaustiveLimit = 1'000'000;
inline constexpr std::size_t kApproximateSamples = 100'000;

/// Exhaustive noiseless optimum for spaces up to kExhaustiveLimit; otherwise
/// the best of kApproximateSamples uniform samples, flagged as approximate.
SurrogateOptimum optimum(const SurrogateSpec& spec, const CompositeSpace& space);

class SurrogateEvaluator : public Evaluator {
 public:
  SurrogateEvaluator(const CompositeSpace& space, SurrogateSpec spec) : space_(&space), spec_(std::move(spec)) {}
  SignalSet evaluate(const DesignVector& v, std::uint64_t eval_seed, std::size_t train_steps) const override;
  std::size_t default_train_steps() const override { return 0; }
  std::string name() const override { return "surrogate"; }
  const SurrogateSpec& spec() const noexcept { return spec_; }

 private:
  const CompositeSpace* space_;
  SurrogateSpec spec_;
};

}  // namespace lacer
