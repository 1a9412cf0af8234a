#pragma once

#include <cstdint>
#include <string>

#include "lacer/search_space.hpp"
#include "lacer/signals.hpp"

namespace lacer {

/// A design vector together with its measured signals.
struct Evaluation {
  DesignVector design;
  SignalSet signals;
};

/// Common interface of the evaluation backends (surrogate, MicroFlow).
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  /// `train_steps` is the training budget for this evaluation; backends that
  /// do not train ignore it.
  virtual SignalSet evaluate(const DesignVector& v, std::uint64_t eval_seed,
                             std::size_t train_steps) const = 0;
  virtual std::size_t default_train_steps() const = 0;
  virtual std::string name() const = 0;
};

}  // namespace lacer
