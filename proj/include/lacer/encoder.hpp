#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lacer/search_space.hpp"
#include "lacer/signals.hpp"

namespace lacer {

enum class Activation { relu, gelu, swish, sigmoid, tanh, elu };

std::string_view to_string(Activation a);
/// Throws ConfigError("unknown activation ...").
Activation activation_from_string(std::string_view s);
double activate(Activation a, double z);
double activate_grad(Activation a, double z);  // d activate / dz

/// Shape of one observation source, row-major. Vector sources have rows = 1.
struct InputShape {
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

using InputShapes = std::map<std::string, InputShape>;

/// y = W x + b with W stored row-major [out][in] at `weight` in the store.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool has_bias = true;
};

struct FfnBlock {
  Activation activation = Activation::relu;
  std::vector<DenseLayer> layers;
  std::size_t in_dim() const { return layers.front().in; }
  std::size_t out_dim() const { return layers.back().out; }
};

/// Single attention layer (Q, K, V without bias; output projection with bias),
/// mean-pooled over time and followed by an FFN.
struct MhsaBlock {
  std::size_t heads = 1;
  std::size_t dim = 0;
  DenseLayer query, key, value, output;
};

struct SourceModule {
  std::string name;
  InputShape shape;
  std::optional<MhsaBlock> attention;
  FfnBlock ffn;
};

struct FfnCache {
  std::vector<std::vector<double>> inputs;  // per layer
  std::vector<std::vector<double>> pre;     // per layer, before activation
  std::vector<double> output;
};

struct MhsaCache {
  std::vector<double> x, q, k, v;  // rows x in, rows x dim (row-major)
  std::vector<double> attn;        // heads x rows x rows
  std::vector<double> z;           // rows x dim, concatenated heads
  std::vector<double> pooled;
};

struct ModuleCache {
  std::vector<double> input;
  MhsaCache mhsa;
  FfnCache ffn;
};

struct EncoderCache {
  std::vector<ModuleCache> modules;
  std::vector<double> fusion_input;
  FfnCache fusion;
};

/// Trace snapshot keyed `<module>_in`, `<module>_out` and `fused`.
using ForwardTrace = std::map<std::string, std::vector<double>>;

/// Per source, in source-module order: flattened row-major input.
using EncoderInput = std::vector<std::vector<double>>;

/// Source-specific modules plus a fusion FFN over their concatenated outputs.
/// Supports the mhsa+ffn, ffn and fusion families.
class CompositeEncoder {
 public:
  /// Throws ConfigError for unsupported families, heads not dividing the
  /// dimension, unknown activations, or missing input shapes.
  static CompositeEncoder instantiate(const CompositeSpace& space, const DesignVector& v, const InputShapes& shapes,
                                      std::uint64_t seed);

  std::size_t param_count() const noexcept { return params_.size(); }
  std::size_t state_width() const { return fusion_.out_dim(); }
  const std::vector<SourceModule>& sources() const noexcept { return sources_; }
  const FfnBlock& fusion() const noexcept { return fusion_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  /// Pure forward pass filling `cache`. Throws Error on a shape mismatch.
  std::vector<double> forward(const EncoderInput& x, EncoderCache& cache) const;
  /// Accumulates dLoss/dparams into `grads` (size param_count()).
  void backward(const EncoderCache& cache, std::span<const double> d_state, std::span<double> grads) const;

  /// Stateful convenience pair: forward keeps the cache, backward returns fresh
  /// gradients. backward throws Error without a preceding forward.
  std::vector<double> forward(const EncoderInput& x);
  std::vector<double> backward(std::span<const double> d_state) const;

  ForwardTrace trace(const EncoderCache& cache) const;
  /// The trace of the last stateful forward.
  ForwardTrace trace() const;

  /// {space_id, design, seed, params} in canonical parameter order.
  nlohmann::ordered_json checkpoint(const CompositeSpace& space, const DesignVector& v) const;
  /// Rebuilds from a checkpoint; throws ConfigError on a parameter count mismatch.
  static CompositeEncoder restore(const CompositeSpace& space, const nlohmann::json& checkpoint,
                                  const InputShapes& shapes);

 private:
  std::vector<SourceModule> sources_;
  FfnBlock fusion_;
  std::vector<double> params_;
  std::uint64_t seed_ = 0;
  std::optional<EncoderCache> last_;
};

/// Feature pairs over the trace keys of an encoder: `<m>_io` for every source
/// module, then `<m>_fused`.
std::vector<FeaturePairSpec> encoder_feature_pairs(const CompositeEncoder& e);

}  // namespace lacer
