#include "lacer/encoder.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace lacer {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::swish: return "swish";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::elu: return "elu";
  }
  return "relu";
}

Activation activation_from_string(std::string_view s) {
  for (auto a : {Activation::relu, Activation::gelu, Activation::swish, Activation::sigmoid, Activation::tanh,
                 Activation::elu})
    if (to_string(a) == s) return a;
  throw ConfigError(fmt::format("unknown activation '{}'", s));
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::gelu: return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
    case Activation::swish: return z * sigmoid(z);
    case Activation::sigmoid: return sigmoid(z);
    case Activation::tanh: return std::tanh(z);
    case Activation::elu: return z > 0.0 ? z : std::expm1(z);
  }
  return z;
}

double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: return 0.5 * (1.0 + std::erf(z * kInvSqrt2)) + z * kInvSqrt2Pi * std::exp(-0.5 * z * z);
    case Activation::swish: {
      const double s = sigmoid(z);
      return s + z * s * (1.0 - s);
    }
    case Activation::sigmoid: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::elu: return z > 0.0 ? 1.0 : std::exp(z);
  }
  return 1.0;
}

namespace {

class Builder {
 public:
  explicit Builder(std::uint64_t seed) : rng_(derive_seed(seed, fnv1a("encoder-init"))) {}

  DenseLayer dense(std::size_t in, std::size_t out, bool bias = true) {
    DenseLayer l{in, out, params.size(), 0, bias};
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t i = 0; i < in * out; ++i) params.push_back(a * (2.0 * uniform01(rng_) - 1.0));
    l.bias = params.size();
    if (bias) params.resize(params.size() + out, 0.0);
    return l;
  }

  FfnBlock ffn(std::size_t in, std::size_t dim, std::size_t ratio, std::size_t depth, Activation act) {
    FfnBlock b;
    b.activation = act;
    const std::size_t hidden = dim * ratio;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t from = l == 0 ? in : hidden;
      const std::size_t to = l + 1 == depth ? dim : hidden;
      b.layers.push_back(dense(from, to));
    }
    return b;
  }

  std::vector<double> params;

 private:
  Rng rng_;
};

std::size_t count_choice(const DesignVector& v, const ModuleSpace& m, std::string_view choice) {
  if (m.find(choice) == nullptr)
    throw ConfigError(fmt::format("module '{}' ({}) lacks choice '{}'", m.name, m.family, choice));
  const double x = v.number(m.name, choice);
  if (x < 1.0 || x != std::floor(x))
    throw ConfigError(fmt::format("{}.{} must be a positive integer", m.name, choice));
  return static_cast<std::size_t>(x);
}

Activation module_activation(const DesignVector& v, const ModuleSpace& m) {
  if (m.find("activation") == nullptr) return Activation::relu;
  return activation_from_string(v.label(m.name, "activation"));
}

void dense_forward(const DenseLayer& l, std::span<const double> p, const double* x, double* y) {
  for (std::size_t o = 0; o < l.out; ++o) {
    const double* w = p.data() + l.weight + o * l.in;
    double s = l.has_bias ? p[l.bias + o] : 0.0;
    for (std::size_t i = 0; i < l.in; ++i) s += w[i] * x[i];
    y[o] = s;
  }
}

// Accumulates parameter gradients; writes the input gradient when dx is set.
void dense_backward(const DenseLayer& l, std::span<const double> p, const double* x, const double* dy,
                    std::span<double> g, double* dx) {
  if (dx != nullptr) std::fill(dx, dx + l.in, 0.0);
  for (std::size_t o = 0; o < l.out; ++o) {
    const double d = dy[o];
    if (l.has_bias) g[l.bias + o] += d;
    if (d == 0.0) continue;
    double* gw = g.data() + l.weight + o * l.in;
    const double* w = p.data() + l.weight + o * l.in;
    for (std::size_t i = 0; i < l.in; ++i) {
      gw[i] += d * x[i];
      if (dx != nullptr) dx[i] += d * w[i];
    }
  }
}

std::vector<double> ffn_forward(const FfnBlock& b, std::span<const double> p, std::vector<double> x,
                                FfnCache& c) {
  c.inputs.clear();
  c.pre.clear();
  for (const auto& l : b.layers) {
    std::vector<double> z(l.out);
    dense_forward(l, p, x.data(), z.data());
    c.inputs.push_back(std::move(x));
    x.resize(l.out);
    for (std::size_t i = 0; i < l.out; ++i) x[i] = activate(b.activation, z[i]);
    c.pre.push_back(std::move(z));
  }
  c.output = x;
  return x;
}

std::vector<double> ffn_backward(const FfnBlock& b, std::span<const double> p, const FfnCache& c,
                                 std::vector<double> dy, std::span<double> g) {
  for (std::size_t li = b.layers.size(); li-- > 0;) {
    const auto& l = b.layers[li];
    for (std::size_t i = 0; i < l.out; ++i) dy[i] *= activate_grad(b.activation, c.pre[li][i]);
    std::vector<double> dx(l.in);
    dense_backward(l, p, c.inputs[li].data(), dy.data(), g, dx.data());
    dy = std::move(dx);
  }
  return dy;
}

std::vector<double> mhsa_forward(const MhsaBlock& b, const InputShape& shape, std::span<const double> p,
                                 const std::vector<double>& x, MhsaCache& c) {
  const std::size_t T = shape.rows, dm = b.dim, H = b.heads, dh = dm / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.x = x;
  c.q.assign(T * dm, 0.0);
  c.k.assign(T * dm, 0.0);
  c.v.assign(T * dm, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = x.data() + t * shape.cols;
    dense_forward(b.query, p, xt, c.q.data() + t * dm);
    dense_forward(b.key, p, xt, c.k.data() + t * dm);
    dense_forward(b.value, p, xt, c.v.data() + t * dm);
  }
  c.attn.assign(H * T * T, 0.0);
  c.z.assign(T * dm, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t t = 0; t < T; ++t) {
      double* a = c.attn.data() + (h * T + t) * T;
      double mx = -INFINITY;
      for (std::size_t s = 0; s < T; ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) dot += c.q[t * dm + off + j] * c.k[s * dm + off + j];
        a[s] = dot * scale;
        mx = std::max(mx, a[s]);
      }
      double sum = 0.0;
      for (std::size_t s = 0; s < T; ++s) {
        a[s] = std::exp(a[s] - mx);
        sum += a[s];
      }
      for (std::size_t s = 0; s < T; ++s) a[s] /= sum;
      for (std::size_t s = 0; s < T; ++s)
        for (std::size_t j = 0; j < dh; ++j) c.z[t * dm + off + j] += a[s] * c.v[s * dm + off + j];
    }
  }
  c.pooled.assign(dm, 0.0);
  std::vector<double> y(dm);
  for (std::size_t t = 0; t < T; ++t) {
    dense_forward(b.output, p, c.z.data() + t * dm, y.data());
    for (std::size_t j = 0; j < dm; ++j) c.pooled[j] += y[j] / static_cast<double>(T);
  }
  return c.pooled;
}

void mhsa_backward(const MhsaBlock& b, const InputShape& shape, std::span<const double> p, const MhsaCache& c,
                   const std::vector<double>& dpooled, std::span<double> g) {
  const std::size_t T = shape.rows, dm = b.dim, H = b.heads, dh = dm / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dy(dm);
  for (std::size_t j = 0; j < dm; ++j) dy[j] = dpooled[j] / static_cast<double>(T);
  std::vector<double> dz(T * dm);
  for (std::size_t t = 0; t < T; ++t) dense_backward(b.output, p, c.z.data() + t * dm, dy.data(), g, dz.data() + t * dm);

  std::vector<double> dq(T * dm, 0.0), dk(T * dm, 0.0), dv(T * dm, 0.0), da(T);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t t = 0; t < T; ++t) {
      const double* a = c.attn.data() + (h * T + t) * T;
      double weighted = 0.0;
      for (std::size_t s = 0; s < T; ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) {
          dot += dz[t * dm + off + j] * c.v[s * dm + off + j];
          dv[s * dm + off + j] += a[s] * dz[t * dm + off + j];
        }
        da[s] = dot;
        weighted += a[s] * dot;
      }
      for (std::size_t s = 0; s < T; ++s) {
        const double ds = a[s] * (da[s] - weighted) * scale;
        if (ds == 0.0) continue;
        for (std::size_t j = 0; j < dh; ++j) {
          dq[t * dm + off + j] += ds * c.k[s * dm + off + j];
          dk[s * dm + off + j] += ds * c.q[t * dm + off + j];
        }
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = c.x.data() + t * shape.cols;
    dense_backward(b.query, p, xt, dq.data() + t * dm, g, nullptr);
    dense_backward(b.key, p, xt, dk.data() + t * dm, g, nullptr);
    dense_backward(b.value, p, xt, dv.data() + t * dm, g, nullptr);
  }
}

}  // namespace

CompositeEncoder CompositeEncoder::instantiate(const CompositeSpace& space, const DesignVector& v,
                                               const InputShapes& shapes, std::uint64_t seed) {
  const auto report = validate(space, v);
  if (!report.ok())
    throw SpaceError(fmt::format("invalid design vector ({}: {})", report.violations.front().path,
                                 report.violations.front().message));
  Builder builder(seed);
  CompositeEncoder e;
  e.seed_ = seed;
  const ModuleSpace* fusion = nullptr;
  for (const auto& m : space.modules()) {
    if (m.family == "fusion") {
      if (fusion != nullptr) throw ConfigError("more than one fusion module");
      fusion = &m;
      continue;
    }
    if (m.family != "mhsa+ffn" && m.family != "ffn")
      throw ConfigError(fmt::format("unsupported family '{}' for module '{}'", m.family, m.name));
    const auto it = shapes.find(m.name);
    if (it == shapes.end() || it->second.size() == 0)
      throw ConfigError(fmt::format("no input shape for module '{}'", m.name));
    SourceModule s;
    s.name = m.name;
    s.shape = it->second;
    const auto dim = count_choice(v, m, "dimension");
    const auto ratio = count_choice(v, m, "ratio");
    const auto depth = count_choice(v, m, "depth");
    if (m.family == "mhsa+ffn") {
      const auto heads = count_choice(v, m, "heads");
      if (dim % heads != 0)
        throw ConfigError(fmt::format("{}: heads={} does not divide dimension={}", m.name, heads, dim));
      MhsaBlock b;
      b.heads = heads;
      b.dim = dim;
      b.query = builder.dense(s.shape.cols, dim, false);
      b.key = builder.dense(s.shape.cols, dim, false);
      b.value = builder.dense(s.shape.cols, dim, false);
      b.output = builder.dense(dim, dim);
      s.attention = b;
      s.ffn = builder.ffn(dim, dim, ratio, depth, module_activation(v, m));
    } else {
      s.ffn = builder.ffn(s.shape.size(), dim, ratio, depth, module_activation(v, m));
    }
    e.sources_.push_back(std::move(s));
  }
  if (fusion == nullptr) throw ConfigError("space has no fusion module");
  if (e.sources_.empty()) throw ConfigError("space has no source modules");
  std::size_t fused_in = 0;
  for (const auto& s : e.sources_) fused_in += s.ffn.out_dim();
  e.fusion_ = builder.ffn(fused_in, count_choice(v, *fusion, "dimension"), count_choice(v, *fusion, "ratio"),
                          count_choice(v, *fusion, "depth"), module_activation(v, *fusion));
  e.params_ = std::move(builder.params);
  return e;
}

std::vector<double> CompositeEncoder::forward(const EncoderInput& x, EncoderCache& cache) const {
  if (x.size() != sources_.size())
    throw Error(fmt::format("encoder expects {} sources, got {}", sources_.size(), x.size()));
  cache.modules.resize(sources_.size());
  cache.fusion_input.clear();
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    const auto& s = sources_[i];
    if (x[i].size() != s.shape.size())
      throw Error(fmt::format("source '{}' expects {} values, got {}", s.name, s.shape.size(), x[i].size()));
    auto& mc = cache.modules[i];
    mc.input = x[i];
    std::vector<double> h = s.attention ? mhsa_forward(*s.attention, s.shape, params_, x[i], mc.mhsa) : x[i];
    const auto out = ffn_forward(s.ffn, params_, std::move(h), mc.ffn);
    cache.fusion_input.insert(cache.fusion_input.end(), out.begin(), out.end());
  }
  return ffn_forward(fusion_, params_, cache.fusion_input, cache.fusion);
}

void CompositeEncoder::backward(const EncoderCache& cache, std::span<const double> d_state,
                                std::span<double> grads) const {
  if (grads.size() != params_.size()) throw Error("gradient buffer size mismatch");
  if (d_state.size() != state_width()) throw Error("upstream gradient width mismatch");
  const auto d_fused =
      ffn_backward(fusion_, params_, cache.fusion, std::vector<double>(d_state.begin(), d_state.end()), grads);
  std::size_t off = 0;
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    const auto& s = sources_[i];
    const auto width = s.ffn.out_dim();
    std::vector<double> d_out(d_fused.begin() + static_cast<std::ptrdiff_t>(off),
                              d_fused.begin() + static_cast<std::ptrdiff_t>(off + width));
    off += width;
    const auto d_in = ffn_backward(s.ffn, params_, cache.modules[i].ffn, std::move(d_out), grads);
    if (s.attention) mhsa_backward(*s.attention, s.shape, params_, cache.modules[i].mhsa, d_in, grads);
  }
}

std::vector<double> CompositeEncoder::forward(const EncoderInput& x) {
  EncoderCache cache;
  auto out = forward(x, cache);
  last_ = std::move(cache);
  return out;
}

std::vector<double> CompositeEncoder::backward(std::span<const double> d_state) const {
  if (!last_) throw Error("backward called without a cached forward pass");
  std::vector<double> g(params_.size(), 0.0);
  backward(*last_, d_state, g);
  return g;
}

ForwardTrace CompositeEncoder::trace(const EncoderCache& cache) const {
  ForwardTrace t;
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    t[sources_[i].name + "_in"] = cache.modules[i].input;
    t[sources_[i].name + "_out"] = cache.modules[i].ffn.output;
  }
  t["fused"] = cache.fusion.output;
  return t;
}

ForwardTrace CompositeEncoder::trace() const {
  if (!last_) throw Error("no cached forward pass");
  return trace(*last_);
}

nlohmann::ordered_json CompositeEncoder::checkpoint(const CompositeSpace& space, const DesignVector& v) const {
  nlohmann::ordered_json j;
  j["space_id"] = space.space_id();
  j["design"] = design_to_json(space, v);
  j["seed"] = seed_;
  j["params"] = params_;
  return j;
}

CompositeEncoder CompositeEncoder::restore(const CompositeSpace& space, const nlohmann::json& checkpoint,
                                           const InputShapes& shapes) {
  if (checkpoint.at("space_id").get<std::string>() != space.space_id())
    throw ConfigError("checkpoint belongs to a different space");
  const auto v = design_from_json(checkpoint.at("design"));
  auto e = instantiate(space, v, shapes, checkpoint.at("seed").get<std::uint64_t>());
  const auto params = checkpoint.at("params").get<std::vector<double>>();
  if (params.size() != e.params_.size())
    throw ConfigError(fmt::format("checkpoint has {} parameters, encoder needs {}", params.size(), e.params_.size()));
  e.params_ = params;
  return e;
}

std::vector<FeaturePairSpec> encoder_feature_pairs(const CompositeEncoder& e) {
  std::vector<FeaturePairSpec> pairs;
  for (const auto& s : e.sources()) pairs.push_back({s.name + "_io", s.name + "_in", s.name + "_out"});
  for (const auto& s : e.sources()) pairs.push_back({s.name + "_fused", s.name + "_out", "fused"});
  return pairs;
}

}  // namespace lacer
