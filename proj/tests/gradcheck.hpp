#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "lacer/encoder.hpp"

namespace lacer::test {

/// Two-module space: one source block plus a fusion FFN, every choice fixed.
inline CompositeSpace probe_space(const std::string& family, const std::string& activation, std::size_t heads) {
  const std::string source_choices =
      family == "mhsa+ffn"
          ? fmt::format(R"({{"name":"heads","kind":"ordinal","values":[{}]}},)", heads)
          : fmt::format(R"({{"name":"activation","kind":"categorical","values":["{}"]}},)", activation);
  const auto doc = fmt::format(R"({{"space_id":"probe","modules":[
    {{"name":"src","family":"{}","choices":[{}
      {{"name":"dimension","kind":"ordinal","values":[8]}},
      {{"name":"ratio","kind":"ordinal","values":[2]}},
      {{"name":"depth","kind":"ordinal","values":[2]}}]}},
    {{"name":"fusion","family":"fusion","choices":[
      {{"name":"activation","kind":"categorical","values":["{}"]}},
      {{"name":"dimension","kind":"ordinal","values":[6]}},
      {{"name":"ratio","kind":"ordinal","values":[1]}},
      {{"name":"depth","kind":"ordinal","values":[1]}}]}}]}})",
                               family, source_choices, activation);
  return load_space(doc);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Max relative error between backward() and central differences (h = 1e-5)
/// of L = w . forward(x), over `probes` parameters drawn from `candidates`.
inline double gradient_check(CompositeEncoder& e, const EncoderInput& x, std::span<const double> w,
                             const std::vector<std::size_t>& candidates, std::size_t probes, Rng& rng) {
  EncoderCache cache;
  e.forward(x, cache);
  std::vector<double> grads(e.param_count(), 0.0);
  e.backward(cache, w, grads);

  auto loss = [&] {
    EncoderCache c;
    const auto y = e.forward(x, c);
    double l = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) l += w[i] * y[i];
    return l;
  };
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t k = candidates[uniform_index(rng, candidates.size())];
    auto params = e.params();
    const double saved = params[k];
    params[k] = saved + h;
    const double up = loss();
    params[k] = saved - h;
    const double down = loss();
    params[k] = saved;
    worst = std::max(worst, relative_error((up - down) / (2 * h), grads[k]));
  }
  return worst;
}

struct BlockCheck {
  std::string label;
  double max_error = 0.0;
};

/// Runs the gradient check for every FFN activation and every MHSA head count.
inline std::vector<BlockCheck> check_all_blocks(std::size_t probes, std::uint64_t seed) {
  std::vector<BlockCheck> out;
  Rng rng(seed);
  auto run = [&](const std::string& label, const CompositeSpace& space, bool attention_only) {
    const auto v = enumerate(space, 1).front();
    const InputShapes shapes{{"src", attention_only ? InputShape{5, 3} : InputShape{1, 7}}};
    auto e = CompositeEncoder::instantiate(space, v, shapes, rng());
    EncoderInput x(1, std::vector<double>(shapes.at("src").size()));
    for (auto& xi : x[0]) xi = standard_normal(rng);
    std::vector<double> w(e.state_width());
    for (auto& wi : w) wi = standard_normal(rng);
    std::vector<std::size_t> candidates;
    if (attention_only) {
      const auto& a = *e.sources()[0].attention;
      for (const auto* layer : {&a.query, &a.key, &a.value, &a.output}) {
        for (std::size_t i = 0; i < layer->in * layer->out; ++i) candidates.push_back(layer->weight + i);
        if (layer->has_bias)
          for (std::size_t i = 0; i < layer->out; ++i) candidates.push_back(layer->bias + i);
      }
    } else {
      for (std::size_t i = 0; i < e.param_count(); ++i) candidates.push_back(i);
    }
    out.push_back({label, gradient_check(e, x, w, candidates, probes, rng)});
  };
  for (const char* act : {"relu", "gelu", "swish", "sigmoid", "tanh", "elu"})
    run(fmt::format("ffn/{}", act), probe_space("ffn", act, 0), false);
  for (std::size_t heads : {2, 4, 8})
    run(fmt::format("mhsa/heads={}", heads), probe_space("mhsa+ffn", "tanh", heads), true);
  return out;
}

}  // namespace lacer::test
