#include <doctest.h>

#include <numeric>

#include "gradcheck.hpp"
#include "lacer/encoder.hpp"
#include "lacer/microflow.hpp"

using namespace lacer;

namespace {

EncoderInput random_input(const CompositeEncoder& e, Rng& rng) {
  EncoderInput x;
  for (const auto& s : e.sources()) {
    x.emplace_back(s.shape.size());
    for (auto& v : x.back()) v = standard_normal(rng);
  }
  return x;
}

std::size_t ffn_count(std::size_t in, std::size_t dim, std::size_t ratio, std::size_t depth) {
  std::size_t n = 0;
  const std::size_t hidden = dim * ratio;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t from = l == 0 ? in : hidden;
    const std::size_t to = l + 1 == depth ? dim : hidden;
    n += from * to + to;
  }
  return n;
}

std::size_t mhsa_count(std::size_t cols, std::size_t dim, std::size_t ratio, std::size_t depth) {
  return 3 * cols * dim + dim * dim + dim + ffn_count(dim, dim, ratio, depth);
}

}  // namespace

TEST_CASE("activations") {
  for (const char* name : {"relu", "gelu", "swish", "sigmoid", "tanh", "elu"})
    CHECK(to_string(activation_from_string(name)) == name);
  CHECK_THROWS_WITH_AS(activation_from_string("softsign"), doctest::Contains("unknown activation"), ConfigError);
  for (const auto a : {Activation::gelu, Activation::swish, Activation::sigmoid, Activation::tanh, Activation::elu}) {
    for (double z : {-2.0, -0.3, 0.4, 1.7}) {
      const double fd = (activate(a, z + 1e-6) - activate(a, z - 1e-6)) / 2e-6;
      CHECK(activate_grad(a, z) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("parameter counts") {
  // one dense layer 10 -> 32 with bias
  const auto doc = R"({"space_id":"one","modules":[
    {"name":"src","family":"ffn","choices":[
      {"name":"dimension","kind":"ordinal","values":[32]},
      {"name":"ratio","kind":"ordinal","values":[1]},
      {"name":"depth","kind":"ordinal","values":[1]}]},
    {"name":"fusion","family":"fusion","choices":[
      {"name":"dimension","kind":"ordinal","values":[4]},
      {"name":"ratio","kind":"ordinal","values":[1]},
      {"name":"depth","kind":"ordinal","values":[1, 2]}]}]})";
  const auto s = load_space(doc);
  const auto v = enumerate(s, 1).front();
  const auto e = CompositeEncoder::instantiate(s, v, {{"src", {1, 10}}}, 1);
  CHECK(e.param_count() == 352 + (32 * 4 + 4));
  CHECK(e.sources()[0].ffn.layers.size() == 1);

  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  const auto expert = expert_default(traffic);
  const auto te = CompositeEncoder::instantiate(traffic, expert, shapes, 1);
  const std::size_t closed = mhsa_count(3, 8, 2, 2) + ffn_count(6, 32, 1, 1) + mhsa_count(3, 16, 2, 2) +
                             ffn_count(8 + 32 + 16, 128, 1, 1);
  CHECK(closed == 9432);
  CHECK(te.param_count() == 9432);
  CHECK(te.state_width() == 128);

  auto deeper = expert;
  deeper.set("fusion", "depth", 2.0);
  CHECK(CompositeEncoder::instantiate(traffic, deeper, shapes, 1).param_count() > te.param_count());
}

TEST_CASE("construction guards") {
  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  auto v = expert_default(traffic);
  v.set("time", "heads", 8.0);
  v.set("time", "dimension", 8.0);
  CHECK_NOTHROW(CompositeEncoder::instantiate(traffic, v, shapes, 1));

  const auto odd = load_space(R"({"space_id":"odd","modules":[
    {"name":"src","family":"mhsa+ffn","choices":[
      {"name":"heads","kind":"ordinal","values":[3]},
      {"name":"dimension","kind":"ordinal","values":[8]},
      {"name":"ratio","kind":"ordinal","values":[1]},
      {"name":"depth","kind":"ordinal","values":[1]}]},
    {"name":"fusion","family":"fusion","choices":[
      {"name":"dimension","kind":"ordinal","values":[4]},
      {"name":"ratio","kind":"ordinal","values":[1]},
      {"name":"depth","kind":"ordinal","values":[1]}]}]})");
  CHECK_THROWS_AS(CompositeEncoder::instantiate(odd, enumerate(odd, 1).front(), {{"src", {4, 3}}}, 1), ConfigError);

  InputShapes missing = shapes;
  missing.erase("sequence");
  CHECK_THROWS_AS(CompositeEncoder::instantiate(traffic, expert_default(traffic), missing, 1), ConfigError);

  const auto mg = builtin_space("minigrid");
  CHECK_THROWS_WITH_AS(CompositeEncoder::instantiate(mg, expert_default(mg), {}, 1),
                       doctest::Contains("unsupported family"), ConfigError);
}

TEST_CASE("forward") {
  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  const auto expert = expert_default(traffic);

  auto zero = CompositeEncoder::instantiate(traffic, expert, shapes, 3);
  std::fill(zero.params().begin(), zero.params().end(), 0.0);
  Rng rng(1);
  EncoderCache cache;
  for (double y : zero.forward(random_input(zero, rng), cache)) CHECK(y == 0.0);

  auto a = CompositeEncoder::instantiate(traffic, expert, shapes, 9);
  auto b = CompositeEncoder::instantiate(traffic, expert, shapes, 9);
  Rng r1(5);
  const auto x = random_input(a, r1);
  const auto ya = a.forward(x);
  CHECK(ya == b.forward(x));
  CHECK(ya.size() == 128);
  std::vector<double> up(ya.size());
  for (auto& u : up) u = standard_normal(r1);
  CHECK(a.backward(up) == b.backward(up));

  const auto fresh = CompositeEncoder::instantiate(traffic, expert, shapes, 9);
  CHECK_THROWS_AS(fresh.backward(up), Error);
  CHECK_THROWS_AS(a.forward(EncoderInput{}), Error);
}

TEST_CASE("shape discipline over random designs") {
  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto v = random_sample(traffic, rng);
    auto e = CompositeEncoder::instantiate(traffic, v, shapes, i);
    const auto y = e.forward(random_input(e, rng));
    CHECK(y.size() == static_cast<std::size_t>(v.number("fusion", "dimension")));
    const auto trace = e.trace();
    for (const auto& s : e.sources()) {
      REQUIRE(trace.count(s.name + "_in") == 1);
      REQUIRE(trace.count(s.name + "_out") == 1);
      CHECK(trace.at(s.name + "_in").size() == s.shape.size());
      CHECK(trace.at(s.name + "_out").size() == s.ffn.out_dim());
    }
    REQUIRE(trace.count("fused") == 1);
    CHECK(trace.at("fused") == y);
  }
}

TEST_CASE("backward basics") {
  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  auto e = CompositeEncoder::instantiate(traffic, expert_default(traffic), shapes, 2);
  Rng rng(4);
  const auto x = random_input(e, rng);
  EncoderCache cache;
  const auto y = e.forward(x, cache);

  std::vector<double> grads(e.param_count(), 0.0);
  e.backward(cache, std::vector<double>(y.size(), 0.0), grads);
  CHECK(std::all_of(grads.begin(), grads.end(), [](double g) { return g == 0.0; }));

  // d(sum of outputs)/d(final bias) is the activation slope at each output
  e.backward(cache, std::vector<double>(y.size(), 1.0), grads);
  const auto& last = e.fusion().layers.back();
  const auto& pre = cache.fusion.pre.back();
  for (std::size_t i = 0; i < last.out; ++i)
    CHECK(grads[last.bias + i] == activate_grad(e.fusion().activation, pre[i]));
}

TEST_CASE("finite-difference gradients") {
  for (const auto& r : test::check_all_blocks(50, 2024)) {
    CAPTURE(r.label);
    CHECK(r.max_error <= 1e-4);
  }
}

TEST_CASE("full traffic encoder gradients") {
  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  Rng rng(77);
  for (int t = 0; t < 3; ++t) {
    const auto v = random_sample(traffic, rng);
    auto e = CompositeEncoder::instantiate(traffic, v, shapes, t);
    const auto x = random_input(e, rng);
    std::vector<double> w(e.state_width());
    for (auto& wi : w) wi = standard_normal(rng);
    std::vector<std::size_t> all(e.param_count());
    std::iota(all.begin(), all.end(), 0);
    CHECK(test::gradient_check(e, x, w, all, 100, rng) <= 1e-4);
  }
}

TEST_CASE("uniform attention pools permutation-invariantly") {
  const auto space = test::probe_space("mhsa+ffn", "tanh", 2);
  auto e = CompositeEncoder::instantiate(space, enumerate(space, 1).front(), {{"src", {5, 3}}}, 8);
  const auto& a = *e.sources()[0].attention;
  for (std::size_t i = 0; i < a.query.in * a.query.out; ++i) {
    e.params()[a.query.weight + i] = 0.0;
    e.params()[a.key.weight + i] = 0.0;
  }
  Rng rng(6);
  EncoderInput x(1, std::vector<double>(15));
  for (auto& v : x[0]) v = standard_normal(rng);
  EncoderInput shuffled = x;
  const std::size_t order[] = {3, 0, 4, 2, 1};
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 3; ++c) shuffled[0][t * 3 + c] = x[0][order[t] * 3 + c];
  EncoderCache c1, c2;
  const auto y1 = e.forward(x, c1);
  const auto y2 = e.forward(shuffled, c2);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  const auto traffic = builtin_space("traffic");
  const auto shapes = microflow_input_shapes(traffic);
  Rng rng(10);
  const auto v = random_sample(traffic, rng);
  auto e = CompositeEncoder::instantiate(traffic, v, shapes, 5);
  for (auto& p : e.params()) p += 0.01;
  const auto ck = nlohmann::json::parse(e.checkpoint(traffic, v).dump());
  auto r = CompositeEncoder::restore(traffic, ck, shapes);
  const auto x = random_input(e, rng);
  CHECK(r.forward(x) == e.forward(x));

  auto bad = ck;
  bad["params"].erase(0);
  CHECK_THROWS_AS(CompositeEncoder::restore(traffic, bad, shapes), ConfigError);
}

TEST_CASE("feature pairs") {
  const auto traffic = builtin_space("traffic");
  const auto e = CompositeEncoder::instantiate(traffic, expert_default(traffic), microflow_input_shapes(traffic), 1);
  const auto pairs = encoder_feature_pairs(e);
  REQUIRE(pairs.size() == 6);
  CHECK(pairs[0].name == "time_io");
  CHECK(pairs[0].x_source == "time_in");
  CHECK(pairs[0].y_source == "time_out");
  CHECK(pairs[5].name == "sequence_fused");
  CHECK(pairs[5].y_source == "fused");
}
