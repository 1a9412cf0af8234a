#include <doctest.h>

#include "lacer/response_parser.hpp"

using namespace lacer;

namespace {

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

std::vector<ChoiceDiagnostic> problems(const RawParseResult& r) {
  std::vector<ChoiceDiagnostic> out;
  for (const auto& d : r.diagnostics)
    if (d.status != MatchStatus::matched) out.push_back(d);
  return out;
}

}  // namespace

TEST_CASE("extract_after_prefix") {
  std::string five;
  for (int i = 0; i < 5; ++i) five += "New Architecture " + std::to_string(i) + "\nbody\n";
  const auto blocks = extract_after_prefix(five);
  REQUIRE(blocks.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(blocks[i].find(std::to_string(i)) != std::string::npos);

  CHECK(extract_after_prefix("no architectures here").empty());

  const auto traffic = builtin_space("traffic");
  const std::string prose = "I will now describe the New Architecture I chose.\n\n" +
                            render_design_vector(expert_default(traffic), traffic);
  CHECK(extract_after_prefix(prose).size() == 2);
  const PatternSet patterns(traffic);
  const auto r = parse_design_vectors(prose, traffic, patterns);
  CHECK(r.block_count == 2);
  REQUIRE(r.vectors.size() == 1);
  CHECK(r.vector_blocks[0] == 1);
  bool junk_missing = false;
  for (const auto& d : r.diagnostics) junk_missing |= (d.block == 0 && d.status == MatchStatus::missing);
  CHECK(junk_missing);
}

TEST_CASE("tokenize") {
  CHECK(tokenize("heads: 2, dimension: 8") == std::vector<std::string>{"heads", "2", "dimension", "8"});
  CHECK(tokenize("dropout = 0.1") == std::vector<std::string>{"dropout", "0.1"});
  CHECK(tokenize("Merge type: cat") == std::vector<std::string>{"merge", "type", "cat"});
}

TEST_CASE("parse well-formed and broken blocks") {
  const auto traffic = builtin_space("traffic");
  const PatternSet patterns(traffic);
  const auto expert = expert_default(traffic);
  const auto text = render_design_vector(expert, traffic);

  auto r = parse_design_vectors(text, traffic, patterns);
  REQUIRE(r.vectors.size() == 1);
  CHECK(r.vectors[0] == expert);

  r = parse_design_vectors(replace_once(text, "heads: 2", "heads: 5"), traffic, patterns);
  CHECK(r.vectors.empty());
  auto bad = problems(r);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0].path == "time.heads");
  CHECK(bad[0].status == MatchStatus::out_of_domain);
  CHECK(bad[0].text == "5");

  const auto fusion_pos = text.find("fusion:");
  std::string no_depth = text;
  const auto depth_pos = no_depth.find(", depth: 1", fusion_pos);
  REQUIRE(depth_pos != std::string::npos);
  no_depth.erase(depth_pos, std::string(", depth: 1").size());
  r = parse_design_vectors(no_depth, traffic, patterns);
  CHECK(r.vectors.empty());
  bad = problems(r);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0].path == "fusion.depth");
  CHECK(bad[0].status == MatchStatus::missing);
}

TEST_CASE("round trip over built-in spaces") {
  for (const auto& id : builtin_space_ids()) {
    const auto s = builtin_space(id);
    const PatternSet patterns(s);
    if (s.has_defaults()) {
      const auto e = expert_default(s);
      const auto r = parse_design_vectors(render_design_vector(e, s), s, patterns);
      REQUIRE(r.vectors.size() == 1);
      CHECK(r.vectors[0] == e);
    }
    Rng rng(fnv1a(id));
    for (int i = 0; i < 1000; ++i) {
      const auto v = random_sample(s, rng);
      const auto r = parse_design_vectors(render_design_vector(v, s), s, patterns);
      if (r.vectors.size() != 1 || r.vectors[0] != v) FAIL(id << " round trip failed at sample " << i);
    }
  }
}

TEST_CASE("multiple blocks keep appearance order") {
  const auto s = builtin_space("traffic");
  const PatternSet patterns(s);
  Rng rng(9);
  std::vector<DesignVector> vs;
  std::string text = "Here are my proposals.\n";
  for (int i = 0; i < 5; ++i) {
    vs.push_back(random_sample(s, rng));
    text += render_design_vector(vs.back(), s) + "\nSome rationale.\n";
  }
  const auto r = parse_design_vectors(text, s, patterns);
  CHECK(r.vectors == vs);
}

TEST_CASE("parser tolerates garbage") {
  const auto s = builtin_space("minigrid");
  const PatternSet patterns(s);
  const auto base = render_design_vector(expert_default(s), s);
  Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    std::string text;
    if (i % 2 == 0) {
      const std::size_t n = uniform_index(rng, 400);
      for (std::size_t j = 0; j < n; ++j) text.push_back(static_cast<char>(uniform_index(rng, 256)));
      if (i % 4 == 0) text = "New Architecture\n" + text;
    } else {
      text = base;
      for (int m = 0; m < 6; ++m) {
        const std::size_t pos = uniform_index(rng, text.size());
        text[pos] = static_cast<char>(uniform_index(rng, 256));
      }
    }
    RawParseResult r;
    CHECK_NOTHROW(r = parse_design_vectors(text, s, patterns));
    for (const auto& v : r.vectors) {
      for (const auto& m : s.modules())
        for (const auto& c : m.choices) CHECK(c.domain.index_of(*v.get(m.name, c.name)).has_value());
    }
  }
}

TEST_CASE("render rejects invalid vectors") {
  const auto s = builtin_space("traffic");
  auto v = expert_default(s);
  v.set("time", "heads", 5.0);
  CHECK_THROWS_AS(render_design_vector(v, s), SpaceError);
}
