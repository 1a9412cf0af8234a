#include "lacer/response_parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include <fmt/format.h>

namespace lacer {

namespace {

bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens) { return join(tokens, 0, tokens.size()); }

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos,
                const std::vector<std::string>& needle) {
  if (needle.empty() || pos + needle.size() > tokens.size()) return false;
  return std::equal(needle.begin(), needle.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos));
}

std::string escape_regex(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::string_view(".^$|()[]{}*+?\\").find(c) != std::string_view::npos) out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

std::vector<std::string> extract_after_prefix(std::string_view response, std::string_view prefix) {
  std::vector<std::string> blocks;
  if (prefix.empty()) return blocks;
  std::vector<std::size_t> starts;
  for (auto pos = response.find(prefix); pos != std::string_view::npos;
       pos = response.find(prefix, pos + prefix.size()))
    starts.push_back(pos);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const auto end = i + 1 < starts.size() ? starts[i + 1] : response.size();
    blocks.emplace_back(response.substr(starts[i], end - starts[i]));
  }
  return blocks;
}

std::vector<std::string> tokenize(std::string_view block) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < block.size()) {
    const char c = block[i];
    if (is_alpha(c)) {
      std::string tok;
      while (i < block.size() && (is_alpha(block[i]) || is_digit(block[i])))
        tok += static_cast<char>(std::tolower(static_cast<unsigned char>(block[i++])));
      tokens.push_back(std::move(tok));
    } else if (is_digit(c)) {
      std::size_t j = i;
      while (j < block.size() && is_digit(block[j])) ++j;
      if (j + 1 < block.size() && block[j] == '.' && is_digit(block[j + 1])) {
        ++j;
        while (j < block.size() && is_digit(block[j])) ++j;
      }
      tokens.emplace_back(block.substr(i, j - i));
      i = j;
    } else {
      ++i;
    }
  }
  return tokens;
}

PatternSet::PatternSet(const CompositeSpace& space) {
  for (std::size_t f = 0; f < space.choice_count(); ++f) {
    const auto& mod = space.modules()[space.choice_refs()[f].module];
    const auto& ch = space.choice(f);
    const auto keyword = tokenize(ch.name);
    if (keyword.empty()) throw SpaceError(fmt::format("choice '{}' has no parseable keyword", space.path(f)));
    std::string value_class;
    if (ch.domain.kind == DomainKind::ordinal) {
      for (const auto& v : ch.domain.values)
        if (std::get<double>(v) < 0)
          throw SpaceError(fmt::format("negative ordinal values in '{}' cannot be parsed", space.path(f)));
      value_class = R"([0-9]+(?:\.[0-9]+)?)";
    } else {
      for (const auto& v : ch.domain.values) {
        const auto toks = tokenize(std::get<std::string>(v));
        if (toks.size() != 1 || toks[0] != std::get<std::string>(v))
          throw SpaceError(fmt::format("label '{}' of '{}' is not a single lowercase token",
                                       std::get<std::string>(v), space.path(f)));
      }
      value_class = "[a-z][a-z0-9]*";
    }
    ChoicePattern p;
    p.flat = f;
    p.path = space.path(f);
    p.module = mod.name;
    p.keyword = join(keyword);
    p.regex = std::regex("(?:^| )" + escape_regex(p.keyword) + " (" + value_class + ")(?= |$)",
                         std::regex::ECMAScript | std::regex::optimize);
    patterns_.push_back(std::move(p));
  }
}

std::string_view to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::matched: return "matched";
    case MatchStatus::missing: return "missing";
    case MatchStatus::out_of_domain: return "out_of_domain";
  }
  return "missing";
}

RawParseResult parse_design_vectors(std::string_view response, const CompositeSpace& space,
                                    const PatternSet& patterns) {
  RawParseResult result;
  const auto blocks = extract_after_prefix(response, kArchitecturePrefix);
  result.block_count = blocks.size();

  std::vector<std::vector<std::string>> module_keywords;
  for (const auto& m : space.modules()) module_keywords.push_back(tokenize(m.name));

  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto tokens = tokenize(blocks[b]);

    // Segments: after each module-name occurrence up to the next one.
    struct Segment {
      std::size_t module;
      std::string text;
    };
    std::vector<std::pair<std::size_t, std::size_t>> marks;  // (token pos, module)
    for (std::size_t pos = 0; pos < tokens.size(); ++pos)
      for (std::size_t m = 0; m < module_keywords.size(); ++m)
        if (matches_at(tokens, pos, module_keywords[m])) marks.emplace_back(pos, m);
    std::vector<Segment> segments;
    for (std::size_t i = 0; i < marks.size(); ++i) {
      const auto [pos, m] = marks[i];
      const auto begin = pos + module_keywords[m].size();
      const auto end = i + 1 < marks.size() ? std::max(begin, marks[i + 1].first) : tokens.size();
      segments.push_back({m, join(tokens, begin, end)});
    }

    DesignVector v;
    bool complete = true;
    for (const auto& p : patterns.patterns()) {
      const auto module_index = space.choice_refs()[p.flat].module;
      const auto& ch = space.choice(p.flat);
      ChoiceDiagnostic diag{b, p.path, MatchStatus::missing, {}};
      for (const auto& seg : segments) {
        if (seg.module != module_index) continue;
        std::smatch match;
        if (!std::regex_search(seg.text, match, p.regex)) continue;
        diag.text = match[1].str();
        Value parsed;
        if (ch.domain.kind == DomainKind::ordinal) {
          double x = 0;
          auto [ptr, ec] = std::from_chars(diag.text.data(), diag.text.data() + diag.text.size(), x);
          if (ec != std::errc{} || ptr != diag.text.data() + diag.text.size()) {
            diag.status = MatchStatus::out_of_domain;
            break;
          }
          parsed = x;
        } else {
          parsed = diag.text;
        }
        if (ch.domain.index_of(parsed)) {
          diag.status = MatchStatus::matched;
          v.set(p.module, ch.name, ch.domain.values[*ch.domain.index_of(parsed)]);
        } else {
          diag.status = MatchStatus::out_of_domain;
        }
        break;
      }
      complete = complete && diag.status == MatchStatus::matched;
      result.diagnostics.push_back(std::move(diag));
    }
    if (complete) {
      result.vectors.push_back(std::move(v));
      result.vector_blocks.push_back(b);
    }
  }
  return result;
}

std::string render_design_lines(const DesignVector& v, const CompositeSpace& space) {
  std::string out;
  for (const auto& m : space.modules()) {
    out += m.name;
    out += ':';
    for (std::size_t c = 0; c < m.choices.size(); ++c) {
      const Value* val = v.get(m.name, m.choices[c].name);
      out += fmt::format("{} {}: {}", c == 0 ? "" : ",", m.choices[c].name, val ? value_to_string(*val) : "?");
    }
    out += '\n';
  }
  return out;
}

std::string render_design_vector(const DesignVector& v, const CompositeSpace& space) {
  const auto report = validate(space, v);
  if (!report.ok())
    throw SpaceError(fmt::format("cannot render invalid design vector ({}: {})",
                                 report.violations.front().path, report.violations.front().message));
  return fmt::format("{}\n{}", kArchitecturePrefix, render_design_lines(v, space));
}

nlohmann::ordered_json to_json(const RawParseResult& r, const CompositeSpace& space) {
  nlohmann::ordered_json out;
  out["space_id"] = space.space_id();
  out["blocks"] = r.block_count;
  out["vectors"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.vectors.size(); ++i) {
    nlohmann::ordered_json jv;
    jv["block"] = r.vector_blocks[i];
    jv["design"] = design_to_json(space, r.vectors[i]);
    const auto report = validate(space, r.vectors[i]);
    jv["valid"] = report.ok();
    if (!report.ok()) {
      jv["violations"] = nlohmann::ordered_json::array();
      for (const auto& viol : report.violations)
        jv["violations"].push_back({{"path", viol.path}, {"message", viol.message}});
    }
    out["vectors"].push_back(std::move(jv));
  }
  out["diagnostics"] = nlohmann::ordered_json::array();
  for (const auto& d : r.diagnostics)
    out["diagnostics"].push_back(
        {{"block", d.block}, {"path", d.path}, {"status", to_string(d.status)}, {"text", d.text}});
  return out;
}

}  // namespace lacer
