#pragma once

#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lacer/search_space.hpp"

namespace lacer {

/// Marks the start of every architecture block in an agent response. Shared by
/// the prompt request template, the renderer and the parser.
inline constexpr std::string_view kArchitecturePrefix = "New Architecture";

/// Returns one block per prefix occurrence, each running to the next
/// occurrence or to the end of `response`.
std::vector<std::string> extract_after_prefix(std::string_view response,
                                              std::string_view prefix = kArchitecturePrefix);

/// Splits on whitespace and punctuation. Identifiers are lowercased; integer
/// and decimal numbers are kept intact.
std::vector<std::string> tokenize(std::string_view block);

struct ChoicePattern {
  std::size_t flat = 0;   // canonical choice index in the space
  std::string path;       // module.choice
  std::string module;
  std::string keyword;    // choice name as space-joined tokens
  std::regex regex;       // applied to a module segment of joined tokens
};

/// One generated pattern per choice, in canonical order.
class PatternSet {
 public:
  explicit PatternSet(const CompositeSpace& space);
  const std::vector<ChoicePattern>& patterns() const noexcept { return patterns_; }

 private:
  std::vector<ChoicePattern> patterns_;
};

enum class MatchStatus { matched, missing, out_of_domain };
std::string_view to_string(MatchStatus s);

struct ChoiceDiagnostic {
  std::size_t block = 0;
  std::string path;
  MatchStatus status = MatchStatus::missing;
  std::string text;
};

struct RawParseResult {
  std::vector<DesignVector> vectors;
  std::vector<std::size_t> vector_blocks;  // source block of each vector
  std::size_t block_count = 0;
  std::vector<ChoiceDiagnostic> diagnostics;
};

/// Applies every pattern to every extracted block. Only fully matched,
/// in-domain blocks become vectors; dependency rules are left to validate().
/// Never throws on malformed text.
RawParseResult parse_design_vectors(std::string_view response, const CompositeSpace& space,
                                    const PatternSet& patterns);

/// Lines of the form `module: choice: value, ...`, without the prefix.
std::string render_design_lines(const DesignVector& v, const CompositeSpace& space);
/// Canonical prefixed block; throws SpaceError for invalid vectors.
std::string render_design_vector(const DesignVector& v, const CompositeSpace& space);

nlohmann::ordered_json to_json(const RawParseResult& r, const CompositeSpace& space);

}  // namespace lacer
