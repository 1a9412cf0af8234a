#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lacer/common.hpp"

namespace lacer {

/// A single admissible value: a number for ordinal choices, a label for
/// categorical ones.
using Value = std::variant<double, std::string>;

std::string value_to_string(const Value& v);
nlohmann::json value_to_json(const Value& v);

enum class DomainKind { ordinal, categorical };

struct ChoiceDomain {
  DomainKind kind = DomainKind::ordinal;
  std::vector<Value> values;

  std::optional<std::size_t> index_of(const Value& v) const;
  std::size_t size() const noexcept { return values.size(); }
};

/// `choice <= sibling`, both ordinal.
struct Dependency {
  std::string sibling;
};

struct ChoiceSpec {
  std::string name;
  ChoiceDomain domain;
  std::optional<Dependency> dependency;
  std::optional<Value> default_value;
};

struct ModuleSpace {
  std::string name;
  std::string family;
  std::vector<ChoiceSpec> choices;

  const ChoiceSpec* find(std::string_view choice) const;
};

/// One complete architecture: module -> (choice -> value).
struct DesignVector {
  std::map<std::string, std::map<std::string, Value>> assignments;

  void set(const std::string& module, const std::string& choice, Value v) {
    assignments[module][choice] = std::move(v);
  }
  const Value* get(std::string_view module, std::string_view choice) const;
  double number(std::string_view module, std::string_view choice) const;
  const std::string& label(std::string_view module, std::string_view choice) const;

  bool operator==(const DesignVector&) const = default;
};

/// Flat index of a choice: position of (module, choice) in canonical order.
struct ChoiceRef {
  std::size_t module = 0;
  std::size_t choice = 0;
};

/// A vector expressed as one domain index per choice, in canonical order.
using IndexVector = std::vector<std::size_t>;

struct Violation {
  std::string path;  // module.choice
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

/// The full composite search space. Immutable after construction.
class CompositeSpace {
 public:
  CompositeSpace(std::string space_id, std::vector<ModuleSpace> modules,
                 std::string task_description = {},
                 std::string task_metric = "task metric");

  const std::string& space_id() const noexcept { return space_id_; }
  const std::vector<ModuleSpace>& modules() const noexcept { return modules_; }
  const std::string& task_description() const noexcept { return task_description_; }
  const std::string& task_metric() const noexcept { return task_metric_; }
  const ModuleSpace* find_module(std::string_view name) const;

  std::size_t choice_count() const noexcept { return refs_.size(); }
  const std::vector<ChoiceRef>& choice_refs() const noexcept { return refs_; }
  const ChoiceSpec& choice(std::size_t flat) const;
  std::string path(std::size_t flat) const;

  /// Exact number of valid design vectors (dependency rules respected).
  std::uint64_t cardinality() const noexcept { return cardinality_; }

  bool has_defaults() const noexcept;

  /// Single-module space with the same choices; used for exhaustive oracles.
  CompositeSpace subspace(std::string_view module) const;

  // Index-level helpers used by enumeration, sampling and search.
  bool index_valid(const IndexVector& idx) const;
  IndexVector to_indices(const DesignVector& v) const;  // throws on invalid values
  DesignVector from_indices(const IndexVector& idx) const;

  /// Groups of flat choice indices connected by dependency rules. Each group is
  /// sampled jointly; choices without dependencies form singleton groups.
  const std::vector<std::vector<std::size_t>>& groups() const noexcept { return groups_; }
  /// Valid index combinations of a group, in canonical order.
  const std::vector<IndexVector>& group_combinations(std::size_t g) const { return group_combos_[g]; }

 private:
  std::string space_id_;
  std::vector<ModuleSpace> modules_;
  std::string task_description_;
  std::string task_metric_;
  std::vector<ChoiceRef> refs_;
  std::vector<std::optional<std::size_t>> dependency_target_;  // flat -> flat sibling
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::vector<IndexVector>> group_combos_;
  std::uint64_t cardinality_ = 0;

  bool dependency_holds(std::size_t flat, const IndexVector& idx) const;
};

/// Parses a JSON space document. Throws SpaceError on any invariant breach.
CompositeSpace load_space(std::string_view document);
CompositeSpace load_space_json(const nlohmann::json& document);

/// Built-in documents: "traffic", "minigrid", "maniskill".
CompositeSpace builtin_space(std::string_view space_id);
std::vector<std::string> builtin_space_ids();
std::string_view builtin_space_document(std::string_view space_id);

/// Resolves a built-in id or a path to a JSON document.
CompositeSpace resolve_space(const std::string& id_or_path);

ValidationReport validate(const CompositeSpace& space, const DesignVector& v);

std::uint64_t cardinality(const CompositeSpace& space);

/// Canonical-order enumeration: modules, then choices, in declaration order;
/// the last choice varies fastest. Dependency-violating combinations are skipped.
class DesignEnumerator {
 public:
  explicit DesignEnumerator(const CompositeSpace& space);
  std::optional<DesignVector> next();
  std::optional<IndexVector> next_indices();

 private:
  const CompositeSpace* space_;
  IndexVector current_;
  bool started_ = false;
  bool done_ = false;
  bool advance();
};

/// Collects up to `limit` vectors (0 = unbounded).
std::vector<DesignVector> enumerate(const CompositeSpace& space, std::size_t limit = 0);

DesignVector random_sample(const CompositeSpace& space, Rng& rng);
IndexVector random_indices(const CompositeSpace& space, Rng& rng);

/// All valid vectors at Hamming distance one. Ordinal choices move to adjacent
/// values only. Throws SpaceError if `v` is invalid.
std::vector<DesignVector> neighbors(const CompositeSpace& space, const DesignVector& v);
std::vector<IndexVector> neighbor_indices(const CompositeSpace& space, const IndexVector& idx);

/// The declared default configuration. Throws SpaceError if any choice lacks one.
DesignVector expert_default(const CompositeSpace& space);

/// Hamming distance over choice assignments.
std::size_t hamming(const CompositeSpace& space, const DesignVector& a, const DesignVector& b);

/// JSON rendering in canonical order: {"module": {"choice": value}}.
nlohmann::ordered_json design_to_json(const CompositeSpace& space, const DesignVector& v);
/// Reads values as given (no domain check; use validate()).
DesignVector design_from_json(const nlohmann::json& j);

}  // namespace lacer
