#include "lacer/search_space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace lacer {

namespace detail {
extern const std::string_view kTrafficSpace;
extern const std::string_view kMinigridSpace;
extern const std::string_view kManiskillSpace;
}  // namespace detail

std::string value_to_string(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) {
    // Shortest round-trip form; keep a trailing ".0" off integers.
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *d);
    (void)ec;
    return std::string(buf, end);
  }
  return std::get<std::string>(v);
}

nlohmann::json value_to_json(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) {
    if (std::floor(*d) == *d && std::fabs(*d) < 1e15) return static_cast<std::int64_t>(*d);
    return *d;
  }
  return std::get<std::string>(v);
}

std::optional<std::size_t> ChoiceDomain::index_of(const Value& v) const {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] == v) return i;
  return std::nullopt;
}

const ChoiceSpec* ModuleSpace::find(std::string_view choice) const {
  for (const auto& c : choices)
    if (c.name == choice) return &c;
  return nullptr;
}

const Value* DesignVector::get(std::string_view module, std::string_view choice) const {
  auto m = assignments.find(std::string(module));
  if (m == assignments.end()) return nullptr;
  auto c = m->second.find(std::string(choice));
  return c == m->second.end() ? nullptr : &c->second;
}

double DesignVector::number(std::string_view module, std::string_view choice) const {
  const Value* v = get(module, choice);
  if (v == nullptr || !std::holds_alternative<double>(*v))
    throw SpaceError(fmt::format("{}.{} is not a numeric assignment", module, choice));
  return std::get<double>(*v);
}

const std::string& DesignVector::label(std::string_view module, std::string_view choice) const {
  const Value* v = get(module, choice);
  if (v == nullptr || !std::holds_alternative<std::string>(*v))
    throw SpaceError(fmt::format("{}.{} is not a label assignment", module, choice));
  return std::get<std::string>(*v);
}

// ---------------------------------------------------------------------------

CompositeSpace::CompositeSpace(std::string space_id, std::vector<ModuleSpace> modules,
                               std::string task_description, std::string task_metric)
    : space_id_(std::move(space_id)),
      modules_(std::move(modules)),
      task_description_(std::move(task_description)),
      task_metric_(std::move(task_metric)) {
  if (modules_.empty()) throw SpaceError("space has no modules");
  std::set<std::string> module_names;
  for (std::size_t m = 0; m < modules_.size(); ++m) {
    const auto& mod = modules_[m];
    if (mod.name.empty()) throw SpaceError("module without a name");
    if (!module_names.insert(mod.name).second)
      throw SpaceError(fmt::format("duplicate module name '{}'", mod.name));
    if (mod.choices.empty()) throw SpaceError(fmt::format("module '{}' has no choices", mod.name));
    std::set<std::string> choice_names;
    for (std::size_t c = 0; c < mod.choices.size(); ++c) {
      const auto& ch = mod.choices[c];
      const auto path = fmt::format("{}.{}", mod.name, ch.name);
      if (ch.name.empty()) throw SpaceError(fmt::format("unnamed choice in module '{}'", mod.name));
      if (!choice_names.insert(ch.name).second)
        throw SpaceError(fmt::format("duplicate choice name '{}'", path));
      if (ch.domain.values.empty()) throw SpaceError(fmt::format("empty domain for '{}'", path));
      for (std::size_t i = 0; i < ch.domain.values.size(); ++i) {
        const auto& val = ch.domain.values[i];
        const bool numeric = std::holds_alternative<double>(val);
        if (ch.domain.kind == DomainKind::ordinal && !numeric)
          throw SpaceError(fmt::format("ordinal domain of '{}' holds a label", path));
        if (ch.domain.kind == DomainKind::categorical && numeric)
          throw SpaceError(fmt::format("categorical domain of '{}' holds a number", path));
        if (numeric && !std::isfinite(std::get<double>(val)))
          throw SpaceError(fmt::format("non-finite value in '{}'", path));
        if (ch.domain.kind == DomainKind::categorical && std::get<std::string>(val).empty())
          throw SpaceError(fmt::format("empty label in '{}'", path));
        for (std::size_t j = 0; j < i; ++j)
          if (ch.domain.values[j] == val)
            throw SpaceError(fmt::format("duplicate value '{}' in '{}'", value_to_string(val), path));
        if (i > 0 && ch.domain.kind == DomainKind::ordinal &&
            !(std::get<double>(ch.domain.values[i - 1]) < std::get<double>(val)))
          throw SpaceError(fmt::format("ordinal domain of '{}' is not strictly increasing", path));
      }
      if (ch.default_value && !ch.domain.index_of(*ch.default_value))
        throw SpaceError(fmt::format("default of '{}' is outside its domain", path));
      refs_.push_back({m, c});
    }
  }

  // Resolve dependencies to flat indices.
  dependency_target_.resize(refs_.size());
  std::size_t base = 0;
  for (const auto& mod : modules_) {
    for (std::size_t c = 0; c < mod.choices.size(); ++c) {
      const auto& ch = mod.choices[c];
      if (!ch.dependency) continue;
      const auto path = fmt::format("{}.{}", mod.name, ch.name);
      std::optional<std::size_t> target;
      for (std::size_t s = 0; s < mod.choices.size(); ++s)
        if (mod.choices[s].name == ch.dependency->sibling) target = s;
      if (!target || *target == c)
        throw SpaceError(fmt::format("dangling dependency on '{}' from '{}'", ch.dependency->sibling, path));
      if (ch.domain.kind != DomainKind::ordinal ||
          mod.choices[*target].domain.kind != DomainKind::ordinal)
        throw SpaceError(fmt::format("dependency '{}' must compare two ordinal choices", path));
      dependency_target_[base + c] = base + *target;
    }
    base += mod.choices.size();
  }

  // Union-find over dependency edges.
  std::vector<std::size_t> parent(refs_.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t f = 0; f < refs_.size(); ++f)
    if (dependency_target_[f]) parent[root(f)] = root(*dependency_target_[f]);
  std::map<std::size_t, std::size_t> group_of_root;
  for (std::size_t f = 0; f < refs_.size(); ++f) {
    auto [it, inserted] = group_of_root.try_emplace(root(f), groups_.size());
    if (inserted) groups_.emplace_back();
    groups_[it->second].push_back(f);
  }

  // Valid combinations per group (odometer over the group's members).
  cardinality_ = 1;
  for (const auto& group : groups_) {
    std::vector<IndexVector> combos;
    IndexVector local(group.size(), 0);
    IndexVector full(refs_.size(), 0);
    while (true) {
      for (std::size_t i = 0; i < group.size(); ++i) full[group[i]] = local[i];
      bool ok = true;
      for (std::size_t f : group) ok = ok && dependency_holds(f, full);
      if (ok) combos.push_back(local);
      bool carry = true;
      for (std::size_t pos = group.size(); carry && pos > 0;) {
        --pos;
        if (++local[pos] < choice(group[pos]).domain.size()) {
          carry = false;
        } else {
          local[pos] = 0;
        }
      }
      if (carry) break;
    }
    if (combos.empty()) throw SpaceError("dependency rules admit no valid combination");
    if (cardinality_ > UINT64_MAX / combos.size()) throw SpaceError("space cardinality overflows 64 bits");
    cardinality_ *= combos.size();
    group_combos_.push_back(std::move(combos));
  }
}

const ModuleSpace* CompositeSpace::find_module(std::string_view name) const {
  for (const auto& m : modules_)
    if (m.name == name) return &m;
  return nullptr;
}

const ChoiceSpec& CompositeSpace::choice(std::size_t flat) const {
  const auto& r = refs_.at(flat);
  return modules_[r.module].choices[r.choice];
}

std::string CompositeSpace::path(std::size_t flat) const {
  const auto& r = refs_.at(flat);
  return modules_[r.module].name + "." + modules_[r.module].choices[r.choice].name;
}

bool CompositeSpace::has_defaults() const noexcept {
  for (const auto& m : modules_)
    for (const auto& c : m.choices)
      if (!c.default_value) return false;
  return true;
}

CompositeSpace CompositeSpace::subspace(std::string_view module) const {
  const ModuleSpace* m = find_module(module);
  if (m == nullptr) throw SpaceError(fmt::format("no module '{}' in space '{}'", module, space_id_));
  return CompositeSpace(space_id_ + "/" + m->name, {*m}, task_description_, task_metric_);
}

bool CompositeSpace::dependency_holds(std::size_t flat, const IndexVector& idx) const {
  const auto& target = dependency_target_[flat];
  if (!target) return true;
  const double lhs = std::get<double>(choice(flat).domain.values[idx[flat]]);
  const double rhs = std::get<double>(choice(*target).domain.values[idx[*target]]);
  return lhs <= rhs;
}

bool CompositeSpace::index_valid(const IndexVector& idx) const {
  if (idx.size() != refs_.size()) return false;
  for (std::size_t f = 0; f < idx.size(); ++f)
    if (idx[f] >= choice(f).domain.size()) return false;
  for (std::size_t f = 0; f < idx.size(); ++f)
    if (!dependency_holds(f, idx)) return false;
  return true;
}

IndexVector CompositeSpace::to_indices(const DesignVector& v) const {
  IndexVector idx(refs_.size());
  for (std::size_t f = 0; f < refs_.size(); ++f) {
    const auto& r = refs_[f];
    const Value* val = v.get(modules_[r.module].name, modules_[r.module].choices[r.choice].name);
    if (val == nullptr) throw SpaceError(fmt::format("missing assignment for '{}'", path(f)));
    auto i = choice(f).domain.index_of(*val);
    if (!i) throw SpaceError(fmt::format("value '{}' out of domain for '{}'", value_to_string(*val), path(f)));
    idx[f] = *i;
  }
  return idx;
}

DesignVector CompositeSpace::from_indices(const IndexVector& idx) const {
  DesignVector v;
  for (std::size_t f = 0; f < refs_.size(); ++f) {
    const auto& r = refs_[f];
    const auto& mod = modules_[r.module];
    v.set(mod.name, mod.choices[r.choice].name, mod.choices[r.choice].domain.values.at(idx.at(f)));
  }
  return v;
}

// ---------------------------------------------------------------------------

namespace {

Value parse_value(const nlohmann::json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw SpaceError(fmt::format("value in '{}' must be a number or a string", where));
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw SpaceError(fmt::format("malformed document: '{}' lacks '{}'", where, key));
  return obj.at(key);
}

}  // namespace

CompositeSpace load_space_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SpaceError("malformed document: top level must be an object");
  const auto& id = require(doc, "space_id", "document");
  if (!id.is_string()) throw SpaceError("malformed document: space_id must be a string");
  const auto& mods = require(doc, "modules", "document");
  if (!mods.is_array()) throw SpaceError("malformed document: modules must be an array");

  std::vector<ModuleSpace> modules;
  for (const auto& jm : mods) {
    ModuleSpace m;
    const auto& name = require(jm, "name", "module");
    if (!name.is_string()) throw SpaceError("malformed document: module name must be a string");
    m.name = name.get<std::string>();
    if (jm.contains("family")) m.family = jm.at("family").get<std::string>();
    const auto& choices = require(jm, "choices", m.name);
    if (!choices.is_array()) throw SpaceError(fmt::format("malformed document: choices of '{}'", m.name));
    for (const auto& jc : choices) {
      ChoiceSpec c;
      const auto& cname = require(jc, "name", m.name);
      if (!cname.is_string()) throw SpaceError("malformed document: choice name must be a string");
      c.name = cname.get<std::string>();
      const auto where = m.name + "." + c.name;
      const auto kind = require(jc, "kind", where);
      const auto kind_s = kind.is_string() ? kind.get<std::string>() : std::string{};
      if (kind_s == "ordinal" || kind_s == "ordinal-numeric") {
        c.domain.kind = DomainKind::ordinal;
      } else if (kind_s == "categorical" || kind_s == "categorical-label") {
        c.domain.kind = DomainKind::categorical;
      } else {
        throw SpaceError(fmt::format("malformed document: unknown kind for '{}'", where));
      }
      const auto& values = require(jc, "values", where);
      if (!values.is_array()) throw SpaceError(fmt::format("malformed document: values of '{}'", where));
      if (values.empty()) throw SpaceError(fmt::format("empty domain for '{}'", where));
      for (const auto& jv : values) c.domain.values.push_back(parse_value(jv, where));
      if (jc.contains("default")) c.default_value = parse_value(jc.at("default"), where);
      if (jc.contains("dependency")) {
        const auto& dep = jc.at("dependency");
        const auto& op = require(dep, "op", where + ".dependency");
        if (!op.is_string() || op.get<std::string>() != "<=")
          throw SpaceError(fmt::format("unsupported dependency operator in '{}'", where));
        const auto& sib = require(dep, "choice", where + ".dependency");
        if (!sib.is_string()) throw SpaceError(fmt::format("malformed dependency in '{}'", where));
        c.dependency = Dependency{sib.get<std::string>()};
      }
      m.choices.push_back(std::move(c));
    }
    modules.push_back(std::move(m));
  }
  return CompositeSpace(id.get<std::string>(), std::move(modules),
                        doc.value("task_description", std::string{}),
                        doc.value("task_metric", std::string{"task metric"}));
}

CompositeSpace load_space(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpaceError(fmt::format("malformed document: {}", e.what()));
  }
  return load_space_json(doc);
}

std::string_view builtin_space_document(std::string_view space_id) {
  if (space_id == "traffic") return detail::kTrafficSpace;
  if (space_id == "minigrid") return detail::kMinigridSpace;
  if (space_id == "maniskill") return detail::kManiskillSpace;
  throw SpaceError(fmt::format("unknown built-in space '{}'", space_id));
}

CompositeSpace builtin_space(std::string_view space_id) {
  return load_space(builtin_space_document(space_id));
}

std::vector<std::string> builtin_space_ids() { return {"traffic", "minigrid", "maniskill"}; }

CompositeSpace resolve_space(const std::string& id_or_path) {
  for (const auto& id : builtin_space_ids())
    if (id == id_or_path) return builtin_space(id);
  std::ifstream in(id_or_path);
  if (!in) throw SpaceError(fmt::format("'{}' is neither a built-in space nor a readable file", id_or_path));
  std::stringstream ss;
  ss << in.rdbuf();
  return load_space(ss.str());
}

// ---------------------------------------------------------------------------

ValidationReport validate(const CompositeSpace& space, const DesignVector& v) {
  ValidationReport report;
  IndexVector idx(space.choice_count(), 0);
  std::vector<bool> known(space.choice_count(), false);
  for (std::size_t f = 0; f < space.choice_count(); ++f) {
    const auto& r = space.choice_refs()[f];
    const auto& mod = space.modules()[r.module];
    const auto& ch = mod.choices[r.choice];
    const Value* val = v.get(mod.name, ch.name);
    if (val == nullptr) {
      report.violations.push_back({space.path(f), "missing assignment"});
      continue;
    }
    auto i = ch.domain.index_of(*val);
    if (!i) {
      report.violations.push_back({space.path(f), fmt::format("out of domain: {}", value_to_string(*val))});
      continue;
    }
    idx[f] = *i;
    known[f] = true;
  }
  for (const auto& [module, choices] : v.assignments) {
    const ModuleSpace* mod = space.find_module(module);
    if (mod == nullptr) {
      report.violations.push_back({module, "unknown module"});
      continue;
    }
    for (const auto& [choice, _] : choices)
      if (mod->find(choice) == nullptr)
        report.violations.push_back({module + "." + choice, "unknown choice"});
  }
  for (std::size_t f = 0; f < space.choice_count(); ++f) {
    const auto& ch = space.choice(f);
    if (!ch.dependency || !known[f]) continue;
    const auto& mod = space.modules()[space.choice_refs()[f].module];
    const ChoiceSpec* sib = mod.find(ch.dependency->sibling);
    const Value* sv = v.get(mod.name, sib->name);
    const Value* cv = v.get(mod.name, ch.name);
    if (sv == nullptr || !sib->domain.index_of(*sv)) continue;
    if (!(std::get<double>(*cv) <= std::get<double>(*sv)))
      report.violations.push_back(
          {space.path(f), fmt::format("dependency {} <= {}", ch.name, ch.dependency->sibling)});
  }
  return report;
}

std::uint64_t cardinality(const CompositeSpace& space) { return space.cardinality(); }

DesignEnumerator::DesignEnumerator(const CompositeSpace& space)
    : space_(&space), current_(space.choice_count(), 0) {}

bool DesignEnumerator::advance() {
  std::size_t pos = current_.size();
  while (pos > 0) {
    --pos;
    if (++current_[pos] < space_->choice(pos).domain.size()) return true;
    current_[pos] = 0;
  }
  return false;
}

std::optional<IndexVector> DesignEnumerator::next_indices() {
  if (done_) return std::nullopt;
  if (!started_) {
    started_ = true;
  } else if (!advance()) {
    done_ = true;
    return std::nullopt;
  }
  while (!space_->index_valid(current_)) {
    if (!advance()) {
      done_ = true;
      return std::nullopt;
    }
  }
  return current_;
}

std::optional<DesignVector> DesignEnumerator::next() {
  auto idx = next_indices();
  if (!idx) return std::nullopt;
  return space_->from_indices(*idx);
}

std::vector<DesignVector> enumerate(const CompositeSpace& space, std::size_t limit) {
  std::vector<DesignVector> out;
  DesignEnumerator e(space);
  while (limit == 0 || out.size() < limit) {
    auto v = e.next();
    if (!v) break;
    out.push_back(std::move(*v));
  }
  return out;
}

IndexVector random_indices(const CompositeSpace& space, Rng& rng) {
  IndexVector idx(space.choice_count(), 0);
  for (std::size_t g = 0; g < space.groups().size(); ++g) {
    const auto& combos = space.group_combinations(g);
    const auto& pick = combos[uniform_index(rng, combos.size())];
    const auto& members = space.groups()[g];
    for (std::size_t i = 0; i < members.size(); ++i) idx[members[i]] = pick[i];
  }
  return idx;
}

DesignVector random_sample(const CompositeSpace& space, Rng& rng) {
  return space.from_indices(random_indices(space, rng));
}

std::vector<IndexVector> neighbor_indices(const CompositeSpace& space, const IndexVector& idx) {
  if (!space.index_valid(idx)) throw SpaceError("neighbors of an invalid design vector");
  std::vector<IndexVector> out;
  for (std::size_t f = 0; f < idx.size(); ++f) {
    const auto& dom = space.choice(f).domain;
    std::vector<std::size_t> moves;
    if (dom.kind == DomainKind::ordinal) {
      if (idx[f] > 0) moves.push_back(idx[f] - 1);
      if (idx[f] + 1 < dom.size()) moves.push_back(idx[f] + 1);
    } else {
      for (std::size_t i = 0; i < dom.size(); ++i)
        if (i != idx[f]) moves.push_back(i);
    }
    for (std::size_t to : moves) {
      IndexVector w = idx;
      w[f] = to;
      if (space.index_valid(w)) out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<DesignVector> neighbors(const CompositeSpace& space, const DesignVector& v) {
  auto report = validate(space, v);
  if (!report.ok())
    throw SpaceError(fmt::format("neighbors of an invalid design vector ({}: {})",
                                 report.violations.front().path, report.violations.front().message));
  std::vector<DesignVector> out;
  for (const auto& w : neighbor_indices(space, space.to_indices(v))) out.push_back(space.from_indices(w));
  return out;
}

DesignVector expert_default(const CompositeSpace& space) {
  DesignVector v;
  for (const auto& m : space.modules()) {
    for (const auto& c : m.choices) {
      if (!c.default_value)
        throw SpaceError(fmt::format("space '{}' declares no default for '{}.{}'", space.space_id(), m.name, c.name));
      v.set(m.name, c.name, *c.default_value);
    }
  }
  auto report = validate(space, v);
  if (!report.ok()) throw SpaceError(fmt::format("declared defaults of '{}' are invalid", space.space_id()));
  return v;
}

std::size_t hamming(const CompositeSpace& space, const DesignVector& a, const DesignVector& b) {
  std::size_t d = 0;
  for (std::size_t f = 0; f < space.choice_count(); ++f) {
    const auto& r = space.choice_refs()[f];
    const auto& mod = space.modules()[r.module];
    const Value* x = a.get(mod.name, mod.choices[r.choice].name);
    const Value* y = b.get(mod.name, mod.choices[r.choice].name);
    if (x == nullptr || y == nullptr || !(*x == *y)) ++d;
  }
  return d;
}

nlohmann::ordered_json design_to_json(const CompositeSpace& space, const DesignVector& v) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& m : space.modules()) {
    nlohmann::ordered_json jm = nlohmann::ordered_json::object();
    for (const auto& c : m.choices) {
      const Value* val = v.get(m.name, c.name);
      jm[c.name] = val ? nlohmann::ordered_json(value_to_json(*val)) : nlohmann::ordered_json();
    }
    out[m.name] = std::move(jm);
  }
  return out;
}

DesignVector design_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SpaceError("design vector must be a JSON object");
  DesignVector v;
  for (const auto& [module, choices] : j.items()) {
    if (!choices.is_object()) throw SpaceError(fmt::format("module '{}' must map choices to values", module));
    for (const auto& [choice, val] : choices.items()) v.set(module, choice, parse_value(val, module + "." + choice));
  }
  return v;
}

}  // namespace lacer
