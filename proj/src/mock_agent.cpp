#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "lacer/llm_agent.hpp"
#include "lacer/response_parser.hpp"

namespace lacer {

namespace {

struct ParsedPerformance {
  double task = 0.0;
  std::optional<double> reward;
  std::map<std::string, double> feature_mi;
  bool failed = false;
};

struct Observation {
  IndexVector design;
  ParsedPerformance perf;
};

ParsedPerformance parse_performance(std::string_view text) {
  static const std::regex task_re(R"(^task metric \([^)]*\): (-?[0-9]+(?:\.[0-9]+)?))");
  static const std::regex reward_re(R"(^average reward: (-?[0-9]+(?:\.[0-9]+)?))");
  static const std::regex fi_re(
      R"(^feature information \(([^)]*)\): mutual information (-?[0-9]+(?:\.[0-9]+)?), redundancy)");
  ParsedPerformance p;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    const std::string line(text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos));
    std::smatch m;
    if (std::regex_search(line, m, task_re)) {
      p.task = std::stod(m[1].str());
    } else if (std::regex_search(line, m, reward_re)) {
      p.reward = std::stod(m[1].str());
    } else if (std::regex_search(line, m, fi_re)) {
      p.feature_mi[m[1].str()] = std::stod(m[2].str());
    } else if (line.starts_with("status: training failed")) {
      p.failed = true;
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return p;
}

// Splits a "Candidate i/k" performance body into per-candidate texts.
std::vector<std::string> split_candidates(std::string_view body) {
  std::vector<std::string> out;
  static const std::regex header(R"(^Candidate [0-9]+/[0-9]+$)");
  std::size_t pos = 0;
  while (pos <= body.size()) {
    const auto eol = body.find('\n', pos);
    const std::string line(body.substr(pos, eol == std::string_view::npos ? body.size() - pos : eol - pos));
    if (std::regex_match(line, header)) {
      out.emplace_back();
    } else if (!out.empty()) {
      out.back() += line + "\n";
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return out;
}

class MockPlanner {
 public:
  MockPlanner(const CompositeSpace& space, Rng& rng, double temperature)
      : space_(space), rng_(rng), temperature_(temperature), patterns_(space) {}

  void read(std::span<const Message> messages) {
    std::vector<IndexVector> pending;
    for (const auto& m : messages) {
      if (m.role == Role::assistant) {
        pending.clear();
        for (const auto& v : parse_design_vectors(m.content, space_, patterns_).vectors) {
          if (!validate(space_, v).ok()) continue;
          pending.push_back(space_.to_indices(v));
          seen_.insert(pending.back());
        }
        continue;
      }
      if (m.role != Role::user) continue;
      std::optional<IndexVector> initial;
      for (const auto& s : split_sections(m.content)) {
        if (s.title == section_title::initial_architecture) {
          const auto parsed =
              parse_design_vectors(fmt::format("{}\n{}", kArchitecturePrefix, s.body), space_, patterns_);
          if (!parsed.vectors.empty() && validate(space_, parsed.vectors.front()).ok()) {
            initial = space_.to_indices(parsed.vectors.front());
            anchor_ = initial;
          }
        } else if (s.title == section_title::initial_performance && initial) {
          observations_.push_back({*initial, parse_performance(s.body)});
          seen_.insert(*initial);
        } else if (s.title == section_title::candidate_performance) {
          const auto blocks = split_candidates(s.body);
          for (std::size_t i = 0; i < blocks.size() && i < pending.size(); ++i)
            observations_.push_back({pending[i], parse_performance(blocks[i])});
        }
      }
    }
  }

  std::vector<IndexVector> propose(std::size_t k) {
    std::vector<IndexVector> out;
    if (observations_.empty()) {
      for (std::size_t j = 0; j < k; ++j) {
        IndexVector v = anchor_ ? *anchor_ : random_indices(space_, rng_);
        if (anchor_) mutate(v, 2);
        out.push_back(unique(std::move(v)));
      }
      return out;
    }
    score_modules();
    const IndexVector base = combine_best();
    for (std::size_t j = 0; j < k; ++j) {
      IndexVector v = base;
      if (j > 0 || seen_.count(v)) {
        if (module_feedback_) {
          // Per-module signals separate the effect of each module, so every
          // module can be varied at once.
          mutate_modules(v);
        } else {
          std::size_t changes = 1 + (j % 2);
          if (uniform01(rng_) < 0.25 * temperature_) ++changes;
          mutate(v, changes);
        }
      }
      out.push_back(unique(std::move(v)));
    }
    return out;
  }

 private:
  const CompositeSpace& space_;
  Rng& rng_;
  double temperature_;
  PatternSet patterns_;
  std::vector<Observation> observations_;
  std::set<IndexVector> seen_;
  std::optional<IndexVector> anchor_;
  bool module_feedback_ = false;
  // module -> (module sub-configuration -> (credit sum, count))
  std::vector<std::map<IndexVector, std::pair<double, std::size_t>>> sub_scores_;
  // flat choice -> per value (credit sum, count)
  std::vector<std::vector<std::pair<double, std::size_t>>> value_scores_;

  std::pair<std::size_t, std::size_t> module_range(std::size_t m) const {
    std::size_t begin = 0;
    for (std::size_t i = 0; i < m; ++i) begin += space_.modules()[i].choices.size();
    return {begin, begin + space_.modules()[m].choices.size()};
  }

  static double overall(const ParsedPerformance& p) {
    return p.reward ? 0.5 * (p.task + *p.reward) : p.task;
  }

  // Feature information about a module, when reported.
  std::optional<double> module_credit(const ParsedPerformance& p, const std::string& module) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [name, mi] : p.feature_mi) {
      if (name == module || name.starts_with(module + "_")) {
        sum += mi;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }

  void score_modules() {
    const auto& modules = space_.modules();
    sub_scores_.assign(modules.size(), {});
    value_scores_.assign(space_.choice_count(), {});
    for (std::size_t f = 0; f < space_.choice_count(); ++f)
      value_scores_[f].assign(space_.choice(f).domain.size(), {0.0, 0});
    for (const auto& o : observations_) {
      if (o.perf.failed) continue;
      for (std::size_t m = 0; m < modules.size(); ++m) {
        const auto reported = module_credit(o.perf, modules[m].name);
        if (reported) module_feedback_ = true;
        const double credit = reported.value_or(overall(o.perf));
        const auto [begin, end] = module_range(m);
        IndexVector sub(o.design.begin() + static_cast<std::ptrdiff_t>(begin),
                        o.design.begin() + static_cast<std::ptrdiff_t>(end));
        auto& s = sub_scores_[m][sub];
        s.first += credit;
        ++s.second;
        for (std::size_t f = begin; f < end; ++f) {
          value_scores_[f][o.design[f]].first += credit;
          ++value_scores_[f][o.design[f]].second;
        }
      }
    }
  }

  IndexVector combine_best() {
    IndexVector v = anchor_ ? *anchor_ : random_indices(space_, rng_);
    for (std::size_t m = 0; m < space_.modules().size(); ++m) {
      const IndexVector* best = nullptr;
      double best_mean = -std::numeric_limits<double>::infinity();
      for (const auto& [sub, s] : sub_scores_[m]) {
        const double mean = s.first / static_cast<double>(s.second);
        if (mean > best_mean) {
          best_mean = mean;
          best = &sub;
        }
      }
      if (best == nullptr) continue;
      const auto [begin, end] = module_range(m);
      std::copy(best->begin(), best->end(), v.begin() + static_cast<std::ptrdiff_t>(begin));
      (void)end;
    }
    if (!space_.index_valid(v)) v = random_indices(space_, rng_);
    return v;
  }

  std::size_t pick_value(std::size_t f, std::size_t current) {
    const auto& dom = space_.choice(f).domain;
    std::vector<std::size_t> untried;
    std::size_t best = current;
    double best_mean = -std::numeric_limits<double>::infinity();
    if (!value_scores_.empty()) {
      for (std::size_t i = 0; i < dom.size(); ++i) {
        if (i == current) continue;
        const auto& s = value_scores_[f][i];
        if (s.second == 0) {
          untried.push_back(i);
        } else if (s.first / static_cast<double>(s.second) > best_mean) {
          best_mean = s.first / static_cast<double>(s.second);
          best = i;
        }
      }
    }
    const double roll = uniform01(rng_);
    if (!untried.empty() && roll < (module_feedback_ ? 0.3 : 0.5)) return untried[uniform_index(rng_, untried.size())];
    if (best != current && roll < 0.8) return best;
    std::size_t other = uniform_index(rng_, dom.size() - 1);
    return other >= current ? other + 1 : other;
  }

  void mutate(IndexVector& v, std::size_t changes) {
    for (std::size_t c = 0; c < changes; ++c) {
      for (int attempt = 0; attempt < 16; ++attempt) {
        const std::size_t f = uniform_index(rng_, v.size());
        if (space_.choice(f).domain.size() < 2) continue;
        IndexVector w = v;
        w[f] = pick_value(f, v[f]);
        if (space_.index_valid(w)) {
          v = std::move(w);
          break;
        }
      }
    }
  }

  void mutate_modules(IndexVector& v) {
    for (std::size_t m = 0; m < space_.modules().size(); ++m) {
      if (uniform01(rng_) >= 0.75) continue;
      const auto [begin, end] = module_range(m);
      for (int attempt = 0; attempt < 16; ++attempt) {
        const std::size_t f = begin + uniform_index(rng_, end - begin);
        if (space_.choice(f).domain.size() < 2) continue;
        IndexVector w = v;
        w[f] = pick_value(f, v[f]);
        if (space_.index_valid(w)) {
          v = std::move(w);
          break;
        }
      }
    }
  }

  IndexVector unique(IndexVector v) {
    for (int attempt = 0; attempt < 32 && seen_.count(v); ++attempt) mutate(v, 1);
    while (seen_.count(v) && seen_.size() < space_.cardinality()) v = random_indices(space_, rng_);
    seen_.insert(v);
    return v;
  }
};

std::size_t requested_count(std::span<const Message> messages, std::size_t fallback) {
  static const std::regex re(R"(Propose exactly ([0-9]+) new architecture)");
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role != Role::user) continue;
    std::smatch m;
    if (std::regex_search(it->content, m, re)) return std::max<std::size_t>(1, std::stoul(m[1].str()));
    break;
  }
  return std::max<std::size_t>(1, fallback);
}

}  // namespace

MockBackend::MockBackend(CompositeSpace space, std::uint64_t seed) : space_(std::move(space)), seed_(seed) {}

std::string MockBackend::complete(std::span<const Message> messages, const AgentConfig& config) {
  Rng rng(derive_seed(seed_, message_digest(messages)));
  MockPlanner planner(space_, rng, config.temperature);
  planner.read(messages);
  const auto k = requested_count(messages, config.batch_size);
  const auto proposals = planner.propose(k);

  std::string out = "Based on the results so far, here are my proposals.\n\n";
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (i > 0) out += "\n";
    out += render_design_vector(space_.from_indices(proposals[i]), space_);
  }
  out += "\nRationale: modules that reported stronger signals keep their configuration; the remaining "
         "choices are perturbed to explore nearby designs.\n";
  return out;
}

}  // namespace lacer
