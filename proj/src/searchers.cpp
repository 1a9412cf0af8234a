#include "lacer/searchers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace lacer {

std::string_view to_string(SearcherKind k) {
  switch (k) {
    case SearcherKind::random: return "random";
    case SearcherKind::local: return "local";
    case SearcherKind::evolutionary: return "evolutionary";
    case SearcherKind::llm: return "llm";
  }
  return "random";
}

SearcherKind searcher_from_string(std::string_view s) {
  for (auto k : {SearcherKind::random, SearcherKind::local, SearcherKind::evolutionary, SearcherKind::llm})
    if (to_string(k) == s) return k;
  throw ConfigError(fmt::format("unknown searcher '{}' (expected random, local, evolutionary or llm)", s));
}

void SearcherConfig::check() const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (population < 2) throw ConfigError("population must be at least 2");
  if (tournament == 0) throw ConfigError("tournament size must be at least 1");
  if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ConfigError("mutation rate must lie in [0, 1]");
  if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) throw ConfigError("crossover rate must lie in [0, 1]");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (budget_schedule && kind != SearcherKind::evolutionary)
    throw ConfigError("the budget schedule is only available to the evolutionary searcher");
  if (kind == SearcherKind::llm) agent.check();
}

std::vector<std::size_t> rank_history(const History& history) {
  std::vector<std::size_t> order(history.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = history[a].signals;
    const auto& sb = history[b].signals;
    if (sa.failed != sb.failed) return !sa.failed;
    return sa.task_metric > sb.task_metric;
  });
  return order;
}

namespace {

std::set<IndexVector> visited_set(const CompositeSpace& space, const History& history) {
  std::set<IndexVector> out;
  for (const auto& e : history) out.insert(space.to_indices(e.design));
  return out;
}

constexpr std::uint64_t kEnumerateUnvisited = 100'000;

// Uniform over unvisited vectors; uniform over everything once exhausted.
IndexVector unvisited_sample(const CompositeSpace& space, const std::set<IndexVector>& visited, Rng& rng) {
  if (visited.size() >= space.cardinality()) return random_indices(space, rng);
  if (space.cardinality() <= kEnumerateUnvisited && visited.size() * 2 >= space.cardinality()) {
    std::vector<IndexVector> free;
    DesignEnumerator e(space);
    while (auto idx = e.next_indices())
      if (!visited.count(*idx)) free.push_back(*idx);
    return free[uniform_index(rng, free.size())];
  }
  for (;;) {
    auto idx = random_indices(space, rng);
    if (!visited.count(idx)) return idx;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

RandomSearcher::RandomSearcher(const CompositeSpace& space, std::uint64_t seed)
    : space_(&space), rng_(derive_seed(seed, fnv1a("random-searcher"))) {}

Proposal RandomSearcher::propose(const History&, std::size_t k) {
  Proposal p;
  for (std::size_t i = 0; i < k; ++i) p.designs.push_back(random_sample(*space_, rng_));
  return p;
}

// ---------------------------------------------------------------------------

LocalSearcher::LocalSearcher(const CompositeSpace& space, std::uint64_t seed, std::size_t patience)
    : space_(&space), rng_(derive_seed(seed, fnv1a("local-searcher"))), patience_(patience) {}

Proposal LocalSearcher::propose(const History& history, std::size_t k) {
  Proposal p;
  auto visited = visited_set(*space_, history);

  // New global best since the last call?
  bool improved = false;
  for (std::size_t i = seen_; i < history.size(); ++i) {
    const auto& s = history[i].signals;
    if (s.failed) continue;
    if (!has_best_ || s.task_metric > best_) {
      best_ = s.task_metric;
      has_best_ = true;
      improved = true;
    }
  }
  const bool fresh = seen_ < history.size();
  seen_ = history.size();
  if (fresh) stale_ = improved ? 0 : stale_ + 1;

  std::optional<IndexVector> center;
  if (stale_ >= patience_) {
    stale_ = 0;
    restart_from_ = history.size();
    const auto start = unvisited_sample(*space_, visited, rng_);
    p.designs.push_back(space_->from_indices(start));
    visited.insert(start);
    p.notes.push_back("restart");
    center = start;
  } else {
    const History climb(history.begin() + static_cast<std::ptrdiff_t>(std::min(restart_from_, history.size())),
                        history.end());
    const auto order = rank_history(climb);
    if (!order.empty() && !climb[order.front()].signals.failed)
      center = space_->to_indices(climb[order.front()].design);
  }

  if (center) {
    auto near = neighbor_indices(*space_, *center);
    std::erase_if(near, [&](const IndexVector& v) { return visited.count(v) > 0; });
    while (p.designs.size() < k && !near.empty()) {
      const auto pick = uniform_index(rng_, near.size());
      visited.insert(near[pick]);
      p.designs.push_back(space_->from_indices(near[pick]));
      near.erase(near.begin() + static_cast<std::ptrdiff_t>(pick));
    }
  }
  while (p.designs.size() < k) {
    const auto idx = unvisited_sample(*space_, visited, rng_);
    visited.insert(idx);
    p.designs.push_back(space_->from_indices(idx));
  }
  return p;
}

// ---------------------------------------------------------------------------

EvolutionarySearcher::EvolutionarySearcher(const CompositeSpace& space, std::uint64_t seed,
                                           const SearcherConfig& config)
    : space_(&space), rng_(derive_seed(seed, fnv1a("evolutionary-searcher"))), config_(config) {}

std::vector<std::size_t> EvolutionarySearcher::population(const History& history) const {
  auto order = rank_history(history);
  if (order.size() > config_.population) order.resize(config_.population);
  return order;
}

std::size_t EvolutionarySearcher::tournament(const std::vector<std::size_t>& pop) {
  // pop is ranked, so the smallest drawn position wins
  std::size_t best = uniform_index(rng_, pop.size());
  for (std::size_t i = 1; i < config_.tournament; ++i) best = std::min(best, uniform_index(rng_, pop.size()));
  return pop[best];
}

// Dependent choices are inherited together so the child stays valid.
IndexVector EvolutionarySearcher::crossover(const IndexVector& a, const IndexVector& b) {
  if (uniform01(rng_) >= config_.crossover_rate) return a;
  IndexVector child = a;
  for (const auto& group : space_->groups())
    if (uniform01(rng_) < 0.5)
      for (std::size_t f : group) child[f] = b[f];
  return child;
}

// Each choice moves to a random other value among those that keep the
// vector valid; a choice with no such value is left alone.
IndexVector EvolutionarySearcher::mutate(IndexVector v) {
  std::vector<std::size_t> options;
  for (std::size_t f = 0; f < v.size(); ++f) {
    const auto n = space_->choice(f).domain.size();
    if (n < 2 || uniform01(rng_) >= config_.mutation_rate) continue;
    options.clear();
    const auto current = v[f];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == current) continue;
      v[f] = j;
      if (space_->index_valid(v)) options.push_back(j);
    }
    v[f] = options.empty() ? current : options[uniform_index(rng_, options.size())];
  }
  return v;
}

Proposal EvolutionarySearcher::propose(const History& history, std::size_t k) {
  Proposal p;
  auto visited = visited_set(*space_, history);
  const auto pop = population(history);
  for (std::size_t i = 0; i < k; ++i) {
    IndexVector child;
    if (pop.size() < config_.population) {
      child = unvisited_sample(*space_, visited, rng_);  // initial population
    } else {
      bool found = false;
      for (int attempt = 0; attempt < 32 && !found; ++attempt) {
        const auto a = space_->to_indices(history[tournament(pop)].design);
        const auto b = space_->to_indices(history[tournament(pop)].design);
        child = mutate(crossover(a, b));
        found = space_->index_valid(child) && !visited.count(child);
      }
      if (!found) {
        child = unvisited_sample(*space_, visited, rng_);
        p.notes.push_back("resampled");
      }
    }
    visited.insert(child);
    p.designs.push_back(space_->from_indices(child));
  }
  return p;
}

// ---------------------------------------------------------------------------

LlmSearcher::LlmSearcher(const CompositeSpace& space, std::unique_ptr<LlmBackend> backend, AgentConfig config,
                         FeedbackOptions feedback, std::uint64_t seed)
    : space_(&space),
      backend_(std::move(backend)),
      config_(std::move(config)),
      agent_(space, feedback),
      patterns_(space),
      rng_(derive_seed(seed, fnv1a("llm-fill"))) {}

Proposal LlmSearcher::propose(const History& history, std::size_t k) {
  Proposal p;
  std::optional<Evaluation> initial;
  std::vector<SignalSet> previous;
  if (agent_.history().empty()) {
    if (!history.empty()) initial = history.front();
  } else {
    for (std::size_t i = reported_; i < history.size(); ++i) previous.push_back(history[i].signals);
  }
  reported_ = history.size();

  const auto messages = agent_.prompt(k, initial, previous);
  std::string accepted;
  for (std::size_t attempt = 0; attempt <= config_.max_parse_retries && p.designs.size() < k; ++attempt) {
    const auto response = query(*backend_, messages, config_);
    ++p.queries;
    const auto parsed = parse_design_vectors(response, *space_, patterns_);
    std::size_t taken = 0;
    for (const auto& v : parsed.vectors) {
      if (p.designs.size() >= k) break;
      const auto report = validate(*space_, v);
      if (!report.ok()) {
        p.notes.push_back(fmt::format("rejected: {} {}", report.violations.front().path,
                                      report.violations.front().message));
        continue;
      }
      p.designs.push_back(v);
      ++taken;
    }
    if (attempt == 0 && taken == k && parsed.vectors.size() == k) accepted = response;
    if (p.designs.size() < k) p.notes.push_back(fmt::format("attempt {}: {} of {} usable", attempt + 1, taken, k));
  }
  while (p.designs.size() < k) {
    p.designs.push_back(random_sample(*space_, rng_));
    ++p.filled;
  }

  // The history must describe exactly the evaluated batch, so anything other
  // than a clean first answer is stored in canonical form.
  if (accepted.empty()) {
    std::string canonical;
    for (std::size_t i = 0; i < p.designs.size(); ++i) {
      if (i > 0) canonical += "\n";
      canonical += render_design_vector(p.designs[i], *space_);
    }
    accepted = std::move(canonical);
  }
  agent_.commit(std::move(accepted));
  return p;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Searcher> make_searcher(const SearcherConfig& config, const CompositeSpace& space,
                                        const FeedbackOptions& feedback, std::uint64_t seed) {
  config.check();
  switch (config.kind) {
    case SearcherKind::random: return std::make_unique<RandomSearcher>(space, seed);
    case SearcherKind::local: return std::make_unique<LocalSearcher>(space, seed, config.patience);
    case SearcherKind::evolutionary: return std::make_unique<EvolutionarySearcher>(space, seed, config);
    case SearcherKind::llm: {
      auto agent = config.agent;
      agent.batch_size = config.batch_size;
      auto backend = make_backend(agent, space);
      return std::make_unique<LlmSearcher>(space, std::move(backend), agent, feedback, seed);
    }
  }
  throw ConfigError("unknown searcher kind");
}

std::size_t budget_schedule(std::size_t iteration, std::size_t iterations, std::size_t train_steps, bool enabled) {
  if (!enabled || iterations <= 1) return train_steps;
  const double frac =
      0.25 + 0.75 * static_cast<double>(std::min(iteration, iterations - 1)) / static_cast<double>(iterations - 1);
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(train_steps)));
}

}  // namespace lacer
