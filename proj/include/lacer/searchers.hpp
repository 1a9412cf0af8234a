#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lacer/evaluation.hpp"
#include "lacer/llm_agent.hpp"
#include "lacer/response_parser.hpp"

namespace lacer {

enum class SearcherKind { random, local, evolutionary, llm };
std::string_view to_string(SearcherKind k);
SearcherKind searcher_from_string(std::string_view s);

struct SearcherConfig {
  SearcherKind kind = SearcherKind::random;
  std::size_t batch_size = 1;
  // evolutionary
  std::size_t population = 10;
  std::size_t tournament = 3;
  double mutation_rate = 0.2;
  double crossover_rate = 0.5;
  bool budget_schedule = false;
  // local
  std::size_t patience = 5;
  // llm
  AgentConfig agent;

  void check() const;  // throws ConfigError
};

/// Evaluated candidates in evaluation order.
using History = std::vector<Evaluation>;

struct Proposal {
  std::vector<DesignVector> designs;
  std::size_t filled = 0;   // uniform samples appended after parse failures
  std::size_t queries = 0;  // backend calls made (llm only)
  std::vector<std::string> notes;
};

class Searcher {
 public:
  virtual ~Searcher() = default;
  /// k valid vectors given everything evaluated so far.
  virtual Proposal propose(const History& history, std::size_t k) = 0;
  virtual std::string name() const = 0;
};

/// Candidates ranked best first by task metric; failed ones last; ties keep
/// evaluation order.
std::vector<std::size_t> rank_history(const History& history);

class RandomSearcher : public Searcher {
 public:
  RandomSearcher(const CompositeSpace& space, std::uint64_t seed);
  Proposal propose(const History& history, std::size_t k) override;
  std::string name() const override { return "random"; }

 private:
  const CompositeSpace* space_;
  Rng rng_;
};

/// Hill climbing over unvisited Hamming neighbors of the best point since the
/// last restart; restarts at a random unvisited point after `patience`
/// proposals without a new global best.
class LocalSearcher : public Searcher {
 public:
  LocalSearcher(const CompositeSpace& space, std::uint64_t seed, std::size_t patience = 5);
  Proposal propose(const History& history, std::size_t k) override;
  std::string name() const override { return "local"; }

 private:
  const CompositeSpace* space_;
  Rng rng_;
  std::size_t patience_;
  std::size_t restart_from_ = 0;  // history index where the current climb began
  std::size_t stale_ = 0;
  std::size_t seen_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
};

/// Steady-state (mu + lambda) evolution: the population is the best
/// `population` candidates evaluated so far.
class EvolutionarySearcher : public Searcher {
 public:
  EvolutionarySearcher(const CompositeSpace& space, std::uint64_t seed, const SearcherConfig& config);
  Proposal propose(const History& history, std::size_t k) override;
  std::string name() const override { return "evolutionary"; }

  std::vector<std::size_t> population(const History& history) const;
  IndexVector mutate(IndexVector v);
  IndexVector crossover(const IndexVector& a, const IndexVector& b);

 private:
  const CompositeSpace* space_;
  Rng rng_;
  SearcherConfig config_;

  std::size_t tournament(const std::vector<std::size_t>& pop);
};

/// Queries a language model through a DesignAgent. The first call passes the
/// first history entry as the initial evaluation when feedback includes it.
class LlmSearcher : public Searcher {
 public:
  LlmSearcher(const CompositeSpace& space, std::unique_ptr<LlmBackend> backend, AgentConfig config,
              FeedbackOptions feedback, std::uint64_t seed);
  Proposal propose(const History& history, std::size_t k) override;
  std::string name() const override { return "llm"; }
  const DesignAgent& agent() const noexcept { return agent_; }

 private:
  const CompositeSpace* space_;
  std::unique_ptr<LlmBackend> backend_;
  AgentConfig config_;
  DesignAgent agent_;
  PatternSet patterns_;
  Rng rng_;
  std::size_t reported_ = 0;
};

/// Builds the searcher for a config. The llm kind creates its backend from
/// config.agent (the http backend needs the API key in the environment).
std::unique_ptr<Searcher> make_searcher(const SearcherConfig& config, const CompositeSpace& space,
                                        const FeedbackOptions& feedback, std::uint64_t seed);

/// Training steps for an iteration: linear from 25% to 100% of `train_steps`
/// over `iterations` when enabled, else constant.
std::size_t budget_schedule(std::size_t iteration, std::size_t iterations, std::size_t train_steps, bool enabled);

}  // namespace lacer
