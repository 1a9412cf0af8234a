#pragma once

#include <cstdint>
#include <vector>

#include "lacer/orchestrator.hpp"

namespace lacer::test {

inline RunConfig surrogate_config(SearcherKind kind, std::size_t k, std::uint64_t seed) {
  RunConfig c;
  c.space_id = "traffic";
  c.searcher.kind = kind;
  c.searcher.batch_size = k;
  c.budget = 50;
  c.seed = seed;
  c.surrogate_seed = 0;
  return c;
}

inline bool monotone(const std::vector<double>& xs) {
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] < xs[i - 1]) return false;
  return true;
}

struct DynamicsTally {
  std::size_t seeds = 0;
  std::size_t complete = 0;
  std::size_t monotone = 0;    // runs (all searchers) with a monotone best-so-far
  std::size_t runs = 0;
  std::size_t llm_beats_random = 0;
  std::size_t ablated_not_better = 0;
};

/// Final best of random, local, evolutionary, mock-llm and mock-llm with all
/// feedback removed, on seeds [0, seeds).
inline DynamicsTally search_dynamics(std::size_t k, std::size_t seeds) {
  DynamicsTally t;
  t.seeds = seeds;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    auto check = [&](const RunLog& log) {
      ++t.runs;
      t.complete += log.complete;
      t.monotone += monotone(log.best);
      return log.best.back();
    };
    const double random = check(run(surrogate_config(SearcherKind::random, k, s)));
    check(run(surrogate_config(SearcherKind::local, k, s)));
    check(run(surrogate_config(SearcherKind::evolutionary, k, s)));
    const double llm = check(run(surrogate_config(SearcherKind::llm, k, s)));
    auto ablated = surrogate_config(SearcherKind::llm, k, s);
    ablated.feedback = {false, false, false};
    const double genius = check(run(ablated));
    t.llm_beats_random += llm >= random;
    t.ablated_not_better += genius <= llm;
  }
  return t;
}

/// Least-squares slope of the per-iteration mean score of proposed (non-expert)
/// candidates, noiseless surrogate.
inline double proposal_slope(const RunLog& log) {
  std::vector<double> sum(log.iterations, 0.0), count(log.iterations, 0.0);
  for (const auto& r : log.records) {
    if (r.expert) continue;
    sum[r.iteration] += r.signals.task_metric;
    count[r.iteration] += 1.0;
  }
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (count[i] > 0) {
      xs.push_back(static_cast<double>(i));
      ys.push_back(sum[i] / count[i]);
    }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) * (xs[i] - mx);
  }
  return den > 0 ? num / den : 0.0;
}

/// Mock-llm runs (k = 5, noiseless surrogate) whose proposal scores trend upward.
inline std::size_t responsive_runs(std::size_t seeds) {
  std::size_t up = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    auto c = surrogate_config(SearcherKind::llm, 5, s);
    c.surrogate_noise = 0.0;
    up += proposal_slope(run(c)) >= 0.0;
  }
  return up;
}

}  // namespace lacer::test
