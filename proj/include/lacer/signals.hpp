#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lacer/common.hpp"

namespace lacer {

/// Row-major n x d matrix of finite reals (one observation per row).
struct SampleMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  SampleMatrix() = default;
  SampleMatrix(std::size_t n, std::size_t d) : rows(n), cols(d), values(n * d, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Column-major symbol matrix: columns[j][i] is the bin of sample i, column j.
using SymbolColumns = std::vector<std::vector<std::uint32_t>>;

struct FeaturePairSpec {
  std::string name;
  std::string x_source;
  std::string y_source;
};

struct FeaturePairInfo {
  std::string name;
  double mutual_information = 0.0;  // bits
  double redundancy = 0.0;          // bits
};

using FeatureInfo = std::vector<FeaturePairInfo>;

/// One candidate's evaluation.
struct SignalSet {
  double task_metric = 0.0;
  double average_reward = 0.0;
  FeatureInfo feature_info;
  bool failed = false;

  bool operator==(const SignalSet& o) const;
};

inline constexpr std::size_t kDefaultBins = 8;

/// Equal-frequency binning per column. Tied values share the bin of the
/// lowest rank in their tie group. Throws Error on non-finite input or bins < 2.
SymbolColumns discretize(const SampleMatrix& m, std::size_t bins = kDefaultBins);

/// Plug-in entropy in bits. Throws Error on empty input.
double entropy(std::span<const std::uint32_t> symbols);
double joint_entropy(std::span<const std::uint32_t> x, std::span<const std::uint32_t> y);

/// Mean over column pairs of H(x_i) - H(x_i | y_j), clamped at zero.
/// Exactly symmetric in its arguments.
double mutual_information(const SymbolColumns& x, const SymbolColumns& y);

/// Mean over column pairs of H(x_i) + H(y_j) - H(x_i, y_j), clamped at zero.
double redundancy(const SymbolColumns& x, const SymbolColumns& y);

using TraceMap = std::map<std::string, SampleMatrix>;

FeatureInfo collect_feature_info(const TraceMap& traces, const std::vector<FeaturePairSpec>& pairs,
                                 std::size_t bins = kDefaultBins);

/// Reads a CSV whose header names columns `key.j`; columns sharing a key form
/// one matrix.
TraceMap read_traces_csv(std::istream& in);
void write_traces_csv(std::ostream& out, const TraceMap& traces);

nlohmann::ordered_json to_json(const FeatureInfo& info);
nlohmann::ordered_json to_json(const SignalSet& s);
SignalSet signal_set_from_json(const nlohmann::json& j);

}  // namespace lacer
