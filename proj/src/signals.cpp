#include "lacer/signals.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace lacer {

bool SignalSet::operator==(const SignalSet& o) const {
  if (task_metric != o.task_metric || average_reward != o.average_reward || failed != o.failed ||
      feature_info.size() != o.feature_info.size())
    return false;
  for (std::size_t i = 0; i < feature_info.size(); ++i) {
    const auto& a = feature_info[i];
    const auto& b = o.feature_info[i];
    if (a.name != b.name || a.mutual_information != b.mutual_information || a.redundancy != b.redundancy)
      return false;
  }
  return true;
}

SymbolColumns discretize(const SampleMatrix& m, std::size_t bins) {
  if (bins < 2) throw Error("discretize needs at least two bins");
  for (double x : m.values)
    if (!std::isfinite(x)) throw Error("discretize: non-finite input");
  SymbolColumns out(m.cols, std::vector<std::uint32_t>(m.rows, 0));
  std::vector<std::size_t> order(m.rows);
  for (std::size_t c = 0; c < m.cols; ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return m.at(a, c) < m.at(b, c); });
    std::size_t group_rank = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      if (r > 0 && m.at(order[r], c) != m.at(order[r - 1], c)) group_rank = r;
      out[c][order[r]] = static_cast<std::uint32_t>(group_rank * bins / m.rows);
    }
  }
  return out;
}

namespace {

// Entropy of a sorted sequence from its run lengths.
template <typename T>
double entropy_of_sorted(const std::vector<T>& sorted) {
  const double n = static_cast<double>(sorted.size());
  double h = 0.0;
  std::size_t run = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    ++run;
    if (i + 1 == sorted.size() || !(sorted[i + 1] == sorted[i])) {
      const double p = static_cast<double>(run) / n;
      h -= p * std::log2(p);
      run = 0;
    }
  }
  return h == 0.0 ? 0.0 : h;  // no -0.0
}

// H(X) - H(X | Y); conditional entropy accumulated per distinct y.
double mi_pair_conditional(std::span<const std::uint32_t> x, std::span<const std::uint32_t> y) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> yx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) yx[i] = {y[i], x[i]};
  std::sort(yx.begin(), yx.end());
  const double n = static_cast<double>(x.size());
  double h_cond = 0.0;
  std::size_t begin = 0;
  while (begin < yx.size()) {
    std::size_t end = begin;
    while (end < yx.size() && yx[end].first == yx[begin].first) ++end;
    const double group = static_cast<double>(end - begin);
    double h_group = 0.0;
    std::size_t run = 0;
    for (std::size_t i = begin; i < end; ++i) {
      ++run;
      if (i + 1 == end || yx[i + 1].second != yx[i].second) {
        const double p = static_cast<double>(run) / group;
        h_group -= p * std::log2(p);
        run = 0;
      }
    }
    h_cond += (group / n) * h_group;
    begin = end;
  }
  return entropy(x) - h_cond;
}

// H(X) + H(Y) - H(X, Y).
double redundancy_pair(std::span<const std::uint32_t> x, std::span<const std::uint32_t> y) {
  return entropy(x) + entropy(y) - joint_entropy(x, y);
}

// Orders a pair canonically so f(a, b) and f(b, a) run the same arithmetic.
template <typename F>
double symmetric(F f, const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  return std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end()) ? f(b, a) : f(a, b);
}

template <typename F>
double pairwise_mean(F f, const SymbolColumns& x, const SymbolColumns& y, const char* what) {
  if (x.empty() || y.empty()) throw Error(fmt::format("{}: no columns", what));
  const auto n = x.front().size();
  for (const auto& c : x)
    if (c.size() != n) throw Error(fmt::format("{}: length mismatch", what));
  for (const auto& c : y)
    if (c.size() != n) throw Error(fmt::format("{}: length mismatch", what));
  if (n == 0) throw Error(fmt::format("{}: empty input", what));
  std::vector<double> values;
  values.reserve(x.size() * y.size());
  for (const auto& xi : x)
    for (const auto& yj : y) values.push_back(symmetric(f, xi, yj));
  // Sorted summation makes the mean independent of argument order.
  std::sort(values.begin(), values.end());
  const double sum = std::accumulate(values.begin(), values.end(), 0.0);
  return std::max(0.0, sum / static_cast<double>(values.size()));
}

}  // namespace

double entropy(std::span<const std::uint32_t> symbols) {
  if (symbols.empty()) throw Error("entropy of an empty sequence");
  std::vector<std::uint32_t> sorted(symbols.begin(), symbols.end());
  std::sort(sorted.begin(), sorted.end());
  return entropy_of_sorted(sorted);
}

double joint_entropy(std::span<const std::uint32_t> x, std::span<const std::uint32_t> y) {
  if (x.size() != y.size()) throw Error("joint entropy: length mismatch");
  if (x.empty()) throw Error("entropy of an empty sequence");
  std::vector<std::uint64_t> joint(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) joint[i] = (std::uint64_t{x[i]} << 32) | y[i];
  std::sort(joint.begin(), joint.end());
  return entropy_of_sorted(joint);
}

double mutual_information(const SymbolColumns& x, const SymbolColumns& y) {
  return pairwise_mean(mi_pair_conditional, x, y, "mutual_information");
}

double redundancy(const SymbolColumns& x, const SymbolColumns& y) {
  return pairwise_mean(redundancy_pair, x, y, "redundancy");
}

FeatureInfo collect_feature_info(const TraceMap& traces, const std::vector<FeaturePairSpec>& pairs,
                                 std::size_t bins) {
  std::optional<std::size_t> n;
  for (const auto& p : pairs) {
    for (const auto* key : {&p.x_source, &p.y_source}) {
      auto it = traces.find(*key);
      if (it == traces.end()) throw Error(fmt::format("missing trace '{}' for pair '{}'", *key, p.name));
      if (n && it->second.rows != *n) throw Error(fmt::format("trace '{}' has mismatched sample count", *key));
      n = it->second.rows;
      if (it->second.rows < 2 || it->second.cols == 0)
        throw Error(fmt::format("trace '{}' needs at least two samples and one column", *key));
    }
  }
  std::map<std::string, SymbolColumns> symbols;
  auto symbols_of = [&](const std::string& key) -> const SymbolColumns& {
    auto it = symbols.find(key);
    if (it == symbols.end()) it = symbols.emplace(key, discretize(traces.at(key), bins)).first;
    return it->second;
  };
  FeatureInfo info;
  for (const auto& p : pairs) {
    const auto& x = symbols_of(p.x_source);
    const auto& y = symbols_of(p.y_source);
    info.push_back({p.name, mutual_information(x, y), redundancy(x, y)});
  }
  return info;
}

TraceMap read_traces_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      cells.push_back(cell);
    }
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw Error("trace CSV is empty");
  const auto header = split(line);
  std::vector<std::string> keys;
  for (const auto& h : header) {
    const auto dot = h.rfind('.');
    keys.push_back(dot == std::string::npos ? h : h.substr(0, dot));
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw Error(fmt::format("trace CSV line {} has {} cells, expected {}", line_no, cells.size(), header.size()));
    std::vector<double> row;
    for (const auto& c : cells) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != c.size() || c.empty())
        throw Error(fmt::format("trace CSV line {}: '{}' is not a number", line_no, c));
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  TraceMap traces;
  std::map<std::string, std::vector<std::size_t>> columns_of;
  std::vector<std::string> order;
  for (std::size_t j = 0; j < keys.size(); ++j) {
    if (!columns_of.count(keys[j])) order.push_back(keys[j]);
    columns_of[keys[j]].push_back(j);
  }
  for (const auto& key : order) {
    const auto& cols = columns_of[key];
    SampleMatrix m(rows.size(), cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c) m.at(r, c) = rows[r][cols[c]];
    traces.emplace(key, std::move(m));
  }
  return traces;
}

void write_traces_csv(std::ostream& out, const TraceMap& traces) {
  std::size_t n = 0;
  bool first = true;
  for (const auto& [key, m] : traces) {
    if (!first && m.rows != n) throw Error("write_traces_csv: mismatched sample counts");
    n = m.rows;
    for (std::size_t c = 0; c < m.cols; ++c) {
      out << (first ? "" : ",") << key << '.' << c;
      first = false;
    }
  }
  out << '\n';
  for (std::size_t r = 0; r < n; ++r) {
    first = true;
    for (const auto& [key, m] : traces) {
      for (std::size_t c = 0; c < m.cols; ++c) {
        out << (first ? "" : ",") << fmt::format("{}", m.at(r, c));
        first = false;
      }
    }
    out << '\n';
  }
}

nlohmann::ordered_json to_json(const FeatureInfo& info) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& p : info)
    out.push_back({{"pair", p.name}, {"mutual_information", p.mutual_information}, {"redundancy", p.redundancy}});
  return out;
}

nlohmann::ordered_json to_json(const SignalSet& s) {
  nlohmann::ordered_json out;
  out["task_metric"] = s.task_metric;
  out["average_reward"] = s.average_reward;
  out["feature_info"] = to_json(s.feature_info);
  out["failed"] = s.failed;
  return out;
}

SignalSet signal_set_from_json(const nlohmann::json& j) {
  SignalSet s;
  s.task_metric = j.at("task_metric").get<double>();
  s.average_reward = j.at("average_reward").get<double>();
  s.failed = j.value("failed", false);
  for (const auto& p : j.at("feature_info"))
    s.feature_info.push_back({p.at("pair").get<std::string>(), p.at("mutual_information").get<double>(),
                              p.at("redundancy").get<double>()});
  return s;
}

}  // namespace lacer
