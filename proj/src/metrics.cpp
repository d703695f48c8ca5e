#include "cpac/metrics.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

namespace cpac {

namespace {

void check_lengths(std::span<const Index> truth, std::span<const Index> predicted) {
  if (truth.size() != predicted.size())
    throw ParameterError("label length mismatch: " + std::to_string(truth.size()) + " vs " +
                         std::to_string(predicted.size()));
  if (truth.empty()) throw ParameterError("metrics need at least one labeled point");
}

std::vector<Index> compact(std::span<const Index> labels, std::size_t& distinct) {
  std::unordered_map<Index, Index> ids;
  std::vector<Index> out;
  out.reserve(labels.size());
  for (Index l : labels) {
    auto [it, inserted] = ids.try_emplace(l, static_cast<Index>(ids.size()));
    out.push_back(it->second);
  }
  distinct = ids.size();
  return out;
}

double entropy(const std::vector<Index>& sums, double n) {
  double h = 0.0;
  for (Index s : sums)
    if (s > 0) {
      const double p = static_cast<double>(s) / n;
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace

ContingencyTable ContingencyTable::build(std::span<const Index> truth, std::span<const Index> predicted) {
  check_lengths(truth, predicted);
  std::size_t classes = 0, clusters = 0;
  const auto t = compact(truth, classes);
  const auto p = compact(predicted, clusters);
  ContingencyTable table;
  table.counts.assign(clusters, std::vector<Index>(classes, 0));
  table.row_sums.assign(clusters, 0);
  table.col_sums.assign(classes, 0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    ++table.counts[static_cast<std::size_t>(p[i])][static_cast<std::size_t>(t[i])];
    ++table.row_sums[static_cast<std::size_t>(p[i])];
    ++table.col_sums[static_cast<std::size_t>(t[i])];
  }
  table.total = static_cast<Index>(t.size());
  return table;
}

double nmi(std::span<const Index> truth, std::span<const Index> predicted) {
  const auto table = ContingencyTable::build(truth, predicted);
  const double n = static_cast<double>(table.total);
  const double h_pred = entropy(table.row_sums, n);
  const double h_true = entropy(table.col_sums, n);
  const double denom = std::max(h_pred, h_true);
  if (denom <= 0.0) return 1.0;  // both partitions are a single cluster
  double mi = 0.0;
  for (std::size_t r = 0; r < table.clusters(); ++r)
    for (std::size_t c = 0; c < table.classes(); ++c) {
      const Index cnt = table.counts[r][c];
      if (cnt == 0) continue;
      const double pij = static_cast<double>(cnt) / n;
      mi += pij * std::log(n * static_cast<double>(cnt) /
                           (static_cast<double>(table.row_sums[r]) * static_cast<double>(table.col_sums[c])));
    }
  return std::clamp(mi / denom, 0.0, 1.0);
}

std::vector<Index> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  // Potentials formulation (1-indexed), O(n^3).
  const std::size_t n = cost.size();
  for (const auto& row : cost)
    if (row.size() != n) throw DimensionError("hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(n, -1);
  for (std::size_t j = 1; j <= n; ++j)
    if (match[j] != 0) assignment[match[j] - 1] = static_cast<Index>(j - 1);
  return assignment;
}

double acc(std::span<const Index> truth, std::span<const Index> predicted) {
  const auto table = ContingencyTable::build(truth, predicted);
  const std::size_t size = std::max(table.clusters(), table.classes());
  Index max_count = 0;
  for (const auto& row : table.counts)
    for (Index c : row) max_count = std::max(max_count, c);
  // Pad to square with zero-count rows/columns and maximize matched counts.
  std::vector<std::vector<double>> cost(size, std::vector<double>(size, static_cast<double>(max_count)));
  for (std::size_t r = 0; r < table.clusters(); ++r)
    for (std::size_t c = 0; c < table.classes(); ++c)
      cost[r][c] = static_cast<double>(max_count - table.counts[r][c]);
  const auto assign = hungarian_min_cost(cost);
  Index matched = 0;
  for (std::size_t r = 0; r < table.clusters(); ++r) {
    const auto c = static_cast<std::size_t>(assign[r]);
    if (c < table.classes()) matched += table.counts[r][c];
  }
  return static_cast<double>(matched) / static_cast<double>(table.total);
}

}  // namespace cpac
