#pragma once

#include <span>
#include <vector>

#include "cpac/common.hpp"

namespace cpac {

/// Co-occurrence counts of predicted clusters (rows) and true classes (columns).
/// Labels are compacted to 0..k-1 in order of first appearance.
struct ContingencyTable {
  std::vector<std::vector<Index>> counts;
  std::vector<Index> row_sums;
  std::vector<Index> col_sums;
  Index total = 0;

  static ContingencyTable build(std::span<const Index> truth, std::span<const Index> predicted);
  std::size_t clusters() const { return row_sums.size(); }
  std::size_t classes() const { return col_sums.size(); }
};

/// I(c; c') / max(H(c), H(c')), natural logs. 1 when both partitions are single clusters.
double nmi(std::span<const Index> truth, std::span<const Index> predicted);

/// Best one-to-one cluster-to-class matching, matched count / n.
double acc(std::span<const Index> truth, std::span<const Index> predicted);

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian algorithm).
/// Returns assignment[row] = column.
std::vector<Index> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

}  // namespace cpac
