#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "cpac/common.hpp"
#include "cpac/graph.hpp"

namespace cpac {

struct ClusterAssignment {
  std::vector<Index> labels;
  Index count = 0;
  double threshold = 0.0;
};

/// Mean length, in U, of the shortest max(1, floor(1% of |edges|)) edges.
double final_threshold(const Matrix& u, const MknnGraph& graph);

/// Connected components of psi = {(p,q) in edges : ||u_p - u_q|| <= tau}.
ClusterAssignment extract_clusters(const Matrix& u, const MknnGraph& graph, double tau);

struct PcaResult {
  Matrix coords;                  // n x dims
  std::vector<double> variances;  // non-increasing
  Matrix directions;              // dims x d, unit rows
};

/// Projection of the centered rows of m onto the top `dims` principal
/// directions (power iteration with deflation). Each direction is signed so
/// that its largest-magnitude entry is positive.
PcaResult pca_project(const Matrix& m, int dims);

/// CSV `index,label`.
void write_assignment_csv(std::ostream& out, std::span<const Index> labels);
/// CSV `index,x,y[,z],label`.
/// Reads `index,label` rows back (indices must run 0..n-1 in order).
std::vector<Index> read_assignment_csv(std::istream& in);
void write_pca_csv(std::ostream& out, const Matrix& coords, std::span<const Index> labels);

}  // namespace cpac
