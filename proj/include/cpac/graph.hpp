#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpac/common.hpp"

namespace cpac {

struct Edge {
  Index p = 0;
  Index q = 0;  // p < q
  double weight = 1.0;

  bool operator==(const Edge&) const = default;
};

/// Mutual-KNN connectivity graph (the pair set the clustering loss runs over).
///
/// degrees and unary_weights describe the graph as it was built; constraint
/// edits change `edges` only.
struct MknnGraph {
  Index n = 0;
  int k = 0;
  std::vector<Edge> edges;
  std::vector<Index> degrees;
  std::vector<double> unary_weights;  // 1/N_i, 0 for isolated points
  std::string origin = "input";

  double max_weight() const;
  /// Index of edge (p, q) in `edges`, or -1.
  Index find_edge(Index p, Index q) const;
  std::vector<std::pair<Index, Index>> pairs() const;
};

/// Options for the edge-weight normalization.
struct WeightOptions {
  /// Mean degree over all n points (true) or over connected points only.
  bool include_isolated_in_mean = true;
};

/// Exact mutual KNN under Euclidean distance; ties broken by ascending index.
/// Returns a graph with degrees, unary weights and edge weights filled in.
MknnGraph build_mknn(const Matrix& points, int k, const WeightOptions& opts = {});

/// Assembles a graph from an explicit pair list (canonicalized, de-duplicated)
/// and computes degrees, unary weights and edge weights.
MknnGraph graph_from_pairs(Index n, std::span<const std::pair<Index, Index>> pairs, const WeightOptions& opts = {});

/// w_pq = mean_i(n_i) / sqrt(n_p * n_q), in edge order.
std::vector<double> edge_weights(const MknnGraph& graph, const WeightOptions& opts = {});

/// Largest eigenvalue of a symmetric positive semi-definite operator by power
/// iteration (all-ones start plus seeded noise). Stops when ||Av - rq v||
/// drops below tol * rq, or after max_iter steps.
struct PowerIterationOptions {
  int max_iter = 100000;
  double tol = 1e-9;
  std::uint64_t seed = 0;
};
double power_iteration(const std::function<void(const Vector&, Vector&)>& matvec, Index dim,
                       const PowerIterationOptions& opts = {});

/// ||M||_2 via power iteration on M^T M.
double spectral_norm(const Matrix& m, const PowerIterationOptions& opts = {});

/// ||D - R||_2 for the weighted graph, using sparse matvecs.
double laplacian_spectral_norm(const MknnGraph& graph, const PowerIterationOptions& opts = {});

/// lambda = ||Z||_2 / ||D - R||_2. Throws DegenerateGraphError on an edgeless graph.
double compute_lambda(const Matrix& z, const MknnGraph& graph, const PowerIterationOptions& opts = {});

class UnionFind {
 public:
  explicit UnionFind(std::size_t n);
  std::size_t find(std::size_t x) noexcept;
  void unite(std::size_t a, std::size_t b) noexcept;

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::uint8_t> rank_;
};

struct Components {
  std::vector<Index> labels;  // consecutive, ordered by smallest member index
  Index count = 0;
};

Components connected_components(Index n, std::span<const std::pair<Index, Index>> edges);

/// CSV with header `p,q,w`.
void write_graph_csv(std::ostream& out, const MknnGraph& graph);

}  // namespace cpac
