#include "cpac/graph.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>

namespace cpac {

double MknnGraph::max_weight() const {
  double m = 0.0;
  for (const auto& e : edges) m = std::max(m, e.weight);
  return m;
}

Index MknnGraph::find_edge(Index p, Index q) const {
  if (p > q) std::swap(p, q);
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (edges[i].p == p && edges[i].q == q) return static_cast<Index>(i);
  return -1;
}

std::vector<std::pair<Index, Index>> MknnGraph::pairs() const {
  std::vector<std::pair<Index, Index>> out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.emplace_back(e.p, e.q);
  return out;
}

namespace {

void fill_degrees(MknnGraph& g) {
  g.degrees.assign(static_cast<std::size_t>(g.n), 0);
  for (const auto& e : g.edges) {
    ++g.degrees[static_cast<std::size_t>(e.p)];
    ++g.degrees[static_cast<std::size_t>(e.q)];
  }
  g.unary_weights.assign(static_cast<std::size_t>(g.n), 0.0);
  for (std::size_t i = 0; i < g.degrees.size(); ++i)
    if (g.degrees[i] > 0) g.unary_weights[i] = 1.0 / static_cast<double>(g.degrees[i]);
}

void finish_graph(MknnGraph& g, const WeightOptions& opts) {
  fill_degrees(g);
  const auto w = edge_weights(g, opts);
  for (std::size_t i = 0; i < g.edges.size(); ++i) g.edges[i].weight = w[i];
}

}  // namespace

MknnGraph build_mknn(const Matrix& points, int k, const WeightOptions& opts) {
  const Index n = points.rows();
  if (n < 2) throw ParameterError("build_mknn needs at least 2 points");
  if (k <= 0 || k >= n) throw ParameterError("k must satisfy 0 < k < n (k=" + std::to_string(k) + ")");

  // Directed KNN lists, exact distances, index tie-break.
  std::vector<std::vector<Index>> knn(static_cast<std::size_t>(n));
  std::vector<std::pair<double, Index>> row(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      row[m++] = {(points.row(i) - points.row(j)).squaredNorm(), j};
    }
    std::partial_sort(row.begin(), row.begin() + k, row.end());
    auto& list = knn[static_cast<std::size_t>(i)];
    list.resize(static_cast<std::size_t>(k));
    for (int t = 0; t < k; ++t) list[static_cast<std::size_t>(t)] = row[static_cast<std::size_t>(t)].second;
    std::sort(list.begin(), list.end());
  }

  MknnGraph g;
  g.n = n;
  g.k = k;
  g.origin = "input";
  for (Index p = 0; p < n; ++p)
    for (Index q : knn[static_cast<std::size_t>(p)]) {
      if (q <= p) continue;
      const auto& back = knn[static_cast<std::size_t>(q)];
      if (std::binary_search(back.begin(), back.end(), p)) g.edges.push_back({p, q, 1.0});
    }
  finish_graph(g, opts);
  return g;
}

MknnGraph graph_from_pairs(Index n, std::span<const std::pair<Index, Index>> pairs, const WeightOptions& opts) {
  if (n < 1) throw ParameterError("graph needs at least one point");
  std::set<std::pair<Index, Index>> unique;
  for (auto [p, q] : pairs) {
    if (p < 0 || q < 0 || p >= n || q >= n) throw ParameterError("edge index out of range");
    if (p == q) throw ParameterError("self-loop (" + std::to_string(p) + ") is not allowed");
    unique.emplace(std::min(p, q), std::max(p, q));
  }
  MknnGraph g;
  g.n = n;
  g.origin = "pairs";
  for (auto [p, q] : unique) g.edges.push_back({p, q, 1.0});
  finish_graph(g, opts);
  return g;
}

std::vector<double> edge_weights(const MknnGraph& graph, const WeightOptions& opts) {
  double sum = 0.0;
  Index counted = 0;
  for (Index d : graph.degrees) {
    if (d == 0 && !opts.include_isolated_in_mean) continue;
    sum += static_cast<double>(d);
    ++counted;
  }
  const double mean = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  std::vector<double> w;
  w.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    const double np = static_cast<double>(graph.degrees[static_cast<std::size_t>(e.p)]);
    const double nq = static_cast<double>(graph.degrees[static_cast<std::size_t>(e.q)]);
    w.push_back(mean / std::sqrt(np * nq));
  }
  return w;
}

double power_iteration(const std::function<void(const Vector&, Vector&)>& matvec, Index dim,
                       const PowerIterationOptions& opts) {
  if (dim <= 0) return 0.0;
  Rng rng = make_stream(opts.seed, "power-iteration");
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = 1.0 + 0.1 * (2.0 * uniform01(rng) - 1.0);
  v.normalize();
  Vector w(dim);
  double rq = 0.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    matvec(v, w);
    rq = v.dot(w);
    // The eigen-residual, unlike the change in rq, does not stall on small spectral gaps.
    if ((w - rq * v).norm() <= opts.tol * std::abs(rq)) return rq;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
  }
  return rq;
}

double spectral_norm(const Matrix& m, const PowerIterationOptions& opts) {
  if (m.size() == 0) return 0.0;
  const Matrix gram = m.transpose() * m;
  const double top = power_iteration([&](const Vector& x, Vector& y) { y = gram * x; }, gram.rows(), opts);
  return std::sqrt(std::max(top, 0.0));
}

double laplacian_spectral_norm(const MknnGraph& graph, const PowerIterationOptions& opts) {
  std::vector<double> diag(static_cast<std::size_t>(graph.n), 0.0);
  for (const auto& e : graph.edges) {
    diag[static_cast<std::size_t>(e.p)] += e.weight;
    diag[static_cast<std::size_t>(e.q)] += e.weight;
  }
  auto matvec = [&](const Vector& x, Vector& y) {
    y.resize(x.size());
    for (Index i = 0; i < graph.n; ++i) y(i) = diag[static_cast<std::size_t>(i)] * x(i);
    for (const auto& e : graph.edges) {
      y(e.p) -= e.weight * x(e.q);
      y(e.q) -= e.weight * x(e.p);
    }
  };
  return power_iteration(matvec, graph.n, opts);
}

double compute_lambda(const Matrix& z, const MknnGraph& graph, const PowerIterationOptions& opts) {
  if (graph.edges.empty()) throw DegenerateGraphError("compute_lambda: graph has no edges");
  if (z.rows() != graph.n) throw DimensionError("compute_lambda: Z row count does not match graph size");
  const double denom = laplacian_spectral_norm(graph, opts);
  if (denom <= 0.0) throw DegenerateGraphError("compute_lambda: ||D - R|| is zero");
  return spectral_norm(z, opts) / denom;
}

// ---------------------------------------------------------------------------

UnionFind::UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

std::size_t UnionFind::find(std::size_t x) noexcept {
  std::size_t root = x;
  while (parent_[root] != root) root = parent_[root];
  while (parent_[x] != root) {
    const std::size_t next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

void UnionFind::unite(std::size_t a, std::size_t b) noexcept {
  a = find(a);
  b = find(b);
  if (a == b) return;
  if (rank_[a] < rank_[b]) std::swap(a, b);
  parent_[b] = a;
  if (rank_[a] == rank_[b]) ++rank_[a];
}

Components connected_components(Index n, std::span<const std::pair<Index, Index>> edges) {
  if (n < 0) throw ParameterError("negative point count");
  UnionFind uf(static_cast<std::size_t>(n));
  for (auto [p, q] : edges) {
    if (p < 0 || q < 0 || p >= n || q >= n)
      throw ParameterError("connected_components: edge (" + std::to_string(p) + "," + std::to_string(q) +
                           ") out of range for n=" + std::to_string(n));
    uf.unite(static_cast<std::size_t>(p), static_cast<std::size_t>(q));
  }
  Components c;
  c.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<Index> root_label(static_cast<std::size_t>(n), -1);
  // Scanning in index order numbers components by their smallest member.
  for (Index i = 0; i < n; ++i) {
    const auto r = uf.find(static_cast<std::size_t>(i));
    if (root_label[r] < 0) root_label[r] = c.count++;
    c.labels[static_cast<std::size_t>(i)] = root_label[r];
  }
  return c;
}

void write_graph_csv(std::ostream& out, const MknnGraph& graph) {
  out << "p,q,w\n";
  out << std::setprecision(17);
  for (const auto& e : graph.edges) out << e.p << ',' << e.q << ',' << e.weight << '\n';
}

}  // namespace cpac
