#include "cpac/penalty.hpp"

#include <algorithm>
#include <numeric>

namespace cpac {

namespace {

void check_args(double s, double mu) {
  if (!(s >= 0.0)) throw DomainError("Geman-McClure: squared distance must be >= 0, got " + std::to_string(s));
  if (!(mu > 0.0)) throw DomainError("Geman-McClure: scale must be > 0, got " + std::to_string(mu));
}

}  // namespace

double geman_mcclure(double s, double mu) {
  check_args(s, mu);
  return mu * s / (mu + s);
}

double geman_mcclure_grad(double s, double mu) {
  check_args(s, mu);
  const double r = mu / (mu + s);
  return r * r;
}

Index nearest_percent_count(Index edge_count, Index cap) {
  Index count = std::max<Index>(1, edge_count / 100);
  if (cap > 0) count = std::min(count, cap);
  return std::min(count, edge_count);
}

std::vector<double> edge_lengths(const Matrix& points, const MknnGraph& graph) {
  std::vector<double> len;
  len.reserve(graph.edges.size());
  for (const auto& e : graph.edges) len.push_back((points.row(e.p) - points.row(e.q)).norm());
  std::sort(len.begin(), len.end());
  return len;
}

Deltas compute_deltas(const Matrix& z, const MknnGraph& graph) {
  if (graph.edges.empty()) throw DegenerateGraphError("compute_deltas: graph has no edges");
  if (z.rows() != graph.n) throw DimensionError("compute_deltas: Z row count does not match graph size");
  Deltas d;
  const RowVector mean = z.colwise().mean();
  double spread = 0.0;
  for (Index i = 0; i < z.rows(); ++i) spread += (z.row(i) - mean).norm();
  d.delta1 = 2.0 * spread / static_cast<double>(z.rows());

  const auto len = edge_lengths(z, graph);
  const Index count = nearest_percent_count(static_cast<Index>(len.size()), 250);
  d.delta2 = std::accumulate(len.begin(), len.begin() + count, 0.0) / static_cast<double>(count);

  if (d.delta1 < kScaleFloor) {
    d.delta1 = kScaleFloor;
    d.degenerate = true;
  }
  if (d.delta2 < kScaleFloor) {
    d.delta2 = kScaleFloor;
    d.degenerate = true;
  }
  return d;
}

Mus init_mus(const Deltas& deltas, const Matrix& u0, const MknnGraph& graph) {
  if (u0.rows() != graph.n) throw DimensionError("init_mus: U0 row count does not match graph size");
  double max_sq = 0.0;
  for (const auto& e : graph.edges) max_sq = std::max(max_sq, (u0.row(e.p) - u0.row(e.q)).squaredNorm());
  Mus m;
  m.mu1 = std::max(8.0 * deltas.delta1, deltas.delta1);
  m.mu2 = std::max(3.0 * max_sq, deltas.delta2);
  return m;
}

int select_update_interval(Index edge_count, Index n) {
  const double fraction = static_cast<double>(edge_count) / (static_cast<double>(n) * static_cast<double>(n));
  return fraction < 0.002 ? 60 : 10;
}

PenaltySchedule schedule_step(PenaltySchedule sched, int epoch) {
  sched.epoch = epoch;
  if (sched.update_interval > 0 && epoch > 0 && epoch % sched.update_interval == 0) {
    sched.mu1 = std::max(sched.mu1 / 2.0, sched.delta1);
    sched.mu2 = std::max(sched.mu2 / 2.0, sched.delta2);
  }
  return sched;
}

}  // namespace cpac
