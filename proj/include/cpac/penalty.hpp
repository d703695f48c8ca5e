#pragma once

#include "cpac/common.hpp"
#include "cpac/graph.hpp"

namespace cpac {

/// Geman-McClure penalty on a squared distance s: mu * s / (mu + s).
/// Bounded by mu, never larger than s.
double geman_mcclure(double s, double mu);

/// d/ds of geman_mcclure: mu^2 / (mu + s)^2, in (0, 1].
double geman_mcclure_grad(double s, double mu);

/// Floor applied to the scale estimates of degenerate embeddings.
inline constexpr double kScaleFloor = 1e-12;

struct Deltas {
  double delta1 = kScaleFloor;
  double delta2 = kScaleFloor;
  bool degenerate = false;  // at least one estimate hit the floor
};

/// Number of edges entering a "nearest 1%" average: max(1, floor(0.01*m)),
/// optionally capped.
Index nearest_percent_count(Index edge_count, Index cap = -1);

/// Sorted Euclidean edge lengths measured in the rows of `points`.
std::vector<double> edge_lengths(const Matrix& points, const MknnGraph& graph);

/// delta1 = 2 * mean_i ||z_i - mean(Z)||; delta2 = mean length of the shortest
/// 1% of edges in Z (at most 250 of them).
Deltas compute_deltas(const Matrix& z, const MknnGraph& graph);

struct Mus {
  double mu1 = 0.0;
  double mu2 = 0.0;
};

/// mu1 = 8 * delta1, mu2 = 3 * max squared edge length in U0; each floored at its delta.
Mus init_mus(const Deltas& deltas, const Matrix& u0, const MknnGraph& graph);

/// Epochs between halvings: 60 when |edges| < 0.2% of n^2, else 10.
int select_update_interval(Index edge_count, Index n);

struct PenaltySchedule {
  double mu1 = 1.0;
  double mu2 = 1.0;
  double delta1 = kScaleFloor;
  double delta2 = kScaleFloor;
  int update_interval = 10;
  int epoch = 0;
};

/// Advances to `epoch` (one past the previous); on multiples of the interval
/// both scales are halved and clamped at their lower bounds.
PenaltySchedule schedule_step(PenaltySchedule sched, int epoch);

}  // namespace cpac
