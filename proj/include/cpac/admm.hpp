#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cpac/common.hpp"
#include "cpac/graph.hpp"
#include "cpac/nn.hpp"
#include "cpac/penalty.hpp"

namespace cpac {

/// Which objective the clustering stage optimizes.
enum class AblationMode {
  kSingleRepresentation = 1,  // (i)   reconstruction + pairwise on Z, no U
  kClusteringOnly = 2,        // (ii)  pairwise on Z only, encoder only
  kFullAdmm = 3,              // (iii) alternating U / network / dual updates
};

const char* mode_name(AblationMode mode);
AblationMode parse_mode(const std::string& text);  // "i" | "ii" | "iii" (or 1/2/3)

struct AdmmConfig {
  AblationMode mode = AblationMode::kFullAdmm;
  int epochs = 100;
  double dual_step = 1.0;
  double u_learning_rate = 0.04;
  double net_learning_rate = 1e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  int pair_batch_size = 256;
  int u_passes_per_epoch = 1;
  int net_passes_per_epoch = 1;
  int update_interval_override = 0;  // 0: pick 60/10 from graph density
  std::uint64_t seed = 0;
  std::string abort_checkpoint_prefix;  // when set, state is saved here if an epoch throws
};

struct AdmmState {
  Matrix u;
  Matrix dual;  // Lagrange multiplier, same shape as U
  double dual_step = 1.0;
  PenaltySchedule sched;
  double lambda = 0.0;
  int epoch = 0;
  AblationMode mode = AblationMode::kFullAdmm;
  std::uint64_t seed = 0;
  Optimizer u_optimizer;
  Optimizer net_optimizer;
};

struct LossBreakdown {
  double reconstruction = 0.0;  // (1/dim X) sum ||x' - x||^2
  double pairwise = 0.0;        // (lambda/dim Z) sum w_pq rho2(||u_p - u_q||^2)
  double representation = 0.0;  // (1/dim Z) sum rho1(||z_i - u_i||^2)
  double dual_term = 0.0;       // <dual, Z - U>
  std::vector<double> per_edge_loss;  // w_pq rho2(||u_p - u_q||^2), edge order

  /// Sum of the terms the given mode optimizes.
  double total(AblationMode mode) const;
};

struct HistoryRow {
  int epoch = 0;
  double rec = 0.0;
  double pair = 0.0;
  double rep = 0.0;
  double dual = 0.0;
  double residual = 0.0;  // mean_i ||z_i - u_i||
  double mu1 = 0.0;
  double mu2 = 0.0;
};

/// Z = encode(X); lambda, deltas and mus from Z; U = Z; dual = 0.
AdmmState init_admm_state(const MlpAutoencoder& net, const Matrix& x, const MknnGraph& graph,
                          const AdmmConfig& config);

LossBreakdown evaluate_losses(const MlpAutoencoder& net, const Matrix& x, const AdmmState& state,
                              const MknnGraph& graph);

/// Edge ids split into shuffled batches; every edge appears exactly once.
std::vector<std::vector<Index>> pair_batches(std::size_t edge_count, int batch_size, Rng& rng);

/// Per-batch unary multiplicities: point -> (number of visits in the batch) * w_i.
struct BatchPoints {
  std::vector<Index> points;      // ascending
  std::vector<double> weights;    // same order
};
BatchPoints batch_points(const MknnGraph& graph, std::span<const Index> edge_ids);

/// Step-1 objective on one pair batch:
///   (lambda/dZ) sum_e w_pq rho2(||u_p-u_q||^2)
/// + sum_visits w_i [ (1/dZ) rho1(||z_i-u_i||^2) + <dual_i, z_i - u_i> ].
double u_batch_objective(const Matrix& u, const Matrix& z, const Matrix& dual, const MknnGraph& graph,
                         std::span<const Index> edge_ids, double lambda, const PenaltySchedule& sched);
/// Gradient of u_batch_objective w.r.t. U (n x dZ, zero rows for untouched points).
Matrix u_batch_gradient(const Matrix& u, const Matrix& z, const Matrix& dual, const MknnGraph& graph,
                        std::span<const Index> edge_ids, double lambda, const PenaltySchedule& sched);

struct NetTerms {
  bool reconstruction = true;
  bool representation = true;  // rho1 term plus the dual inner product
  bool pairwise_on_codes = false;

  static NetTerms for_mode(AblationMode mode);
};

/// Network objective on one pair batch; unary terms weighted as in batch_points,
/// pairwise terms (when enabled) act on Z = Enc(X).
double net_batch_objective(const MlpAutoencoder& net, const Matrix& x, const Matrix& u, const Matrix& dual,
                           const MknnGraph& graph, std::span<const Index> edge_ids, double lambda,
                           const PenaltySchedule& sched, NetTerms terms);
AutoencoderGradients net_batch_gradient(const MlpAutoencoder& net, const Matrix& x, const Matrix& u,
                                        const Matrix& dual, const MknnGraph& graph, std::span<const Index> edge_ids,
                                        double lambda, const PenaltySchedule& sched, NetTerms terms,
                                        double* objective = nullptr);

/// One epoch of RMSProp on U with Z frozen. Isolated points (no edges) carry no
/// pair batches; their rows of U are set to Z.
void u_step(AdmmState& state, const Matrix& z_frozen, const MknnGraph& graph, const AdmmConfig& config);

/// One epoch of RMSProp on the autoencoder with U frozen.
void net_step(MlpAutoencoder& net, const Matrix& x, AdmmState& state, const MknnGraph& graph,
              const AdmmConfig& config);

/// dual += a * (Z - U).
void dual_update(AdmmState& state, const Matrix& z);

/// mean_i ||z_i - u_i||.
double residual_norm(const Matrix& z, const Matrix& u);

/// Runs config.epochs epochs starting from state.epoch and returns one history
/// row per epoch.
std::vector<HistoryRow> train_clustering_stage(MlpAutoencoder& net, const Matrix& x, const MknnGraph& graph,
                                               AdmmState& state, const AdmmConfig& config);

/// The representation final clustering reads: U for full ADMM, Z otherwise.
Matrix clustering_representation(const MlpAutoencoder& net, const Matrix& x, const AdmmState& state);

// "CPACRUN1" run checkpoint (U, dual, optimizer accumulators, schedule, counters).
void write_run_state(std::ostream& out, const AdmmState& state);
AdmmState read_run_state(std::istream& in);
void save_run_state(const std::string& path, const AdmmState& state);
AdmmState load_run_state(const std::string& path);

/// CSV `epoch,rec,pair,rep,dual,residual,mu1,mu2`.
void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows);

}  // namespace cpac
