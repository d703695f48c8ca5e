#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cpac/admm.hpp"
#include "cpac/constraints.hpp"
#include "cpac/dataset.hpp"
#include "cpac/extract.hpp"
#include "cpac/graph.hpp"
#include "cpac/nn.hpp"

namespace cpac {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::string data_path;
  std::string labels_path;
  std::string graph_data_path;  // build the graph on these coordinates instead of the data
  std::string format = "auto";
  std::optional<ImageShape> image_shape;
  std::string out_dir = "cpac_run";
  std::string constraints_path;  // journal replayed before clustering when set

  std::uint64_t seed = 0;
  int k = 10;
  bool include_isolated_in_mean = true;
  bool standardize = false;
  int pca_dims = 2;

  PretrainConfig pretrain;
  AdmmConfig admm;

  /// Copies the run seed into the per-stage configs.
  void sync_seeds();
};

/// Key/value run metadata; written as `key = value` lines.
using Metadata = std::map<std::string, std::string>;

/// Everything the clustering stage and the labeling loop operate on.
struct ClusteringRun {
  DataMatrix data;
  MlpAutoencoder net;
  MknnGraph base_graph;  // as built from X
  MknnGraph graph;       // base_graph after constraint edits
  ConstraintSet constraints;
  AdmmState state;
  AdmmConfig admm;
  std::vector<HistoryRow> history;
};

struct Evaluation {
  double nmi = 0.0;
  double acc = 0.0;
  Index clusters = 0;
};

DataMatrix load_run_data(const RunConfig& config);

/// Stage 1: layerwise pretraining + fine-tuning.
MlpAutoencoder pretrain_stage(const DataMatrix& data, const RunConfig& config);

/// Stage 2 setup: graph on X, constraint edits, lambda/deltas/mus, U = Z.
ClusteringRun prepare_clustering(DataMatrix data, MlpAutoencoder net, const RunConfig& config,
                                 const ConstraintSet& constraints = {});

/// Rebuilds the graph and reattaches a saved run state (resuming a run directory).
ClusteringRun restore_clustering(DataMatrix data, MlpAutoencoder net, AdmmState state, const RunConfig& config,
                                 const ConstraintSet& constraints = {});

/// Trains `epochs` more clustering epochs, continuing the schedule.
void train_epochs(ClusteringRun& run, int epochs);

/// Replaces the graph edits with base_graph + constraints (degrees stay frozen).
void set_constraints(ClusteringRun& run, const ConstraintSet& constraints);

ClusterAssignment extract(const ClusteringRun& run);
std::optional<Evaluation> evaluate(const ClusteringRun& run, const ClusterAssignment& assignment);

/// Edges ranked by w_pq * rho2(||z_p - z_q||^2) on the current codes.
PairQueue current_queue(const ClusteringRun& run);

struct PipelineResult {
  ClusteringRun run;
  ClusterAssignment assignment;
  std::optional<Evaluation> evaluation;
  Metadata metadata;
};

/// Writes net/run checkpoints, history, assignment, PCA, graph, evaluation and
/// metadata into config.out_dir.
void write_artifacts(const RunConfig& config, const ClusteringRun& run, const ClusterAssignment& assignment,
                     const std::optional<Evaluation>& evaluation, Metadata& metadata);

/// pretrain -> cluster -> extract -> evaluate -> export. Failures are rethrown
/// as StageError carrying the stage name.
PipelineResult run_pipeline(const RunConfig& config);
/// Same, starting from a pretrained net (the `cluster` subcommand).
PipelineResult run_clustering(const RunConfig& config, DataMatrix data, MlpAutoencoder net);

struct StageError : Error {
  StageError(const std::string& stage, const std::string& what) : Error(stage + ": " + what), stage_name(stage) {}
  std::string stage_name;
};

Metadata config_metadata(const RunConfig& config);
/// Inverse of config_metadata; keys that are absent keep their defaults.
RunConfig config_from_metadata(const Metadata& metadata);
void write_metadata(const std::string& path, const Metadata& metadata);
Metadata read_metadata(const std::string& path);

/// 0-255 grayscale rendering of one sample, min-max scaled over the whole dataset.
std::vector<std::uint8_t> grayscale_pixels(const DataMatrix& data, Index row);

}  // namespace cpac
