#include "cpac/pipeline.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "cpac/metrics.hpp"
#include "cpac/penalty.hpp"

namespace cpac {

namespace fs = std::filesystem;

namespace {

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void RunConfig::sync_seeds() {
  pretrain.seed = seed;
  admm.seed = seed;
}

DataMatrix load_run_data(const RunConfig& config) {
  DataMatrix data = load_dataset(config.data_path, parse_format(config.format), config.labels_path);
  data.image_shape = config.image_shape;
  if (data.image_shape && static_cast<Index>(data.image_shape->height) * data.image_shape->width != data.cols())
    throw ParameterError("image shape does not match the feature count");
  if (!config.graph_data_path.empty()) {
    if (config.standardize) throw ParameterError("--standardize cannot be combined with separate graph coordinates");
    data.graph_points = load_dataset(config.graph_data_path, parse_format(config.format)).values;
    data.validate();
  }
  if (config.standardize) data.values = standardize(data.values);
  return data;
}

MlpAutoencoder pretrain_stage(const DataMatrix& data, const RunConfig& config) {
  PretrainConfig pc = config.pretrain;
  pc.seed = config.seed;
  return layerwise_pretrain(data.values, pc);
}

ClusteringRun prepare_clustering(DataMatrix data, MlpAutoencoder net, const RunConfig& config,
                                 const ConstraintSet& constraints) {
  ClusteringRun run;
  run.admm = config.admm;
  run.admm.seed = config.seed;
  run.base_graph = build_mknn(data.graph_source(), config.k, {config.include_isolated_in_mean});
  run.constraints = constraints;
  run.graph = apply_constraints(run.base_graph, constraints);
  run.constraints.mark_all_applied();
  run.state = init_admm_state(net, data.values, run.graph, run.admm);
  run.data = std::move(data);
  run.net = std::move(net);
  return run;
}

ClusteringRun restore_clustering(DataMatrix data, MlpAutoencoder net, AdmmState state, const RunConfig& config,
                                 const ConstraintSet& constraints) {
  ClusteringRun run;
  run.admm = config.admm;
  run.admm.seed = config.seed;
  run.admm.mode = state.mode;
  run.base_graph = build_mknn(data.graph_source(), config.k, {config.include_isolated_in_mean});
  run.constraints = constraints;
  run.graph = apply_constraints(run.base_graph, constraints);
  run.constraints.mark_all_applied();
  if (state.u.rows() != data.rows()) throw DimensionError("run state does not match the dataset");
  run.state = std::move(state);
  run.data = std::move(data);
  run.net = std::move(net);
  return run;
}

void train_epochs(ClusteringRun& run, int epochs) {
  AdmmConfig cfg = run.admm;
  cfg.epochs = epochs;
  auto rows = train_clustering_stage(run.net, run.data.values, run.graph, run.state, cfg);
  run.history.insert(run.history.end(), rows.begin(), rows.end());
}

void set_constraints(ClusteringRun& run, const ConstraintSet& constraints) {
  run.constraints = constraints;
  run.graph = apply_constraints(run.base_graph, constraints);
  run.constraints.mark_all_applied();
}

ClusterAssignment extract(const ClusteringRun& run) {
  const Matrix rep = clustering_representation(run.net, run.data.values, run.state);
  const double tau = final_threshold(rep, run.graph);
  // A zero threshold (all shortest edges collapsed) still keeps those edges.
  return extract_clusters(rep, run.graph, tau > 0.0 ? tau : kScaleFloor);
}

std::optional<Evaluation> evaluate(const ClusteringRun& run, const ClusterAssignment& assignment) {
  if (!run.data.labels) return std::nullopt;
  return Evaluation{nmi(*run.data.labels, assignment.labels), acc(*run.data.labels, assignment.labels),
                    assignment.count};
}

PairQueue current_queue(const ClusteringRun& run) {
  // Ranked on the codes Z, whatever representation the mode clusters on.
  AdmmState view = run.state;
  view.u = run.net.encode(run.data.values);
  return rank_pairs(evaluate_losses(run.net, run.data.values, view, run.graph), run.graph);
}

Metadata config_metadata(const RunConfig& c) {
  Metadata m;
  m["version"] = kVersion;
  m["data"] = c.data_path;
  m["labels"] = c.labels_path;
  m["graph_data"] = c.graph_data_path;
  m["format"] = c.format;
  m["image_shape"] = c.image_shape ? std::to_string(c.image_shape->height) + "x" + std::to_string(c.image_shape->width)
                                   : "";
  m["constraints"] = c.constraints_path;
  m["seed"] = std::to_string(c.seed);
  m["k"] = std::to_string(c.k);
  m["include_isolated_in_mean"] = c.include_isolated_in_mean ? "true" : "false";
  m["standardize"] = c.standardize ? "true" : "false";
  m["pca_dims"] = std::to_string(c.pca_dims);
  m["hidden"] = join(c.pretrain.hidden_sizes);
  m["dropout"] = fmt(c.pretrain.dropout_rate);
  m["epochs_layerwise"] = std::to_string(c.pretrain.layerwise_epochs);
  m["epochs_finetune"] = std::to_string(c.pretrain.finetune_epochs);
  m["batch_size"] = std::to_string(c.pretrain.batch_size);
  m["lr_pretrain"] = fmt(c.pretrain.learning_rate);
  m["adam_beta1"] = fmt(c.pretrain.beta1);
  m["adam_beta2"] = fmt(c.pretrain.beta2);
  m["finetune_dropout"] = c.pretrain.finetune_dropout ? "true" : "false";
  m["mode"] = mode_name(c.admm.mode);
  m["epochs_cluster"] = std::to_string(c.admm.epochs);
  m["dual_step"] = fmt(c.admm.dual_step);
  m["lr_u"] = fmt(c.admm.u_learning_rate);
  m["lr_net"] = fmt(c.admm.net_learning_rate);
  m["rmsprop_decay"] = fmt(c.admm.rmsprop_decay);
  m["rmsprop_epsilon"] = fmt(c.admm.rmsprop_epsilon);
  m["pair_batch_size"] = std::to_string(c.admm.pair_batch_size);
  m["u_passes"] = std::to_string(c.admm.u_passes_per_epoch);
  m["net_passes"] = std::to_string(c.admm.net_passes_per_epoch);
  m["interval_override"] = std::to_string(c.admm.update_interval_override);
  return m;
}

namespace {

std::vector<int> split_ints(const std::string& text) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string part = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) out.push_back(std::stoi(part));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

RunConfig config_from_metadata(const Metadata& m) {
  RunConfig c;
  auto get = [&](const std::string& key, auto assign) {
    const auto it = m.find(key);
    if (it == m.end()) return;
    try {
      assign(it->second);
    } catch (const std::exception&) {
      throw ParseError("metadata key '" + key + "' has a bad value '" + it->second + "'");
    }
  };
  auto flag = [](const std::string& v) { return v == "true"; };
  get("data", [&](const std::string& v) { c.data_path = v; });
  get("labels", [&](const std::string& v) { c.labels_path = v; });
  get("graph_data", [&](const std::string& v) { c.graph_data_path = v; });
  get("format", [&](const std::string& v) { c.format = v; });
  get("image_shape", [&](const std::string& v) {
    if (!v.empty()) c.image_shape = parse_image_shape(v);
  });
  get("constraints", [&](const std::string& v) { c.constraints_path = v; });
  get("seed", [&](const std::string& v) { c.seed = std::stoull(v); });
  get("k", [&](const std::string& v) { c.k = std::stoi(v); });
  get("include_isolated_in_mean", [&](const std::string& v) { c.include_isolated_in_mean = flag(v); });
  get("standardize", [&](const std::string& v) { c.standardize = flag(v); });
  get("pca_dims", [&](const std::string& v) { c.pca_dims = std::stoi(v); });
  get("hidden", [&](const std::string& v) { c.pretrain.hidden_sizes = split_ints(v); });
  get("dropout", [&](const std::string& v) { c.pretrain.dropout_rate = std::stod(v); });
  get("epochs_layerwise", [&](const std::string& v) { c.pretrain.layerwise_epochs = std::stoi(v); });
  get("epochs_finetune", [&](const std::string& v) { c.pretrain.finetune_epochs = std::stoi(v); });
  get("batch_size", [&](const std::string& v) { c.pretrain.batch_size = std::stoi(v); });
  get("lr_pretrain", [&](const std::string& v) { c.pretrain.learning_rate = std::stod(v); });
  get("adam_beta1", [&](const std::string& v) { c.pretrain.beta1 = std::stod(v); });
  get("adam_beta2", [&](const std::string& v) { c.pretrain.beta2 = std::stod(v); });
  get("finetune_dropout", [&](const std::string& v) { c.pretrain.finetune_dropout = flag(v); });
  get("mode", [&](const std::string& v) { c.admm.mode = parse_mode(v); });
  get("epochs_cluster", [&](const std::string& v) { c.admm.epochs = std::stoi(v); });
  get("dual_step", [&](const std::string& v) { c.admm.dual_step = std::stod(v); });
  get("lr_u", [&](const std::string& v) { c.admm.u_learning_rate = std::stod(v); });
  get("lr_net", [&](const std::string& v) { c.admm.net_learning_rate = std::stod(v); });
  get("rmsprop_decay", [&](const std::string& v) { c.admm.rmsprop_decay = std::stod(v); });
  get("rmsprop_epsilon", [&](const std::string& v) { c.admm.rmsprop_epsilon = std::stod(v); });
  get("pair_batch_size", [&](const std::string& v) { c.admm.pair_batch_size = std::stoi(v); });
  get("u_passes", [&](const std::string& v) { c.admm.u_passes_per_epoch = std::stoi(v); });
  get("net_passes", [&](const std::string& v) { c.admm.net_passes_per_epoch = std::stoi(v); });
  get("interval_override", [&](const std::string& v) { c.admm.update_interval_override = std::stoi(v); });
  c.sync_seeds();
  return c;
}

void write_metadata(const std::string& path, const Metadata& metadata) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "# cpac run metadata\n";
  for (const auto& [k, v] : metadata) out << k << " = " << v << '\n';
}

Metadata read_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  Metadata m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError("metadata line without ' = ': " + line);
    m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

void write_artifacts(const RunConfig& config, const ClusteringRun& run, const ClusterAssignment& assignment,
                     const std::optional<Evaluation>& evaluation, Metadata& metadata) {
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  save_checkpoint((dir / "net.ckpt").string(), run.net);
  save_run_state((dir / "run.ckpt").string(), run.state);
  {
    auto out = open_out(dir / "history.csv");
    write_history_csv(out, run.history);
  }
  {
    auto out = open_out(dir / "assignment.csv");
    write_assignment_csv(out, assignment.labels);
  }
  {
    auto out = open_out(dir / "graph.csv");
    write_graph_csv(out, run.graph);
  }
  {
    const Matrix rep = clustering_representation(run.net, run.data.values, run.state);
    const int dims = std::min<int>(config.pca_dims, static_cast<int>(rep.cols()));
    const auto pca = pca_project(rep, dims);
    auto out = open_out(dir / "pca.csv");
    write_pca_csv(out, pca.coords, assignment.labels);
  }
  if (evaluation) {
    auto out = open_out(dir / "evaluation.csv");
    out << "metric,value\n" << std::setprecision(10);
    out << "nmi," << evaluation->nmi << "\nacc," << evaluation->acc << "\nclusters," << evaluation->clusters << '\n';
  }
  metadata["n"] = std::to_string(run.data.rows());
  metadata["d"] = std::to_string(run.data.cols());
  metadata["edges"] = std::to_string(run.graph.edges.size());
  metadata["lambda"] = fmt(run.state.lambda);
  metadata["delta1"] = fmt(run.state.sched.delta1);
  metadata["delta2"] = fmt(run.state.sched.delta2);
  metadata["update_interval"] = std::to_string(run.state.sched.update_interval);
  metadata["final_mu1"] = fmt(run.state.sched.mu1);
  metadata["final_mu2"] = fmt(run.state.sched.mu2);
  metadata["threshold"] = fmt(assignment.threshold);
  metadata["clusters"] = std::to_string(assignment.count);
  if (evaluation) {
    metadata["nmi"] = fmt(evaluation->nmi);
    metadata["acc"] = fmt(evaluation->acc);
  }
  write_metadata((dir / "run.meta").string(), metadata);
}

PipelineResult run_clustering(const RunConfig& config, DataMatrix data, MlpAutoencoder net) {
  PipelineResult result;
  result.metadata = config_metadata(config);
  ConstraintSet constraints;
  if (!config.constraints_path.empty()) {
    constraints = stage("constraints", [&] {
      std::ifstream in(config.constraints_path);
      if (!in) throw Error("cannot open " + config.constraints_path);
      return read_constraints_csv(in);
    });
  }
  result.run = stage("graph", [&] { return prepare_clustering(std::move(data), std::move(net), config, constraints); });
  try {
    train_epochs(result.run, config.admm.epochs);
  } catch (const std::exception& e) {
    // Keep whatever state the failed run reached.
    try {
      fs::create_directories(config.out_dir);
      save_checkpoint((fs::path(config.out_dir) / "net.partial.ckpt").string(), result.run.net);
      save_run_state((fs::path(config.out_dir) / "run.partial.ckpt").string(), result.run.state);
    } catch (...) {
    }
    throw StageError("cluster", e.what());
  }
  result.assignment = stage("extract", [&] { return extract(result.run); });
  result.evaluation = stage("evaluate", [&] { return evaluate(result.run, result.assignment); });
  stage("export", [&] {
    write_artifacts(config, result.run, result.assignment, result.evaluation, result.metadata);
    return 0;
  });
  return result;
}

PipelineResult run_pipeline(const RunConfig& config) {
  DataMatrix data = stage("load", [&] { return load_run_data(config); });
  MlpAutoencoder net = stage("pretrain", [&] {
    auto n = pretrain_stage(data, config);
    fs::create_directories(config.out_dir);
    save_checkpoint((fs::path(config.out_dir) / "pretrained.ckpt").string(), n);
    return n;
  });
  return run_clustering(config, std::move(data), std::move(net));
}

std::vector<std::uint8_t> grayscale_pixels(const DataMatrix& data, Index row) {
  const double lo = data.values.minCoeff();
  const double hi = data.values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(data.cols()));
  for (Index c = 0; c < data.cols(); ++c)
    px[static_cast<std::size_t>(c)] =
        static_cast<std::uint8_t>(std::lround(std::clamp((data.values(row, c) - lo) / span, 0.0, 1.0) * 255.0));
  return px;
}

}  // namespace cpac
