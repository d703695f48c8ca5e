// cpac: command-line driver for pretraining, clustering, labeling and export.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "cpac/label_service.hpp"
#include "cpac/metrics.hpp"
#include "cpac/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cpac;

namespace {

struct Flags {
  RunConfig config;
  std::string image_shape;
  std::string mode = "iii";
  std::string hidden = "500,500,2000,10";
  bool exclude_isolated = false;
};

void add_data_flags(CLI::App* app, Flags& f, bool required = true) {
  auto* data = app->add_option("--data", f.config.data_path, "Dataset (CSV or CPACMAT1 binary)");
  if (required) data->required();
  app->add_option("--labels", f.config.labels_path, "Ground-truth labels, one integer per line");
  app->add_option("--format", f.config.format, "auto | csv | bin")->capture_default_str();
  app->add_option("--image-shape", f.image_shape, "HxW pixel grid for image payloads");
  app->add_flag("--standardize", f.config.standardize, "Zero-mean/unit-variance features");
  app->add_option("--graph-data", f.config.graph_data_path, "Build the mutual-KNN graph on these coordinates instead");
  app->add_option("--seed", f.config.seed, "Run seed")->capture_default_str();
  app->add_option("--out", f.config.out_dir, "Output directory")->capture_default_str();
}

void add_pretrain_flags(CLI::App* app, Flags& f) {
  auto& p = f.config.pretrain;
  app->add_option("--hidden", f.hidden, "Encoder widths after the input, comma-separated")->capture_default_str();
  app->add_option("--dropout", p.dropout_rate)->capture_default_str();
  app->add_option("--epochs-layerwise", p.layerwise_epochs)->capture_default_str();
  app->add_option("--epochs-finetune", p.finetune_epochs)->capture_default_str();
  app->add_option("--batch-size", p.batch_size)->capture_default_str();
  app->add_option("--lr-pretrain", p.learning_rate)->capture_default_str();
  app->add_flag("!--no-finetune-dropout", p.finetune_dropout, "Fine-tune without dropout");
}

void add_cluster_flags(CLI::App* app, Flags& f) {
  auto& a = f.config.admm;
  app->add_option("--k", f.config.k, "MKNN neighborhood size")->capture_default_str();
  app->add_flag("--exclude-isolated-in-mean", f.exclude_isolated, "Degree mean over connected points only");
  app->add_option("--epochs-cluster", a.epochs)->capture_default_str();
  app->add_option("--mode", f.mode, "Ablation mode: i | ii | iii")->capture_default_str();
  app->add_option("--dual-step", a.dual_step, "Dual step a")->capture_default_str();
  app->add_option("--lr-u", a.u_learning_rate)->capture_default_str();
  app->add_option("--lr-net", a.net_learning_rate)->capture_default_str();
  app->add_option("--pair-batch", a.pair_batch_size)->capture_default_str();
  app->add_option("--interval", a.update_interval_override, "mu halving interval (0: from graph density)")
      ->capture_default_str();
  app->add_option("--constraints", f.config.constraints_path, "Constraint journal replayed before clustering");
  app->add_option("--pca-dims", f.config.pca_dims)->capture_default_str();
}

std::vector<int> parse_widths(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ParameterError("--hidden expects comma-separated integers, got '" + text + "'");
    }
  }
  return out;
}

RunConfig finish(Flags& f) {
  RunConfig c = f.config;
  if (!f.image_shape.empty()) c.image_shape = parse_image_shape(f.image_shape);
  c.admm.mode = parse_mode(f.mode);
  c.pretrain.hidden_sizes = parse_widths(f.hidden);
  c.include_isolated_in_mean = !f.exclude_isolated;
  c.sync_seeds();
  return c;
}

void print_summary(const PipelineResult& r, const std::string& out_dir) {
  std::cout << "clusters: " << r.assignment.count << "\n"
            << "threshold: " << r.assignment.threshold << "\n";
  if (r.evaluation) std::cout << "NMI: " << r.evaluation->nmi << "\nACC: " << r.evaluation->acc << "\n";
  std::cout << "artifacts: " << out_dir << "\n";
}

LabelServer* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep clustering with pairwise constraints"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Flags f;
  std::string stage = "cli";

  // synth
  auto* synth = app.add_subcommand("synth", "Write a Gaussian-blob dataset");
  Index n = 400, d = 10, clusters = 4;
  double separation = 10.0, graph_noise = 0.0;
  std::string synth_out = "blobs.csv", synth_labels = "blobs.labels", synth_graph = "blobs.graph.csv";
  synth->add_option("--n", n)->capture_default_str();
  synth->add_option("--d", d)->capture_default_str();
  synth->add_option("--clusters", clusters)->capture_default_str();
  synth->add_option("--separation", separation)->capture_default_str();
  synth->add_option("--graph-noise", graph_noise,
                    "Fraction of points moved into a wrong blob in the graph coordinates (see --graph-out)")
      ->capture_default_str();
  synth->add_option("--seed", f.config.seed)->capture_default_str();
  synth->add_option("--format", f.config.format, "csv | bin")->capture_default_str();
  synth->add_option("--out", synth_out)->capture_default_str();
  synth->add_option("--labels-out", synth_labels)->capture_default_str();
  synth->add_option("--graph-out", synth_graph, "Graph coordinates, written when --graph-noise > 0")
      ->capture_default_str();

  auto* pretrain = app.add_subcommand("pretrain", "Layerwise pretraining + fine-tuning");
  add_data_flags(pretrain, f);
  add_pretrain_flags(pretrain, f);

  auto* cluster = app.add_subcommand("cluster", "Clustering stage from a pretrained net");
  std::string net_path;
  add_data_flags(cluster, f);
  add_cluster_flags(cluster, f);
  cluster->add_option("--net", net_path, "Pretrained checkpoint (CPACNET1)")->required();

  auto* run = app.add_subcommand("run", "pretrain -> cluster -> extract -> evaluate -> export");
  add_data_flags(run, f);
  add_pretrain_flags(run, f);
  add_cluster_flags(run, f);

  auto* label = app.add_subcommand("label", "Serve a finished run to the labeling UI");
  std::string run_dir, host = "127.0.0.1", journal;
  int port = 8765, round_epochs = 20;
  bool freeze_queue = false;
  label->add_option("--run-dir", run_dir, "Directory written by run/cluster")->required();
  label->add_option("--data", f.config.data_path, "Dataset (defaults to the run's)");
  label->add_option("--labels", f.config.labels_path, "Labels (defaults to the run's)");
  label->add_option("--host", host)->capture_default_str();
  label->add_option("--port", port)->capture_default_str();
  label->add_option("--journal", journal, "Constraint journal (default <run-dir>/constraints.csv)");
  label->add_option("--round-epochs", round_epochs)->capture_default_str();
  label->add_flag("--freeze-queue", freeze_queue, "Keep the session-start pair ranking across rounds");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "NMI/ACC of an assignment against labels");
  std::string truth_path, pred_path, csv_out;
  evaluate_cmd->add_option("--labels", truth_path, "Ground-truth labels")->required();
  evaluate_cmd->add_option("--assignment", pred_path, "assignment.csv from a run")->required();
  evaluate_cmd->add_option("--csv", csv_out, "Also write metric,value CSV here");

  auto* export_pca = app.add_subcommand("export-pca", "PCA coordinates of a run's clustering representation");
  std::string pca_out;
  int pca_dims = 2;
  export_pca->add_option("--run-dir", run_dir, "Directory written by run/cluster")->required();
  export_pca->add_option("--data", f.config.data_path, "Dataset (defaults to the run's)");
  export_pca->add_option("--dims", pca_dims)->capture_default_str();
  export_pca->add_option("--out", pca_out, "Output CSV (default <run-dir>/pca.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      stage = "synth";
      const DataMatrix data = graph_noise > 0.0
                                  ? synth_corrupted_blobs(n, d, clusters, separation, f.config.seed, graph_noise)
                                  : synth_blobs(n, d, clusters, separation, f.config.seed);
      const DataFormat fmt = f.config.format == "bin" ? DataFormat::kBinary : DataFormat::kCsv;
      save_dataset(synth_out, data, fmt);
      if (data.graph_points) {
        DataMatrix graph;
        graph.values = *data.graph_points;
        save_dataset(synth_graph, graph, fmt);
        std::cout << "wrote graph coordinates to " << synth_graph << "\n";
      }
      std::ofstream lo(synth_labels);
      if (!lo) throw Error("cannot open " + synth_labels);
      write_labels(lo, *data.labels);
      std::cout << "wrote " << synth_out << " (" << n << "x" << d << ") and " << synth_labels << "\n";
    } else if (*pretrain) {
      RunConfig c = finish(f);
      stage = "load";
      DataMatrix data = load_run_data(c);
      stage = "pretrain";
      const auto net = pretrain_stage(data, c);
      fs::create_directories(c.out_dir);
      const auto ckpt = (fs::path(c.out_dir) / "pretrained.ckpt").string();
      save_checkpoint(ckpt, net);
      Metadata meta = config_metadata(c);
      meta["reconstruction_mse"] = std::to_string(reconstruction_mse(net, data.values));
      write_metadata((fs::path(c.out_dir) / "pretrain.meta").string(), meta);
      std::cout << "pretrained checkpoint: " << ckpt << "\n";
    } else if (*cluster) {
      RunConfig c = finish(f);
      stage = "load";
      DataMatrix data = load_run_data(c);
      MlpAutoencoder net = load_checkpoint(net_path, c.pretrain.dropout_rate);
      stage = "cluster";
      print_summary(run_clustering(c, std::move(data), std::move(net)), c.out_dir);
    } else if (*run) {
      RunConfig c = finish(f);
      stage = "run";
      print_summary(run_pipeline(c), c.out_dir);
    } else if (*label) {
      stage = "load";
      RunConfig c = config_from_metadata(read_metadata((fs::path(run_dir) / "run.meta").string()));
      if (!f.config.data_path.empty()) c.data_path = f.config.data_path;
      if (!f.config.labels_path.empty()) c.labels_path = f.config.labels_path;
      DataMatrix data = load_run_data(c);
      MlpAutoencoder net = load_checkpoint((fs::path(run_dir) / "net.ckpt").string());
      AdmmState state = load_run_state((fs::path(run_dir) / "run.ckpt").string());
      ClusteringRun session_run = restore_clustering(std::move(data), std::move(net), std::move(state), c);
      SessionOptions opts;
      opts.journal_path = journal.empty() ? (fs::path(run_dir) / "constraints.csv").string() : journal;
      opts.checkpoint_dir = run_dir;
      opts.refresh_queue_each_round = !freeze_queue;
      opts.default_round_epochs = round_epochs;
      stage = "label";
      LabelSession session(std::move(session_run), opts);
      LabelServer server(session);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "label service on http://" << host << ":" << port << " (journal " << opts.journal_path << ")"
                << std::endl;
      server.listen(host, port);
      session.wait_idle();
      g_server = nullptr;
    } else if (*evaluate_cmd) {
      stage = "evaluate";
      std::ifstream tin(truth_path);
      if (!tin) throw Error("cannot open " + truth_path);
      const auto truth = read_labels(tin);
      std::ifstream pin(pred_path);
      if (!pin) throw Error("cannot open " + pred_path);
      const auto pred = read_assignment_csv(pin);
      const double v_nmi = nmi(truth, pred);
      const double v_acc = acc(truth, pred);
      std::cout << std::setprecision(6) << "NMI: " << v_nmi << "\nACC: " << v_acc << "\n";
      if (!csv_out.empty()) {
        std::ofstream out(csv_out);
        if (!out) throw Error("cannot open " + csv_out);
        out << std::setprecision(10) << "metric,value\nnmi," << v_nmi << "\nacc," << v_acc << "\n";
      }
    } else if (*export_pca) {
      stage = "load";
      RunConfig c = config_from_metadata(read_metadata((fs::path(run_dir) / "run.meta").string()));
      if (!f.config.data_path.empty()) c.data_path = f.config.data_path;
      DataMatrix data = load_run_data(c);
      MlpAutoencoder net = load_checkpoint((fs::path(run_dir) / "net.ckpt").string());
      AdmmState state = load_run_state((fs::path(run_dir) / "run.ckpt").string());
      stage = "export";
      const Matrix rep = clustering_representation(net, data.values, state);
      std::vector<Index> labels(static_cast<std::size_t>(rep.rows()), 0);
      if (std::ifstream ain(fs::path(run_dir) / "assignment.csv"); ain) labels = read_assignment_csv(ain);
      const auto pca = pca_project(rep, std::min<int>(pca_dims, static_cast<int>(rep.cols())));
      const std::string path = pca_out.empty() ? (fs::path(run_dir) / "pca.csv").string() : pca_out;
      std::ofstream out(path);
      if (!out) throw Error("cannot open " + path);
      write_pca_csv(out, pca.coords, labels);
      std::cout << "wrote " << path << "\n";
    }
  } catch (const StageError& e) {
    std::cerr << "cpac: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "cpac: " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
