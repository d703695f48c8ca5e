#include <filesystem>
#include <fstream>

#include "cpac/pipeline.hpp"
#include "doctest.h"

using namespace cpac;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpac_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small, fast configuration over a 90-point blob file written into `dir`.
RunConfig small_config(const fs::path& dir, std::uint64_t seed = 5) {
  const auto data = synth_blobs(90, 6, 3, 8.0, seed);
  save_dataset((dir / "x.csv").string(), data, DataFormat::kCsv);
  std::ofstream labels(dir / "x.labels");
  write_labels(labels, *data.labels);
  RunConfig c;
  c.data_path = (dir / "x.csv").string();
  c.labels_path = (dir / "x.labels").string();
  c.out_dir = (dir / "out").string();
  c.seed = seed;
  c.k = 6;
  c.pretrain.hidden_sizes = {24, 3};
  c.pretrain.layerwise_epochs = 5;
  c.pretrain.finetune_epochs = 5;
  c.pretrain.batch_size = 32;
  c.pretrain.learning_rate = 1e-3;
  c.admm.epochs = 12;
  c.sync_seeds();
  return c;
}

}  // namespace

TEST_CASE("pipeline runs end to end and writes every artifact") {
  const auto dir = scratch_dir("artifacts");
  const RunConfig c = small_config(dir);
  const auto result = run_pipeline(c);
  const fs::path out(c.out_dir);
  for (const char* f : {"pretrained.ckpt", "net.ckpt", "run.ckpt", "history.csv", "assignment.csv", "graph.csv",
                        "pca.csv", "evaluation.csv", "run.meta"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  REQUIRE(result.evaluation);
  CHECK(result.run.history.size() == 12);
  CHECK(result.assignment.labels.size() == 90);

  std::ifstream pca(out / "pca.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(pca, line)) ++rows;
  CHECK(rows == 90);

  std::ifstream assign(out / "assignment.csv");
  CHECK(read_assignment_csv(assign) == result.assignment.labels);

  const Metadata meta = read_metadata((out / "run.meta").string());
  CHECK(meta.at("n") == "90");
  CHECK(meta.at("clusters") == std::to_string(result.assignment.count));
  CHECK(meta.at("mode") == "iii");
  CHECK(load_checkpoint((out / "net.ckpt").string()) == result.run.net);
}

TEST_CASE("same seed gives a byte-identical assignment") {
  const auto dir = scratch_dir("determinism");
  RunConfig a = small_config(dir);
  RunConfig b = a;
  a.out_dir = (dir / "a").string();
  b.out_dir = (dir / "b").string();
  run_pipeline(a);
  run_pipeline(b);
  CHECK(slurp(fs::path(a.out_dir) / "assignment.csv") == slurp(fs::path(b.out_dir) / "assignment.csv"));
  CHECK(slurp(fs::path(a.out_dir) / "history.csv") == slurp(fs::path(b.out_dir) / "history.csv"));
  CHECK(slurp(fs::path(a.out_dir) / "net.ckpt") == slurp(fs::path(b.out_dir) / "net.ckpt"));
}

TEST_CASE("pretrain then cluster equals a full run") {
  const auto dir = scratch_dir("split");
  RunConfig c = small_config(dir);
  const auto full = run_pipeline(c);
  const DataMatrix data = load_run_data(c);
  const MlpAutoencoder net = pretrain_stage(data, c);
  c.out_dir = (dir / "split").string();
  const auto split = run_clustering(c, data, net);
  CHECK(split.assignment.labels == full.assignment.labels);
  CHECK(split.run.net == full.run.net);
}

TEST_CASE("resuming from checkpoints continues the same trajectory") {
  const auto dir = scratch_dir("resume");
  RunConfig c = small_config(dir);
  const DataMatrix data = load_run_data(c);
  const MlpAutoencoder net = pretrain_stage(data, c);
  ClusteringRun straight = prepare_clustering(data, net, c);
  train_epochs(straight, 8);

  ClusteringRun first = prepare_clustering(data, net, c);
  train_epochs(first, 4);
  save_checkpoint((dir / "n.ckpt").string(), first.net);
  save_run_state((dir / "r.ckpt").string(), first.state);
  ClusteringRun resumed =
      restore_clustering(data, load_checkpoint((dir / "n.ckpt").string()), load_run_state((dir / "r.ckpt").string()), c);
  train_epochs(resumed, 4);
  CHECK(resumed.net == straight.net);
  CHECK(resumed.state.u == straight.state.u);
  CHECK(extract(resumed).labels == extract(straight).labels);
}

TEST_CASE("stage errors name the failing stage") {
  const auto dir = scratch_dir("errors");
  RunConfig c = small_config(dir);
  SUBCASE("missing data") {
    c.data_path = (dir / "nope.csv").string();
    try {
      run_pipeline(c);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage_name == "load");
    }
  }
  SUBCASE("k too large for the data") {
    c.k = 500;
    try {
      run_pipeline(c);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage_name == "graph");
    }
  }
  SUBCASE("bad constraint journal") {
    std::ofstream(dir / "bad.csv") << "p,q,kind,timestamp\n0,1,perhaps,0\n";
    c.constraints_path = (dir / "bad.csv").string();
    try {
      run_pipeline(c);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage_name == "constraints");
    }
  }
  SUBCASE("image shape that does not match the features") {
    c.image_shape = ImageShape{2, 2};
    CHECK_THROWS_AS(load_run_data(c), ParameterError);
  }
}

TEST_CASE("metadata round trip") {
  RunConfig c;
  c.data_path = "d.csv";
  c.labels_path = "d.labels";
  c.graph_data_path = "g.csv";
  c.image_shape = ImageShape{4, 5};
  c.seed = 77;
  c.k = 7;
  c.include_isolated_in_mean = false;
  c.pretrain.hidden_sizes = {30, 20, 4};
  c.pretrain.dropout_rate = 0.1;
  c.pretrain.learning_rate = 3e-4;
  c.pretrain.finetune_dropout = false;
  c.admm.mode = AblationMode::kSingleRepresentation;
  c.admm.dual_step = 0.5;
  c.admm.u_learning_rate = 0.9;
  c.admm.update_interval_override = 7;
  c.sync_seeds();
  const Metadata m = config_metadata(c);
  CHECK(std::stod(m.at("lr_pretrain")) == 3e-4);
  const RunConfig back = config_from_metadata(m);
  CHECK(config_metadata(back) == m);
  CHECK(back.admm.seed == 77);
  CHECK(back.image_shape->width == 5);

  const auto dir = scratch_dir("meta");
  write_metadata((dir / "m.meta").string(), m);
  CHECK(read_metadata((dir / "m.meta").string()) == m);
  std::ofstream(dir / "bad.meta") << "# header\nno separator here\n";
  CHECK_THROWS_AS(read_metadata((dir / "bad.meta").string()), ParseError);
}

TEST_CASE("separate graph coordinates") {
  const auto dir = scratch_dir("graph-data");
  RunConfig c = small_config(dir);
  const auto corrupted = synth_corrupted_blobs(90, 6, 3, 8.0, 5, 0.1);
  DataMatrix g;
  g.values = *corrupted.graph_points;
  save_dataset((dir / "g.csv").string(), g, DataFormat::kCsv);
  c.graph_data_path = (dir / "g.csv").string();
  const DataMatrix data = load_run_data(c);
  REQUIRE(data.graph_points);
  CHECK(*data.graph_points == *corrupted.graph_points);
  const MlpAutoencoder net = pretrain_stage(data, c);
  const ClusteringRun run = prepare_clustering(data, net, c);
  CHECK(run.base_graph.edges == build_mknn(*corrupted.graph_points, c.k).edges);
  c.standardize = true;
  CHECK_THROWS_AS(load_run_data(c), ParameterError);
}

TEST_CASE("grayscale pixels scale over the whole dataset") {
  DataMatrix d;
  d.values.resize(2, 4);
  d.values << -1, 0, 1, 3, 3, 3, -1, 1;
  d.image_shape = ImageShape{2, 2};
  CHECK(grayscale_pixels(d, 0) == std::vector<std::uint8_t>{0, 64, 128, 255});
  CHECK(grayscale_pixels(d, 1) == std::vector<std::uint8_t>{255, 255, 0, 128});
}
