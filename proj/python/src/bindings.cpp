#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cpac/extract.hpp"
#include "cpac/metrics.hpp"
#include "cpac/penalty.hpp"
#include "cpac/pipeline.hpp"

namespace py = pybind11;
using namespace cpac;

namespace {

using Pairs = Eigen::Matrix<Index, Eigen::Dynamic, 2, Eigen::RowMajor>;

Pairs edge_array(const MknnGraph& g) {
  Pairs out(static_cast<Index>(g.edges.size()), 2);
  for (std::size_t i = 0; i < g.edges.size(); ++i) out.row(static_cast<Index>(i)) << g.edges[i].p, g.edges[i].q;
  return out;
}

std::vector<std::pair<Index, Index>> pair_list(const Pairs& pairs) {
  std::vector<std::pair<Index, Index>> out;
  for (Index i = 0; i < pairs.rows(); ++i) out.push_back({pairs(i, 0), pairs(i, 1)});
  return out;
}

py::tuple blobs_tuple(const DataMatrix& d) {
  if (d.graph_points) return py::make_tuple(d.values, *d.labels, *d.graph_points);
  return py::make_tuple(d.values, *d.labels);
}

py::dict cluster(const Matrix& x, std::optional<std::vector<Index>> labels, std::optional<Matrix> graph_points,
                 int k, std::uint64_t seed, int epochs, std::vector<int> hidden, int pretrain_epochs,
                 const std::string& mode) {
  DataMatrix data;
  data.values = x;
  data.labels = std::move(labels);
  data.graph_points = std::move(graph_points);
  data.validate();

  RunConfig c;
  c.seed = seed;
  c.k = k;
  c.admm.epochs = epochs;
  c.admm.mode = parse_mode(mode);
  c.pretrain.hidden_sizes = std::move(hidden);
  c.pretrain.layerwise_epochs = pretrain_epochs;
  c.pretrain.finetune_epochs = pretrain_epochs;
  c.sync_seeds();

  ClusteringRun run;
  ClusterAssignment a;
  std::optional<Evaluation> ev;
  {
    py::gil_scoped_release release;
    const MlpAutoencoder net = pretrain_stage(data, c);
    run = prepare_clustering(data, net, c);
    train_epochs(run, epochs);
    a = extract(run);
    ev = evaluate(run, a);
  }
  py::dict out;
  out["labels"] = a.labels;
  out["clusters"] = a.count;
  out["threshold"] = a.threshold;
  out["embedding"] = Matrix(clustering_representation(run.net, run.data.values, run.state));
  out["edges"] = edge_array(run.graph);
  if (ev) {
    out["nmi"] = ev->nmi;
    out["acc"] = ev->acc;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep clustering with pairwise constraints.";

  py::register_exception<Error>(m, "CpacError", PyExc_ValueError);

  m.def("synth_blobs", [](Index n, Index d, Index clusters, double separation, std::uint64_t seed) {
    return blobs_tuple(synth_blobs(n, d, clusters, separation, seed));
  }, py::arg("n"), py::arg("d"), py::arg("clusters"), py::arg("separation"), py::arg("seed") = 0,
     "Gaussian blobs; returns (X, labels).");
  m.def("synth_corrupted_blobs", [](Index n, Index d, Index clusters, double separation, std::uint64_t seed, double noise) {
    return blobs_tuple(synth_corrupted_blobs(n, d, clusters, separation, seed, noise));
  }, py::arg("n"), py::arg("d"), py::arg("clusters"), py::arg("separation"), py::arg("seed") = 0, py::arg("noise") = 0.05,
     "Blobs whose graph coordinates move a fraction of points into a wrong blob; returns (X, labels, graph_points).");

  m.def("mknn_edges", [](const Matrix& x, int k) {
    const auto g = build_mknn(x, k);
    std::vector<double> w;
    for (const auto& e : g.edges) w.push_back(e.weight);
    return py::make_tuple(edge_array(g), w);
  }, py::arg("x"), py::arg("k"), "Mutual KNN graph; returns (pairs, weights) with p < q.");

  m.def("compute_lambda", [](const Matrix& z, const Matrix& x, int k) { return compute_lambda(z, build_mknn(x, k)); },
        py::arg("z"), py::arg("x"), py::arg("k"));
  m.def("geman_mcclure", &geman_mcclure, py::arg("s"), py::arg("mu"));
  m.def("geman_mcclure_grad", &geman_mcclure_grad, py::arg("s"), py::arg("mu"));

  m.def("connected_components", [](Index n, const Pairs& pairs) {
    const auto edges = pair_list(pairs);
    const auto c = connected_components(n, edges);
    return py::make_tuple(c.labels, c.count);
  }, py::arg("n"), py::arg("pairs"));

  m.def("final_threshold", [](const Matrix& u, const Pairs& pairs) {
    const auto edges = pair_list(pairs);
    return final_threshold(u, graph_from_pairs(u.rows(), edges));
  }, py::arg("u"), py::arg("pairs"));
  m.def("extract_clusters", [](const Matrix& u, const Pairs& pairs, double tau) {
    const auto edges = pair_list(pairs);
    const auto a = extract_clusters(u, graph_from_pairs(u.rows(), edges), tau);
    return py::make_tuple(a.labels, a.count);
  }, py::arg("u"), py::arg("pairs"), py::arg("tau"));

  m.def("pca_project", [](const Matrix& x, int dims) {
    auto r = pca_project(x, dims);
    return py::make_tuple(r.coords, r.variances);
  }, py::arg("x"), py::arg("dims") = 2);

  m.def("nmi", [](const std::vector<Index>& t, const std::vector<Index>& p) { return nmi(t, p); },
        py::arg("truth"), py::arg("predicted"));
  m.def("acc", [](const std::vector<Index>& t, const std::vector<Index>& p) { return acc(t, p); },
        py::arg("truth"), py::arg("predicted"));

  m.def("cluster", &cluster, py::arg("x"), py::arg("labels") = py::none(), py::arg("graph_points") = py::none(),
        py::arg("k") = 10, py::arg("seed") = 0, py::arg("epochs") = 100,
        py::arg("hidden") = std::vector<int>{500, 500, 2000, 10}, py::arg("pretrain_epochs") = 50,
        py::arg("mode") = "iii",
        "Pretrain, run the clustering stage and extract clusters. Returns a dict with labels, clusters, "
        "threshold, embedding, edges, and nmi/acc when labels are given.");
}
