#include "cpac/extract.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "cpac/penalty.hpp"

namespace cpac {

double final_threshold(const Matrix& u, const MknnGraph& graph) {
  if (graph.edges.empty()) throw DegenerateGraphError("final_threshold: graph has no edges");
  if (u.rows() != graph.n) throw DimensionError("final_threshold: U row count does not match graph size");
  const auto len = edge_lengths(u, graph);
  const Index count = nearest_percent_count(static_cast<Index>(len.size()));
  return std::accumulate(len.begin(), len.begin() + count, 0.0) / static_cast<double>(count);
}

ClusterAssignment extract_clusters(const Matrix& u, const MknnGraph& graph, double tau) {
  if (!(tau > 0.0)) throw ParameterError("extract_clusters: threshold must be > 0");
  if (u.rows() != graph.n) throw DimensionError("extract_clusters: U row count does not match graph size");
  std::vector<std::pair<Index, Index>> psi;
  for (const auto& e : graph.edges)
    if ((u.row(e.p) - u.row(e.q)).norm() <= tau) psi.emplace_back(e.p, e.q);
  auto comp = connected_components(graph.n, psi);
  return {std::move(comp.labels), comp.count, tau};
}

PcaResult pca_project(const Matrix& m, int dims) {
  if (dims < 1) throw ParameterError("pca_project: dims must be >= 1");
  if (dims > m.cols()) throw ParameterError("pca_project: dims exceeds the column count");
  if (m.rows() < dims) throw ParameterError("pca_project: need at least dims rows");

  const Matrix centered = m.rowwise() - m.colwise().mean();
  Matrix cov = centered.transpose() * centered / static_cast<double>(m.rows());
  PcaResult r;
  r.directions.resize(dims, m.cols());
  constexpr int kMaxIter = 5000;
  constexpr double kTol = 1e-13;
  for (int k = 0; k < dims; ++k) {
    Rng rng = make_stream(static_cast<std::uint64_t>(k), "pca");
    Vector v(cov.rows());
    for (Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.1 * (2.0 * uniform01(rng) - 1.0);
    v.normalize();
    for (int it = 0; it < kMaxIter; ++it) {
      Vector w = cov * v;
      // Re-orthogonalize against earlier directions; deflation alone drifts.
      for (int j = 0; j < k; ++j) w -= w.dot(r.directions.row(j).transpose()) * r.directions.row(j).transpose();
      const double norm = w.norm();
      if (norm == 0.0) break;
      w /= norm;
      const double change = (w - v).norm();
      v = w;
      if (change <= kTol) break;
    }
    const double value = std::max(0.0, v.dot(cov * v));
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    r.directions.row(k) = v.transpose();
    r.variances.push_back(value);
    cov -= value * v * v.transpose();
  }
  r.coords = centered * r.directions.transpose();
  return r;
}

void write_assignment_csv(std::ostream& out, std::span<const Index> labels) {
  out << "index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << labels[i] << '\n';
}

std::vector<Index> read_assignment_csv(std::istream& in) {
  std::vector<Index> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("index", 0) == 0)) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      std::size_t used = 0;
      const Index idx = std::stoll(line.substr(0, comma), &used);
      const std::string rest = line.substr(comma + 1);
      const Index label = std::stoll(rest, &used);
      if (used != rest.size() || idx != static_cast<Index>(labels.size())) throw std::invalid_argument("order");
      labels.push_back(label);
    } catch (const std::exception&) {
      throw ParseError("assignment line " + std::to_string(line_no) + ": expected '" +
                       std::to_string(labels.size()) + ",<label>'");
    }
  }
  return labels;
}

void write_pca_csv(std::ostream& out, const Matrix& coords, std::span<const Index> labels) {
  static const char* kAxes[] = {"x", "y", "z"};
  out << "index";
  for (Index c = 0; c < coords.cols(); ++c) out << ',' << (c < 3 ? kAxes[c] : "w");
  out << ",label\n" << std::setprecision(10);
  for (Index i = 0; i < coords.rows(); ++i) {
    out << i;
    for (Index c = 0; c < coords.cols(); ++c) out << ',' << coords(i, c);
    out << ',' << (static_cast<std::size_t>(i) < labels.size() ? labels[static_cast<std::size_t>(i)] : -1) << '\n';
  }
}

}  // namespace cpac
