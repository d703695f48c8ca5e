// Independent, deliberately naive re-implementations used as test oracles.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <utility>
#include <vector>

#include "cpac/common.hpp"
#include "cpac/nn.hpp"

namespace oracle {

using cpac::Index;
using cpac::Matrix;

inline Matrix random_matrix(Index rows, Index cols, cpac::Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = scale * cpac::standard_normal(rng);
  return m;
}

/// O(n^2 log n) mutual KNN: sort every row's distances, ties by index.
inline std::set<std::pair<Index, Index>> brute_mknn(const Matrix& x, int k) {
  const Index n = x.rows();
  std::vector<std::set<Index>> knn(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Index>> d;
    for (Index j = 0; j < n; ++j)
      if (j != i) {
        double s = 0;
        for (Index c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
        d.push_back({s, j});
      }
    std::sort(d.begin(), d.end());
    for (int t = 0; t < k; ++t) knn[static_cast<std::size_t>(i)].insert(d[static_cast<std::size_t>(t)].second);
  }
  std::set<std::pair<Index, Index>> out;
  for (Index i = 0; i < n; ++i)
    for (Index j : knn[static_cast<std::size_t>(i)])
      if (i < j && knn[static_cast<std::size_t>(j)].count(i)) out.insert({i, j});
  return out;
}

/// Breadth-first component labels (arbitrary ids).
inline std::vector<Index> bfs_labels(Index n, const std::vector<std::pair<Index, Index>>& edges) {
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<Index> label(static_cast<std::size_t>(n), -1);
  Index next = 0;
  for (Index s = 0; s < n; ++s) {
    if (label[static_cast<std::size_t>(s)] >= 0) continue;
    std::queue<Index> q;
    q.push(s);
    label[static_cast<std::size_t>(s)] = next;
    while (!q.empty()) {
      const Index v = q.front();
      q.pop();
      for (Index w : adj[static_cast<std::size_t>(v)])
        if (label[static_cast<std::size_t>(w)] < 0) {
          label[static_cast<std::size_t>(w)] = next;
          q.push(w);
        }
    }
    ++next;
  }
  return label;
}

inline bool same_partition(const std::vector<Index>& a, const std::vector<Index>& b) {
  if (a.size() != b.size()) return false;
  std::map<Index, Index> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, fresh1] = ab.emplace(a[i], b[i]);
    auto [it2, fresh2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

/// Best injective cluster->class matching by trying every permutation.
inline double permutation_acc(const std::vector<Index>& truth, const std::vector<Index>& pred) {
  std::map<Index, Index> tc, pc;
  for (Index t : truth) tc.emplace(t, static_cast<Index>(tc.size()));
  for (Index p : pred) pc.emplace(p, static_cast<Index>(pc.size()));
  const std::size_t k = std::max(tc.size(), pc.size());
  std::vector<std::vector<int>> count(k, std::vector<int>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++count[static_cast<std::size_t>(pc[pred[i]])][static_cast<std::size_t>(tc[truth[i]])];
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int s = 0;
    for (std::size_t r = 0; r < k; ++r) s += count[r][perm[r]];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(truth.size());
}

/// NMI straight from the definition, log base 2 (the ratio is base-free).
/// Works from integer counts so single-cluster cases are exactly zero.
inline double nmi_by_definition(const std::vector<Index>& a, const std::vector<Index>& b) {
  const double n = static_cast<double>(a.size());
  std::map<Index, int> ca, cb;
  std::map<std::pair<Index, Index>, int> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++cab[{a[i], b[i]}];
  }
  if (ca.size() == 1 && cb.size() == 1) return 1.0;
  double ha = 0, hb = 0, mi = 0;
  for (auto& [k, c] : ca) ha -= c / n * std::log2(c / n);
  for (auto& [k, c] : cb) hb -= c / n * std::log2(c / n);
  for (auto& [k, c] : cab) mi += c / n * std::log2(c * n / (static_cast<double>(ca[k.first]) * cb[k.second]));
  return mi / std::max(ha, hb);
}

/// Forward pass written as explicit scalar loops.
inline Matrix scalar_forward(const cpac::Mlp& mlp, const Matrix& x) {
  Matrix h = x;
  for (const auto& layer : mlp.layers()) {
    Matrix out(h.rows(), layer.fan_out());
    for (Index r = 0; r < h.rows(); ++r)
      for (Index o = 0; o < layer.fan_out(); ++o) {
        double s = layer.bias(0, o);
        for (Index i = 0; i < layer.fan_in(); ++i) s += h(r, i) * layer.weights(i, o);
        out(r, o) = layer.activation == cpac::Activation::kRelu ? std::max(0.0, s) : s;
      }
    h = out;
  }
  return h;
}

/// Dense D - R for a weighted edge list.
inline Matrix dense_laplacian(Index n, const std::vector<std::tuple<Index, Index, double>>& edges) {
  Matrix l = Matrix::Zero(n, n);
  for (auto [p, q, w] : edges) {
    l(p, q) -= w;
    l(q, p) -= w;
    l(p, p) += w;
    l(q, q) += w;
  }
  return l;
}

inline double largest_singular_value(const Matrix& m) {
  const Eigen::MatrixXd dense = m;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
  return svd.singularValues()(0);
}

/// Central difference of f with respect to every entry of *param.
inline Matrix numeric_gradient(Matrix& param, const std::function<double()>& f, double h = 1e-5) {
  Matrix g(param.rows(), param.cols());
  for (Index r = 0; r < param.rows(); ++r)
    for (Index c = 0; c < param.cols(); ++c) {
      const double keep = param(r, c);
      param(r, c) = keep + h;
      const double up = f();
      param(r, c) = keep - h;
      const double down = f();
      param(r, c) = keep;
      g(r, c) = (up - down) / (2 * h);
    }
  return g;
}

/// max |a - b| / max(1, |b|) over entries: relative error with an absolute
/// floor for entries near zero.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double worst = 0;
  for (Index r = 0; r < analytic.rows(); ++r)
    for (Index c = 0; c < analytic.cols(); ++c)
      worst = std::max(worst, std::abs(analytic(r, c) - numeric(r, c)) / std::max(1.0, std::abs(numeric(r, c))));
  return worst;
}

/// Random net whose pre-activations stay away from the ReLU kink, so finite
/// differences are smooth: biases are shifted to keep |pre| >= margin on x.
inline cpac::MlpAutoencoder smooth_autoencoder(const std::vector<int>& sizes, const Matrix& x, cpac::Rng& rng,
                                               double margin = 1e-3) {
  cpac::MlpAutoencoder net(sizes, 0.0, rng);
  for (auto& layer : net.encoder().layers())
    for (Index o = 0; o < layer.bias.cols(); ++o) layer.bias(0, o) = 0.1 * cpac::standard_normal(rng);
  for (auto& layer : net.decoder().layers())
    for (Index o = 0; o < layer.bias.cols(); ++o) layer.bias(0, o) = 0.1 * cpac::standard_normal(rng);
  // Nudge any pre-activation that lands within margin of zero.
  for (int pass = 0; pass < 2; ++pass) {
    Matrix h = x;
    for (auto* mlp : {&net.encoder(), &net.decoder()}) {
      for (auto& layer : mlp->layers()) {
        Matrix pre = (h * layer.weights).rowwise() + layer.bias.row(0);
        for (Index o = 0; o < pre.cols(); ++o)
          for (Index r = 0; r < pre.rows(); ++r)
            if (std::abs(pre(r, o)) < margin) layer.bias(0, o) += 4 * margin;
        pre = (h * layer.weights).rowwise() + layer.bias.row(0);
        h = layer.activation == cpac::Activation::kRelu ? Matrix(pre.cwiseMax(0.0)) : pre;
      }
    }
  }
  return net;
}

}  // namespace oracle
