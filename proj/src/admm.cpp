#include "cpac/admm.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cpac/binary_io.hpp"

namespace cpac {

namespace {

constexpr std::string_view kRunMagic = "CPACRUN1";

double dim_of(const Matrix& m) { return static_cast<double>(m.cols()); }

Matrix gather_rows(const Matrix& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericalError("non-finite " + what);
}

}  // namespace

const char* mode_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kSingleRepresentation:
      return "i";
    case AblationMode::kClusteringOnly:
      return "ii";
    case AblationMode::kFullAdmm:
      return "iii";
  }
  return "?";
}

AblationMode parse_mode(const std::string& text) {
  if (text == "i" || text == "1") return AblationMode::kSingleRepresentation;
  if (text == "ii" || text == "2") return AblationMode::kClusteringOnly;
  if (text == "iii" || text == "3") return AblationMode::kFullAdmm;
  throw ParameterError("unknown ablation mode '" + text + "' (expected i, ii or iii)");
}

double LossBreakdown::total(AblationMode mode) const {
  switch (mode) {
    case AblationMode::kSingleRepresentation:
      return reconstruction + pairwise;
    case AblationMode::kClusteringOnly:
      return pairwise;
    case AblationMode::kFullAdmm:
      return reconstruction + pairwise + representation + dual_term;
  }
  return 0.0;
}

NetTerms NetTerms::for_mode(AblationMode mode) {
  switch (mode) {
    case AblationMode::kSingleRepresentation:
      return {true, false, true};
    case AblationMode::kClusteringOnly:
      return {false, false, true};
    case AblationMode::kFullAdmm:
      return {true, true, false};
  }
  return {};
}

// ---------------------------------------------------------------------------

AdmmState init_admm_state(const MlpAutoencoder& net, const Matrix& x, const MknnGraph& graph,
                          const AdmmConfig& config) {
  if (x.rows() != graph.n) throw DimensionError("init_admm_state: data rows do not match graph size");
  const Matrix z = net.encode(x);
  AdmmState s;
  s.mode = config.mode;
  s.seed = config.seed;
  s.dual_step = config.dual_step;
  s.lambda = compute_lambda(z, graph, {1000, 1e-9, config.seed});
  const Deltas deltas = compute_deltas(z, graph);
  const Mus mus = init_mus(deltas, z, graph);
  s.sched.delta1 = deltas.delta1;
  s.sched.delta2 = deltas.delta2;
  s.sched.mu1 = mus.mu1;
  s.sched.mu2 = mus.mu2;
  s.sched.update_interval = config.update_interval_override > 0
                                ? config.update_interval_override
                                : select_update_interval(static_cast<Index>(graph.edges.size()), graph.n);
  s.sched.epoch = 0;
  s.u = z;
  s.dual = Matrix::Zero(z.rows(), z.cols());
  OptimizerConfig uc = OptimizerConfig::rmsprop(config.u_learning_rate);
  uc.decay = config.rmsprop_decay;
  uc.epsilon = config.rmsprop_epsilon;
  OptimizerConfig nc = OptimizerConfig::rmsprop(config.net_learning_rate);
  nc.decay = config.rmsprop_decay;
  nc.epsilon = config.rmsprop_epsilon;
  s.u_optimizer = Optimizer(uc);
  s.net_optimizer = Optimizer(nc);
  return s;
}

LossBreakdown evaluate_losses(const MlpAutoencoder& net, const Matrix& x, const AdmmState& state,
                              const MknnGraph& graph) {
  Matrix z;
  const Matrix recon = net.reconstruct(x, false, nullptr, nullptr, &z);
  if (state.u.rows() != z.rows() || state.u.cols() != z.cols())
    throw DimensionError("evaluate_losses: U shape does not match Z");
  LossBreakdown b;
  const double dz = dim_of(z);
  b.reconstruction = (recon - x).squaredNorm() / dim_of(x);
  require_finite(b.reconstruction, "reconstruction loss");

  b.per_edge_loss.reserve(graph.edges.size());
  double pair_sum = 0.0;
  for (const auto& e : graph.edges) {
    const double s = (state.u.row(e.p) - state.u.row(e.q)).squaredNorm();
    const double l = e.weight * geman_mcclure(s, state.sched.mu2);
    b.per_edge_loss.push_back(l);
    pair_sum += l;
  }
  b.pairwise = state.lambda / dz * pair_sum;
  require_finite(b.pairwise, "pairwise loss");

  double rep = 0.0;
  for (Index i = 0; i < z.rows(); ++i) rep += geman_mcclure((z.row(i) - state.u.row(i)).squaredNorm(), state.sched.mu1);
  b.representation = rep / dz;
  require_finite(b.representation, "representation loss");

  b.dual_term = state.dual.cwiseProduct(z - state.u).sum();
  require_finite(b.dual_term, "dual term");
  return b;
}

std::vector<std::vector<Index>> pair_batches(std::size_t edge_count, int batch_size, Rng& rng) {
  std::vector<Index> order(edge_count);
  std::iota(order.begin(), order.end(), Index{0});
  shuffle(order, rng);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  std::vector<std::vector<Index>> batches;
  for (std::size_t start = 0; start < edge_count; start += bs)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(edge_count, start + bs)));
  return batches;
}

BatchPoints batch_points(const MknnGraph& graph, std::span<const Index> edge_ids) {
  std::vector<Index> visits;
  visits.reserve(edge_ids.size() * 2);
  for (Index id : edge_ids) {
    const auto& e = graph.edges.at(static_cast<std::size_t>(id));
    visits.push_back(e.p);
    visits.push_back(e.q);
  }
  std::sort(visits.begin(), visits.end());
  BatchPoints bp;
  for (std::size_t i = 0; i < visits.size();) {
    std::size_t j = i;
    while (j < visits.size() && visits[j] == visits[i]) ++j;
    bp.points.push_back(visits[i]);
    bp.weights.push_back(static_cast<double>(j - i) * graph.unary_weights[static_cast<std::size_t>(visits[i])]);
    i = j;
  }
  return bp;
}

double u_batch_objective(const Matrix& u, const Matrix& z, const Matrix& dual, const MknnGraph& graph,
                         std::span<const Index> edge_ids, double lambda, const PenaltySchedule& sched) {
  const double dz = dim_of(u);
  double pair = 0.0;
  for (Index id : edge_ids) {
    const auto& e = graph.edges[static_cast<std::size_t>(id)];
    pair += e.weight * geman_mcclure((u.row(e.p) - u.row(e.q)).squaredNorm(), sched.mu2);
  }
  const BatchPoints bp = batch_points(graph, edge_ids);
  double unary = 0.0;
  for (std::size_t k = 0; k < bp.points.size(); ++k) {
    const Index i = bp.points[k];
    const double rep = geman_mcclure((z.row(i) - u.row(i)).squaredNorm(), sched.mu1) / dz;
    unary += bp.weights[k] * (rep + dual.row(i).dot(z.row(i) - u.row(i)));
  }
  return lambda / dz * pair + unary;
}

Matrix u_batch_gradient(const Matrix& u, const Matrix& z, const Matrix& dual, const MknnGraph& graph,
                        std::span<const Index> edge_ids, double lambda, const PenaltySchedule& sched) {
  const double dz = dim_of(u);
  Matrix g = Matrix::Zero(u.rows(), u.cols());
  for (Index id : edge_ids) {
    const auto& e = graph.edges[static_cast<std::size_t>(id)];
    const RowVector diff = u.row(e.p) - u.row(e.q);
    const double coef = 2.0 * lambda / dz * e.weight * geman_mcclure_grad(diff.squaredNorm(), sched.mu2);
    g.row(e.p) += coef * diff;
    g.row(e.q) -= coef * diff;
  }
  const BatchPoints bp = batch_points(graph, edge_ids);
  for (std::size_t k = 0; k < bp.points.size(); ++k) {
    const Index i = bp.points[k];
    const RowVector r = u.row(i) - z.row(i);
    const double coef = 2.0 / dz * geman_mcclure_grad(r.squaredNorm(), sched.mu1);
    g.row(i) += bp.weights[k] * (coef * r - dual.row(i));
  }
  return g;
}

namespace {

struct NetBatchEval {
  double objective = 0.0;
  AutoencoderGradients grads;
};

NetBatchEval eval_net_batch(const MlpAutoencoder& net, const Matrix& x, const Matrix& u, const Matrix& dual,
                            const MknnGraph& graph, std::span<const Index> edge_ids, double lambda,
                            const PenaltySchedule& sched, NetTerms terms, bool want_grad) {
  const BatchPoints bp = batch_points(graph, edge_ids);
  NetBatchEval out;
  if (bp.points.empty()) return out;
  const Matrix xb = gather_rows(x, bp.points);
  AutoencoderCache cache;
  Matrix zb;
  Matrix recon;
  if (terms.reconstruction) {
    recon = net.reconstruct(xb, false, nullptr, want_grad ? &cache : nullptr, &zb);
  } else {
    zb = net.encode(xb, false, nullptr, want_grad ? &cache.encoder : nullptr);
  }
  const double dx = dim_of(x);
  const double dz = dim_of(zb);
  const Index m = zb.rows();
  Matrix grad_recon;
  Matrix grad_codes = Matrix::Zero(m, zb.cols());

  if (terms.reconstruction) {
    grad_recon.resize(m, xb.cols());
    for (Index r = 0; r < m; ++r) {
      const double c = bp.weights[static_cast<std::size_t>(r)];
      const RowVector diff = recon.row(r) - xb.row(r);
      out.objective += c * diff.squaredNorm() / dx;
      grad_recon.row(r) = (2.0 * c / dx) * diff;
    }
  }
  if (terms.representation) {
    for (Index r = 0; r < m; ++r) {
      const Index i = bp.points[static_cast<std::size_t>(r)];
      const double c = bp.weights[static_cast<std::size_t>(r)];
      const RowVector diff = zb.row(r) - u.row(i);
      const double s = diff.squaredNorm();
      out.objective += c * (geman_mcclure(s, sched.mu1) / dz + dual.row(i).dot(diff));
      grad_codes.row(r) += c * ((2.0 / dz) * geman_mcclure_grad(s, sched.mu1) * diff + dual.row(i));
    }
  }
  if (terms.pairwise_on_codes) {
    auto row_of = [&](Index point) {
      const auto it = std::lower_bound(bp.points.begin(), bp.points.end(), point);
      return static_cast<Index>(it - bp.points.begin());
    };
    for (Index id : edge_ids) {
      const auto& e = graph.edges[static_cast<std::size_t>(id)];
      const Index rp = row_of(e.p);
      const Index rq = row_of(e.q);
      const RowVector diff = zb.row(rp) - zb.row(rq);
      const double s = diff.squaredNorm();
      out.objective += lambda / dz * e.weight * geman_mcclure(s, sched.mu2);
      const double coef = 2.0 * lambda / dz * e.weight * geman_mcclure_grad(s, sched.mu2);
      grad_codes.row(rp) += coef * diff;
      grad_codes.row(rq) -= coef * diff;
    }
  }
  if (want_grad) out.grads = net.backprop(cache, grad_recon, &grad_codes);
  return out;
}

}  // namespace

double net_batch_objective(const MlpAutoencoder& net, const Matrix& x, const Matrix& u, const Matrix& dual,
                           const MknnGraph& graph, std::span<const Index> edge_ids, double lambda,
                           const PenaltySchedule& sched, NetTerms terms) {
  return eval_net_batch(net, x, u, dual, graph, edge_ids, lambda, sched, terms, false).objective;
}

AutoencoderGradients net_batch_gradient(const MlpAutoencoder& net, const Matrix& x, const Matrix& u,
                                        const Matrix& dual, const MknnGraph& graph, std::span<const Index> edge_ids,
                                        double lambda, const PenaltySchedule& sched, NetTerms terms,
                                        double* objective) {
  auto r = eval_net_batch(net, x, u, dual, graph, edge_ids, lambda, sched, terms, true);
  if (objective) *objective = r.objective;
  return std::move(r.grads);
}

void u_step(AdmmState& state, const Matrix& z_frozen, const MknnGraph& graph, const AdmmConfig& config) {
  if (z_frozen.rows() != state.u.rows() || z_frozen.cols() != state.u.cols())
    throw DimensionError("u_step: Z shape does not match U");
  for (Index i = 0; i < graph.n; ++i)
    if (graph.degrees[static_cast<std::size_t>(i)] == 0) state.u.row(i) = z_frozen.row(i);

  for (int pass = 0; pass < config.u_passes_per_epoch; ++pass) {
    Rng rng = make_stream(config.seed, "shuffle-u-" + std::to_string(state.epoch) + "-" + std::to_string(pass));
    const auto batches = pair_batches(graph.edges.size(), config.pair_batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Matrix g = u_batch_gradient(state.u, z_frozen, state.dual, graph, batches[b], state.lambda, state.sched);
      if (!g.allFinite())
        throw NumericalError("u_step: non-finite gradient in batch " + std::to_string(b) + " of epoch " +
                             std::to_string(state.epoch));
      Matrix* params[] = {&state.u};
      const Matrix* grads[] = {&g};
      state.u_optimizer.step(params, grads);
    }
  }
}

void net_step(MlpAutoencoder& net, const Matrix& x, AdmmState& state, const MknnGraph& graph,
              const AdmmConfig& config) {
  const NetTerms terms = NetTerms::for_mode(state.mode);
  for (int pass = 0; pass < config.net_passes_per_epoch; ++pass) {
    Rng rng = make_stream(config.seed, "shuffle-net-" + std::to_string(state.epoch) + "-" + std::to_string(pass));
    const auto batches = pair_batches(graph.edges.size(), config.pair_batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      double obj = 0.0;
      auto g = net_batch_gradient(net, x, state.u, state.dual, graph, batches[b], state.lambda, state.sched, terms,
                                  &obj);
      if (!std::isfinite(obj))
        throw NumericalError("net_step: non-finite loss in batch " + std::to_string(b) + " of epoch " +
                             std::to_string(state.epoch));
      auto params = net.parameters();
      auto grads = g.flat();
      state.net_optimizer.step(params, grads);
    }
  }
}

void dual_update(AdmmState& state, const Matrix& z) {
  if (z.rows() != state.u.rows() || z.cols() != state.u.cols())
    throw DimensionError("dual_update: Z shape does not match U");
  state.dual += state.dual_step * (z - state.u);
}

double residual_norm(const Matrix& z, const Matrix& u) {
  if (z.rows() == 0) return 0.0;
  return (z - u).rowwise().norm().mean();
}

std::vector<HistoryRow> train_clustering_stage(MlpAutoencoder& net, const Matrix& x, const MknnGraph& graph,
                                               AdmmState& state, const AdmmConfig& config) {
  std::vector<HistoryRow> history;
  if (config.epochs <= 0) return history;
  if (x.rows() != graph.n || state.u.rows() != graph.n)
    throw DimensionError("train_clustering_stage: data, graph and U sizes disagree");
  history.reserve(static_cast<std::size_t>(config.epochs));

  for (int e = 0; e < config.epochs; ++e) {
    try {
      if (state.mode == AblationMode::kFullAdmm) {
        const Matrix z = net.encode(x);
        u_step(state, z, graph, config);
      }
      net_step(net, x, state, graph, config);
      const Matrix z = net.encode(x);
      if (state.mode == AblationMode::kFullAdmm)
        dual_update(state, z);
      else
        state.u = z;
      state.epoch += 1;
      state.sched = schedule_step(state.sched, state.epoch);

      const LossBreakdown b = evaluate_losses(net, x, state, graph);
      history.push_back({state.epoch, b.reconstruction, b.pairwise, b.representation, b.dual_term,
                         residual_norm(z, state.u), state.sched.mu1, state.sched.mu2});
    } catch (const Error&) {
      if (!config.abort_checkpoint_prefix.empty()) {
        save_checkpoint(config.abort_checkpoint_prefix + ".net", net);
        save_run_state(config.abort_checkpoint_prefix + ".run", state);
      }
      throw;
    }
  }
  return history;
}

Matrix clustering_representation(const MlpAutoencoder& net, const Matrix& x, const AdmmState& state) {
  if (state.mode == AblationMode::kFullAdmm) return state.u;
  return net.encode(x);
}

// ---------------------------------------------------------------------------
// Run state serialization

namespace {

void write_optimizer(std::ostream& out, const Optimizer& opt) {
  const auto& c = opt.config();
  io::write_u32(out, c.kind == OptimizerKind::kAdam ? 0u : 1u);
  io::write_f64(out, c.learning_rate);
  io::write_f64(out, c.beta1);
  io::write_f64(out, c.beta2);
  io::write_f64(out, c.decay);
  io::write_f64(out, c.epsilon);
  io::write_u64(out, opt.steps());
  io::write_u32(out, static_cast<std::uint32_t>(opt.first_moments().size()));
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    io::write_matrix(out, opt.first_moments()[i]);
    io::write_matrix(out, opt.second_moments()[i]);
  }
}

Optimizer read_optimizer(std::istream& in) {
  OptimizerConfig c;
  const auto kind = io::read_u32(in, "optimizer kind");
  if (kind > 1) throw ParseError("unknown optimizer kind " + std::to_string(kind));
  c.kind = kind == 0 ? OptimizerKind::kAdam : OptimizerKind::kRmsProp;
  c.learning_rate = io::read_f64(in);
  c.beta1 = io::read_f64(in);
  c.beta2 = io::read_f64(in);
  c.decay = io::read_f64(in);
  c.epsilon = io::read_f64(in);
  const auto steps = io::read_u64(in, "optimizer steps");
  const auto blocks = io::read_u32(in, "optimizer blocks");
  std::vector<Matrix> first, second;
  for (std::uint32_t i = 0; i < blocks; ++i) {
    first.push_back(io::read_matrix(in, "first moment"));
    second.push_back(io::read_matrix(in, "second moment"));
  }
  Optimizer opt(c);
  opt.restore(steps, std::move(first), std::move(second));
  return opt;
}

}  // namespace

void write_run_state(std::ostream& out, const AdmmState& s) {
  io::write_magic(out, kRunMagic);
  io::write_u64(out, s.seed);
  io::write_u32(out, static_cast<std::uint32_t>(s.epoch));
  io::write_u32(out, static_cast<std::uint32_t>(s.mode));
  io::write_f64(out, s.lambda);
  io::write_f64(out, s.dual_step);
  io::write_f64(out, s.sched.mu1);
  io::write_f64(out, s.sched.mu2);
  io::write_f64(out, s.sched.delta1);
  io::write_f64(out, s.sched.delta2);
  io::write_u32(out, static_cast<std::uint32_t>(s.sched.update_interval));
  io::write_u32(out, static_cast<std::uint32_t>(s.sched.epoch));
  io::write_matrix(out, s.u);
  io::write_matrix(out, s.dual);
  write_optimizer(out, s.u_optimizer);
  write_optimizer(out, s.net_optimizer);
}

AdmmState read_run_state(std::istream& in) {
  io::expect_magic(in, kRunMagic);
  AdmmState s;
  s.seed = io::read_u64(in, "seed");
  s.epoch = static_cast<int>(io::read_u32(in, "epoch"));
  const auto mode = io::read_u32(in, "mode");
  if (mode < 1 || mode > 3) throw ParseError("invalid ablation mode " + std::to_string(mode));
  s.mode = static_cast<AblationMode>(mode);
  s.lambda = io::read_f64(in, "lambda");
  s.dual_step = io::read_f64(in, "dual step");
  s.sched.mu1 = io::read_f64(in);
  s.sched.mu2 = io::read_f64(in);
  s.sched.delta1 = io::read_f64(in);
  s.sched.delta2 = io::read_f64(in);
  s.sched.update_interval = static_cast<int>(io::read_u32(in, "update interval"));
  s.sched.epoch = static_cast<int>(io::read_u32(in, "schedule epoch"));
  s.u = io::read_matrix(in, "U");
  s.dual = io::read_matrix(in, "dual");
  if (s.u.rows() != s.dual.rows() || s.u.cols() != s.dual.cols())
    throw ParseError("run state: U and dual shapes differ");
  s.u_optimizer = read_optimizer(in);
  s.net_optimizer = read_optimizer(in);
  return s;
}

void save_run_state(const std::string& path, const AdmmState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_run_state(out, state);
}

AdmmState load_run_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_run_state(in);
}

void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows) {
  out << "epoch,rec,pair,rep,dual,residual,mu1,mu2\n" << std::setprecision(10);
  for (const auto& r : rows)
    out << r.epoch << ',' << r.rec << ',' << r.pair << ',' << r.rep << ',' << r.dual << ',' << r.residual << ','
        << r.mu1 << ',' << r.mu2 << '\n';
}

}  // namespace cpac
