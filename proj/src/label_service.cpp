#include "cpac/label_service.hpp"

#include <chrono>
#include <filesystem>

#include "httplib.h"

namespace cpac {

namespace fs = std::filesystem;
using nlohmann::json;

const char* state_name(SessionState state) {
  switch (state) {
    case SessionState::kIdle: return "idle";
    case SessionState::kTraining: return "training";
    case SessionState::kError: return "error";
  }
  return "unknown";
}

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Write-then-rename so an interrupted save leaves the previous file intact.
template <typename Fn>
void atomic_save(const fs::path& path, Fn&& save) {
  const fs::path tmp = path.string() + ".tmp";
  save(tmp.string());
  fs::rename(tmp, path);
}

}  // namespace

LabelSession::LabelSession(ClusteringRun run, SessionOptions options)
    : options_(std::move(options)), run_(std::move(run)), n_(run_.data.rows()) {
  constraints_ = run_.constraints;
  if (!options_.journal_path.empty()) {
    if (fs::exists(options_.journal_path)) {
      std::ifstream in(options_.journal_path);
      const ConstraintSet replayed = read_constraints_csv(in);
      for (const auto& c : replayed.journal()) constraints_.add(c.p, c.q, c.kind, c.timestamp);
    }
    const bool fresh = !fs::exists(options_.journal_path) || fs::file_size(options_.journal_path) == 0;
    journal_.open(options_.journal_path, std::ios::app);
    if (!journal_) throw Error("cannot open constraint journal " + options_.journal_path);
    if (fresh) {
      write_constraint_header(journal_);
      journal_.flush();
    }
  }
  constraints_.mark_applied(run_.constraints.journal().size());
  // Replayed pairs count as served.
  for (const auto& c : constraints_.journal()) served_.insert(pair_id(c.p, c.q));
  queue_ = current_queue(run_);
  refresh_views_locked();
}

LabelSession::~LabelSession() {
  if (worker_.joinable()) worker_.join();
}

void LabelSession::refresh_views_locked() {
  assignment_ = extract(run_);
  metrics_ = evaluate(run_, assignment_);
  const Matrix rep = clustering_representation(run_.net, run_.data.values, run_.state);
  pca_ = pca_project(rep, static_cast<int>(std::min<Index>(2, rep.cols()))).coords;
}

PairsResult LabelSession::get_pairs(std::size_t count) {
  std::lock_guard lock(mu_);
  PairsResult out;
  while (out.pairs.size() < count && queue_.remaining() > 0) {
    for (const auto& e : queue_.take(1)) {
      const Index id = pair_id(e.p, e.q);
      if (served_.insert(id).second) out.pairs.push_back({id, e});
    }
  }
  out.exhausted = queue_.remaining() == 0;
  return out;
}

void LabelSession::journal_locked(const Constraint& c) {
  if (!journal_.is_open()) return;
  write_constraint_row(journal_, c);
  journal_.flush();
  if (!journal_) throw Error("constraint journal write failed");
}

void LabelSession::post_label(Index id, ConstraintKind kind) {
  std::lock_guard lock(mu_);
  if (id < 0 || !served_.count(id)) throw NotFoundError("pair " + std::to_string(id) + " was not served");
  const Index p = id / n_;
  const Index q = id % n_;
  if (constraints_.latest(p, q) == kind) return;
  const Constraint c{p, q, kind, now_ms()};
  journal_locked(c);
  constraints_.add(c.p, c.q, c.kind, c.timestamp);
}

SessionStatus LabelSession::start_round(std::optional<int> epochs) {
  std::unique_lock lock(mu_);
  if (state_ == SessionState::kTraining) throw ConflictError("a training round is already running");
  const int n_epochs = epochs.value_or(options_.default_round_epochs);
  if (n_epochs < 0) throw ParameterError("round epochs must be >= 0");
  if (worker_.joinable()) worker_.join();

  ClusteringRun work = run_;
  const std::size_t upto = constraints_.journal().size();
  set_constraints(work, constraints_);
  state_ = SessionState::kTraining;
  error_.clear();
  worker_ = std::thread(&LabelSession::round_worker, this, std::move(work), upto, n_epochs);
  lock.unlock();
  return get_status();
}

void LabelSession::round_worker(ClusteringRun work, std::size_t applied_upto, int epochs) {
  try {
    train_epochs(work, epochs);
    if (!options_.checkpoint_dir.empty()) {
      const fs::path dir(options_.checkpoint_dir);
      fs::create_directories(dir);
      atomic_save(dir / "net.ckpt", [&](const std::string& p) { save_checkpoint(p, work.net); });
      atomic_save(dir / "run.ckpt", [&](const std::string& p) { save_run_state(p, work.state); });
    }
    std::lock_guard lock(mu_);
    run_ = std::move(work);
    constraints_.mark_applied(applied_upto);
    if (options_.refresh_queue_each_round) queue_ = current_queue(run_);
    refresh_views_locked();
    round_ += 1;
    state_ = SessionState::kIdle;
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    error_ = e.what();
    state_ = SessionState::kError;
  }
  idle_cv_.notify_all();
}

void LabelSession::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [&] { return state_ != SessionState::kTraining; });
}

SessionStatus LabelSession::get_status() const {
  std::lock_guard lock(mu_);
  SessionStatus s;
  s.state = state_;
  s.round = round_;
  s.must_count = constraints_.count(ConstraintKind::kMustLink);
  s.cannot_count = constraints_.count(ConstraintKind::kCannotLink);
  s.pending = constraints_.journal().size() - constraints_.applied_count();
  s.metrics = metrics_;
  s.error = error_;
  return s;
}

ConstraintSet LabelSession::constraints() const {
  std::lock_guard lock(mu_);
  return constraints_;
}

json LabelSession::point_payload(Index i) const {
  json j;
  j["index"] = i;
  std::vector<double> features(run_.data.values.row(i).begin(), run_.data.values.row(i).end());
  j["features"] = features;
  j["pca"] = std::vector<double>(pca_.row(i).begin(), pca_.row(i).end());
  j["cluster"] = assignment_.labels[static_cast<std::size_t>(i)];
  if (run_.data.image_shape) {
    j["image"] = {{"height", run_.data.image_shape->height},
                  {"width", run_.data.image_shape->width},
                  {"pixels", grayscale_pixels(run_.data, i)}};
  }
  return j;
}

json LabelSession::pair_json(const ServedPair& pair) const {
  std::lock_guard lock(mu_);
  return {{"pair_id", pair.pair_id},
          {"p", pair.entry.p},
          {"q", pair.entry.q},
          {"loss", pair.entry.loss},
          {"payload_p", point_payload(pair.entry.p)},
          {"payload_q", point_payload(pair.entry.q)}};
}

json LabelSession::status_json() const {
  const SessionStatus s = get_status();
  json j = {{"state", state_name(s.state)},
            {"round", s.round},
            {"must_count", s.must_count},
            {"cannot_count", s.cannot_count},
            {"pending", s.pending}};
  if (s.metrics) j["metrics"] = {{"nmi", s.metrics->nmi}, {"acc", s.metrics->acc}, {"clusters", s.metrics->clusters}};
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

json LabelSession::embedding_json() const {
  std::lock_guard lock(mu_);
  json points = json::array();
  for (Index i = 0; i < pca_.rows(); ++i) {
    json pt = {{"index", i}, {"x", pca_(i, 0)}, {"y", pca_.cols() > 1 ? pca_(i, 1) : 0.0},
               {"cluster", assignment_.labels[static_cast<std::size_t>(i)]}};
    if (run_.data.labels) pt["label"] = (*run_.data.labels)[static_cast<std::size_t>(i)];
    points.push_back(std::move(pt));
  }
  return {{"round", round_}, {"clusters", assignment_.count}, {"points", std::move(points)}};
}

// ---------------------------------------------------------------------------
// HTTP layer

struct LabelServer::Impl {
  LabelSession& session;
  httplib::Server server;
  std::thread thread;

  explicit Impl(LabelSession& s) : session(s) { routes(); }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const ParseError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const ParameterError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  }

  void routes() {
    server.Get("/pairs", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        long long count = 10;
        if (req.has_param("count")) {
          const std::string text = req.get_param_value("count");
          std::size_t used = 0;
          try {
            count = std::stoll(text, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used != text.size() || text.empty() || count < 0)
            throw ParameterError("count must be a non-negative integer");
        }
        const auto result = session.get_pairs(static_cast<std::size_t>(count));
        json pairs = json::array();
        for (const auto& p : result.pairs) pairs.push_back(session.pair_json(p));
        reply(res, 200, {{"pairs", std::move(pairs)}, {"exhausted", result.exhausted}});
      });
    });
    server.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        const Index id = body.at("pair_id").get<Index>();
        const ConstraintKind kind = parse_kind(body.at("kind").get<std::string>());
        session.post_label(id, kind);
        reply(res, 200, {{"pair_id", id}, {"kind", kind_name(kind)}, {"journaled", true}});
      });
    });
    server.Post("/round", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<int> epochs;
        if (!req.body.empty()) {
          const json body = json::parse(req.body);
          if (body.contains("epochs")) epochs = body.at("epochs").get<int>();
        }
        session.start_round(epochs);
        reply(res, 202, session.status_json());
      });
    });
    server.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, session.status_json()); });
    });
    server.Get("/embedding", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, session.embedding_json()); });
    });
  }
};

LabelServer::LabelServer(LabelSession& session) : impl_(std::make_unique<Impl>(session)) {}

LabelServer::~LabelServer() { stop(); }

int LabelServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void LabelServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void LabelServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cpac
