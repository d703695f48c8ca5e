#pragma once

#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cpac/pipeline.hpp"
#include "json.hpp"

namespace cpac {

enum class SessionState { kIdle, kTraining, kError };
const char* state_name(SessionState state);

struct SessionOptions {
  std::string journal_path;    // append-only constraint journal; replayed when it exists
  std::string checkpoint_dir;  // net/run checkpoints after each round (empty: none)
  bool refresh_queue_each_round = true;  // false keeps the ranking from session start
  int default_round_epochs = 20;
};

struct ServedPair {
  Index pair_id = 0;  // p * n + q
  PairEntry entry;
};

struct PairsResult {
  std::vector<ServedPair> pairs;
  bool exhausted = false;
};

struct SessionStatus {
  SessionState state = SessionState::kIdle;
  int round = 0;
  std::size_t must_count = 0;
  std::size_t cannot_count = 0;
  std::size_t pending = 0;  // journal entries not yet applied to the graph
  std::optional<Evaluation> metrics;
  std::string error;
};

/// One labeling session over a finished clustering run.
///
/// All state changes go through one mutex. A round copies the run, trains the
/// copy on a worker thread and swaps it in on success, so labels can keep
/// arriving while it trains; those stay pending until the next round.
class LabelSession {
 public:
  LabelSession(ClusteringRun run, SessionOptions options);
  ~LabelSession();
  LabelSession(const LabelSession&) = delete;
  LabelSession& operator=(const LabelSession&) = delete;

  /// Next `count` queue entries not yet served in this session.
  PairsResult get_pairs(std::size_t count);

  /// Journals the label, then records it. Relabels are latest-wins; repeating
  /// the current label is a no-op. Unknown ids throw NotFoundError.
  void post_label(Index pair_id, ConstraintKind kind);

  /// Starts a training round in the background; ConflictError when one runs.
  SessionStatus start_round(std::optional<int> epochs = std::nullopt);

  SessionStatus get_status() const;

  /// Blocks until no round is running.
  void wait_idle();

  Index pair_id(Index p, Index q) const { return p * n_ + q; }

  // JSON views used by the HTTP layer.
  nlohmann::json pair_json(const ServedPair& pair) const;
  nlohmann::json point_payload(Index i) const;
  nlohmann::json status_json() const;
  nlohmann::json embedding_json() const;

  ConstraintSet constraints() const;

 private:
  void refresh_views_locked();
  void round_worker(ClusteringRun work, std::size_t applied_upto, int epochs);
  void journal_locked(const Constraint& c);

  mutable std::mutex mu_;
  std::condition_variable idle_cv_;
  SessionOptions options_;
  ClusteringRun run_;
  Index n_ = 0;

  PairQueue queue_;
  std::set<Index> served_;
  ConstraintSet constraints_;
  ClusterAssignment assignment_;
  std::optional<Evaluation> metrics_;
  Matrix pca_;  // n x 2 coordinates of the clustering representation

  SessionState state_ = SessionState::kIdle;
  int round_ = 0;
  std::string error_;
  std::ofstream journal_;
  std::thread worker_;
};

/// JSON over HTTP in front of a LabelSession:
///   GET /pairs?count=K  POST /labels  POST /round  GET /status  GET /embedding
class LabelServer {
 public:
  explicit LabelServer(LabelSession& session);
  ~LabelServer();

  /// Binds host:port (port 0 picks a free one) and serves on a background
  /// thread. Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cpac
