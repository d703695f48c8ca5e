#pragma once

#include <cstdint>
#include <iosfwd>
#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpac/admm.hpp"
#include "cpac/graph.hpp"

namespace cpac {

enum class ConstraintKind { kMustLink, kCannotLink };

const char* kind_name(ConstraintKind kind);  // "must" | "cannot"
ConstraintKind parse_kind(const std::string& text);

struct PairEntry {
  Index edge_id = 0;
  Index p = 0;
  Index q = 0;
  double loss = 0.0;
};

/// Edges ordered by descending clustering loss (ties: ascending edge id),
/// with a cursor over the entries already handed out.
struct PairQueue {
  std::vector<PairEntry> entries;
  std::size_t cursor = 0;

  std::size_t remaining() const { return entries.size() - cursor; }
  /// Next `count` entries; advances the cursor.
  std::vector<PairEntry> take(std::size_t count);
};

PairQueue rank_pairs(const LossBreakdown& breakdown, const MknnGraph& graph);

struct Constraint {
  Index p = 0;
  Index q = 0;  // p < q
  ConstraintKind kind = ConstraintKind::kMustLink;
  std::int64_t timestamp = 0;
};

/// Journal of pair labels; the latest label of a pair is the effective one.
class ConstraintSet {
 public:
  /// Records a label. Self pairs and negative indices are rejected.
  void add(Index p, Index q, ConstraintKind kind, std::int64_t timestamp);

  const std::vector<Constraint>& journal() const { return journal_; }
  /// Latest label per pair, ordered by (p, q).
  std::vector<Constraint> effective() const;
  std::size_t count(ConstraintKind kind) const;
  bool empty() const { return journal_.empty(); }

  /// Journal entries at positions >= applied_count() have not reached the graph yet.
  std::size_t applied_count() const { return applied_; }
  void mark_all_applied() { applied_ = journal_.size(); }
  void mark_applied(std::size_t upto) { applied_ = std::min(upto, journal_.size()); }
  /// Effective kind of a pair, if it has been labeled.
  std::optional<ConstraintKind> latest(Index p, Index q) const;

 private:
  std::vector<Constraint> journal_;
  std::map<std::pair<Index, Index>, std::size_t> latest_;
  std::size_t applied_ = 0;
};

/// cannot-link removes the edge; must-link sets (or inserts) it with the largest
/// weight of the input graph (1 when the graph has no edges). Degrees and unary
/// weights are left as built.
MknnGraph apply_constraints(const MknnGraph& graph, const ConstraintSet& constraints);

/// Labels the top `count` queue entries from ground truth: cannot-link when the
/// true classes differ, must-link otherwise. Sets *truncated when the queue is shorter.
ConstraintSet simulate_oracle_labels(const PairQueue& queue, std::span<const Index> truth, std::size_t count,
                                     bool* truncated = nullptr);

/// Constraint file: CSV `p,q,kind,timestamp`, kind in {must, cannot}.
void write_constraint_header(std::ostream& out);
void write_constraint_row(std::ostream& out, const Constraint& c);
void write_constraints_csv(std::ostream& out, const ConstraintSet& set);
/// Replays a journal; a missing header is accepted, malformed rows throw ParseError.
ConstraintSet read_constraints_csv(std::istream& in);

}  // namespace cpac
