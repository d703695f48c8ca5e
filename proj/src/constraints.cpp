#include "cpac/constraints.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

namespace cpac {

const char* kind_name(ConstraintKind kind) { return kind == ConstraintKind::kMustLink ? "must" : "cannot"; }

ConstraintKind parse_kind(const std::string& text) {
  if (text == "must" || text == "must_link") return ConstraintKind::kMustLink;
  if (text == "cannot" || text == "cannot_link") return ConstraintKind::kCannotLink;
  throw ParseError("unknown constraint kind '" + text + "' (expected must or cannot)");
}

std::vector<PairEntry> PairQueue::take(std::size_t count) {
  const std::size_t end = std::min(entries.size(), cursor + count);
  std::vector<PairEntry> out(entries.begin() + static_cast<std::ptrdiff_t>(cursor),
                             entries.begin() + static_cast<std::ptrdiff_t>(end));
  cursor = end;
  return out;
}

PairQueue rank_pairs(const LossBreakdown& breakdown, const MknnGraph& graph) {
  if (breakdown.per_edge_loss.size() != graph.edges.size())
    throw DimensionError("rank_pairs: per-edge losses do not match the graph");
  PairQueue queue;
  queue.entries.reserve(graph.edges.size());
  for (std::size_t i = 0; i < graph.edges.size(); ++i)
    queue.entries.push_back({static_cast<Index>(i), graph.edges[i].p, graph.edges[i].q, breakdown.per_edge_loss[i]});
  std::stable_sort(queue.entries.begin(), queue.entries.end(),
                   [](const PairEntry& a, const PairEntry& b) { return a.loss > b.loss; });
  return queue;
}

// ---------------------------------------------------------------------------

void ConstraintSet::add(Index p, Index q, ConstraintKind kind, std::int64_t timestamp) {
  if (p < 0 || q < 0) throw ParameterError("constraint indices must be non-negative");
  if (p == q) throw ParameterError("constraint on a self pair (" + std::to_string(p) + ")");
  if (p > q) std::swap(p, q);
  latest_[{p, q}] = journal_.size();
  journal_.push_back({p, q, kind, timestamp});
}

std::optional<ConstraintKind> ConstraintSet::latest(Index p, Index q) const {
  if (p > q) std::swap(p, q);
  const auto it = latest_.find({p, q});
  if (it == latest_.end()) return std::nullopt;
  return journal_[it->second].kind;
}

std::vector<Constraint> ConstraintSet::effective() const {
  std::vector<Constraint> out;
  out.reserve(latest_.size());
  for (const auto& [key, pos] : latest_) out.push_back(journal_[pos]);
  return out;
}

std::size_t ConstraintSet::count(ConstraintKind kind) const {
  std::size_t c = 0;
  for (const auto& [key, pos] : latest_)
    if (journal_[pos].kind == kind) ++c;
  return c;
}

MknnGraph apply_constraints(const MknnGraph& graph, const ConstraintSet& constraints) {
  const auto effective = constraints.effective();
  for (const auto& c : effective)
    if (c.q >= graph.n)
      throw ParameterError("constraint (" + std::to_string(c.p) + "," + std::to_string(c.q) +
                           ") out of range for n=" + std::to_string(graph.n));
  if (effective.empty()) return graph;

  const double strongest = graph.edges.empty() ? 1.0 : graph.max_weight();
  std::map<std::pair<Index, Index>, ConstraintKind> wanted;
  for (const auto& c : effective) wanted[{c.p, c.q}] = c.kind;

  MknnGraph out = graph;
  out.edges.clear();
  for (const auto& e : graph.edges) {
    const auto it = wanted.find({e.p, e.q});
    if (it == wanted.end()) {
      out.edges.push_back(e);
    } else if (it->second == ConstraintKind::kMustLink) {
      out.edges.push_back({e.p, e.q, strongest});
      wanted.erase(it);
    } else {
      wanted.erase(it);
    }
  }
  // Remaining must-links name pairs that were not in the graph.
  for (const auto& [key, kind] : wanted)
    if (kind == ConstraintKind::kMustLink) out.edges.push_back({key.first, key.second, strongest});
  return out;
}

ConstraintSet simulate_oracle_labels(const PairQueue& queue, std::span<const Index> truth, std::size_t count,
                                     bool* truncated) {
  const std::size_t take = std::min(count, queue.entries.size());
  if (truncated) *truncated = take < count;
  ConstraintSet set;
  for (std::size_t i = 0; i < take; ++i) {
    const auto& e = queue.entries[i];
    if (static_cast<std::size_t>(std::max(e.p, e.q)) >= truth.size())
      throw ParameterError("simulate_oracle_labels: truth labels shorter than the graph");
    const bool same = truth[static_cast<std::size_t>(e.p)] == truth[static_cast<std::size_t>(e.q)];
    set.add(e.p, e.q, same ? ConstraintKind::kMustLink : ConstraintKind::kCannotLink, static_cast<std::int64_t>(i));
  }
  return set;
}

// ---------------------------------------------------------------------------

void write_constraint_header(std::ostream& out) { out << "p,q,kind,timestamp\n"; }

void write_constraint_row(std::ostream& out, const Constraint& c) {
  out << c.p << ',' << c.q << ',' << kind_name(c.kind) << ',' << c.timestamp << '\n';
}

void write_constraints_csv(std::ostream& out, const ConstraintSet& set) {
  write_constraint_header(out);
  for (const auto& c : set.journal()) write_constraint_row(out, c);
}

ConstraintSet read_constraints_csv(std::istream& in) {
  ConstraintSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("p,", 0) == 0) continue;
    std::istringstream row(line);
    std::string f[4];
    for (int i = 0; i < 4; ++i)
      if (!std::getline(row, f[i], ','))
        throw ParseError("constraint journal line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      std::size_t used = 0;
      const Index p = std::stoll(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("p");
      const Index q = std::stoll(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("q");
      const std::int64_t ts = std::stoll(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("timestamp");
      set.add(p, q, parse_kind(f[2]), ts);
    } catch (const std::invalid_argument&) {
      throw ParseError("constraint journal line " + std::to_string(line_no) + ": malformed number");
    } catch (const std::out_of_range&) {
      throw ParseError("constraint journal line " + std::to_string(line_no) + ": number out of range");
    } catch (const ParameterError& e) {
      throw ParseError("constraint journal line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace cpac
