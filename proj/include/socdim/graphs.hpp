#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "socdim/core.hpp"
#include "socdim/csv.hpp"
#include "socdim/ingest.hpp"
#include "socdim/parallel.hpp"

namespace socdim {

// ---------------------------------------------------------------------------
// Percentile thresholds and labels

// 1-based nearest rank: the smallest r with r >= alpha * n. The epsilon
// absorbs products such as 0.99 * 100 landing a hair above an integer.
inline std::size_t nearest_rank(double alpha, std::size_t n) {
  if (n == 0) return 0;
  const double x = alpha * static_cast<double>(n);
  auto r = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
  return std::clamp<std::size_t>(r, 1, n);
}

struct DimensionThresholds {
  double alpha = 0.99;
  std::vector<std::string> dimensions;
  std::vector<double> theta;

  std::size_t size() const { return dimensions.size(); }

  std::optional<std::size_t> index_of(std::string_view d) const {
    for (std::size_t i = 0; i < dimensions.size(); ++i)
      if (dimensions[i] == d) return i;
    return std::nullopt;
  }

  double at(std::string_view d) const {
    if (auto i = index_of(d)) return theta[*i];
    throw InputError("unknown dimension '" + std::string(d) + "'");
  }

  bool operator==(const DimensionThresholds&) const = default;
};

// theta_d is the smallest attained score v with at least alpha of all scores
// for d at or below v (nearest-rank, no interpolation).
inline DimensionThresholds dimension_thresholds(const MessageCorpus& corpus, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must be in (0,1)");
  if (corpus.empty()) throw InputError("cannot compute thresholds of an empty message stream");
  DimensionThresholds t;
  t.alpha = alpha;
  t.dimensions = corpus.dimensions;
  const std::size_t n = corpus.size();
  const std::size_t rank = nearest_rank(alpha, n);
  std::vector<double> column(n);
  for (std::size_t d = 0; d < corpus.dimension_count(); ++d) {
    for (std::size_t i = 0; i < n; ++i) column[i] = corpus.score(i, d);
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                     column.end());
    t.theta.push_back(column[rank - 1]);
  }
  return t;
}

// Reorders thresholds to follow `dimensions`; every name must be present.
inline DimensionThresholds align_thresholds(const DimensionThresholds& t,
                                            const std::vector<std::string>& dimensions) {
  DimensionThresholds out;
  out.alpha = t.alpha;
  for (const auto& d : dimensions) {
    out.dimensions.push_back(d);
    out.theta.push_back(t.at(d));
  }
  return out;
}

inline bool passes(std::span<const double> scores, const DimensionThresholds& t, std::size_t d) {
  return scores[d] >= t.theta[d];
}

// Dimensions d with s_d(m) >= theta_d. Scores follow the threshold order.
inline std::vector<std::string> label_message(std::span<const double> scores,
                                              const DimensionThresholds& t) {
  if (scores.size() < t.size())
    throw InputError("message is missing a score for dimension '" +
                     t.dimensions[scores.size()] + "'");
  std::vector<std::string> labels;
  for (std::size_t d = 0; d < t.size(); ++d)
    if (passes(scores, t, d)) labels.push_back(t.dimensions[d]);
  return labels;
}

inline std::vector<std::string> label_message(const MessageRecord& m,
                                              const DimensionThresholds& t) {
  return label_message(std::span<const double>(m.scores), t);
}

// ---------------------------------------------------------------------------
// Communication graphs

struct Edge {
  UserId src = 0;
  UserId dst = 0;
  std::uint32_t weight = 0;

  std::uint64_t key() const { return (static_cast<std::uint64_t>(src) << 32) | dst; }
  bool operator==(const Edge&) const = default;
};

struct GraphParams {
  std::string tag = "full";
  std::uint32_t min_weight = 1;
  std::optional<double> alpha;
  std::optional<double> theta;

  bool operator==(const GraphParams&) const = default;
};

// Immutable directed weighted graph. Edges are sorted by (src, dst), so the
// out-edges of a node are contiguous.
class CommGraph {
 public:
  CommGraph() = default;

  CommGraph(GraphParams params, std::vector<Edge> edges)
      : params_(std::move(params)), edges_(std::move(edges)) {
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return a.key() < b.key(); });
    const std::uint32_t floor = std::max<std::uint32_t>(1, params_.min_weight);
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      if (edges_[i].weight < floor)
        throw InputError("edge weight " + std::to_string(edges_[i].weight) +
                         " below minimum " + std::to_string(floor));
      if (edges_[i].src == edges_[i].dst) throw InputError("self-loop edge in graph");
      if (i > 0 && edges_[i].key() == edges_[i - 1].key()) throw InputError("duplicate edge");
    }
    nodes_.reserve(edges_.size());
    for (const auto& e : edges_) {
      nodes_.push_back(e.src);
      nodes_.push_back(e.dst);
    }
    std::sort(nodes_.begin(), nodes_.end());
    nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
  }

  const std::string& tag() const { return params_.tag; }
  const GraphParams& params() const { return params_; }
  std::span<const Edge> edges() const { return edges_; }
  std::span<const UserId> nodes() const { return nodes_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }

  bool contains(UserId u) const { return std::binary_search(nodes_.begin(), nodes_.end(), u); }

  std::span<const Edge> out_edges(UserId u) const {
    auto lo = std::lower_bound(edges_.begin(), edges_.end(), u,
                               [](const Edge& e, UserId v) { return e.src < v; });
    auto hi = lo;
    while (hi != edges_.end() && hi->src == u) ++hi;
    return {lo, hi};
  }

  std::optional<std::uint32_t> weight(UserId src, UserId dst) const {
    const std::uint64_t k = (static_cast<std::uint64_t>(src) << 32) | dst;
    auto it = std::lower_bound(edges_.begin(), edges_.end(), k,
                               [](const Edge& e, std::uint64_t key) { return e.key() < key; });
    if (it != edges_.end() && it->key() == k) return it->weight;
    return std::nullopt;
  }

  std::uint64_t total_weight() const {
    std::uint64_t s = 0;
    for (const auto& e : edges_) s += e.weight;
    return s;
  }

  bool operator==(const CommGraph& o) const {
    return params_ == o.params_ && edges_ == o.edges_;
  }

 private:
  GraphParams params_;
  std::vector<Edge> edges_;
  std::vector<UserId> nodes_;
};

// Counts messages per ordered located pair for which keep(i) holds. Each chunk
// sorts its own pair keys; the sorted runs are merged and run-length encoded.
template <typename Keep>
CommGraph build_graph_if(const MessageCorpus& corpus, const UserLocationMap& locations,
                         GraphParams params, Keep&& keep, std::size_t threads = 1) {
  if (params.min_weight < 1) throw InputError("min_weight must be >= 1");
  const std::size_t chunks = resolve_threads(threads);
  std::vector<std::vector<std::uint64_t>> runs(std::max<std::size_t>(1, chunks));
  for_each_chunk(corpus.size(), chunks, [&](std::size_t c, std::size_t begin, std::size_t end) {
    auto& keys = runs[c];
    for (std::size_t i = begin; i < end; ++i) {
      const UserId s = corpus.senders[i], r = corpus.receivers[i];
      if (s == r || !locations.located(s) || !locations.located(r) || !keep(i)) continue;
      keys.push_back((static_cast<std::uint64_t>(s) << 32) | r);
    }
    std::sort(keys.begin(), keys.end());
  });
  std::vector<std::uint64_t> all;
  for (auto& run : runs) {
    const auto mid = static_cast<std::ptrdiff_t>(all.size());
    all.insert(all.end(), run.begin(), run.end());
    std::inplace_merge(all.begin(), all.begin() + mid, all.end());
    run = {};
  }
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    const auto count = static_cast<std::uint32_t>(j - i);
    if (count >= params.min_weight)
      edges.push_back({static_cast<UserId>(all[i] >> 32),
                       static_cast<UserId>(all[i] & 0xffffffffULL), count});
    i = j;
  }
  return CommGraph(std::move(params), std::move(edges));
}

inline CommGraph build_graph(const MessageCorpus& corpus, const UserLocationMap& locations,
                             std::uint32_t min_weight, std::size_t threads = 1) {
  GraphParams p;
  p.tag = "full";
  p.min_weight = min_weight;
  return build_graph_if(corpus, locations, p, [](std::size_t) { return true; }, threads);
}

// Only messages labeled with d count; edge weights are never thresholded.
inline CommGraph build_dimension_graph(const MessageCorpus& corpus,
                                       const UserLocationMap& locations, std::string_view d,
                                       const DimensionThresholds& t, std::size_t threads = 1) {
  const auto col = corpus.dimension_index(d);
  if (!col) throw InputError("corpus has no dimension '" + std::string(d) + "'");
  const double theta = t.at(d);
  GraphParams p;
  p.tag = std::string(d);
  p.min_weight = 1;
  p.alpha = t.alpha;
  p.theta = theta;
  const std::size_t dc = *col;
  return build_graph_if(
      corpus, locations, p, [&](std::size_t i) { return corpus.score(i, dc) >= theta; }, threads);
}

// Fractions of g1's edges found in g2 and of g2's edges found in g1.
inline std::pair<double, double> edge_overlap(const CommGraph& g1, const CommGraph& g2) {
  std::size_t common = 0;
  auto a = g1.edges(), b = g2.edges();
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].key() < b[j].key()) ++i;
    else if (b[j].key() < a[i].key()) ++j;
    else {
      ++common;
      ++i;
      ++j;
    }
  }
  auto frac = [&](std::size_t n) { return n == 0 ? 0.0 : double(common) / double(n); };
  return {frac(a.size()), frac(b.size())};
}

// ---------------------------------------------------------------------------
// Summaries

struct HistogramBin {
  std::uint64_t low = 0;   // inclusive
  std::uint64_t high = 0;  // exclusive
  std::uint64_t count = 0;
};

// Powers-of-two bins [2^k, 2^(k+1)) over positive values.
inline std::vector<HistogramBin> log_binned(const std::map<std::uint64_t, std::uint64_t>& counts) {
  std::vector<HistogramBin> bins;
  for (const auto& [value, n] : counts) {
    if (value == 0) continue;
    std::uint64_t low = 1;
    while (low * 2 <= value) low *= 2;
    if (bins.empty() || bins.back().low != low) bins.push_back({low, low * 2, 0});
    bins.back().count += n;
  }
  return bins;
}

struct GraphStats {
  std::string tag;
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  std::map<std::uint64_t, std::uint64_t> degree_counts;    // in+out degree -> nodes
  std::map<std::uint64_t, std::uint64_t> strength_counts;  // edge weight -> edges
};

inline GraphStats graph_summary(const CommGraph& g) {
  GraphStats s;
  s.tag = g.tag();
  s.node_count = g.node_count();
  s.edge_count = g.edge_count();
  std::vector<std::uint64_t> degree(g.node_count(), 0);
  auto slot = [&](UserId u) {
    return static_cast<std::size_t>(
        std::lower_bound(g.nodes().begin(), g.nodes().end(), u) - g.nodes().begin());
  };
  for (const auto& e : g.edges()) {
    ++degree[slot(e.src)];
    ++degree[slot(e.dst)];
    ++s.strength_counts[e.weight];
  }
  for (auto d : degree) ++s.degree_counts[d];
  return s;
}

// Share of the reference graph's nodes that also appear in `sub`.
inline double node_fraction(const CommGraph& sub, const CommGraph& reference) {
  if (reference.node_count() == 0) return 0.0;
  std::vector<UserId> common;
  std::set_intersection(sub.nodes().begin(), sub.nodes().end(), reference.nodes().begin(),
                        reference.nodes().end(), std::back_inserter(common));
  return double(common.size()) / double(reference.node_count());
}

// ---------------------------------------------------------------------------
// Serialization

// Edge list preceded by "# tag=... min_weight=... [alpha=... theta=...]".
inline void write_graph(const CommGraph& g, const UserRegistry& users, std::ostream& out) {
  const auto& p = g.params();
  if (p.tag.find_first_of(" \t\n=") != std::string::npos)
    throw InputError("graph tag may not contain whitespace or '='");
  out << "# tag=" << p.tag << " min_weight=" << p.min_weight;
  if (p.alpha) out << " alpha=" << format_double(*p.alpha);
  if (p.theta) out << " theta=" << format_double(*p.theta);
  out << '\n';
  CsvWriter w(out);
  w.row("src", "dst", "weight");
  for (const auto& e : g.edges()) w.row(users.name(e.src), users.name(e.dst), e.weight);
}

inline CommGraph read_graph(std::istream& in, UserRegistry& users) {
  std::string first;
  if (!std::getline(in, first) || first.rfind("# ", 0) != 0)
    throw InputError("graph file: missing '# tag=...' header line");
  GraphParams p;
  std::istringstream fields(first.substr(2));
  std::string kv;
  while (fields >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InputError("graph header: bad field '" + kv + "'");
    const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "tag") {
      p.tag = value;
    } else if (key == "min_weight") {
      auto v = parse_integer<std::uint32_t>(value);
      if (!v) throw InputError("graph header: bad min_weight");
      p.min_weight = *v;
    } else if (key == "alpha" || key == "theta") {
      auto v = parse_double(value);
      if (!v) throw InputError("graph header: bad " + key);
      (key == "alpha" ? p.alpha : p.theta) = *v;
    } else {
      throw InputError("graph header: unknown field '" + key + "'");
    }
  }
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw InputError("graph file: missing column header");
  CsvHeader h(row);
  const auto cs = h.require("src", "graph"), cd = h.require("dst", "graph"),
             cw = h.require("weight", "graph");
  std::vector<Edge> edges;
  while (reader.next(row)) {
    if (row.size() != h.size()) throw InputError("graph file: wrong field count");
    auto w = parse_integer<std::uint32_t>(row[cw]);
    if (!w) throw InputError("graph file: bad weight '" + row[cw] + "'");
    edges.push_back({users.intern(row[cs]), users.intern(row[cd]), *w});
  }
  return CommGraph(std::move(p), std::move(edges));
}

inline void write_thresholds(const DimensionThresholds& t, std::ostream& out) {
  CsvWriter w(out);
  w.row("dimension", "alpha", "theta");
  for (std::size_t d = 0; d < t.size(); ++d) w.row(t.dimensions[d], t.alpha, t.theta[d]);
}

inline DimensionThresholds read_thresholds(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw InputError("thresholds file is empty");
  CsvHeader h(row);
  const auto cd = h.require("dimension", "thresholds"), ca = h.require("alpha", "thresholds"),
             ct = h.require("theta", "thresholds");
  DimensionThresholds t;
  bool first = true;
  while (reader.next(row)) {
    auto a = parse_double(row.at(ca));
    auto th = parse_double(row.at(ct));
    if (!a || !th) throw InputError("thresholds file: bad number");
    if (!first && *a != t.alpha) throw InputError("thresholds file: mixed alpha values");
    t.alpha = *a;
    first = false;
    t.dimensions.push_back(row.at(cd));
    t.theta.push_back(*th);
  }
  return t;
}

}  // namespace socdim
