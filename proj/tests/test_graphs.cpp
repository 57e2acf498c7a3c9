#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "socdim/graphs.hpp"

using namespace socdim;

namespace {

MessageCorpus corpus_of(std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows,
                        std::vector<std::string> dims = {"knowledge", "support"}) {
  MessageCorpus c;
  c.dimensions = std::move(dims);
  std::size_t i = 0;
  for (auto& [s, r, sc] : rows) c.push({"m" + std::to_string(i++), s, r, 0, sc});
  return c;
}

UserLocationMap everyone_at(std::size_t n, AreaId a = 0) {
  UserLocationMap m(n);
  for (UserId u = 0; u < n; ++u) m.assign(u, a);
  return m;
}

MessageCorpus random_corpus(std::mt19937_64& rng, std::size_t users, std::size_t n) {
  MessageCorpus c;
  c.dimensions = {"knowledge", "support"};
  std::uniform_int_distribution<UserId> pick(0, UserId(users - 1));
  std::uniform_real_distribution<double> s(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    UserId a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    c.push({"m" + std::to_string(i), a, b, 0, {s(rng), s(rng)}});
  }
  return c;
}

}  // namespace

TEST(Thresholds, UniformGridNinetyNinth) {
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows;
  for (int i = 1; i <= 100; ++i) rows.push_back({0, 1, {i / 100.0}});
  const auto c = corpus_of(rows, {"k"});
  const auto t = dimension_thresholds(c, 0.99);
  EXPECT_DOUBLE_EQ(t.at("k"), 0.99);
}

TEST(Thresholds, AllIdenticalScores) {
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows(7, {0, 1, {0.5}});
  const auto c = corpus_of(rows, {"k"});
  for (double a : {0.01, 0.5, 0.99}) {
    const auto t = dimension_thresholds(c, a);
    EXPECT_EQ(t.at("k"), 0.5);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_TRUE(passes(c.scores_of(i), t, 0));
  }
}

TEST(Thresholds, MatchesFullSortOracle) {
  std::mt19937_64 rng(42);
  const auto c = random_corpus(rng, 50, 10000);
  for (double alpha : {0.75, 0.9, 0.99, 0.5, 0.123}) {
    const auto t = dimension_thresholds(c, alpha);
    for (std::size_t d = 0; d < 2; ++d) {
      std::vector<double> col;
      for (std::size_t i = 0; i < c.size(); ++i) col.push_back(c.score(i, d));
      EXPECT_EQ(t.theta[d], oracle::nearest_rank_value(col, alpha)) << alpha;
      // Attained score, and labeled fraction within 1/n of 1 - alpha.
      EXPECT_NE(std::find(col.begin(), col.end(), t.theta[d]), col.end());
      const auto pass = std::count_if(col.begin(), col.end(), [&](double v) { return v >= t.theta[d]; });
      EXPECT_LE(std::abs(double(pass) / double(c.size()) - (1 - alpha)), 1.0 / double(c.size()) + 1e-12);
    }
  }
}

TEST(Thresholds, InvalidInputs) {
  MessageCorpus empty;
  empty.dimensions = {"k"};
  EXPECT_THROW(dimension_thresholds(empty, 0.9), InputError);
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows{{0, 1, {0.5}}};
  const auto c = corpus_of(rows, {"k"});
  EXPECT_THROW(dimension_thresholds(c, 0.0), InputError);
  EXPECT_THROW(dimension_thresholds(c, 1.0), InputError);
}

TEST(Thresholds, CsvRoundTrip) {
  DimensionThresholds t;
  t.alpha = 0.99;
  t.dimensions = {"knowledge", "support"};
  t.theta = {0.8123456789012345, 0.1};
  std::ostringstream out;
  write_thresholds(t, out);
  std::istringstream in(out.str());
  const auto r = read_thresholds(in);
  EXPECT_EQ(r.alpha, t.alpha);
  EXPECT_EQ(r.dimensions, t.dimensions);
  EXPECT_EQ(r.theta, t.theta);
}

TEST(LabelMessage, BoundaryInclusive) {
  DimensionThresholds t{0.9, {"knowledge", "support"}, {0.7, 0.8}};
  EXPECT_EQ(label_message(std::vector<double>{0.7, 0.1}, t), std::vector<std::string>{"knowledge"});
}

TEST(LabelMessage, EmptyWhenAllBelow) {
  DimensionThresholds t{0.9, {"knowledge", "support"}, {0.7, 0.8}};
  EXPECT_TRUE(label_message(std::vector<double>{0.0, 0.0}, t).empty());
}

TEST(LabelMessage, MultipleDimensions) {
  DimensionThresholds t{0.9, {"knowledge", "support"}, {0.7, 0.8}};
  EXPECT_EQ(label_message(std::vector<double>{0.9, 0.95}, t),
            (std::vector<std::string>{"knowledge", "support"}));
}

TEST(LabelMessage, MissingScoreThrows) {
  DimensionThresholds t{0.9, {"knowledge", "support"}, {0.7, 0.8}};
  EXPECT_THROW(label_message(std::vector<double>{0.9}, t), InputError);
  MessageRecord m{"m", 0, 1, 0, {0.9}};
  EXPECT_THROW(label_message(m, t), InputError);
}

TEST(BuildGraph, MinWeightBoundary) {
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows(4, {0, 1, {0.1, 0.1}});
  rows.push_back({1, 2, {0.1, 0.1}});
  rows.push_back({1, 2, {0.1, 0.1}});
  rows.push_back({1, 2, {0.1, 0.1}});
  const auto c = corpus_of(rows);
  const auto g = build_graph(c, everyone_at(3), 4);
  ASSERT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.weight(0, 1), 4u);
  EXPECT_FALSE(g.weight(1, 2));
  EXPECT_THROW(build_graph(c, everyone_at(3), 0), InputError);
}

TEST(BuildGraph, DropsUnlocatedEndpoints) {
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows{
      {0, 1, {0, 0}}, {1, 2, {0, 0}}, {2, 0, {0, 0}}};
  const auto c = corpus_of(rows);
  UserLocationMap loc(3);
  loc.assign(0, 0);
  loc.assign(1, 1);
  const auto g = build_graph(c, loc, 1);
  ASSERT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.weight(0, 1), 1u);
  for (auto u : g.nodes()) EXPECT_TRUE(loc.located(u));
}

TEST(BuildGraph, MatchesMapOracleAndOrderIndependent) {
  std::mt19937_64 rng(9);
  const auto c = random_corpus(rng, 40, 5000);
  UserLocationMap loc(40);
  for (UserId u = 0; u < 40; ++u)
    if (u % 7 != 3) loc.assign(u, AreaId(u % 5));
  std::map<std::pair<UserId, UserId>, std::uint32_t> oracle;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (loc.located(c.senders[i]) && loc.located(c.receivers[i])) ++oracle[{c.senders[i], c.receivers[i]}];
  for (std::uint32_t mw : {1u, 2u, 3u, 5u}) {
    const auto g = build_graph(c, loc, mw, 1);
    std::size_t expected_edges = 0;
    for (const auto& [k, w] : oracle)
      if (w >= mw) {
        ++expected_edges;
        EXPECT_EQ(g.weight(k.first, k.second), w);
      }
    EXPECT_EQ(g.edge_count(), expected_edges);
    for (const auto& e : g.edges()) EXPECT_GE(e.weight, mw);
    // Threads and message order do not change the result.
    EXPECT_EQ(build_graph(c, loc, mw, 4), g);
    std::vector<std::size_t> perm(c.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MessageCorpus shuffled;
    shuffled.dimensions = c.dimensions;
    for (auto i : perm) shuffled.push(c.record(i));
    EXPECT_EQ(build_graph(shuffled, loc, mw, 3), g);
  }
}

TEST(DimensionGraph, SingleLabeledMessage) {
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows{
      {0, 1, {0.95, 0.1}}, {1, 0, {0.2, 0.1}}, {1, 2, {0.3, 0.1}}};
  const auto c = corpus_of(rows);
  DimensionThresholds t{0.9, {"knowledge", "support"}, {0.9, 0.9}};
  const auto g = build_dimension_graph(c, everyone_at(3), "knowledge", t);
  ASSERT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.weight(0, 1), 1u);
  EXPECT_EQ(g.tag(), "knowledge");
  EXPECT_EQ(g.params().theta, 0.9);
  EXPECT_THROW(build_dimension_graph(c, everyone_at(3), "trust", t), InputError);
}

TEST(DimensionGraph, TraceabilityAndWeightSum) {
  std::mt19937_64 rng(17);
  const auto c = random_corpus(rng, 30, 4000);
  UserLocationMap loc(30);
  for (UserId u = 0; u < 30; ++u)
    if (u % 5) loc.assign(u, AreaId(u % 3));
  const auto t = dimension_thresholds(c, 0.9);
  const auto full_unthresholded = build_graph(c, loc, 1);
  for (std::size_t d = 0; d < 2; ++d) {
    const auto g = build_dimension_graph(c, loc, t.dimensions[d], t, 2);
    std::uint64_t labeled_located = 0;
    std::map<std::pair<UserId, UserId>, std::uint32_t> passing;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c.score(i, d) >= t.theta[d] && loc.located(c.senders[i]) && loc.located(c.receivers[i])) {
        ++labeled_located;
        ++passing[{c.senders[i], c.receivers[i]}];
      }
    EXPECT_EQ(g.total_weight(), labeled_located);
    for (const auto& e : g.edges()) EXPECT_EQ(passing.at({e.src, e.dst}), e.weight);
    for (auto u : g.nodes()) EXPECT_TRUE(full_unthresholded.contains(u));
  }
}

TEST(DimensionGraph, MultiLabelContributesToBoth) {
  std::vector<std::tuple<UserId, UserId, std::vector<double>>> rows{{0, 1, {0.95, 0.95}}};
  const auto c = corpus_of(rows);
  DimensionThresholds t{0.9, {"knowledge", "support"}, {0.9, 0.9}};
  EXPECT_EQ(build_dimension_graph(c, everyone_at(2), "knowledge", t).weight(0, 1), 1u);
  EXPECT_EQ(build_dimension_graph(c, everyone_at(2), "support", t).weight(0, 1), 1u);
}

TEST(CommGraph, RejectsInvalidEdges) {
  EXPECT_THROW(CommGraph({}, {{0, 0, 1}}), InputError);
  EXPECT_THROW(CommGraph({}, {{0, 1, 0}}), InputError);
  EXPECT_THROW(CommGraph({}, {{0, 1, 1}, {0, 1, 2}}), InputError);
  GraphParams p;
  p.min_weight = 3;
  EXPECT_THROW(CommGraph(p, {{0, 1, 2}}), InputError);
}

TEST(EdgeOverlap, IdenticalDisjointEmpty) {
  CommGraph a({}, {{0, 1, 1}, {1, 2, 5}});
  CommGraph b({}, {{2, 3, 1}});
  CommGraph empty;
  EXPECT_EQ(edge_overlap(a, a), std::make_pair(1.0, 1.0));
  EXPECT_EQ(edge_overlap(a, b), std::make_pair(0.0, 0.0));
  EXPECT_EQ(edge_overlap(a, empty), std::make_pair(0.0, 0.0));
  CommGraph c({}, {{0, 1, 9}, {1, 0, 1}});  // direction matters, weight does not
  EXPECT_EQ(edge_overlap(a, c), std::make_pair(0.5, 0.5));
}

TEST(GraphSummary, SingleEdge) {
  CommGraph g({}, {{0, 1, 5}});
  const auto s = graph_summary(g);
  EXPECT_EQ(s.node_count, 2u);
  EXPECT_EQ(s.edge_count, 1u);
  EXPECT_EQ(s.strength_counts, (std::map<std::uint64_t, std::uint64_t>{{5, 1}}));
}

TEST(GraphSummary, StarHubDegree) {
  CommGraph g({}, {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}});
  const auto s = graph_summary(g);
  EXPECT_EQ(s.degree_counts, (std::map<std::uint64_t, std::uint64_t>{{1, 4}, {4, 1}}));
}

TEST(GraphSummary, RandomRecount) {
  std::mt19937_64 rng(23);
  const auto c = random_corpus(rng, 60, 3000);
  const auto g = build_graph(c, everyone_at(60), 1);
  const auto s = graph_summary(g);
  std::map<UserId, std::uint64_t> deg;
  std::map<std::uint64_t, std::uint64_t> strength;
  for (const auto& e : g.edges()) {
    ++deg[e.src];
    ++deg[e.dst];
    ++strength[e.weight];
  }
  std::map<std::uint64_t, std::uint64_t> degree_hist;
  for (auto [u, d] : deg) ++degree_hist[d];
  EXPECT_EQ(s.degree_counts, degree_hist);
  EXPECT_EQ(s.strength_counts, strength);
  EXPECT_EQ(s.node_count, deg.size());
  std::uint64_t binned = 0;
  for (const auto& b : log_binned(s.degree_counts)) {
    EXPECT_EQ(b.high, 2 * b.low);
    std::uint64_t expect = 0;
    for (auto [d, n] : degree_hist)
      if (d >= b.low && d < b.high) expect += n;
    EXPECT_EQ(b.count, expect);
    binned += b.count;
  }
  EXPECT_EQ(binned, s.node_count);
}

TEST(NodeFraction, InUnitInterval) {
  CommGraph full({}, {{0, 1, 4}, {2, 3, 4}});
  CommGraph sub({}, {{0, 1, 1}, {1, 5, 1}});
  EXPECT_DOUBLE_EQ(node_fraction(sub, full), 0.5);
  EXPECT_DOUBLE_EQ(node_fraction(full, full), 1.0);
  EXPECT_DOUBLE_EQ(node_fraction(sub, CommGraph{}), 0.0);
}

TEST(GraphIo, RoundTripLossless) {
  std::mt19937_64 rng(31);
  const auto c = random_corpus(rng, 25, 800);
  UserRegistry users;
  for (int i = 0; i < 25; ++i) users.intern("user," + std::to_string(i));
  const auto t = dimension_thresholds(c, 0.8);
  const auto g = build_dimension_graph(c, everyone_at(25), "support", t);
  std::ostringstream out;
  write_graph(g, users, out);
  std::istringstream in(out.str());
  UserRegistry users2 = users;
  const auto back = read_graph(in, users2);
  EXPECT_EQ(back, g);
  EXPECT_EQ(back.params(), g.params());
}

TEST(GraphIo, MalformedHeader) {
  UserRegistry users;
  std::istringstream in("src,dst,weight\na,b,1\n");
  EXPECT_THROW(read_graph(in, users), InputError);
}
