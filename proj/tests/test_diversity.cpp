#include <gtest/gtest.h>

#include <map>
#include <random>

#include "oracles.hpp"
#include "socdim/diversity.hpp"

using namespace socdim;

namespace {

UserLocationMap located(std::initializer_list<std::pair<UserId, AreaId>> xs, std::size_t n) {
  UserLocationMap m(n);
  for (auto [u, a] : xs) m.assign(u, a);
  return m;
}

CommGraph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t edges) {
  std::uniform_int_distribution<UserId> pick(0, UserId(n - 1));
  std::uniform_int_distribution<std::uint32_t> w(1, 20);
  std::map<std::pair<UserId, UserId>, std::uint32_t> m;
  for (std::size_t k = 0; k < edges; ++k) {
    UserId a = pick(rng), b = pick(rng);
    if (a != b) m[{a, b}] = w(rng);
  }
  std::vector<Edge> es;
  for (auto [k, v] : m) es.push_back({k.first, k.second, v});
  return CommGraph({}, es);
}

}  // namespace

TEST(ContactProportions, Examples) {
  CommGraph g({}, {{0, 1, 3}, {0, 2, 1}, {3, 1, 7}});
  EXPECT_EQ(*contact_proportions(g, 0), (std::vector<double>{0.75, 0.25}));
  EXPECT_EQ(*contact_proportions(g, 3), std::vector<double>{1.0});
  EXPECT_FALSE(contact_proportions(g, 1));
  EXPECT_FALSE(contact_proportions(g, 99));
}

TEST(ContactProportions, SumsToOne) {
  std::mt19937_64 rng(3);
  const auto g = random_graph(rng, 20, 150);
  for (auto u : g.nodes()) {
    const auto p = contact_proportions(g, u);
    if (!p) continue;
    double s = 0;
    for (double x : *p) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SocialDiversity, Examples) {
  CommGraph g({}, {{0, 1, 2}, {0, 2, 2}, {0, 3, 2}, {0, 4, 2}, {5, 1, 9}, {6, 1, 3}, {6, 2, 1}});
  EXPECT_EQ(*social_diversity(g, 0), 1.0);
  EXPECT_EQ(*social_diversity(g, 5), 0.0);
  EXPECT_NEAR(*social_diversity(g, 6), 0.8112781244591328639, 1e-12);
  EXPECT_FALSE(social_diversity(g, 1));
}

TEST(SocialDiversity, UniformOnlyWhenExactlyEqual) {
  CommGraph g({}, {{0, 1, 1000}, {0, 2, 1001}});
  const double d = *social_diversity(g, 0);
  EXPECT_LT(d, 1.0);
  EXPECT_GT(d, 0.999);
}

TEST(AreaProportions, Examples) {
  CommGraph g({}, {{0, 1, 2}, {0, 2, 3}, {3, 1, 1}, {3, 4, 1}});
  const auto loc = located({{0, 0}, {1, 5}, {2, 5}, {3, 0}, {4, 2}}, 5);
  const auto same = *area_proportions(g, 0, loc);
  ASSERT_EQ(same.size(), 1u);
  EXPECT_EQ(same[0], (std::pair<AreaId, double>{5, 1.0}));
  const auto split = *area_proportions(g, 3, loc);
  EXPECT_EQ(split, (std::vector<std::pair<AreaId, double>>{{2, 0.5}, {5, 0.5}}));
}

TEST(AreaProportions, UnlocatedNeighborThrows) {
  CommGraph g({}, {{0, 1, 2}});
  const auto loc = located({{0, 0}}, 2);
  EXPECT_THROW(area_proportions(g, 0, loc), InputError);
}

TEST(AreaProportions, GroupByOracle) {
  std::mt19937_64 rng(8);
  const auto g = random_graph(rng, 20, 120);
  UserLocationMap loc(20);
  for (UserId u = 0; u < 20; ++u) loc.assign(u, AreaId(u % 6));
  for (auto u : g.nodes()) {
    const auto p = area_proportions(g, u, loc);
    if (!p) continue;
    std::map<AreaId, double> mass;
    double total = 0;
    for (const auto& e : g.edges())
      if (e.src == u) {
        mass[loc.area_of(e.dst)] += e.weight;
        total += e.weight;
      }
    ASSERT_EQ(p->size(), mass.size());
    for (const auto& [a, v] : *p) EXPECT_NEAR(v, mass.at(a) / total, 1e-12);
  }
}

TEST(SpatialDiversity, Examples) {
  std::vector<Edge> one, all;
  UserLocationMap loc(100);
  loc.assign(0, 0);
  for (UserId j = 1; j <= 44; ++j) {
    loc.assign(j, AreaId(j - 1));
    all.push_back({0, j, 3});
  }
  loc.assign(50, 7);
  for (UserId j = 1; j <= 5; ++j) one.push_back({50, j == 1 ? 60 : UserId(60 + j), 1});
  for (UserId j = 60; j < 66; ++j) loc.assign(j, 7);
  EXPECT_EQ(*spatial_diversity(CommGraph({}, one), 50, loc, 44), 0.0);
  EXPECT_EQ(*spatial_diversity(CommGraph({}, all), 0, loc, 44), 1.0);

  CommGraph half({}, {{0, 1, 1}, {0, 2, 1}});
  EXPECT_NEAR(*spatial_diversity(half, 0, loc, 4), 0.5, 1e-15);
  EXPECT_THROW(spatial_diversity(half, 0, loc, 1), InputError);
  EXPECT_THROW(spatial_diversity(CommGraph({}, all), 0, loc, 10), InputError);
}

TEST(UserDiversity, BruteForceOracleOnSmallGraphs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 19;
    const std::size_t areas = 2 + rng() % 6;
    const auto g = random_graph(rng, n, rng() % (3 * n));
    UserLocationMap loc(n);
    for (UserId u = 0; u < n; ++u) loc.assign(u, AreaId(rng() % areas));
    DiversityOptions opts;
    opts.area_count = areas;
    const auto users = user_diversity(g, loc, opts, 1 + trial % 3);
    std::size_t senders = 0;
    for (auto u : g.nodes()) senders += g.out_edges(u).empty() ? 0 : 1;
    ASSERT_EQ(users.size(), senders);
    for (const auto& d : users) {
      std::vector<double> w;
      std::map<AreaId, double> by_area;
      for (const auto& e : g.edges())
        if (e.src == d.user) {
          w.push_back(e.weight);
          by_area[loc.area_of(e.dst)] += e.weight;
        }
      std::vector<double> am;
      for (auto [a, v] : by_area) am.push_back(v);
      EXPECT_EQ(d.contacts, w.size());
      EXPECT_NEAR(d.social, oracle::normalized_entropy(w, double(w.size())), 1e-12);
      EXPECT_NEAR(d.spatial, oracle::normalized_entropy(am, double(areas)), 1e-12);
      EXPECT_GE(d.social, 0.0);
      EXPECT_LE(d.social, 1.0);
      EXPECT_GE(d.spatial, 0.0);
      EXPECT_LE(d.spatial, 1.0);
      if (w.size() == 1) {
        EXPECT_EQ(d.social, 0.0);
      }
    }
  }
}

TEST(UserDiversity, ScalingInvariance) {
  std::mt19937_64 rng(5);
  const auto g = random_graph(rng, 15, 60);
  std::vector<Edge> scaled;
  for (auto e : g.edges()) scaled.push_back({e.src, e.dst, e.weight * 7});
  UserLocationMap loc(15);
  for (UserId u = 0; u < 15; ++u) loc.assign(u, AreaId(u % 4));
  DiversityOptions opts;
  opts.area_count = 4;
  const auto a = user_diversity(g, loc, opts);
  const auto b = user_diversity(CommGraph({}, scaled), loc, opts);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].social, b[i].social, 1e-12);
    EXPECT_NEAR(a[i].spatial, b[i].spatial, 1e-12);
  }
}

TEST(UserDiversity, DistinctAreasWithAEqualKGivesEqualScores) {
  CommGraph g({}, {{0, 1, 5}, {0, 2, 1}, {0, 3, 2}});
  const auto loc = located({{0, 0}, {1, 0}, {2, 1}, {3, 2}}, 4);
  DiversityOptions opts;
  opts.area_count = 3;
  const auto d = user_diversity(g, loc, opts);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NEAR(d[0].social, d[0].spatial, 1e-15);
}

TEST(UserDiversity, UnionDirectionAndSingleContactExclusion) {
  CommGraph g({}, {{0, 1, 2}, {1, 0, 2}, {2, 0, 4}});
  const auto loc = located({{0, 0}, {1, 1}, {2, 2}}, 3);
  DiversityOptions opts;
  opts.area_count = 3;
  opts.direction = ContactDirection::kUnion;
  const auto u = user_diversity(g, loc, opts);
  ASSERT_EQ(u.size(), 3u);
  EXPECT_EQ(u[0].contacts, 2u);
  EXPECT_EQ(u[0].social, 1.0);  // 4 to user 1 and 4 to user 2
  EXPECT_EQ(u[2].contacts, 1u);
  opts.exclude_single_contact = true;
  const auto v = user_diversity(g, loc, opts);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].user, 0u);
  opts.direction = ContactDirection::kOut;
  EXPECT_TRUE(user_diversity(g, loc, opts).empty());
}

TEST(AreaDiversity, Means) {
  const auto loc = located({{0, 3}, {1, 4}, {2, 4}}, 4);
  std::vector<UserDiversity> users{{0, 0.1, 0.7, 1}, {1, 0.2, 0.2, 2}, {2, 0.4, 0.8, 2}, {3, 1.0, 1.0, 2}};
  const auto s = area_diversity(users, loc, DiversityKind::kSpatial);
  EXPECT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s.at(3), 0.7);
  EXPECT_DOUBLE_EQ(s.at(4), 0.5);
  const auto agg = aggregate_areas(users, loc);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_DOUBLE_EQ(agg[1].social, 0.30000000000000004);
  EXPECT_EQ(agg[1].users, 2u);
}

TEST(AreaDiversity, GroupByOracleAndBounds) {
  std::mt19937_64 rng(77);
  const auto g = random_graph(rng, 20, 80);
  UserLocationMap loc(20);
  for (UserId u = 0; u < 20; ++u) loc.assign(u, AreaId(u % 5));
  DiversityOptions opts;
  opts.area_count = 5;
  const auto t = diversity_table(g, loc, opts);
  std::map<AreaId, std::vector<double>> groups;
  for (const auto& u : t.users) groups[loc.area_of(u.user)].push_back(u.social);
  ASSERT_EQ(t.areas.size(), groups.size());
  for (const auto& a : t.areas) {
    const auto& v = groups.at(a.area);
    double s = 0;
    for (double x : v) s += x;
    EXPECT_NEAR(a.social, s / double(v.size()), 1e-12);
    EXPECT_GE(a.social, *std::min_element(v.begin(), v.end()) - 1e-15);
    EXPECT_LE(a.social, *std::max_element(v.begin(), v.end()) + 1e-15);
    EXPECT_EQ(t.area(a.area), &a);
  }
}

TEST(FeatureNames, Parse) {
  EXPECT_TRUE(parse_feature("density").density);
  const auto f = parse_feature("full.social");
  EXPECT_EQ(f.tag, "full");
  EXPECT_EQ(f.kind, DiversityKind::kSocial);
  EXPECT_EQ(parse_feature("a.b.spatial").tag, "a.b");
  EXPECT_THROW(parse_feature("knowledge"), InputError);
  EXPECT_THROW(parse_feature("knowledge.entropy"), InputError);
  EXPECT_THROW(parse_feature(".social"), InputError);
}
