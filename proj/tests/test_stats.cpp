#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "socdim/stats.hpp"

using namespace socdim;

namespace {

struct Instance {
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<double>> cols;
  std::vector<double> y;
  std::vector<std::string> names;
};

Instance random_instance(std::mt19937_64& rng, std::size_t n, std::size_t p) {
  std::normal_distribution<double> z(0, 1);
  Instance in;
  in.cols.assign(p, std::vector<double>(n));
  for (std::size_t j = 0; j < p; ++j) in.names.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r;
    double y = 0.5;
    for (std::size_t j = 0; j < p; ++j) {
      const double x = z(rng) * double(j + 1);
      r.push_back(x);
      in.cols[j][i] = x;
      y += (double(j) - 1.5) * x;
    }
    in.rows.push_back(r);
    in.y.push_back(y + z(rng));
  }
  return in;
}

}  // namespace

TEST(MinMax, Examples) {
  EXPECT_EQ(minmax_normalize(std::vector<double>{1, 2, 3}), (std::vector<double>{0, 0.5, 1}));
  EXPECT_EQ(minmax_normalize(std::vector<double>{0, 1, 0.25}), (std::vector<double>{0, 1, 0.25}));
  EXPECT_THROW(minmax_normalize(std::vector<double>{2, 2}), NumericalError);
  EXPECT_THROW(minmax_normalize(std::vector<double>{}), NumericalError);
}

TEST(MinMax, ArgmaxPreservedAndIdempotent) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(20);
    for (auto& x : v) x = u(rng);
    const auto a = minmax_normalize(v);
    EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(), std::max_element(v.begin(), v.end()) - v.begin());
    const auto b = minmax_normalize(a);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  }
}

TEST(Ols, ExactLine) {
  const std::vector<double> x{0, 1, 2, 3, 4}, y{1, 3, 5, 7, 9};
  const auto r = ols_fit(design_matrix({x}), y, {"x"});
  EXPECT_NEAR(r.coef[0], 1.0, 1e-12);
  EXPECT_NEAR(r.coef[1], 2.0, 1e-12);
  EXPECT_NEAR(r.r2_adj, 1.0, 1e-12);
  EXPECT_NEAR(r.rss, 0.0, 1e-20);
  EXPECT_EQ(r.names, (std::vector<std::string>{"intercept", "x"}));
}

TEST(Ols, NormalEquationsOracle) {
  std::mt19937_64 rng(30);
  for (int t = 0; t < 50; ++t) {
    const std::size_t p = 1 + rng() % 5, n = p + 5 + rng() % 40;
    const auto in = random_instance(rng, n, p);
    const auto r = ols_fit(design_matrix(in.cols), in.y, in.names);
    const auto o = oracle::normal_equations(in.rows, in.y);
    for (std::size_t k = 0; k <= p; ++k) {
      EXPECT_NEAR(r.coef[k], o.beta[k], 1e-8);
      EXPECT_NEAR(r.se[k], o.se[k], 1e-8);
    }
    EXPECT_NEAR(r.r2_adj, o.r2_adj, 1e-8);
    EXPECT_NEAR(r.rss, o.rss, 1e-8);
    // Residuals are orthogonal to every column of the design.
    double s = 0;
    for (double e : r.residuals) s += e;
    EXPECT_LT(std::abs(s), 1e-8);
    for (std::size_t j = 0; j < p; ++j) {
      double d = 0;
      for (std::size_t i = 0; i < n; ++i) d += r.residuals[i] * in.cols[j][i];
      EXPECT_LT(std::abs(d), 1e-8);
    }
    for (std::size_t k = 0; k <= p; ++k) {
      EXPECT_NEAR(r.t[k], r.coef[k] / r.se[k], 1e-9);
      EXPECT_GE(r.p[k], 0.0);
      EXPECT_LE(r.p[k], 1.0);
    }
  }
}

TEST(Ols, PValueAgainstKnownT) {
  // t = 2.228 at 10 df is the two-sided 5% critical value.
  EXPECT_NEAR(t_two_sided_p(2.228138851986, 10), 0.05, 1e-9);
}

TEST(Ols, NormalizationKeepsResidualShapeAndR2) {
  std::mt19937_64 rng(44);
  const auto in = random_instance(rng, 40, 3);
  const auto raw = ols_fit(design_matrix(in.cols), in.y, in.names);
  std::vector<std::vector<double>> nc;
  for (const auto& c : in.cols) nc.push_back(minmax_normalize(c));
  const auto ny = minmax_normalize(in.y);
  const auto norm = ols_fit(design_matrix(nc), ny, in.names);
  EXPECT_NEAR(raw.r2, norm.r2, 1e-10);
  EXPECT_NEAR(raw.r2_adj, norm.r2_adj, 1e-10);
  const double scale = *std::max_element(in.y.begin(), in.y.end()) - *std::min_element(in.y.begin(), in.y.end());
  for (std::size_t i = 0; i < 40; ++i) EXPECT_NEAR(raw.residuals[i], norm.residuals[i] * scale, 1e-9);
  for (std::size_t k = 1; k <= 3; ++k) EXPECT_NEAR(raw.t[k], norm.t[k], 1e-8);
}

TEST(Ols, Failures) {
  const std::vector<double> x{1, 2, 3, 4}, y{1, 2, 3, 5};
  EXPECT_THROW(ols_fit(design_matrix({x, x}), y, {"a", "b"}), NumericalError);
  EXPECT_THROW(ols_fit(design_matrix({x}), std::vector<double>{1, 2}, {"a"}), InputError);
  EXPECT_THROW(ols_fit(design_matrix({x}), y, {"a", "b"}), InputError);
  EXPECT_THROW(ols_fit(design_matrix({x, y, x}), y, {"a", "b", "c"}), NumericalError);
  EXPECT_THROW(ols_fit(design_matrix({x}), std::vector<double>{2, 2, 2, 2}, {"a"}), NumericalError);
}

TEST(DurbinWatson, HandCases) {
  EXPECT_EQ(*durbin_watson(std::vector<double>{1, -1, 1, -1}), 3.0);
  EXPECT_EQ(*durbin_watson(std::vector<double>{1, 1, 1, 1}), 0.0);
  EXPECT_FALSE(durbin_watson(std::vector<double>{0, 0, 0}));
  EXPECT_THROW(durbin_watson(std::vector<double>{1}), NumericalError);
}

TEST(DurbinWatson, IidNoiseNearTwo) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0, 1);
  std::vector<double> e(100000);
  for (auto& x : e) x = z(rng);
  EXPECT_NEAR(*durbin_watson(e), 2.0, 0.03);
}

TEST(Ks, IdenticalAndDisjoint) {
  const std::vector<double> a{1, 2, 2, 5}, b{6, 7};
  const auto same = ks_two_sample(a, a);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_EQ(ks_two_sample(a, b).statistic, 1.0);
  EXPECT_THROW(ks_two_sample(a, std::vector<double>{}), InputError);
}

TEST(Ks, BruteForceScanSymmetryAndTransform) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<int> len(1, 60), val(1, 15);
    std::vector<double> a(len(rng)), b(len(rng));
    for (auto& x : a) x = val(rng);
    for (auto& x : b) x = val(rng) + (t % 3);
    const auto r = ks_two_sample(a, b);
    EXPECT_EQ(r.statistic, oracle::ks_brute(a, b));
    EXPECT_EQ(r.statistic, ks_two_sample(b, a).statistic);
    std::vector<double> la, lb;
    for (double x : a) la.push_back(std::log(x));
    for (double x : b) lb.push_back(std::log(x));
    EXPECT_EQ(ks_two_sample(la, lb).statistic, r.statistic);
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
  }
}

TEST(Ks, KolmogorovSurvivalReference) {
  // Q_KS(1.36) is close to the familiar 5% point.
  EXPECT_NEAR(kolmogorov_survival(1.3580986393225507), 0.05, 1e-6);
  EXPECT_EQ(kolmogorov_survival(0), 1.0);
  EXPECT_LT(kolmogorov_survival(10), 1e-80);
}

TEST(Spearman, TiedFixture) {
  const std::vector<double> a{1, 2, 2, 3, 4}, b{2, 1, 3, 3, 5};
  const auto m = spearman_matrix({a, b});
  EXPECT_EQ(average_ranks(a), (std::vector<double>{1, 2.5, 2.5, 4, 5}));
  EXPECT_NEAR(*m[0][1], 7.25 / 9.5, 1e-15);
  EXPECT_EQ(m[0][1], m[1][0]);
  EXPECT_EQ(*m[0][0], 1.0);
}

TEST(Spearman, MonotoneTransformAndConstant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> a(50), b, c(50, 0.3);
  for (auto& x : a) x = u(rng);
  for (double x : a) b.push_back(std::exp(3 * x));
  const auto m = spearman_matrix({a, b, c});
  EXPECT_NEAR(*m[0][1], 1.0, 1e-15);
  EXPECT_FALSE(m[0][2]);
  EXPECT_FALSE(m[2][2]);
}

TEST(StepAic, RemovesNoiseBesidePerfectPredictor) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0, 1);
  std::vector<double> x(40), noise(40), y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x[i] = z(rng);
    noise[i] = z(rng);
    y[i] = 3 * x[i] + 1 + 1e-6 * z(rng);
  }
  const auto r = step_aic_backward(design_matrix({x, noise}), y, {"x", "noise"}, {});
  EXPECT_EQ(r.selected, std::vector<std::string>{"x"});
  EXPECT_EQ(r.removed, std::vector<std::string>{"noise"});
  EXPECT_LE(r.selected_aic, r.full_aic);
  EXPECT_NEAR(r.selected_aic, r.model.aic(), 1e-12);
}

TEST(StepAic, AllForcedReturnsFullModel) {
  std::mt19937_64 rng(6);
  const auto in = random_instance(rng, 30, 3);
  const auto X = design_matrix(in.cols);
  const auto r = step_aic_backward(X, in.y, in.names, in.names);
  const auto full = ols_fit(X, in.y, in.names);
  EXPECT_EQ(r.selected, in.names);
  EXPECT_TRUE(r.removed.empty());
  EXPECT_EQ(r.model.coef, full.coef);
  EXPECT_EQ(r.full_aic, r.selected_aic);
  EXPECT_THROW(step_aic_backward(X, in.y, in.names, {"zzz"}), InputError);
}

TEST(StepAic, NeverWorseThanFull) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_instance(rng, 25, 5);
    const auto r = step_aic_backward(design_matrix(in.cols), in.y, in.names, {"x0"});
    EXPECT_LE(r.selected_aic, r.full_aic);
    EXPECT_NE(std::find(r.selected.begin(), r.selected.end(), "x0"), r.selected.end());
    EXPECT_EQ(r.selected.size() + r.removed.size(), 5u);
  }
}

TEST(Report, TableAndCsv) {
  const std::vector<double> x{0, 1, 2, 3, 4, 5}, y{1, 3.1, 4.9, 7.2, 9, 10.8};
  const auto r = ols_fit(design_matrix({x}), y, {"x"});
  std::ostringstream t;
  write_report_table(r, "Line", t);
  EXPECT_NE(t.str().find("Line\n"), std::string::npos);
  EXPECT_NE(t.str().find("intercept"), std::string::npos);
  std::ostringstream c;
  CsvWriter w(c);
  write_report_csv_header(w);
  write_report_csv_rows(r, "m", w);
  const std::string csv = c.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(format_fixed(-0.00001, 3), "0.000");
}
