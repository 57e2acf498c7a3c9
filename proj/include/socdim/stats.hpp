#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "socdim/core.hpp"
#include "socdim/csv.hpp"

namespace socdim {

// (x - min) / (max - min); throws on a constant vector.
inline std::vector<double> minmax_normalize(std::span<const double> v) {
  if (v.empty()) throw NumericalError("minmax_normalize: empty vector");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double min = *lo, max = *hi;
  if (!(max > min)) throw NumericalError("minmax_normalize: constant vector");
  std::vector<double> out;
  out.reserve(v.size());
  for (double x : v) out.push_back((x - min) / (max - min));
  return out;
}

// ---------------------------------------------------------------------------
// Ordinary least squares

struct RegressionReport {
  std::vector<std::string> names;  // "intercept" first, then features
  std::vector<double> coef;
  std::vector<double> se;
  std::vector<double> t;
  std::vector<double> p;
  std::size_t n = 0;
  std::size_t features = 0;  // p, excluding the intercept
  double rss = 0;
  double tss = 0;
  double r2 = 0;
  double r2_adj = 0;
  std::optional<double> durbin_watson;  // undefined for all-zero residuals
  std::vector<double> residuals;
  std::vector<double> fitted;

  // Gaussian AIC counting the intercept.
  double aic() const {
    return double(n) * std::log(rss / double(n)) + 2.0 * double(features + 1);
  }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }
};

inline std::optional<double> durbin_watson(std::span<const double> e) {
  if (e.size() < 2) throw NumericalError("durbin_watson needs at least 2 residuals");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    den += e[i] * e[i];
    if (i > 0) num += (e[i] - e[i - 1]) * (e[i] - e[i - 1]);
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

inline double t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// Fits y = a + X b by column-pivoted Householder QR of [1 X].
// X is n x p without the intercept column; names has p entries.
inline RegressionReport ols_fit(const Eigen::MatrixXd& X, std::span<const double> y,
                                std::vector<std::string> names) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  if (y.size() != n) throw InputError("ols_fit: y has " + std::to_string(y.size()) +
                                      " rows, X has " + std::to_string(n));
  if (names.size() != p) throw InputError("ols_fit: feature name count does not match X");
  if (n <= p + 1) throw NumericalError("ols_fit: need n > p + 1 (n=" + std::to_string(n) +
                                       ", p=" + std::to_string(p) + ")");

  Eigen::MatrixXd A(n, p + 1);
  A.col(0).setOnes();
  A.rightCols(p) = X;
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n));

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (static_cast<std::size_t>(qr.rank()) < p + 1)
    throw NumericalError("ols_fit: design matrix is rank deficient");
  const Eigen::VectorXd beta = qr.solve(yv);
  const Eigen::VectorXd fitted = A * beta;
  const Eigen::VectorXd resid = yv - fitted;

  RegressionReport r;
  r.n = n;
  r.features = p;
  r.names.reserve(p + 1);
  r.names.push_back("intercept");
  for (auto& s : names) r.names.push_back(std::move(s));
  r.coef.assign(beta.data(), beta.data() + beta.size());
  r.residuals.assign(resid.data(), resid.data() + resid.size());
  r.fitted.assign(fitted.data(), fitted.data() + fitted.size());
  r.rss = resid.squaredNorm();
  const double ybar = yv.mean();
  r.tss = (yv.array() - ybar).square().sum();
  if (!(r.tss > 0)) throw NumericalError("ols_fit: dependent variable is constant");
  r.r2 = 1.0 - r.rss / r.tss;
  const double df = double(n - p - 1);
  r.r2_adj = 1.0 - (1.0 - r.r2) * double(n - 1) / df;
  r.durbin_watson = durbin_watson(r.residuals);

  // (A^T A)^-1 = P R^-1 R^-T P^T with A P = Q R.
  const auto k = static_cast<Eigen::Index>(p + 1);
  const Eigen::MatrixXd R =
      qr.matrixQR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv =
      R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd cov_perm = Rinv * Rinv.transpose();
  const auto& perm = qr.colsPermutation();
  const Eigen::MatrixXd cov = perm * cov_perm * perm.transpose();
  const double sigma2 = r.rss / df;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double se = std::sqrt(std::max(0.0, sigma2 * cov(j, j)));
    r.se.push_back(se);
    const double t = se > 0 ? r.coef[static_cast<std::size_t>(j)] / se
                            : (r.coef[static_cast<std::size_t>(j)] == 0
                                   ? 0.0
                                   : std::copysign(std::numeric_limits<double>::infinity(),
                                                   r.coef[static_cast<std::size_t>(j)]));
    r.t.push_back(t);
    r.p.push_back(t_two_sided_p(t, df));
  }
  return r;
}

// Builds the n x p design matrix from feature columns.
inline Eigen::MatrixXd design_matrix(const std::vector<std::vector<double>>& columns) {
  if (columns.empty()) return Eigen::MatrixXd(0, 0);
  const auto n = static_cast<Eigen::Index>(columns.front().size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (static_cast<Eigen::Index>(columns[j].size()) != n)
      throw InputError("design_matrix: ragged columns");
    for (Eigen::Index i = 0; i < n; ++i)
      X(i, static_cast<Eigen::Index>(j)) = columns[j][static_cast<std::size_t>(i)];
  }
  return X;
}

// ---------------------------------------------------------------------------
// Two-sample Kolmogorov-Smirnov

struct KSResult {
  double statistic = 0;
  double p_value = 1;
};

// P(K > lambda) for the Kolmogorov distribution.
inline double kolmogorov_survival(double lambda) {
  if (!(lambda > 0)) return 1.0;
  constexpr double pi = std::numbers::pi;
  if (lambda < 1.18) {
    // Jacobi theta form converges quickly for small lambda.
    const double w = -pi * pi / (8.0 * lambda * lambda);
    double cdf = 0;
    for (int k = 1; k <= 50; ++k) {
      const double term = std::exp(w * double((2 * k - 1) * (2 * k - 1)));
      cdf += term;
      if (term < 1e-17 * cdf) break;
    }
    cdf *= std::sqrt(2.0 * pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double q = 0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * double(k) * double(k) * lambda * lambda);
    q += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-17) break;
  }
  return std::clamp(q, 0.0, 1.0);
}

// Exact sup |F_a - F_b| over the merged sample; asymptotic p-value with
// effective size n m / (n + m).
inline KSResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InputError("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = double(x.size()), m = double(y.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(double(i) / n - double(j) / m));
  }
  KSResult r;
  r.statistic = d;
  const double ne = n * m / (n + m);
  r.p_value = kolmogorov_survival(std::sqrt(ne) * d);
  return r;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation

// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double avg = 0.5 * double(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[idx[k]] = avg;
    i = j;
  }
  return rank;
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Symmetric matrix of Spearman correlations between columns; entries
// involving a constant column are undefined.
inline std::vector<std::vector<std::optional<double>>> spearman_matrix(
    const std::vector<std::vector<double>>& columns) {
  const std::size_t k = columns.size();
  for (const auto& c : columns)
    if (c.size() < 2 || c.size() != columns.front().size())
      throw InputError("spearman_matrix: need >= 2 rows in equal-length columns");
  std::vector<std::vector<double>> ranks;
  for (const auto& c : columns) ranks.push_back(average_ranks(c));
  std::vector<std::vector<std::optional<double>>> m(k, std::vector<std::optional<double>>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      auto r = pearson(ranks[i], ranks[j]);
      if (r && i == j) r = 1.0;
      m[i][j] = m[j][i] = r;
    }
  return m;
}

// ---------------------------------------------------------------------------
// Backward stepwise AIC selection

struct StepAicResult {
  RegressionReport model;
  std::vector<std::string> selected;
  std::vector<std::string> removed;  // in removal order
  double full_aic = 0;
  double selected_aic = 0;
};

inline double gaussian_aic(double rss, std::size_t n, std::size_t features) {
  return double(n) * std::log(rss / double(n)) + 2.0 * double(features + 1);
}

// Drops, one at a time, the non-forced feature whose removal lowers AIC the
// most; stops when no single removal lowers it. Exact ties go to the lower
// column index.
inline StepAicResult step_aic_backward(const Eigen::MatrixXd& X, std::span<const double> y,
                                       const std::vector<std::string>& names,
                                       const std::vector<std::string>& forced) {
  for (const auto& f : forced)
    if (std::find(names.begin(), names.end(), f) == names.end())
      throw InputError("step_aic_backward: forced feature '" + f + "' not among features");
  std::vector<std::size_t> active(names.size());
  std::iota(active.begin(), active.end(), 0);

  auto fit = [&](const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd sub(X.rows(), static_cast<Eigen::Index>(cols.size()));
    std::vector<std::string> nm;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      sub.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(cols[j]));
      nm.push_back(names[cols[j]]);
    }
    return ols_fit(sub, y, nm);
  };
  auto is_forced = [&](std::size_t c) {
    return std::find(forced.begin(), forced.end(), names[c]) != forced.end();
  };

  StepAicResult out;
  out.model = fit(active);
  out.full_aic = out.model.aic();
  double current = out.full_aic;
  for (;;) {
    std::optional<std::size_t> best;
    double best_aic = current;
    RegressionReport best_model;
    for (std::size_t k = 0; k < active.size(); ++k) {
      if (is_forced(active[k])) continue;
      auto cols = active;
      cols.erase(cols.begin() + static_cast<std::ptrdiff_t>(k));
      auto m = fit(cols);
      const double a = m.aic();
      if (a < best_aic) {
        best_aic = a;
        best = k;
        best_model = std::move(m);
      }
    }
    if (!best) break;
    out.removed.push_back(names[active[*best]]);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(*best));
    out.model = std::move(best_model);
    current = best_aic;
  }
  out.selected_aic = current;
  for (auto c : active) out.selected.push_back(names[c]);
  return out;
}

// ---------------------------------------------------------------------------
// Report formatting

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.rfind("-0.", 0) == 0 && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

// Table layout: feature, beta, SE, p, then the adjusted R^2 and DW footer.
// p-values below 1e-12 print as 0.000.
inline void write_report_table(const RegressionReport& r, std::string_view title,
                               std::ostream& out) {
  out << title << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %10s %8s %8s\n", "Feature", "beta", "SE", "p");
  out << line;
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const std::string p = r.p[i] < 1e-12 ? "0.000" : format_fixed(r.p[i], 3);
    std::snprintf(line, sizeof line, "%-28s %10s %8s %8s\n", r.names[i].c_str(),
                  format_fixed(r.coef[i], 4).c_str(), format_fixed(r.se[i], 3).c_str(), p.c_str());
    out << line;
  }
  out << "Durbin-Watson stat. = "
      << (r.durbin_watson ? format_fixed(*r.durbin_watson, 3) : std::string("undefined"))
      << "    R2_adj = " << format_fixed(r.r2_adj, 2) << "    n = " << r.n << "\n\n";
}

// model, term, beta, se, t, p, r2, r2_adj, durbin_watson, n, aic
inline void write_report_csv_header(CsvWriter& w) {
  w.row("model", "term", "beta", "se", "t", "p", "r2", "r2_adj", "durbin_watson", "n", "aic");
}

inline void write_report_csv_rows(const RegressionReport& r, std::string_view model, CsvWriter& w) {
  const std::string dw = r.durbin_watson ? format_double(*r.durbin_watson) : "NA";
  for (std::size_t i = 0; i < r.names.size(); ++i)
    w.row(model, r.names[i], r.coef[i], r.se[i], r.t[i], r.p[i], r.r2, r.r2_adj, dw, r.n, r.aic());
}

}  // namespace socdim
