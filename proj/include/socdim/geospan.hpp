#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "socdim/core.hpp"
#include "socdim/csv.hpp"
#include "socdim/graphs.hpp"
#include "socdim/ingest.hpp"
#include "socdim/parallel.hpp"

namespace socdim {

inline constexpr double kEarthRadiusKm = 6371.0088;  // IUGG mean radius

// Great-circle distance in km between two (lat, lon) points in degrees.
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlon = (lon2 - lon1) * rad;
  const double s = std::sin(dlat / 2), t = std::sin(dlon / 2);
  double h = s * s + std::cos(lat1 * rad) * std::cos(lat2 * rad) * t * t;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

inline double state_distance(AreaId a, AreaId b, const AreaTable& areas) {
  if (a == b) return 0.0;
  const auto &x = areas[a], &y = areas[b];
  return haversine_km(x.latitude, x.longitude, y.latitude, y.longitude);
}

// Centroid distances between every pair of areas.
class AreaDistances {
 public:
  AreaDistances() = default;
  explicit AreaDistances(const AreaTable& areas) : n_(areas.size()), km_(n_ * n_, 0.0) {
    for (std::size_t a = 0; a < n_; ++a)
      for (std::size_t b = 0; b < n_; ++b)
        km_[a * n_ + b] = state_distance(static_cast<AreaId>(a), static_cast<AreaId>(b), areas);
  }
  double operator()(AreaId a, AreaId b) const {
    return km_[static_cast<std::size_t>(a) * n_ + static_cast<std::size_t>(b)];
  }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> km_;
};

// ---------------------------------------------------------------------------
// Distance bins

struct SpanBin {
  double upper_km = 0;  // inclusive; +inf for the last bin
  double median_km = 0;
  std::uint64_t ties = 0;
  std::uint64_t messages = 0;
};

struct SpanBins {
  std::vector<SpanBin> bins;
  std::vector<std::string> warnings;

  std::size_t size() const { return bins.size(); }

  // Lowest bin whose upper bound is >= d, so boundary ties go down.
  std::size_t bin_of(double d) const {
    for (std::size_t b = 0; b + 1 < bins.size(); ++b)
      if (d <= bins[b].upper_km) return b;
    return bins.size() - 1;
  }

  // The 4 finite boundaries for 5 bins (fewer after merging).
  std::vector<double> boundaries() const {
    std::vector<double> out;
    for (std::size_t b = 0; b + 1 < bins.size(); ++b) out.push_back(bins[b].upper_km);
    return out;
  }
};

// Quantile bins over the edge-distance multiset of g under `locations`.
// Boundaries are nearest-rank quantiles; bins left empty by tied boundaries
// are merged into their neighbours and a warning is recorded.
inline SpanBins span_bins(const CommGraph& g, const UserLocationMap& locations,
                          const AreaDistances& distances, std::size_t n_bins = 5) {
  if (g.empty()) throw InputError("span_bins: graph has no edges");
  if (n_bins < 1) throw InputError("span_bins: need at least one bin");
  std::vector<std::pair<double, std::uint32_t>> d;
  d.reserve(g.edge_count());
  for (const auto& e : g.edges()) {
    const AreaId a = locations.area_of(e.src), b = locations.area_of(e.dst);
    if (a == kNoArea || b == kNoArea) throw InputError("span_bins: edge endpoint has no location");
    d.emplace_back(distances(a, b), e.weight);
  }
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();

  std::vector<double> upper;
  for (std::size_t q = 1; q < n_bins; ++q) {
    const double v = d[nearest_rank(double(q) / double(n_bins), n) - 1].first;
    if (upper.empty() || v > upper.back()) upper.push_back(v);
  }
  upper.push_back(std::numeric_limits<double>::infinity());

  // Sorted distances make every bin a contiguous range [start, stop).
  std::vector<std::size_t> stop(upper.size());
  {
    std::size_t i = 0;
    for (std::size_t b = 0; b < upper.size(); ++b) {
      while (i < n && d[i].first <= upper[b]) ++i;
      stop[b] = i;
    }
  }
  SpanBins out;
  std::size_t start = 0;
  for (std::size_t b = 0; b < upper.size(); ++b) {
    if (stop[b] == start) {
      if (b + 1 == upper.size() && !out.bins.empty())
        out.bins.back().upper_km = std::numeric_limits<double>::infinity();
      continue;
    }
    SpanBin bin;
    bin.upper_km = upper[b];
    bin.ties = stop[b] - start;
    for (std::size_t i = start; i < stop[b]; ++i) bin.messages += d[i].second;
    const std::size_t m = start + (bin.ties - 1) / 2;
    bin.median_km = bin.ties % 2 ? d[m].first : 0.5 * (d[m].first + d[m + 1].first);
    out.bins.push_back(bin);
    start = stop[b];
  }
  if (out.bins.size() < n_bins)
    out.warnings.push_back("only " + std::to_string(out.bins.size()) + " of " +
                           std::to_string(n_bins) +
                           " distance bins are non-empty; tied quantiles were merged");
  return out;
}

enum class SpanVariant { kTie, kMessage };

inline const char* to_string(SpanVariant v) { return v == SpanVariant::kTie ? "tie" : "message"; }

struct BinCounts {
  std::vector<std::uint64_t> total;      // |E@l| (ties or messages)
  std::vector<std::uint64_t> dimension;  // |E_d@l|
};

namespace detail {

// bin index for every ordered area pair
inline std::vector<std::uint8_t> pair_bins(const SpanBins& bins, const AreaDistances& dist) {
  const std::size_t n = dist.size();
  std::vector<std::uint8_t> out(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      out[a * n + b] = static_cast<std::uint8_t>(
          bins.bin_of(dist(static_cast<AreaId>(a), static_cast<AreaId>(b))));
  return out;
}

// Counts universe edges and the dimension edges that belong to the universe.
inline void count_bins(const CommGraph& universe, std::span<const CommGraph* const> dims,
                       const UserLocationMap& loc, std::span<const std::uint8_t> pair_bin,
                       std::size_t n_areas, std::size_t n_bins, BinCounts& ties_total,
                       BinCounts& msgs_total, std::vector<BinCounts>& ties_dim,
                       std::vector<BinCounts>& msgs_dim) {
  auto bin = [&](const Edge& e) -> std::size_t {
    const AreaId a = loc.area_of(e.src), b = loc.area_of(e.dst);
    if (a == kNoArea || b == kNoArea) throw InputError("edge endpoint has no location");
    return pair_bin[static_cast<std::size_t>(a) * n_areas + static_cast<std::size_t>(b)];
  };
  ties_total.total.assign(n_bins, 0);
  msgs_total.total.assign(n_bins, 0);
  for (const auto& e : universe.edges()) {
    const auto b = bin(e);
    ++ties_total.total[b];
    msgs_total.total[b] += e.weight;
  }
  ties_dim.assign(dims.size(), {});
  msgs_dim.assign(dims.size(), {});
  for (std::size_t k = 0; k < dims.size(); ++k) {
    ties_dim[k].dimension.assign(n_bins, 0);
    msgs_dim[k].dimension.assign(n_bins, 0);
    for (const auto& e : dims[k]->edges()) {
      if (!universe.weight(e.src, e.dst)) continue;
      const auto b = bin(e);
      ++ties_dim[k].dimension[b];
      msgs_dim[k].dimension[b] += e.weight;
    }
  }
}

}  // namespace detail

// p(d|l) = |E_d@l| / |E@l| per bin, undefined where |E@l| = 0. Only
// dimension edges that are also universe edges are counted.
inline std::vector<std::optional<double>> conditional_probability(
    const CommGraph& g_d, const CommGraph& universe, const SpanBins& bins,
    const UserLocationMap& locations, const AreaDistances& distances, SpanVariant variant) {
  const auto pb = detail::pair_bins(bins, distances);
  BinCounts tt, mt;
  std::vector<BinCounts> td, md;
  const CommGraph* dims[] = {&g_d};
  detail::count_bins(universe, dims, locations, pb, distances.size(), bins.size(), tt, mt, td, md);
  const auto& total = variant == SpanVariant::kTie ? tt.total : mt.total;
  const auto& dim = variant == SpanVariant::kTie ? td[0].dimension : md[0].dimension;
  std::vector<std::optional<double>> p(bins.size());
  for (std::size_t b = 0; b < bins.size(); ++b)
    if (total[b] > 0) p[b] = double(dim[b]) / double(total[b]);
  return p;
}

// ---------------------------------------------------------------------------
// Null model

// Uniform random permutation of the area values over the located users.
inline UserLocationMap null_reshuffle(const UserLocationMap& locations, std::uint64_t seed) {
  std::vector<std::size_t> who;
  std::vector<AreaId> where;
  const auto raw = locations.raw();
  for (std::size_t u = 0; u < raw.size(); ++u)
    if (raw[u] != kNoArea) {
      who.push_back(u);
      where.push_back(raw[u]);
    }
  std::mt19937_64 rng(seed);
  std::shuffle(where.begin(), where.end(), rng);
  UserLocationMap out = locations;
  auto dst = out.raw();
  for (std::size_t k = 0; k < who.size(); ++k) dst[who[k]] = where[k];
  return out;
}

enum class CiMethod {
  kStandardError,  // mean +/- 1.96 sd / sqrt(runs)
  kNullSpread,     // mean +/- 1.96 sd
  kPercentile,     // 2.5th and 97.5th percentiles of the per-run values
};

enum class NullAggregation {
  kMeanOfRatios,  // mean over runs of p / p_null_r - 1
  kRatioOfMeans,  // p / mean_r(p_null_r) - 1
};

struct DeltaPOptions {
  std::size_t runs = 50;
  std::uint64_t seed = 0;
  CiMethod ci = CiMethod::kNullSpread;
  NullAggregation aggregation = NullAggregation::kMeanOfRatios;
  std::size_t threads = 1;
};

struct DeltaPCell {
  std::size_t bin = 0;
  double median_km = 0;
  std::optional<double> p;
  std::optional<double> p_null_mean;
  std::optional<double> delta_p;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::size_t runs = 0;
  bool flagged = false;  // some null run had p_null = 0 in this bin
};

struct DeltaPReport {
  std::string dimension;
  SpanVariant variant = SpanVariant::kTie;
  std::vector<DeltaPCell> cells;
};

namespace detail {

inline double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double sd_of(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / double(v.size() - 1));
}

// Linear-interpolated quantile of sorted values.
inline double quantile_sorted(std::span<const double> v, double q) {
  const double pos = q * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

inline DeltaPCell aggregate_cell(std::size_t bin, double median_km, std::uint64_t dim,
                                 std::uint64_t total, std::span<const double> p_null,
                                 bool any_zero, const DeltaPOptions& opts) {
  DeltaPCell c;
  c.bin = bin;
  c.median_km = median_km;
  c.runs = p_null.size();
  c.flagged = any_zero;
  if (total > 0) c.p = double(dim) / double(total);
  if (!p_null.empty()) c.p_null_mean = mean_of(p_null);
  if (!c.p || any_zero || p_null.size() < 2) return c;

  const double p = *c.p;
  if (opts.aggregation == NullAggregation::kMeanOfRatios) {
    std::vector<double> r;
    r.reserve(p_null.size());
    for (double q : p_null) r.push_back(p / q - 1.0);
    const double m = mean_of(r), sd = sd_of(r, m);
    c.delta_p = m;
    switch (opts.ci) {
      case CiMethod::kStandardError:
        c.ci_low = m - 1.96 * sd / std::sqrt(double(r.size()));
        c.ci_high = m + 1.96 * sd / std::sqrt(double(r.size()));
        break;
      case CiMethod::kNullSpread:
        c.ci_low = m - 1.96 * sd;
        c.ci_high = m + 1.96 * sd;
        break;
      case CiMethod::kPercentile: {
        std::sort(r.begin(), r.end());
        c.ci_low = std::min(m, quantile_sorted(r, 0.025));
        c.ci_high = std::max(m, quantile_sorted(r, 0.975));
        break;
      }
    }
  } else {
    const double m = *c.p_null_mean, sd = sd_of(p_null, m);
    c.delta_p = p / m - 1.0;
    double lo_null = m, hi_null = m;
    switch (opts.ci) {
      case CiMethod::kStandardError:
        lo_null = m - 1.96 * sd / std::sqrt(double(p_null.size()));
        hi_null = m + 1.96 * sd / std::sqrt(double(p_null.size()));
        break;
      case CiMethod::kNullSpread:
        lo_null = m - 1.96 * sd;
        hi_null = m + 1.96 * sd;
        break;
      case CiMethod::kPercentile: {
        std::vector<double> s(p_null.begin(), p_null.end());
        std::sort(s.begin(), s.end());
        lo_null = quantile_sorted(s, 0.025);
        hi_null = quantile_sorted(s, 0.975);
        break;
      }
    }
    // A larger null probability gives a smaller ratio.
    const double a = hi_null > 0 ? p / hi_null - 1.0 : std::numeric_limits<double>::infinity();
    const double b = lo_null > 0 ? p / lo_null - 1.0 : std::numeric_limits<double>::infinity();
    c.ci_low = std::min({a, b, *c.delta_p});
    c.ci_high = std::max({a, b, *c.delta_p});
  }
  return c;
}

}  // namespace detail

// Delta p for several dimension graphs against one binning universe, both
// variants, sharing the same null runs. Reports come out as
// [dim0 tie, dim0 message, dim1 tie, ...]. Bins stay fixed at the real-data
// quantiles; null runs move edges between bins via reshuffled endpoints.
inline std::vector<DeltaPReport> delta_p_all(const CommGraph& universe,
                                             std::span<const CommGraph* const> dims,
                                             const UserLocationMap& locations,
                                             const AreaDistances& distances,
                                             const SpanBins& bins, const DeltaPOptions& opts) {
  if (opts.runs < 2) throw InputError("delta_p needs at least 2 null runs");
  const std::size_t nb = bins.size(), na = distances.size(), nd = dims.size();
  const auto pb = detail::pair_bins(bins, distances);

  BinCounts real_t, real_m;
  std::vector<BinCounts> real_td, real_md;
  detail::count_bins(universe, dims, locations, pb, na, nb, real_t, real_m, real_td, real_md);

  // null_p[run][(k * 2 + variant) * nb + bin], negative when undefined
  std::vector<std::vector<double>> null_p(opts.runs);
  for_each_chunk(opts.runs, resolve_threads(opts.threads),
                 [&](std::size_t, std::size_t begin, std::size_t end) {
                   for (std::size_t r = begin; r < end; ++r) {
                     const auto shuffled =
                         null_reshuffle(locations, derive_seed(opts.seed, "null", r));
                     BinCounts t, m;
                     std::vector<BinCounts> td, md;
                     detail::count_bins(universe, dims, shuffled, pb, na, nb, t, m, td, md);
                     auto& out = null_p[r];
                     out.assign(nd * 2 * nb, -1.0);
                     for (std::size_t k = 0; k < nd; ++k)
                       for (std::size_t b = 0; b < nb; ++b) {
                         if (t.total[b] > 0)
                           out[(k * 2 + 0) * nb + b] = double(td[k].dimension[b]) / double(t.total[b]);
                         if (m.total[b] > 0)
                           out[(k * 2 + 1) * nb + b] = double(md[k].dimension[b]) / double(m.total[b]);
                       }
                   }
                 });

  std::vector<DeltaPReport> reports;
  for (std::size_t k = 0; k < nd; ++k)
    for (int v = 0; v < 2; ++v) {
      DeltaPReport rep;
      rep.dimension = dims[k]->tag();
      rep.variant = v == 0 ? SpanVariant::kTie : SpanVariant::kMessage;
      const auto& real = v == 0 ? real_t : real_m;
      const auto& real_d = v == 0 ? real_td[k] : real_md[k];
      for (std::size_t b = 0; b < nb; ++b) {
        std::vector<double> pn;
        bool zero = false;
        for (std::size_t r = 0; r < opts.runs; ++r) {
          const double q = null_p[r][(k * 2 + static_cast<std::size_t>(v)) * nb + b];
          if (q <= 0.0) zero = true;
          else pn.push_back(q);
        }
        rep.cells.push_back(detail::aggregate_cell(b, bins.bins[b].median_km, real_d.dimension[b],
                                                   real.total[b], pn, zero, opts));
      }
      reports.push_back(std::move(rep));
    }
  return reports;
}

inline DeltaPReport delta_p(const CommGraph& universe, const CommGraph& g_d,
                            const UserLocationMap& locations, const AreaTable& areas,
                            SpanVariant variant, const DeltaPOptions& opts,
                            std::size_t n_bins = 5) {
  const AreaDistances dist(areas);
  const auto bins = span_bins(universe, locations, dist, n_bins);
  const CommGraph* dims[] = {&g_d};
  auto reps = delta_p_all(universe, dims, locations, dist, bins, opts);
  return reps[variant == SpanVariant::kTie ? 0 : 1];
}

// dimension, variant, bin_index, bin_median_km, p, p_null_mean, delta_p, ci_low, ci_high
inline void write_delta_p(std::span<const DeltaPReport> reports, std::ostream& out) {
  CsvWriter w(out);
  w.row("dimension", "variant", "bin_index", "bin_median_km", "p", "p_null_mean", "delta_p",
        "ci_low", "ci_high");
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  for (const auto& r : reports)
    for (const auto& c : r.cells)
      w.row(r.dimension, to_string(r.variant), c.bin, c.median_km, opt(c.p), opt(c.p_null_mean),
            opt(c.delta_p), opt(c.ci_low), opt(c.ci_high));
}

}  // namespace socdim
