#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "socdim/core.hpp"
#include "socdim/diversity.hpp"
#include "socdim/geospan.hpp"
#include "socdim/graphs.hpp"
#include "socdim/ingest.hpp"

namespace socdim {

struct SynthDimension {
  std::string name;
  double base_rate = 0.1;  // share of messages labeled with this dimension
  double coupling = 0.0;   // > 0 prefers long ties, < 0 prefers local ties
};

// y_a = intercept + sum beta_f * feature_f(a) + Normal(0, sigma), written
// into gdp_per_capita. Features use the names accepted by parse_feature and
// are measured on the generated corpus itself.
struct SynthOutcome {
  double intercept = 0.0;
  std::vector<std::pair<std::string, double>> betas;
  double sigma = 1.0;
  std::uint32_t full_min_weight = 1;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t areas = 44;
  double grid_spacing_deg = 3.0;
  double origin_lat = 28.0;
  double origin_lon = -118.0;
  std::size_t users_per_area = 200;
  std::size_t users_per_area_step = 20;  // area a holds users_per_area + (a % 5) * step
  double population_per_user = 1000.0;
  double contacts_per_user = 6.0;        // expected contact draws per sender
  double messages_per_contact = 2.0;     // expected messages per contact draw
  double local_fraction = 0.0;           // chance a contact is drawn from the sender's area
  double coupling_scale_km = 300.0;      // label weight (1 + km / scale)^coupling
  double heterogeneity = 0.0;            // log-spread of per-(area, dimension) label propensity
  std::vector<SynthDimension> dimensions{{"knowledge", 0.1, 0.0}, {"support", 0.1, 0.0}};
  SynthOutcome outcome;
  std::int64_t start_time = 1483228800;

  std::size_t users_in_area(std::size_t a) const {
    return users_per_area + (a % 5) * users_per_area_step;
  }
  double expected_messages_per_user() const { return contacts_per_user * messages_per_contact; }
};

// Many same-area ties, so the first distance bin is dominated by zero spans.
inline SynthConfig zero_distance_heavy(SynthConfig cfg = {}) {
  cfg.local_fraction = 0.4;
  return cfg;
}

struct SynthCorpus {
  UserRegistry users;
  MessageCorpus messages;
  UserLocationMap locations;
  AreaTable areas;
  std::vector<GeoActivityRecord> activity;
  std::vector<std::vector<char>> labels;  // [dimension][message]
  std::vector<std::size_t> labeled;       // per dimension
  std::vector<double> alphas;             // percentile that reproduces each label set
  std::map<std::string, std::vector<std::optional<double>>> features;  // per area
};

namespace detail {

inline void validate(const SynthConfig& c) {
  if (c.areas < 2) throw InputError("synth: need at least 2 areas");
  if (c.users_per_area < 2) throw InputError("synth: need at least 2 users per area");
  if (!(c.contacts_per_user >= 1.0) || !(c.messages_per_contact >= 1.0))
    throw InputError("synth: expected degree and messages per contact must be >= 1");
  if (!(c.local_fraction >= 0.0 && c.local_fraction <= 1.0))
    throw InputError("synth: local_fraction must be in [0,1]");
  if (!(c.coupling_scale_km > 0)) throw InputError("synth: coupling_scale_km must be > 0");
  if (!(c.outcome.sigma >= 0)) throw InputError("synth: sigma must be >= 0");
  if (c.dimensions.empty()) throw InputError("synth: need at least one dimension");
  for (const auto& d : c.dimensions)
    if (!(d.base_rate > 0.0 && d.base_rate < 1.0))
      throw InputError("synth: base rate of " + d.name + " must be in (0,1)");
}

inline std::string padded(const char* prefix, std::size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, v);
  return buf;
}

}  // namespace detail

inline SynthCorpus generate_corpus(const SynthConfig& cfg) {
  detail::validate(cfg);
  SynthCorpus out;
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Areas on a square grid.
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(double(cfg.areas))));
  std::uniform_real_distribution<double> density(10.0, 500.0);
  for (std::size_t a = 0; a < cfg.areas; ++a) {
    Area area;
    area.code = detail::padded("S", a, 2);
    area.latitude = cfg.origin_lat + double(a / cols) * cfg.grid_spacing_deg;
    area.longitude = cfg.origin_lon + double(a % cols) * cfg.grid_spacing_deg;
    area.population = double(cfg.users_in_area(a)) * cfg.population_per_user;
    area.density = density(rng);
    out.areas.add(area);
  }
  const AreaDistances dist(out.areas);

  // Users, their locations and pure geo-salient activity.
  std::vector<std::vector<UserId>> members(cfg.areas);
  std::vector<UserId> everyone;
  for (std::size_t a = 0; a < cfg.areas; ++a)
    for (std::size_t k = 0; k < cfg.users_in_area(a); ++k) {
      const UserId u = out.users.intern(detail::padded(("u" + out.areas[AreaId(a)].code + "_").c_str(), k, 4));
      out.locations.assign(u, static_cast<AreaId>(a));
      out.activity.push_back({u, static_cast<AreaId>(a), 3 + k % 4});
      members[a].push_back(u);
      everyone.push_back(u);
    }

  const std::size_t nd = cfg.dimensions.size();
  std::vector<double> propensity(cfg.areas * nd, 1.0);
  for (auto& p : propensity) p = std::exp(cfg.heterogeneity * (2.0 * unit(rng) - 1.0));

  // Messages: contacts drawn per sender, several messages per contact.
  out.messages.dimensions.clear();
  for (const auto& d : cfg.dimensions) out.messages.dimensions.push_back(d.name);
  std::poisson_distribution<int> extra_contacts(cfg.contacts_per_user - 1.0);
  std::poisson_distribution<int> extra_messages(cfg.messages_per_contact - 1.0);
  std::vector<double> span_km;
  std::vector<std::size_t> sender_area;
  std::vector<std::pair<UserId, UserId>> pairs;
  for (const UserId u : everyone) {
    const auto a = static_cast<std::size_t>(out.locations.area_of(u));
    const int k = 1 + extra_contacts(rng);
    for (int c = 0; c < k; ++c) {
      const auto& pool = unit(rng) < cfg.local_fraction ? members[a] : everyone;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      UserId v = u;
      while (v == u) v = pool[pick(rng)];
      const int m = 1 + extra_messages(rng);
      for (int r = 0; r < m; ++r) {
        pairs.emplace_back(u, v);
        sender_area.push_back(a);
        span_km.push_back(dist(static_cast<AreaId>(a), out.locations.area_of(v)));
      }
    }
  }
  const std::size_t n = pairs.size();

  // Exact-size weighted sampling without replacement (exponential keys) so
  // nearest-rank thresholding at alpha_d recovers each label set exactly.
  out.labels.assign(nd, std::vector<char>(n, 0));
  std::vector<std::size_t> order(n);
  std::vector<double> key(n);
  for (std::size_t d = 0; d < nd; ++d) {
    const auto& dim = cfg.dimensions[d];
    const double alpha = 1.0 - dim.base_rate;
    const std::size_t count = n - nearest_rank(alpha, n) + 1;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = propensity[sender_area[i] * nd + d] *
                       std::pow(1.0 + span_km[i] / cfg.coupling_scale_km, dim.coupling);
      double u01 = unit(rng);
      while (u01 <= 0.0) u01 = unit(rng);
      key[i] = std::log(u01) / w;
      order[i] = i;
    }
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count - 1),
                     order.end(), [&](std::size_t x, std::size_t y) { return key[x] > key[y]; });
    for (std::size_t k = 0; k < count; ++k) out.labels[d][order[k]] = 1;
    out.labeled.push_back(count);
    out.alphas.push_back(alpha);
  }

  // Scores from two separated bands around the eventual threshold.
  std::uniform_real_distribution<double> low(0.0, 0.4), high(0.6, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    MessageRecord r;
    r.message_id = detail::padded("m", i, 8);
    r.sender = pairs[i].first;
    r.receiver = pairs[i].second;
    r.timestamp = cfg.start_time + static_cast<std::int64_t>(i);
    for (std::size_t d = 0; d < nd; ++d) r.scores.push_back(out.labels[d][i] ? high(rng) : low(rng));
    out.messages.push(std::move(r));
  }

  // Planted area outcome. Features are measured on the generated corpus.
  if (!cfg.outcome.betas.empty()) {
    DiversityOptions opts;
    opts.area_count = cfg.areas;
    std::map<std::string, DiversityTable> tables;
    auto table_for = [&](const std::string& tag) -> const DiversityTable& {
      if (auto it = tables.find(tag); it != tables.end()) return it->second;
      CommGraph g;
      if (tag == "full") {
        g = build_graph(out.messages, out.locations, cfg.outcome.full_min_weight);
      } else {
        const auto d = out.messages.dimension_index(tag);
        if (!d) throw InputError("synth outcome: unknown dimension '" + tag + "'");
        GraphParams p;
        p.tag = tag;
        const auto& lab = out.labels[*d];
        g = build_graph_if(out.messages, out.locations, p, [&](std::size_t i) { return lab[i] != 0; });
      }
      return tables.emplace(tag, diversity_table(g, out.locations, opts)).first->second;
    };
    for (const auto& [name, beta] : cfg.outcome.betas) {
      const auto f = parse_feature(name);
      std::vector<std::optional<double>> col(cfg.areas);
      for (std::size_t a = 0; a < cfg.areas; ++a) {
        if (f.density) {
          col[a] = out.areas[AreaId(a)].density;
        } else if (const auto* ad = table_for(f.tag).area(AreaId(a))) {
          col[a] = f.kind == DiversityKind::kSocial ? ad->social : ad->spatial;
        }
      }
      out.features[name] = std::move(col);
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t a = 0; a < cfg.areas; ++a) {
    double y = cfg.outcome.intercept;
    for (const auto& [name, beta] : cfg.outcome.betas)
      if (const auto& v = out.features[name][a]) y += beta * *v;
    y += cfg.outcome.sigma * noise(rng);
    out.areas[AreaId(a)].gdp_per_capita = y;
  }
  return out;
}

// Writes messages.csv, activity.csv and areas.csv in the ingest formats.
inline void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw InputError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("messages.csv");
    write_messages_csv(corpus.messages, corpus.users, f);
  }
  {
    auto f = open("activity.csv");
    write_activity(corpus.activity, corpus.users, corpus.areas, f);
  }
  {
    auto f = open("areas.csv");
    write_areas(corpus.areas, f);
  }
}

}  // namespace socdim
