#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "socdim/core.hpp"
#include "socdim/csv.hpp"
#include "socdim/graphs.hpp"
#include "socdim/ingest.hpp"
#include "socdim/parallel.hpp"

namespace socdim {

enum class ContactDirection {
  kOut,    // messages i sent (default)
  kUnion,  // w(i,j) + w(j,i) over every neighbor in either direction
};

struct DiversityOptions {
  std::size_t area_count = 0;  // A in the ln(A) denominator of spatial diversity
  ContactDirection direction = ContactDirection::kOut;
  bool exclude_single_contact = false;
};

struct Contact {
  UserId user = 0;
  std::uint64_t weight = 0;
};

struct UserDiversity {
  UserId user = 0;
  double social = 0;
  double spatial = 0;
  std::size_t contacts = 0;  // k or k_d
};

struct AreaDiversity {
  AreaId area = kNoArea;
  double social = 0;
  double spatial = 0;
  std::size_t users = 0;
};

struct DiversityTable {
  std::string tag;
  std::vector<UserDiversity> users;  // sorted by user id
  std::vector<AreaDiversity> areas;  // sorted by area id

  const AreaDiversity* area(AreaId a) const {
    auto it = std::lower_bound(areas.begin(), areas.end(), a,
                               [](const AreaDiversity& x, AreaId v) { return x.area < v; });
    return it != areas.end() && it->area == a ? &*it : nullptr;
  }
};

namespace detail {

// -sum w/W ln(w/W) / ln(n). Returns exactly 1 for equal masses over n bins
// and keeps unequal masses strictly below 1.
inline double normalized_entropy(std::span<const std::uint64_t> masses, std::size_t n) {
  if (n < 2 || masses.empty()) return 0.0;
  double total = 0;
  for (auto w : masses) total += static_cast<double>(w);
  const bool uniform = masses.size() == n &&
                       std::all_of(masses.begin(), masses.end(),
                                   [&](std::uint64_t w) { return w == masses.front(); });
  if (uniform) return 1.0;
  double h = 0;
  for (auto w : masses) {
    if (w == 0) continue;
    const double p = static_cast<double>(w) / total;
    h -= p * std::log(p);
  }
  const double d = h / std::log(static_cast<double>(n));
  return std::clamp(d, 0.0, std::nextafter(1.0, 0.0));
}

inline std::vector<Contact> out_contacts(const CommGraph& g, UserId i) {
  std::vector<Contact> c;
  for (const auto& e : g.out_edges(i)) c.push_back({e.dst, e.weight});
  return c;
}

// Contact masses per area, sorted by area id.
inline std::vector<std::pair<AreaId, std::uint64_t>> area_masses(
    std::span<const Contact> contacts, const UserLocationMap& locations) {
  std::vector<std::pair<AreaId, std::uint64_t>> m;
  m.reserve(contacts.size());
  for (const auto& c : contacts) {
    const AreaId a = locations.area_of(c.user);
    if (a == kNoArea)
      throw InputError("contact " + std::to_string(c.user) + " has no location");
    m.emplace_back(a, c.weight);
  }
  std::sort(m.begin(), m.end());
  std::size_t out = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (out > 0 && m[out - 1].first == m[i].first) m[out - 1].second += m[i].second;
    else m[out++] = m[i];
  }
  m.resize(out);
  return m;
}

inline std::optional<UserDiversity> diversity_from_contacts(UserId i,
                                                            std::span<const Contact> contacts,
                                                            const UserLocationMap& locations,
                                                            const DiversityOptions& opts) {
  if (contacts.empty()) return std::nullopt;
  if (opts.exclude_single_contact && contacts.size() == 1) return std::nullopt;
  if (opts.area_count < 2) throw InputError("spatial diversity needs at least 2 areas");
  std::vector<std::uint64_t> masses;
  masses.reserve(contacts.size());
  for (const auto& c : contacts) masses.push_back(c.weight);
  UserDiversity u;
  u.user = i;
  u.contacts = contacts.size();
  u.social = normalized_entropy(masses, contacts.size());
  const auto by_area = area_masses(contacts, locations);
  if (by_area.size() > opts.area_count)
    throw InputError("user touches more areas than the configured area count");
  masses.clear();
  for (const auto& [a, w] : by_area) masses.push_back(w);
  u.spatial = normalized_entropy(masses, opts.area_count);
  return u;
}

}  // namespace detail

// p_ij over out-neighbors in edge order; nullopt when i sent nothing.
inline std::optional<std::vector<double>> contact_proportions(const CommGraph& g, UserId i) {
  const auto out = g.out_edges(i);
  if (out.empty()) return std::nullopt;
  double total = 0;
  for (const auto& e : out) total += e.weight;
  std::vector<double> p;
  for (const auto& e : out) p.push_back(e.weight / total);
  return p;
}

// Normalized entropy of p_ij; 0 for a single contact.
inline std::optional<double> social_diversity(const CommGraph& g, UserId i) {
  const auto c = detail::out_contacts(g, i);
  if (c.empty()) return std::nullopt;
  std::vector<std::uint64_t> w;
  for (const auto& x : c) w.push_back(x.weight);
  return detail::normalized_entropy(w, c.size());
}

// p_ia over the areas i's messages reached, sorted by area; zero-mass areas omitted.
inline std::optional<std::vector<std::pair<AreaId, double>>> area_proportions(
    const CommGraph& g, UserId i, const UserLocationMap& locations) {
  const auto c = detail::out_contacts(g, i);
  if (c.empty()) return std::nullopt;
  const auto m = detail::area_masses(c, locations);
  double total = 0;
  for (const auto& [a, w] : m) total += static_cast<double>(w);
  std::vector<std::pair<AreaId, double>> p;
  for (const auto& [a, w] : m) p.emplace_back(a, static_cast<double>(w) / total);
  return p;
}

inline std::optional<double> spatial_diversity(const CommGraph& g, UserId i,
                                               const UserLocationMap& locations,
                                               std::size_t area_count) {
  if (area_count < 2) throw InputError("spatial diversity needs at least 2 areas");
  const auto c = detail::out_contacts(g, i);
  if (c.empty()) return std::nullopt;
  const auto m = detail::area_masses(c, locations);
  if (m.size() > area_count)
    throw InputError("user touches more areas than the configured area count");
  std::vector<std::uint64_t> w;
  for (const auto& [a, x] : m) w.push_back(x);
  return detail::normalized_entropy(w, area_count);
}

// Scores every user with at least one contact under the chosen direction.
inline std::vector<UserDiversity> user_diversity(const CommGraph& g,
                                                 const UserLocationMap& locations,
                                                 const DiversityOptions& opts,
                                                 std::size_t threads = 1) {
  if (opts.area_count < 2) throw InputError("spatial diversity needs at least 2 areas");
  std::vector<std::vector<Contact>> union_contacts;
  std::vector<UserId> subjects;
  if (opts.direction == ContactDirection::kOut) {
    for (const auto& e : g.edges())
      if (subjects.empty() || subjects.back() != e.src) subjects.push_back(e.src);
  } else {
    subjects.assign(g.nodes().begin(), g.nodes().end());
    union_contacts.resize(subjects.size());
    auto slot = [&](UserId u) {
      return static_cast<std::size_t>(std::lower_bound(subjects.begin(), subjects.end(), u) -
                                      subjects.begin());
    };
    for (const auto& e : g.edges()) {
      union_contacts[slot(e.src)].push_back({e.dst, e.weight});
      union_contacts[slot(e.dst)].push_back({e.src, e.weight});
    }
    for (auto& c : union_contacts) {
      std::sort(c.begin(), c.end(), [](const Contact& a, const Contact& b) { return a.user < b.user; });
      std::size_t out = 0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (out > 0 && c[out - 1].user == c[k].user) c[out - 1].weight += c[k].weight;
        else c[out++] = c[k];
      }
      c.resize(out);
    }
  }

  const std::size_t chunks = resolve_threads(threads);
  std::vector<std::vector<UserDiversity>> parts(std::max<std::size_t>(1, chunks));
  for_each_chunk(subjects.size(), chunks, [&](std::size_t c, std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      std::optional<UserDiversity> d;
      if (opts.direction == ContactDirection::kOut) {
        const auto contacts = detail::out_contacts(g, subjects[k]);
        d = detail::diversity_from_contacts(subjects[k], contacts, locations, opts);
      } else {
        d = detail::diversity_from_contacts(subjects[k], union_contacts[k], locations, opts);
      }
      if (d) parts[c].push_back(*d);
    }
  });
  std::vector<UserDiversity> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

enum class DiversityKind { kSocial, kSpatial };

// Unweighted mean of user scores per area; areas without scored users are absent.
inline std::map<AreaId, double> area_diversity(std::span<const UserDiversity> users,
                                               const UserLocationMap& locations,
                                               DiversityKind kind) {
  std::map<AreaId, std::pair<double, std::size_t>> acc;
  for (const auto& u : users) {
    const AreaId a = locations.area_of(u.user);
    if (a == kNoArea) continue;
    auto& [sum, n] = acc[a];
    sum += kind == DiversityKind::kSocial ? u.social : u.spatial;
    ++n;
  }
  std::map<AreaId, double> out;
  for (const auto& [a, sn] : acc) out[a] = sn.first / static_cast<double>(sn.second);
  return out;
}

inline std::vector<AreaDiversity> aggregate_areas(std::span<const UserDiversity> users,
                                                  const UserLocationMap& locations) {
  std::map<AreaId, AreaDiversity> acc;
  for (const auto& u : users) {
    const AreaId a = locations.area_of(u.user);
    if (a == kNoArea) continue;
    auto& d = acc[a];
    d.area = a;
    d.social += u.social;
    d.spatial += u.spatial;
    ++d.users;
  }
  std::vector<AreaDiversity> out;
  for (auto& [a, d] : acc) {
    d.social /= static_cast<double>(d.users);
    d.spatial /= static_cast<double>(d.users);
    out.push_back(d);
  }
  return out;
}

inline DiversityTable diversity_table(const CommGraph& g, const UserLocationMap& locations,
                                      const DiversityOptions& opts, std::size_t threads = 1) {
  DiversityTable t;
  t.tag = g.tag();
  t.users = user_diversity(g, locations, opts, threads);
  t.areas = aggregate_areas(t.users, locations);
  return t;
}

// Regression feature names: "density" or "<graph tag>.social|spatial".
struct FeatureRef {
  bool density = false;
  std::string tag;
  DiversityKind kind = DiversityKind::kSpatial;
};

inline FeatureRef parse_feature(std::string_view name) {
  if (name == "density") return {true, "", DiversityKind::kSpatial};
  const auto dot = name.rfind('.');
  if (dot == std::string_view::npos || dot == 0)
    throw InputError("bad feature name '" + std::string(name) + "'");
  const auto kind = name.substr(dot + 1);
  FeatureRef f;
  f.tag = std::string(name.substr(0, dot));
  if (kind == "social") f.kind = DiversityKind::kSocial;
  else if (kind == "spatial") f.kind = DiversityKind::kSpatial;
  else throw InputError("bad feature kind in '" + std::string(name) + "'");
  return f;
}

// graph_tag, level, id, d_social, d_spatial, k
inline void write_diversity(std::span<const DiversityTable> tables, const UserRegistry& users,
                            const AreaTable& areas, std::ostream& out) {
  CsvWriter w(out);
  w.row("graph_tag", "level", "id", "d_social", "d_spatial", "k");
  for (const auto& t : tables) {
    for (const auto& u : t.users)
      w.row(t.tag, "user", users.name(u.user), u.social, u.spatial, u.contacts);
    for (const auto& a : t.areas)
      w.row(t.tag, "area", areas[a.area].code, a.social, a.spatial, a.users);
  }
}

}  // namespace socdim
