#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "socdim/core.hpp"
#include "socdim/csv.hpp"
#include "socdim/diversity.hpp"
#include "socdim/geospan.hpp"
#include "socdim/graphs.hpp"
#include "socdim/ingest.hpp"
#include "socdim/stats.hpp"

namespace socdim {

// ---------------------------------------------------------------------------
// Configuration

struct ModelSpec {
  std::string name;
  std::vector<std::string> features;
  bool operator==(const ModelSpec&) const = default;
};

struct PipelineConfig {
  std::string messages;
  std::string activity;
  std::string areas;
  std::string output_dir = "out";
  std::string format = "auto";          // auto | csv | jsonl
  std::vector<std::string> dimensions;  // empty: every score column
  double alpha = 0.99;
  std::uint32_t min_weight = 4;
  std::uint64_t n_min = 3;
  double purity = 0.95;
  double sd_mult = 1.0;
  std::uint64_t min_users = 1000;
  std::uint64_t null_runs = 50;
  std::optional<std::uint64_t> seed;
  std::uint64_t threads = 0;            // 0: all hardware threads
  std::vector<ModelSpec> models;        // empty: density, full and per-dimension models
  std::vector<std::string> stepaic_features;  // empty: density plus every dimension diversity
  std::vector<std::string> stepaic_forced{"density"};
  bool normalize = true;
  std::optional<std::int64_t> window_start;
  std::optional<std::int64_t> window_end;
  std::string spatial_areas = "included";  // included | all
  std::string direction = "out";           // out | union
  bool exclude_single_contact = false;
  std::string binning = "unthresholded";   // unthresholded | thresholded
  std::string ci_method = "null_spread";   // standard_error | null_spread | percentile
  std::string delta_aggregation = "mean_of_ratios";  // mean_of_ratios | ratio_of_means
  std::uint64_t baseline_runs = 50;
  double baseline_fraction = 0.01;
  bool write_graphs = false;

  bool operator==(const PipelineConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += v[i];
  }
  return s;
}

template <typename Int>
Int to_int(std::string_view key, std::string_view v) {
  auto r = parse_integer<Int>(v);
  if (!r) throw InputError("config " + std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  return *r;
}

inline double to_double(std::string_view key, std::string_view v) {
  auto r = parse_double(v);
  if (!r || !std::isfinite(*r))
    throw InputError("config " + std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return *r;
}

inline bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InputError("config " + std::string(key) + ": expected true or false");
}

inline std::string from_bool(bool b) { return b ? "true" : "false"; }

inline void require_one_of(std::string_view key, const std::string& v,
                           std::initializer_list<std::string_view> allowed) {
  for (auto a : allowed)
    if (v == a) return;
  std::string msg = "config " + std::string(key) + ": '" + v + "' is not one of";
  for (auto a : allowed) msg += " " + std::string(a);
  throw InputError(msg);
}

inline std::vector<ModelSpec> parse_models(std::string_view v) {
  std::vector<ModelSpec> out;
  for (const auto& item : split(v, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InputError("config models: expected name=feature,...");
    ModelSpec m{trim(item.substr(0, eq)), split(item.substr(eq + 1), ',')};
    if (m.name.empty() || m.features.empty())
      throw InputError("config models: model needs a name and at least one feature");
    for (const auto& f : m.features) parse_feature(f);
    out.push_back(std::move(m));
  }
  return out;
}

inline std::string format_models(const std::vector<ModelSpec>& models) {
  std::string s;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (i) s += ';';
    s += models[i].name + "=" + join(models[i].features, ',');
  }
  return s;
}

template <typename T>
std::string opt_str(const std::optional<T>& v) {
  return v ? std::to_string(*v) : std::string();
}

struct ConfigKey {
  const char* name;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_table() {
  using C = PipelineConfig;
  using S = const std::string&;
  static const std::vector<ConfigKey> table = {
      {"messages", [](const C& c) { return c.messages; }, [](C& c, S v) { c.messages = v; }},
      {"activity", [](const C& c) { return c.activity; }, [](C& c, S v) { c.activity = v; }},
      {"areas", [](const C& c) { return c.areas; }, [](C& c, S v) { c.areas = v; }},
      {"output_dir", [](const C& c) { return c.output_dir; }, [](C& c, S v) { c.output_dir = v; }},
      {"format", [](const C& c) { return c.format; },
       [](C& c, S v) { require_one_of("format", v, {"auto", "csv", "jsonl"}); c.format = v; }},
      {"dimensions", [](const C& c) { return join(c.dimensions, ','); },
       [](C& c, S v) { c.dimensions = split(v, ','); }},
      {"alpha", [](const C& c) { return format_double(c.alpha); },
       [](C& c, S v) { c.alpha = to_double("alpha", v); }},
      {"min_weight", [](const C& c) { return std::to_string(c.min_weight); },
       [](C& c, S v) { c.min_weight = to_int<std::uint32_t>("min_weight", v); }},
      {"n_min", [](const C& c) { return std::to_string(c.n_min); },
       [](C& c, S v) { c.n_min = to_int<std::uint64_t>("n_min", v); }},
      {"purity", [](const C& c) { return format_double(c.purity); },
       [](C& c, S v) { c.purity = to_double("purity", v); }},
      {"sd_mult", [](const C& c) { return format_double(c.sd_mult); },
       [](C& c, S v) { c.sd_mult = to_double("sd_mult", v); }},
      {"min_users", [](const C& c) { return std::to_string(c.min_users); },
       [](C& c, S v) { c.min_users = to_int<std::uint64_t>("min_users", v); }},
      {"null_runs", [](const C& c) { return std::to_string(c.null_runs); },
       [](C& c, S v) { c.null_runs = to_int<std::uint64_t>("null_runs", v); }},
      {"seed", [](const C& c) { return opt_str(c.seed); },
       [](C& c, S v) {
         if (v.empty()) c.seed.reset();
         else c.seed = to_int<std::uint64_t>("seed", v);
       }},
      {"threads", [](const C& c) { return std::to_string(c.threads); },
       [](C& c, S v) { c.threads = to_int<std::uint64_t>("threads", v); }},
      {"models", [](const C& c) { return format_models(c.models); },
       [](C& c, S v) { c.models = parse_models(v); }},
      {"stepaic_features", [](const C& c) { return join(c.stepaic_features, ','); },
       [](C& c, S v) {
         c.stepaic_features = split(v, ',');
         for (const auto& f : c.stepaic_features) parse_feature(f);
       }},
      {"stepaic_forced", [](const C& c) { return join(c.stepaic_forced, ','); },
       [](C& c, S v) { c.stepaic_forced = split(v, ','); }},
      {"normalize", [](const C& c) { return from_bool(c.normalize); },
       [](C& c, S v) { c.normalize = to_bool("normalize", v); }},
      {"window_start", [](const C& c) { return opt_str(c.window_start); },
       [](C& c, S v) {
         if (v.empty()) c.window_start.reset();
         else c.window_start = to_int<std::int64_t>("window_start", v);
       }},
      {"window_end", [](const C& c) { return opt_str(c.window_end); },
       [](C& c, S v) {
         if (v.empty()) c.window_end.reset();
         else c.window_end = to_int<std::int64_t>("window_end", v);
       }},
      {"spatial_areas", [](const C& c) { return c.spatial_areas; },
       [](C& c, S v) { require_one_of("spatial_areas", v, {"included", "all"}); c.spatial_areas = v; }},
      {"direction", [](const C& c) { return c.direction; },
       [](C& c, S v) { require_one_of("direction", v, {"out", "union"}); c.direction = v; }},
      {"exclude_single_contact", [](const C& c) { return from_bool(c.exclude_single_contact); },
       [](C& c, S v) { c.exclude_single_contact = to_bool("exclude_single_contact", v); }},
      {"binning", [](const C& c) { return c.binning; },
       [](C& c, S v) { require_one_of("binning", v, {"unthresholded", "thresholded"}); c.binning = v; }},
      {"ci_method", [](const C& c) { return c.ci_method; },
       [](C& c, S v) {
         require_one_of("ci_method", v, {"standard_error", "null_spread", "percentile"});
         c.ci_method = v;
       }},
      {"delta_aggregation", [](const C& c) { return c.delta_aggregation; },
       [](C& c, S v) {
         require_one_of("delta_aggregation", v, {"mean_of_ratios", "ratio_of_means"});
         c.delta_aggregation = v;
       }},
      {"baseline_runs", [](const C& c) { return std::to_string(c.baseline_runs); },
       [](C& c, S v) { c.baseline_runs = to_int<std::uint64_t>("baseline_runs", v); }},
      {"baseline_fraction", [](const C& c) { return format_double(c.baseline_fraction); },
       [](C& c, S v) { c.baseline_fraction = to_double("baseline_fraction", v); }},
      {"write_graphs", [](const C& c) { return from_bool(c.write_graphs); },
       [](C& c, S v) { c.write_graphs = to_bool("write_graphs", v); }},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& e : detail::config_table()) k.emplace_back(e.name);
  return k;
}

inline void set_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value) {
  const std::string v = detail::trim(value);
  if (v.find('\n') != std::string::npos) throw InputError("config values cannot span lines");
  for (const auto& e : detail::config_table())
    if (key == e.name) return e.set(cfg, v);
  throw InputError("unknown config key '" + std::string(key) + "'");
}

inline std::string get_config_value(const PipelineConfig& cfg, std::string_view key) {
  for (const auto& e : detail::config_table())
    if (key == e.name) return e.get(cfg);
  throw InputError("unknown config key '" + std::string(key) + "'");
}

// Range checks on every numeric field.
inline void validate(const PipelineConfig& c) {
  if (!(c.alpha > 0 && c.alpha < 1)) throw InputError("config alpha must be in (0,1)");
  if (c.min_weight < 1) throw InputError("config min_weight must be >= 1");
  if (c.n_min < 1) throw InputError("config n_min must be >= 1");
  if (!(c.purity > 0.5 && c.purity <= 1)) throw InputError("config purity must be in (0.5,1]");
  if (!(c.sd_mult > 0)) throw InputError("config sd_mult must be > 0");
  if (c.null_runs < 2) throw InputError("config null_runs must be >= 2");
  if (c.baseline_runs < 1) throw InputError("config baseline_runs must be >= 1");
  if (!(c.baseline_fraction > 0 && c.baseline_fraction <= 1))
    throw InputError("config baseline_fraction must be in (0,1]");
  if (c.window_start && c.window_end && *c.window_start > *c.window_end)
    throw InputError("config window_start is after window_end");
}

// One key=value line per key in a fixed order.
inline std::string serialize_config(const PipelineConfig& cfg) {
  std::string s;
  for (const auto& e : detail::config_table()) s += std::string(e.name) + "=" + e.get(cfg) + "\n";
  return s;
}

inline PipelineConfig parse_config(std::string_view text) {
  PipelineConfig cfg;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InputError("config line " + std::to_string(line_no) + ": expected key=value");
    set_config_value(cfg, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return cfg;
}

// Relative file paths are taken relative to the config file's directory.
inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str());
  const auto base = path.parent_path();
  for (auto* p : {&cfg.messages, &cfg.activity, &cfg.areas, &cfg.output_dir})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return cfg;
}

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

// The config with the keys that cannot change results (output_dir, threads)
// reset, so a bundle does not depend on where or how wide it was run.
inline PipelineConfig config_identity(const PipelineConfig& cfg) {
  PipelineConfig c = cfg;
  c.output_dir.clear();
  c.threads = 0;
  return c;
}

inline std::string config_hash(const PipelineConfig& cfg) {
  return sha256_hex(serialize_config(config_identity(cfg)));
}

// ---------------------------------------------------------------------------
// Stages

template <typename F>
auto in_stage(std::string_view stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(stage) + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(std::string(stage) + ": " + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw InputError(std::string(stage) + ": " + e.what());
  }
}

struct IngestedData {
  UserRegistry users;
  MessageParseResult messages;
  AreaTable areas;
  ActivityParseResult activity;
};

inline IngestedData load_inputs(const PipelineConfig& cfg) {
  return in_stage("ingest", [&] {
    if (cfg.messages.empty() || cfg.activity.empty() || cfg.areas.empty())
      throw InputError("messages, activity and areas paths are required");
    IngestedData d;
    MessageSchema schema;
    schema.dimensions = cfg.dimensions;
    schema.format = cfg.format == "csv"     ? MessageFormat::kCsv
                    : cfg.format == "jsonl" ? MessageFormat::kJsonl
                                            : MessageFormat::kAuto;
    d.areas = read_areas(std::filesystem::path(cfg.areas));
    d.messages = parse_messages(std::filesystem::path(cfg.messages), schema, d.users,
                                TimeWindow{cfg.window_start, cfg.window_end});
    if (d.messages.corpus.empty()) throw InputError("no usable messages in " + cfg.messages);
    for (const auto& dim : d.messages.corpus.dimensions)
      if (dim == "full" || dim == "random")
        throw InputError("dimension name '" + dim + "' is reserved");
    d.activity = read_activity(std::filesystem::path(cfg.activity), d.users, d.areas);
    return d;
  });
}

struct Placement {
  UserLocationMap locations;      // users in areas that take part in the analysis
  std::size_t georeferenced = 0;  // before dropping excluded areas
  PenetrationResult penetration;
  std::size_t area_count = 0;     // ln(A) denominator
};

inline Placement place_users(const PipelineConfig& cfg, const IngestedData& d) {
  return in_stage("georeference", [&] {
    Placement p;
    p.locations = georeference_users(d.activity.records, {cfg.n_min, cfg.purity}, d.users.size());
    p.georeferenced = p.locations.located_count();
    const auto counts = p.locations.users_per_area(d.areas.size());
    p.penetration = filter_states_by_penetration(d.areas, counts, {cfg.sd_mult, cfg.min_users});
    if (cfg.spatial_areas == "included") {
      auto raw = p.locations.raw();
      for (auto& a : raw)
        if (a != kNoArea && !p.penetration.areas[a].included) a = kNoArea;
      p.area_count = p.penetration.areas.included_count();
    } else {
      p.area_count = d.areas.size();
    }
    return p;
  });
}

struct GraphSet {
  DimensionThresholds thresholds;
  CommGraph universe;  // every located pair, weight >= 1
  CommGraph full;      // weight >= min_weight
  std::vector<CommGraph> dims;
};

inline DimensionThresholds label_stage(const PipelineConfig& cfg, const MessageCorpus& corpus) {
  return in_stage("label", [&] { return dimension_thresholds(corpus, cfg.alpha); });
}

inline CommGraph full_graph_stage(const PipelineConfig& cfg, const MessageCorpus& corpus,
                                  const UserLocationMap& loc) {
  return in_stage("graphs", [&] {
    return build_graph(corpus, loc, cfg.min_weight, static_cast<std::size_t>(cfg.threads));
  });
}

inline std::vector<CommGraph> dimension_graph_stage(const PipelineConfig& cfg,
                                                    const MessageCorpus& corpus,
                                                    const UserLocationMap& loc,
                                                    const DimensionThresholds& t) {
  return in_stage("graphs", [&] {
    std::vector<CommGraph> out;
    for (const auto& d : corpus.dimensions)
      out.push_back(build_dimension_graph(corpus, loc, d, t, static_cast<std::size_t>(cfg.threads)));
    return out;
  });
}

inline GraphSet graph_stage(const PipelineConfig& cfg, const MessageCorpus& corpus,
                            const UserLocationMap& loc) {
  GraphSet g;
  g.thresholds = label_stage(cfg, corpus);
  g.universe = in_stage("graphs", [&] {
    GraphParams p;
    p.tag = "universe";
    return build_graph_if(corpus, loc, p, [](std::size_t) { return true; },
                          static_cast<std::size_t>(cfg.threads));
  });
  g.full = full_graph_stage(cfg, corpus, loc);
  g.dims = dimension_graph_stage(cfg, corpus, loc, g.thresholds);
  return g;
}

inline DiversityOptions diversity_options(const PipelineConfig& cfg, const Placement& p) {
  DiversityOptions o;
  o.area_count = p.area_count;
  o.direction = cfg.direction == "union" ? ContactDirection::kUnion : ContactDirection::kOut;
  o.exclude_single_contact = cfg.exclude_single_contact;
  return o;
}

inline DiversityTable diversity_stage(const PipelineConfig& cfg, const Placement& p,
                                      const CommGraph& g) {
  return in_stage("diversity", [&] {
    return diversity_table(g, p.locations, diversity_options(cfg, p),
                           static_cast<std::size_t>(cfg.threads));
  });
}

using DiversityTables = std::map<std::string, DiversityTable>;

// ---------------------------------------------------------------------------
// Regressions

inline std::vector<ModelSpec> default_models(const std::vector<std::string>& dims) {
  std::vector<ModelSpec> m{{"density", {"density"}},
                           {"full_social", {"density", "full.social"}},
                           {"full_spatial", {"density", "full.spatial"}}};
  ModelSpec soc{"dimension_social", {"density"}}, spa{"dimension_spatial", {"density"}};
  for (const auto& d : dims) {
    soc.features.push_back(d + ".social");
    spa.features.push_back(d + ".spatial");
  }
  if (!dims.empty()) {
    m.push_back(soc);
    m.push_back(spa);
  }
  return m;
}

inline std::vector<std::string> default_stepaic_features(const std::vector<std::string>& dims) {
  std::vector<std::string> f{"density"};
  for (const auto& d : dims) {
    f.push_back(d + ".social");
    f.push_back(d + ".spatial");
  }
  return f;
}

struct RegressionInput {
  std::vector<std::string> features;
  std::vector<AreaId> rows;  // alphabetical by area code
  Eigen::MatrixXd X;
  std::vector<double> y;
};

// Rows are included areas with every feature defined, ordered by area code.
inline RegressionInput regression_input(const std::vector<std::string>& features,
                                        const AreaTable& areas, const DiversityTables& tables,
                                        bool normalize) {
  RegressionInput in;
  in.features = features;
  std::vector<FeatureRef> refs;
  for (const auto& f : features) {
    refs.push_back(parse_feature(f));
    if (!refs.back().density && !tables.contains(refs.back().tag))
      throw InputError("feature '" + f + "' refers to an unknown graph");
  }
  std::vector<AreaId> order;
  for (std::size_t a = 0; a < areas.size(); ++a)
    if (areas[AreaId(a)].included) order.push_back(AreaId(a));
  std::sort(order.begin(), order.end(),
            [&](AreaId x, AreaId y) { return areas[x].code < areas[y].code; });

  std::vector<std::vector<double>> cols(features.size());
  for (AreaId a : order) {
    std::vector<double> row;
    bool ok = true;
    for (const auto& r : refs) {
      if (r.density) {
        row.push_back(areas[a].density);
        continue;
      }
      const auto* d = tables.at(r.tag).area(a);
      if (!d) {
        ok = false;
        break;
      }
      row.push_back(r.kind == DiversityKind::kSocial ? d->social : d->spatial);
    }
    if (!ok) continue;
    in.rows.push_back(a);
    in.y.push_back(areas[a].gdp_per_capita);
    for (std::size_t j = 0; j < row.size(); ++j) cols[j].push_back(row[j]);
  }
  if (normalize) {
    in.y = minmax_normalize(in.y);
    for (auto& c : cols) c = minmax_normalize(c);
  }
  in.X = Eigen::MatrixXd(static_cast<Eigen::Index>(in.rows.size()),
                         static_cast<Eigen::Index>(features.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < cols[j].size(); ++i)
      in.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
  return in;
}

inline RegressionReport fit_model(const ModelSpec& m, const AreaTable& areas,
                                  const DiversityTables& tables, bool normalize) {
  return in_stage("stats", [&] {
    auto in = regression_input(m.features, areas, tables, normalize);
    return ols_fit(in.X, in.y, m.features);
  });
}

struct NamedReport {
  std::string model;
  RegressionReport report;
};

// ---------------------------------------------------------------------------
// Bundle

enum class Stage { kIngest, kLabel, kBuild, kDiversity, kSpan, kRegress, kAll };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::kIngest: return "ingest";
    case Stage::kLabel: return "label";
    case Stage::kBuild: return "build";
    case Stage::kDiversity: return "diversity";
    case Stage::kSpan: return "span";
    case Stage::kRegress: return "regress";
    case Stage::kAll: break;
  }
  return "run";
}

struct PipelineResult {
  std::vector<std::pair<std::string, std::string>> manifest;  // key=value lines in order
  std::vector<std::pair<std::string, std::uint64_t>> counts;
  std::vector<NamedReport> regressions;
  std::optional<StepAicResult> stepaic;
  std::vector<DeltaPReport> delta_p;
  std::vector<std::string> outputs;  // file names relative to output_dir
};

namespace detail {

class BundleWriter {
 public:
  BundleWriter(std::filesystem::path dir, PipelineResult& result)
      : dir_(std::move(dir)), result_(result) {
    std::filesystem::create_directories(dir_);
  }

  template <typename Fn>
  void write(const std::string& name, Fn&& fn) {
    std::ostringstream os;
    fn(os);
    const auto bytes = os.str();
    const auto path = dir_ / name;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    f << bytes;
    if (!f) throw InputError("failed writing " + path.string());
    hashes_.emplace_back(name, sha256_hex(bytes));
    result_.outputs.push_back(name);
  }

  const std::vector<std::pair<std::string, std::string>>& hashes() const { return hashes_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  PipelineResult& result_;
  std::vector<std::pair<std::string, std::string>> hashes_;
};

inline void write_graph_stats(const std::vector<const CommGraph*>& graphs, const CommGraph& ref,
                              std::ostream& os) {
  CsvWriter w(os);
  w.row("graph_tag", "nodes", "edges", "total_weight", "node_fraction", "edge_fraction");
  for (const auto* g : graphs)
    w.row(g->tag(), g->node_count(), g->edge_count(), g->total_weight(), node_fraction(*g, ref),
          ref.edge_count() ? double(g->edge_count()) / double(ref.edge_count()) : 0.0);
}

inline void write_histograms(const std::vector<const CommGraph*>& graphs, std::ostream& os) {
  CsvWriter w(os);
  w.row("graph_tag", "quantity", "bin_low", "bin_high", "count");
  for (const auto* g : graphs) {
    const auto s = graph_summary(*g);
    for (const auto& b : log_binned(s.degree_counts)) w.row(g->tag(), "degree", b.low, b.high, b.count);
    for (const auto& b : log_binned(s.strength_counts)) w.row(g->tag(), "weight", b.low, b.high, b.count);
  }
}

inline std::vector<double> edge_weights(const CommGraph& g) {
  std::vector<double> w;
  w.reserve(g.edge_count());
  for (const auto& e : g.edges()) w.push_back(e.weight);
  return w;
}

}  // namespace detail

inline PipelineResult run_pipeline(const PipelineConfig& cfg, Stage last = Stage::kAll) {
  validate(cfg);
  if (!cfg.seed) throw InputError("config: seed is required");
  const std::uint64_t seed = *cfg.seed;
  PipelineResult res;
  auto count = [&](std::string key, std::uint64_t v) { res.counts.emplace_back(std::move(key), v); };

  const auto data = load_inputs(cfg);
  const auto& corpus = data.messages.corpus;
  const auto placement = place_users(cfg, data);
  const auto& loc = placement.locations;

  detail::BundleWriter out(cfg.output_dir, res);
  const bool want_label = last != Stage::kIngest;
  const bool want_build = want_label && last != Stage::kLabel;
  const bool want_div = want_build && last != Stage::kBuild && last != Stage::kSpan;
  const bool want_span = last == Stage::kSpan || last == Stage::kAll;
  const bool want_regress = last == Stage::kRegress || last == Stage::kAll;

  count("messages.rows", data.messages.rows);
  count("messages.rejected", data.messages.rejected);
  count("messages.self_loops", data.messages.self_loops);
  count("messages.outside_window", data.messages.outside_window);
  count("messages.kept", corpus.size());
  count("activity.records", data.activity.records.size());
  count("activity.rejected", data.activity.rejected);
  count("areas.total", data.areas.size());
  count("areas.included", placement.penetration.areas.included_count());
  count("users.total", data.users.size());
  count("users.georeferenced", placement.georeferenced);
  count("users.located", loc.located_count());
  std::uint64_t located_messages = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (loc.located(corpus.senders[i]) && loc.located(corpus.receivers[i])) ++located_messages;
  count("messages.located", located_messages);

  in_stage("ingest", [&] {
    out.write("penetration.csv", [&](std::ostream& os) {
      CsvWriter w(os);
      w.row("area", "population", "users", "residual", "included");
      const auto& p = placement.penetration;
      for (std::size_t a = 0; a < p.areas.size(); ++a)
        w.row(p.areas[AreaId(a)].code, p.areas[AreaId(a)].population, p.user_counts[a],
              p.residuals[a], p.areas[AreaId(a)].included ? "true" : "false");
    });
    out.write("locations.csv", [&](std::ostream& os) {
      CsvWriter w(os);
      w.row("user", "area");
      for (UserId u = 0; u < data.users.size(); ++u)
        if (loc.located(u)) w.row(data.users.name(u), data.areas[loc.area_of(u)].code);
    });
  });

  GraphSet graphs;
  DiversityTables tables;
  if (want_label) {
    graphs.thresholds = label_stage(cfg, corpus);
    for (std::size_t d = 0; d < corpus.dimension_count(); ++d) {
      std::uint64_t labeled = 0, labeled_located = 0;
      for (std::size_t i = 0; i < corpus.size(); ++i)
        if (passes(corpus.scores_of(i), graphs.thresholds, d)) {
          ++labeled;
          if (loc.located(corpus.senders[i]) && loc.located(corpus.receivers[i])) ++labeled_located;
        }
      count("messages.labeled." + corpus.dimensions[d], labeled);
      count("messages.labeled_located." + corpus.dimensions[d], labeled_located);
    }
    in_stage("label", [&] {
      out.write("thresholds.csv", [&](std::ostream& os) { write_thresholds(graphs.thresholds, os); });
      out.write("score_spearman.csv", [&](std::ostream& os) {
        std::vector<std::vector<double>> cols(corpus.dimension_count());
        for (std::size_t i = 0; i < corpus.size(); ++i)
          for (std::size_t d = 0; d < cols.size(); ++d) cols[d].push_back(corpus.score(i, d));
        const auto m = spearman_matrix(cols);
        CsvWriter w(os);
        w.row("dimension_a", "dimension_b", "spearman");
        for (std::size_t a = 0; a < cols.size(); ++a)
          for (std::size_t b = 0; b < cols.size(); ++b)
            w.row(corpus.dimensions[a], corpus.dimensions[b],
                  m[a][b] ? format_double(*m[a][b]) : std::string("NA"));
      });
      if (last == Stage::kLabel)
        out.write("labels.csv", [&](std::ostream& os) {
          CsvWriter w(os);
          w.row("message_id", "labels");
          for (std::size_t i = 0; i < corpus.size(); ++i) {
            std::string names;
            for (const auto& n : label_message(corpus.scores_of(i), graphs.thresholds))
              names += (names.empty() ? "" : ";") + n;
            w.row(corpus.ids[i], names);
          }
        });
    });
  }

  std::vector<const CommGraph*> all_graphs;
  if (want_build) {
    graphs = graph_stage(cfg, corpus, loc);
    all_graphs = {&graphs.universe, &graphs.full};
    for (const auto& g : graphs.dims) all_graphs.push_back(&g);
    for (const auto* g : all_graphs) {
      count("graph." + g->tag() + ".nodes", g->node_count());
      count("graph." + g->tag() + ".edges", g->edge_count());
      count("graph." + g->tag() + ".weight", g->total_weight());
    }
    in_stage("graphs", [&] {
      out.write("graph_stats.csv", [&](std::ostream& os) {
        detail::write_graph_stats(all_graphs, graphs.universe, os);
      });
      out.write("graph_histograms.csv", [&](std::ostream& os) { detail::write_histograms(all_graphs, os); });
      out.write("edge_overlap.csv", [&](std::ostream& os) {
        CsvWriter w(os);
        w.row("graph_a", "graph_b", "fraction_a_in_b", "fraction_b_in_a");
        for (std::size_t a = 0; a < graphs.dims.size(); ++a)
          for (std::size_t b = a + 1; b < graphs.dims.size(); ++b) {
            const auto [x, y] = edge_overlap(graphs.dims[a], graphs.dims[b]);
            w.row(graphs.dims[a].tag(), graphs.dims[b].tag(), x, y);
          }
      });
      out.write("weight_ks.csv", [&](std::ostream& os) {
        CsvWriter w(os);
        w.row("graph_a", "graph_b", "statistic", "p_value");
        for (std::size_t a = 0; a < graphs.dims.size(); ++a)
          for (std::size_t b = a + 1; b < graphs.dims.size(); ++b) {
            if (graphs.dims[a].empty() || graphs.dims[b].empty()) continue;
            const auto wa = detail::edge_weights(graphs.dims[a]);
            const auto wb = detail::edge_weights(graphs.dims[b]);
            const auto ks = ks_two_sample(wa, wb);
            w.row(graphs.dims[a].tag(), graphs.dims[b].tag(), ks.statistic, ks.p_value);
          }
      });
      if (cfg.write_graphs)
        for (const auto* g : all_graphs)
          out.write("graphs/" + g->tag() + ".csv",
                    [&](std::ostream& os) { write_graph(*g, data.users, os); });
    });
  }

  if (want_div) {
    tables.emplace("full", diversity_stage(cfg, placement, graphs.full));
    for (const auto& g : graphs.dims) tables.emplace(g.tag(), diversity_stage(cfg, placement, g));
    std::vector<DiversityTable> ordered{tables.at("full")};
    for (const auto& g : graphs.dims) ordered.push_back(tables.at(g.tag()));
    for (const auto& t : ordered) count("diversity." + t.tag + ".users", t.users.size());
    in_stage("diversity", [&] {
      out.write("diversity.csv", [&](std::ostream& os) {
        write_diversity(ordered, data.users, placement.penetration.areas, os);
      });
    });
  }

  if (want_span) {
    in_stage("geospan", [&] {
      const AreaDistances dist(data.areas);
      const CommGraph& universe = cfg.binning == "thresholded" ? graphs.full : graphs.universe;
      const auto bins = span_bins(universe, loc, dist);
      DeltaPOptions opts;
      opts.runs = static_cast<std::size_t>(cfg.null_runs);
      opts.seed = seed;
      opts.threads = static_cast<std::size_t>(cfg.threads);
      opts.ci = cfg.ci_method == "standard_error" ? CiMethod::kStandardError
                : cfg.ci_method == "percentile"   ? CiMethod::kPercentile
                                                  : CiMethod::kNullSpread;
      opts.aggregation = cfg.delta_aggregation == "ratio_of_means" ? NullAggregation::kRatioOfMeans
                                                                   : NullAggregation::kMeanOfRatios;
      std::vector<const CommGraph*> dims;
      for (const auto& g : graphs.dims) dims.push_back(&g);
      res.delta_p = delta_p_all(universe, dims, loc, dist, bins, opts);
      out.write("span_bins.csv", [&](std::ostream& os) {
        CsvWriter w(os);
        w.row("bin_index", "upper_km", "median_km", "ties", "messages");
        for (std::size_t b = 0; b < bins.size(); ++b) {
          const auto& x = bins.bins[b];
          w.row(b, std::isinf(x.upper_km) ? std::string("inf") : format_double(x.upper_km),
                x.median_km, x.ties, x.messages);
        }
      });
      out.write("delta_p.csv", [&](std::ostream& os) { write_delta_p(res.delta_p, os); });
      count("geospan.bins", bins.size());
      count("geospan.warnings", bins.warnings.size());
    });
  }

  if (want_regress) {
    const auto& areas = placement.penetration.areas;
    const auto models = cfg.models.empty() ? default_models(corpus.dimensions) : cfg.models;
    for (const auto& m : models) {
      res.regressions.push_back({m.name, fit_model(m, areas, tables, cfg.normalize)});
      count("regression." + m.name + ".n", res.regressions.back().report.n);
    }
    const auto feats = cfg.stepaic_features.empty() ? default_stepaic_features(corpus.dimensions)
                                                    : cfg.stepaic_features;
    res.stepaic = in_stage("stats", [&] {
      std::vector<std::string> forced;
      for (const auto& f : cfg.stepaic_forced)
        if (std::find(feats.begin(), feats.end(), f) != feats.end()) forced.push_back(f);
      auto in = regression_input(feats, areas, tables, cfg.normalize);
      return step_aic_backward(in.X, in.y, feats, forced);
    });
    in_stage("stats", [&] {
      out.write("regressions.csv", [&](std::ostream& os) {
        CsvWriter w(os);
        write_report_csv_header(w);
        for (const auto& r : res.regressions) write_report_csv_rows(r.report, r.model, w);
        write_report_csv_rows(res.stepaic->model, "stepaic", w);
      });
      out.write("regressions.txt", [&](std::ostream& os) {
        for (const auto& r : res.regressions) write_report_table(r.report, r.model, os);
        write_report_table(res.stepaic->model, "stepaic", os);
        os << "stepaic removed: " << detail::join(res.stepaic->removed, ',') << "\n"
           << "stepaic full_aic = " << format_fixed(res.stepaic->full_aic, 4)
           << "    selected_aic = " << format_fixed(res.stepaic->selected_aic, 4) << "\n";
      });
      out.write("regression_input.csv", [&](std::ostream& os) {
        auto in = regression_input(feats, areas, tables, false);
        CsvWriter w(os);
        std::vector<std::string> header{"area", "gdp_per_capita"};
        header.insert(header.end(), feats.begin(), feats.end());
        w.row(std::span<const std::string>(header));
        for (std::size_t i = 0; i < in.rows.size(); ++i) {
          std::vector<std::string> row{areas[in.rows[i]].code, format_double(in.y[i])};
          for (Eigen::Index j = 0; j < in.X.cols(); ++j)
            row.push_back(format_double(in.X(static_cast<Eigen::Index>(i), j)));
          w.row(std::span<const std::string>(row));
        }
      });
    });
  }

  // Manifest
  auto& mf = res.manifest;
  mf.emplace_back("config_sha256", config_hash(cfg));
  mf.emplace_back("stage", to_string(last));
  mf.emplace_back("seed", std::to_string(seed));
  mf.emplace_back("seed.derivation", "splitmix64(splitmix64(seed ^ fnv1a(stage)) + counter)");
  mf.emplace_back("seed.null.run0", std::to_string(derive_seed(seed, "null", 0)));
  mf.emplace_back("seed.baseline.run0", std::to_string(derive_seed(seed, "baseline", 0)));
  mf.emplace_back("regression.row_order", "area code ascending");
  mf.emplace_back("regression.normalization", cfg.normalize ? "minmax" : "none");
  mf.emplace_back("ks.p_value", "asymptotic");
  mf.emplace_back("spatial.area_count", std::to_string(placement.area_count));
  for (const auto& [k, v] : res.counts) mf.emplace_back("count." + k, std::to_string(v));
  for (const auto& [name, h] : out.hashes()) mf.emplace_back("sha256." + name, h);
  in_stage("manifest", [&] {
    std::ofstream f(out.dir() / "manifest.txt", std::ios::binary);
    if (!f) throw InputError("cannot write manifest");
    for (const auto& [k, v] : mf) f << k << "=" << v << "\n";
    std::ofstream c(out.dir() / "config.txt", std::ios::binary);
    c << serialize_config(config_identity(cfg));
  });
  return res;
}

inline std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  std::string parameter;
  std::string value;
  std::string model;
  std::optional<double> r2_adj;  // empty when the model could not be fit
};

// Reruns the stages a parameter affects and fits the configured models.
inline std::vector<SweepRow> sweep(const PipelineConfig& base, std::string_view parameter,
                                   const std::vector<std::string>& values) {
  if (parameter != "min_weight" && parameter != "alpha" && parameter != "n_min" &&
      parameter != "window")
    throw InputError("unknown sweep parameter '" + std::string(parameter) +
                     "' (min_weight, alpha, n_min, window)");
  validate(base);
  std::vector<SweepRow> rows;

  std::optional<IngestedData> data;
  std::optional<Placement> placement;
  std::optional<DimensionThresholds> thresholds;
  DiversityTables fixed;  // tables the parameter does not touch

  auto fit_all = [&](const PipelineConfig& cfg, const std::string& value, const IngestedData& d,
                     const Placement& p, const DiversityTables& tables) {
    const auto models = cfg.models.empty() ? default_models(d.messages.corpus.dimensions) : cfg.models;
    for (const auto& m : models) {
      SweepRow r{std::string(parameter), value, m.name, std::nullopt};
      try {
        r.r2_adj = fit_model(m, p.penetration.areas, tables, cfg.normalize).r2_adj;
      } catch (const NumericalError&) {
      } catch (const InputError&) {
      }
      rows.push_back(std::move(r));
    }
  };

  if (parameter != "window") {
    data = load_inputs(base);
    if (parameter != "n_min") placement = place_users(base, *data);
  }
  if (parameter == "min_weight") {
    const auto& c = data->messages.corpus;
    const auto t = label_stage(base, c);
    for (const auto& g : dimension_graph_stage(base, c, placement->locations, t))
      fixed.emplace(g.tag(), diversity_stage(base, *placement, g));
  } else if (parameter == "alpha") {
    const auto g = full_graph_stage(base, data->messages.corpus, placement->locations);
    fixed.emplace("full", diversity_stage(base, *placement, g));
  }

  for (const auto& v : values) {
    PipelineConfig cfg = base;
    if (parameter == "window") {
      const auto colon = v.find(':');
      if (colon == std::string::npos) throw InputError("window values look like start:end");
      set_config_value(cfg, "window_start", v.substr(0, colon));
      set_config_value(cfg, "window_end", v.substr(colon + 1));
    } else {
      set_config_value(cfg, parameter, v);
    }
    validate(cfg);
    DiversityTables tables = fixed;
    if (parameter == "min_weight") {
      const auto g = full_graph_stage(cfg, data->messages.corpus, placement->locations);
      tables.insert_or_assign("full", diversity_stage(cfg, *placement, g));
      fit_all(cfg, v, *data, *placement, tables);
    } else if (parameter == "alpha") {
      const auto& c = data->messages.corpus;
      const auto t = label_stage(cfg, c);
      for (const auto& g : dimension_graph_stage(cfg, c, placement->locations, t))
        tables.insert_or_assign(g.tag(), diversity_stage(cfg, *placement, g));
      fit_all(cfg, v, *data, *placement, tables);
    } else {
      std::optional<IngestedData> local;
      const IngestedData* d = &*data;
      if (parameter == "window") {
        local = load_inputs(cfg);
        d = &*local;
      }
      const auto p = place_users(cfg, *d);
      const auto gs = graph_stage(cfg, d->messages.corpus, p.locations);
      tables.insert_or_assign("full", diversity_stage(cfg, p, gs.full));
      for (const auto& g : gs.dims) tables.insert_or_assign(g.tag(), diversity_stage(cfg, p, g));
      fit_all(cfg, v, *d, p, tables);
    }
  }
  return rows;
}

inline void write_sweep(std::span<const SweepRow> rows, std::ostream& os) {
  CsvWriter w(os);
  w.row("parameter", "value", "model", "r2_adj");
  for (const auto& r : rows)
    w.row(r.parameter, r.value, r.model, r.r2_adj ? format_double(*r.r2_adj) : std::string("NA"));
}

// ---------------------------------------------------------------------------
// Random-message baseline

struct BaselineSummary {
  std::string feature;          // random.social or random.spatial
  std::vector<double> r2_adj;   // one per successful run
  std::size_t failed_runs = 0;
  std::optional<double> mean;
  std::optional<double> sd;     // undefined with fewer than 2 runs
};

// Each run keeps a uniform sample of round(fraction * n) messages, builds a
// graph from it, and fits gdp ~ diversity for both diversity kinds.
inline std::vector<BaselineSummary> random_baseline(const PipelineConfig& cfg) {
  validate(cfg);
  if (!cfg.seed) throw InputError("config: seed is required");
  const auto data = load_inputs(cfg);
  const auto placement = place_users(cfg, data);
  const auto& corpus = data.messages.corpus;
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.baseline_fraction * double(corpus.size()))));
  std::vector<BaselineSummary> out{{"random.social", {}, 0, {}, {}}, {"random.spatial", {}, 0, {}, {}}};
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::uint64_t r = 0; r < cfg.baseline_runs; ++r) {
    std::mt19937_64 rng(derive_seed(*cfg.seed, "baseline", r));
    std::vector<std::size_t> pick;
    std::sample(all.begin(), all.end(), std::back_inserter(pick), m, rng);
    std::vector<char> keep(corpus.size(), 0);
    for (auto i : pick) keep[i] = 1;
    GraphParams p;
    p.tag = "random";
    const auto g = in_stage("baseline", [&] {
      return build_graph_if(corpus, placement.locations, p, [&](std::size_t i) { return keep[i] != 0; },
                            static_cast<std::size_t>(cfg.threads));
    });
    DiversityTables tables;
    tables.emplace("random", diversity_stage(cfg, placement, g));
    for (auto& s : out) {
      try {
        s.r2_adj.push_back(fit_model({s.feature, {s.feature}}, placement.penetration.areas, tables,
                                     cfg.normalize).r2_adj);
      } catch (const NumericalError&) {
        ++s.failed_runs;
      } catch (const InputError&) {
        ++s.failed_runs;
      }
    }
  }
  for (auto& s : out) {
    if (s.r2_adj.empty()) continue;
    s.mean = detail::mean_of(s.r2_adj);
    if (s.r2_adj.size() >= 2) s.sd = detail::sd_of(s.r2_adj, *s.mean);
  }
  return out;
}

inline void write_baseline(std::span<const BaselineSummary> rows, std::ostream& os) {
  CsvWriter w(os);
  w.row("feature", "runs", "failed_runs", "mean_r2_adj", "sd_r2_adj", "sd_defined");
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  for (const auto& r : rows)
    w.row(r.feature, r.r2_adj.size(), r.failed_runs, opt(r.mean), opt(r.sd), r.sd ? "true" : "false");
}

}  // namespace socdim
