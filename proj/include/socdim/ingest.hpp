#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "socdim/core.hpp"
#include "socdim/csv.hpp"

namespace socdim {

// ---------------------------------------------------------------------------
// Messages

struct MessageRecord {
  std::string message_id;
  UserId sender = 0;
  UserId receiver = 0;
  std::int64_t timestamp = 0;
  std::vector<double> scores;  // one per corpus dimension, each in [0,1]
};

// Column-oriented message store. Scores are row-major, one row per message.
struct MessageCorpus {
  std::vector<std::string> dimensions;
  std::vector<std::string> ids;
  std::vector<UserId> senders;
  std::vector<UserId> receivers;
  std::vector<std::int64_t> timestamps;
  std::vector<double> scores;

  std::size_t size() const { return senders.size(); }
  bool empty() const { return senders.empty(); }
  std::size_t dimension_count() const { return dimensions.size(); }

  std::optional<std::size_t> dimension_index(std::string_view name) const {
    for (std::size_t d = 0; d < dimensions.size(); ++d)
      if (dimensions[d] == name) return d;
    return std::nullopt;
  }

  std::span<const double> scores_of(std::size_t i) const {
    return {scores.data() + i * dimensions.size(), dimensions.size()};
  }
  double score(std::size_t i, std::size_t d) const { return scores[i * dimensions.size() + d]; }

  void push(MessageRecord r) {
    if (r.scores.size() != dimensions.size())
      throw InputError("message " + r.message_id + ": score count does not match dimensions");
    ids.push_back(std::move(r.message_id));
    senders.push_back(r.sender);
    receivers.push_back(r.receiver);
    timestamps.push_back(r.timestamp);
    scores.insert(scores.end(), r.scores.begin(), r.scores.end());
  }

  MessageRecord record(std::size_t i) const {
    auto s = scores_of(i);
    return {ids[i], senders[i], receivers[i], timestamps[i], {s.begin(), s.end()}};
  }

  // Keeps messages for which keep(i) is true, preserving order.
  template <typename Pred>
  MessageCorpus filtered(Pred keep) const {
    MessageCorpus out;
    out.dimensions = dimensions;
    for (std::size_t i = 0; i < size(); ++i)
      if (keep(i)) out.push(record(i));
    return out;
  }
};

enum class MessageFormat { kAuto, kCsv, kJsonl };

struct MessageSchema {
  std::string id_column = "message_id";
  std::string sender_column = "sender";
  std::string receiver_column = "receiver";
  std::string timestamp_column = "timestamp";
  // Dimension names, each read from the column of the same name. Empty means
  // every non-required column is a dimension, in file order.
  std::vector<std::string> dimensions;
  MessageFormat format = MessageFormat::kAuto;
};

// Inclusive UTC-seconds window applied while parsing.
struct TimeWindow {
  std::optional<std::int64_t> start;
  std::optional<std::int64_t> end;
  bool contains(std::int64_t t) const {
    return (!start || t >= *start) && (!end || t <= *end);
  }
};

struct MessageParseResult {
  MessageCorpus corpus;
  std::size_t rows = 0;
  std::size_t rejected = 0;
  std::size_t self_loops = 0;
  std::size_t outside_window = 0;
  std::vector<std::string> diagnostics;  // first few rejection reasons
};

namespace detail {

inline std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  if (auto i = parse_integer<std::int64_t>(s)) return i;
  if (auto d = parse_double(s); d && std::isfinite(*d) && std::abs(*d) < 9.2e18)
    return static_cast<std::int64_t>(std::floor(*d));
  return std::nullopt;
}

inline std::optional<double> parse_score(std::string_view s) {
  auto v = parse_double(s);
  if (!v || !std::isfinite(*v) || *v < 0.0 || *v > 1.0) return std::nullopt;
  return v;
}

class RowSink {
 public:
  RowSink(MessageParseResult& out, UserRegistry& users, const TimeWindow& window)
      : out_(out), users_(users), window_(window) {}

  void reject(std::string reason) {
    ++out_.rejected;
    if (out_.diagnostics.size() < 20) out_.diagnostics.push_back(std::move(reason));
  }

  void accept(std::string id, std::string_view sender, std::string_view receiver,
              std::int64_t ts, std::vector<double> scores) {
    if (sender.empty() || receiver.empty()) {
      reject("message " + id + ": empty sender or receiver");
      return;
    }
    if (sender == receiver) {
      ++out_.self_loops;
      return;
    }
    if (!window_.contains(ts)) {
      ++out_.outside_window;
      return;
    }
    MessageRecord r{std::move(id), users_.intern(sender), users_.intern(receiver), ts,
                    std::move(scores)};
    out_.corpus.push(std::move(r));
  }

 private:
  MessageParseResult& out_;
  UserRegistry& users_;
  const TimeWindow& window_;
};

inline std::vector<std::string> infer_dimensions(const std::vector<std::string>& columns,
                                                 const MessageSchema& schema) {
  std::vector<std::string> dims;
  for (const auto& c : columns)
    if (c != schema.id_column && c != schema.sender_column && c != schema.receiver_column &&
        c != schema.timestamp_column)
      dims.push_back(c);
  return dims;
}

inline void parse_messages_csv(std::istream& in, const MessageSchema& schema,
                               UserRegistry& users, const TimeWindow& window,
                               MessageParseResult& out, std::string_view name) {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw InputError(std::string(name) + ": empty message file");
  CsvHeader header(row);
  const auto id_col = header.require(schema.id_column, name);
  const auto src_col = header.require(schema.sender_column, name);
  const auto dst_col = header.require(schema.receiver_column, name);
  const auto ts_col = header.require(schema.timestamp_column, name);
  auto dims = schema.dimensions.empty() ? infer_dimensions(header.names(), schema)
                                        : schema.dimensions;
  if (dims.empty()) throw InputError(std::string(name) + ": no dimension score columns");
  std::vector<std::size_t> dim_cols;
  for (const auto& d : dims) dim_cols.push_back(header.require(d, name));
  out.corpus.dimensions = dims;

  RowSink sink(out, users, window);
  while (reader.next(row)) {
    ++out.rows;
    const std::string where = std::string(name) + ":" + std::to_string(reader.line());
    if (row.size() != header.size()) {
      sink.reject(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                  std::to_string(row.size()));
      continue;
    }
    auto ts = parse_timestamp(row[ts_col]);
    if (!ts) {
      sink.reject(where + ": unparseable timestamp '" + row[ts_col] + "'");
      continue;
    }
    std::vector<double> scores;
    scores.reserve(dims.size());
    bool ok = true;
    for (std::size_t k = 0; k < dims.size(); ++k) {
      auto s = parse_score(row[dim_cols[k]]);
      if (!s) {
        sink.reject(where + ": score for " + dims[k] + " not in [0,1]: '" + row[dim_cols[k]] + "'");
        ok = false;
        break;
      }
      scores.push_back(*s);
    }
    if (!ok) continue;
    sink.accept(row[id_col], row[src_col], row[dst_col], *ts, std::move(scores));
  }
}

inline std::optional<std::string> json_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  return std::nullopt;
}

inline std::optional<double> json_number(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_double(v.get<std::string>());
  return std::nullopt;
}

inline void parse_messages_jsonl(std::istream& in, const MessageSchema& schema,
                                 UserRegistry& users, const TimeWindow& window,
                                 MessageParseResult& out, std::string_view name) {
  std::string line;
  std::size_t lineno = 0;
  bool have_dims = false;
  std::vector<std::string> dims = schema.dimensions;
  RowSink sink(out, users, window);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++out.rows;
    const std::string where = std::string(name) + ":" + std::to_string(lineno);
    auto obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      sink.reject(where + ": not a JSON object");
      continue;
    }
    if (!have_dims) {
      for (const auto* col : {&schema.id_column, &schema.sender_column, &schema.receiver_column,
                              &schema.timestamp_column})
        if (!obj.contains(*col))
          throw InputError(std::string(name) + ": missing column '" + *col + "'");
      if (dims.empty()) {
        std::vector<std::string> keys;
        for (auto it = obj.begin(); it != obj.end(); ++it) keys.push_back(it.key());
        dims = infer_dimensions(keys, schema);
      }
      if (dims.empty()) throw InputError(std::string(name) + ": no dimension score columns");
      for (const auto& d : dims)
        if (!obj.contains(d)) throw InputError(std::string(name) + ": missing column '" + d + "'");
      out.corpus.dimensions = dims;
      have_dims = true;
    }
    auto field = [&](const std::string& key) -> const nlohmann::json* {
      auto it = obj.find(key);
      return it == obj.end() ? nullptr : &*it;
    };
    const auto* id = field(schema.id_column);
    const auto* src = field(schema.sender_column);
    const auto* dst = field(schema.receiver_column);
    const auto* tsv = field(schema.timestamp_column);
    std::optional<std::string> id_s, src_s, dst_s;
    if (id) id_s = json_text(*id);
    if (src) src_s = json_text(*src);
    if (dst) dst_s = json_text(*dst);
    if (!id_s || !src_s || !dst_s) {
      sink.reject(where + ": missing or non-scalar id/sender/receiver");
      continue;
    }
    std::optional<std::int64_t> ts;
    if (tsv && tsv->is_number_integer()) ts = tsv->get<std::int64_t>();
    else if (tsv && tsv->is_number()) ts = parse_timestamp(format_double(tsv->get<double>()));
    else if (tsv && tsv->is_string()) ts = parse_timestamp(tsv->get<std::string>());
    if (!ts) {
      sink.reject(where + ": unparseable timestamp");
      continue;
    }
    std::vector<double> scores;
    bool ok = true;
    for (const auto& d : dims) {
      const auto* v = field(d);
      auto s = v ? json_number(*v) : std::nullopt;
      if (!s || !std::isfinite(*s) || *s < 0.0 || *s > 1.0) {
        sink.reject(where + ": score for " + d + " missing or not in [0,1]");
        ok = false;
        break;
      }
      scores.push_back(*s);
    }
    if (!ok) continue;
    sink.accept(std::move(*id_s), *src_s, *dst_s, *ts, std::move(scores));
  }
  if (!have_dims) throw InputError(std::string(name) + ": empty message file");
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

}  // namespace detail

// Malformed rows are counted and skipped; self-loops and messages outside the
// window are dropped and counted separately.
inline MessageParseResult parse_messages(std::istream& in, const MessageSchema& schema,
                                         UserRegistry& users, const TimeWindow& window = {},
                                         std::string_view name = "messages") {
  MessageParseResult out;
  auto format = schema.format == MessageFormat::kAuto ? MessageFormat::kCsv : schema.format;
  if (format == MessageFormat::kJsonl)
    detail::parse_messages_jsonl(in, schema, users, window, out, name);
  else
    detail::parse_messages_csv(in, schema, users, window, out, name);
  return out;
}

inline MessageParseResult parse_messages(const std::filesystem::path& path,
                                         const MessageSchema& schema, UserRegistry& users,
                                         const TimeWindow& window = {}) {
  auto in = detail::open_input(path);
  MessageSchema resolved = schema;
  if (resolved.format == MessageFormat::kAuto) {
    const auto ext = path.extension().string();
    resolved.format = (ext == ".jsonl" || ext == ".json" || ext == ".ndjson")
                          ? MessageFormat::kJsonl
                          : MessageFormat::kCsv;
  }
  return parse_messages(in, resolved, users, window, path.filename().string());
}

inline void write_messages_csv(const MessageCorpus& corpus, const UserRegistry& users,
                               std::ostream& out) {
  CsvWriter w(out);
  std::vector<std::string> header{"message_id", "sender", "receiver", "timestamp"};
  header.insert(header.end(), corpus.dimensions.begin(), corpus.dimensions.end());
  w.row(std::span<const std::string>(header));
  std::vector<std::string> row;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    row.assign({corpus.ids[i], users.name(corpus.senders[i]), users.name(corpus.receivers[i]),
                std::to_string(corpus.timestamps[i])});
    for (double s : corpus.scores_of(i)) row.push_back(format_double(s));
    w.row(std::span<const std::string>(row));
  }
}

// ---------------------------------------------------------------------------
// Areas

struct Area {
  std::string code;
  double population = 0;
  double gdp_per_capita = 0;
  double density = 0;
  double latitude = 0;
  double longitude = 0;
  bool included = true;

  bool operator==(const Area&) const = default;
};

class AreaTable {
 public:
  AreaId add(Area a) {
    if (a.code.empty()) throw InputError("area with empty code");
    if (!(a.population > 0)) throw InputError("area " + a.code + ": population must be > 0");
    if (!(a.latitude >= -90 && a.latitude <= 90))
      throw InputError("area " + a.code + ": latitude out of [-90, 90]");
    if (!(a.longitude >= -180 && a.longitude <= 180))
      throw InputError("area " + a.code + ": longitude out of [-180, 180]");
    if (index_.contains(a.code)) throw InputError("duplicate area " + a.code);
    const auto id = static_cast<AreaId>(areas_.size());
    index_.emplace(a.code, id);
    areas_.push_back(std::move(a));
    return id;
  }

  std::optional<AreaId> find(std::string_view code) const {
    if (auto it = index_.find(std::string(code)); it != index_.end()) return it->second;
    return std::nullopt;
  }

  const Area& operator[](AreaId id) const { return areas_.at(static_cast<std::size_t>(id)); }
  Area& operator[](AreaId id) { return areas_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return areas_.size(); }
  std::size_t included_count() const {
    return static_cast<std::size_t>(
        std::count_if(areas_.begin(), areas_.end(), [](const Area& a) { return a.included; }));
  }
  auto begin() const { return areas_.begin(); }
  auto end() const { return areas_.end(); }

  bool operator==(const AreaTable& o) const { return areas_ == o.areas_; }

 private:
  std::vector<Area> areas_;
  std::map<std::string, AreaId> index_;
};

inline AreaTable read_areas(std::istream& in, std::string_view name = "areas") {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw InputError(std::string(name) + ": empty area file");
  CsvHeader h(row);
  const auto c_area = h.require("area", name), c_pop = h.require("population", name),
             c_gdp = h.require("gdp_per_capita", name), c_den = h.require("density", name),
             c_lat = h.require("centroid_lat", name), c_lon = h.require("centroid_lon", name);
  AreaTable table;
  while (reader.next(row)) {
    const std::string where = std::string(name) + ":" + std::to_string(reader.line());
    if (row.size() != h.size()) throw InputError(where + ": wrong field count");
    auto num = [&](std::size_t c) {
      auto v = parse_double(row[c]);
      if (!v || !std::isfinite(*v))
        throw InputError(where + ": bad number in column " + h.names()[c]);
      return *v;
    };
    table.add({row[c_area], num(c_pop), num(c_gdp), num(c_den), num(c_lat), num(c_lon), true});
  }
  if (table.size() == 0) throw InputError(std::string(name) + ": no areas");
  return table;
}

inline AreaTable read_areas(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return read_areas(in, path.filename().string());
}

inline void write_areas(const AreaTable& areas, std::ostream& out) {
  CsvWriter w(out);
  w.row("area", "population", "gdp_per_capita", "density", "centroid_lat", "centroid_lon");
  for (const auto& a : areas)
    w.row(a.code, a.population, a.gdp_per_capita, a.density, a.latitude, a.longitude);
}

// ---------------------------------------------------------------------------
// Geo-referencing

struct GeoActivityRecord {
  UserId user = 0;
  AreaId area = kNoArea;
  std::uint64_t count = 0;
};

struct ActivityParseResult {
  std::vector<GeoActivityRecord> records;
  std::size_t rejected = 0;
  std::vector<std::string> diagnostics;
};

// Rows naming an unknown area, a negative count, or a repeated (user, area)
// pair are rejected.
inline ActivityParseResult read_activity(std::istream& in, UserRegistry& users,
                                         const AreaTable& areas,
                                         std::string_view name = "activity") {
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) throw InputError(std::string(name) + ": empty activity file");
  CsvHeader h(row);
  const auto c_user = h.require("user", name), c_area = h.require("area", name),
             c_count = h.require("count", name);
  ActivityParseResult out;
  std::set<std::pair<UserId, AreaId>> pairs;
  auto reject = [&](std::string why) {
    ++out.rejected;
    if (out.diagnostics.size() < 20) out.diagnostics.push_back(std::move(why));
  };
  while (reader.next(row)) {
    const std::string where = std::string(name) + ":" + std::to_string(reader.line());
    if (row.size() != h.size() || row[c_user].empty()) {
      reject(where + ": malformed row");
      continue;
    }
    auto area = areas.find(row[c_area]);
    if (!area) {
      reject(where + ": unknown area '" + row[c_area] + "'");
      continue;
    }
    auto count = parse_integer<std::uint64_t>(row[c_count]);
    if (!count) {
      reject(where + ": bad count '" + row[c_count] + "'");
      continue;
    }
    const UserId u = users.intern(row[c_user]);
    if (!pairs.emplace(u, *area).second) {
      reject(where + ": duplicate (user, area) pair");
      continue;
    }
    out.records.push_back({u, *area, *count});
  }
  return out;
}

inline ActivityParseResult read_activity(const std::filesystem::path& path, UserRegistry& users,
                                         const AreaTable& areas) {
  auto in = detail::open_input(path);
  return read_activity(in, users, areas, path.filename().string());
}

inline void write_activity(std::span<const GeoActivityRecord> records, const UserRegistry& users,
                           const AreaTable& areas, std::ostream& out) {
  CsvWriter w(out);
  w.row("user", "area", "count");
  for (const auto& r : records) w.row(users.name(r.user), areas[r.area].code, r.count);
}

// Dense user -> area assignment; unassigned users hold kNoArea.
class UserLocationMap {
 public:
  UserLocationMap() = default;
  explicit UserLocationMap(std::size_t user_count) : area_(user_count, kNoArea) {}

  void assign(UserId u, AreaId a) {
    if (u >= area_.size()) area_.resize(static_cast<std::size_t>(u) + 1, kNoArea);
    area_[u] = a;
  }
  void unassign(UserId u) {
    if (u < area_.size()) area_[u] = kNoArea;
  }
  AreaId area_of(UserId u) const { return u < area_.size() ? area_[u] : kNoArea; }
  bool located(UserId u) const { return area_of(u) != kNoArea; }

  std::size_t located_count() const {
    return static_cast<std::size_t>(
        std::count_if(area_.begin(), area_.end(), [](AreaId a) { return a != kNoArea; }));
  }

  std::vector<std::size_t> users_per_area(std::size_t area_count) const {
    std::vector<std::size_t> counts(area_count, 0);
    for (AreaId a : area_)
      if (a != kNoArea) ++counts.at(static_cast<std::size_t>(a));
    return counts;
  }

  std::span<const AreaId> raw() const { return area_; }
  std::span<AreaId> raw() { return area_; }
  std::size_t capacity() const { return area_.size(); }

  bool operator==(const UserLocationMap& o) const {
    const auto n = std::max(area_.size(), o.area_.size());
    for (std::size_t i = 0; i < n; ++i)
      if (area_of(static_cast<UserId>(i)) != o.area_of(static_cast<UserId>(i))) return false;
    return true;
  }

 private:
  std::vector<AreaId> area_;
};

struct GeoRefParams {
  std::uint64_t n_min = 3;
  double purity = 0.95;
};

// A user is placed in area a iff count(u,a) >= n_min and count(u,a) is at least
// `purity` of the user's geo-salient activity. Purity > 0.5 makes the area unique.
inline UserLocationMap georeference_users(std::span<const GeoActivityRecord> activity,
                                          GeoRefParams params, std::size_t user_count = 0) {
  if (params.n_min < 1) throw InputError("n_min must be >= 1");
  if (!(params.purity > 0.5 && params.purity <= 1.0))
    throw InputError("purity must be in (0.5, 1]");
  std::vector<GeoActivityRecord> sorted(activity.begin(), activity.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.user != b.user ? a.user < b.user : a.area < b.area;
  });
  UserLocationMap out(user_count);
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::uint64_t total = 0;
    const GeoActivityRecord* best = nullptr;
    while (j < sorted.size() && sorted[j].user == sorted[i].user) {
      total += sorted[j].count;
      if (!best || sorted[j].count > best->count) best = &sorted[j];
      ++j;
    }
    if (best && total > 0 && best->count >= params.n_min &&
        static_cast<double>(best->count) / static_cast<double>(total) >= params.purity)
      out.assign(best->user, best->area);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Penetration filter

struct PenetrationParams {
  double sd_mult = 1.0;
  std::size_t min_users = 1000;
};

struct PenetrationResult {
  AreaTable areas;  // with `included` updated
  double slope = 0;
  double intercept = 0;
  double residual_mean = 0;
  double residual_sd = 0;  // population standard deviation
  std::vector<double> residuals;
  std::vector<std::size_t> user_counts;
};

// Fits user_count ~ population over every area and excludes areas whose
// residual lies more than sd_mult residual SDs from the mean residual, or
// whose user count is below min_users. Both rules apply to the full set.
inline PenetrationResult filter_states_by_penetration(const AreaTable& areas,
                                                      std::span<const std::size_t> user_counts,
                                                      PenetrationParams params = {}) {
  const std::size_t n = areas.size();
  if (user_counts.size() != n) throw InputError("user_counts size does not match area table");
  if (std::count_if(user_counts.begin(), user_counts.end(), [](auto c) { return c > 0; }) < 3)
    throw InputError("penetration filter needs at least 3 areas with users");

  PenetrationResult r;
  r.areas = areas;
  r.user_counts.assign(user_counts.begin(), user_counts.end());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += areas[static_cast<AreaId>(i)].population;
    my += static_cast<double>(user_counts[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = areas[static_cast<AreaId>(i)].population - mx;
    sxx += dx * dx;
    sxy += dx * (static_cast<double>(user_counts[i]) - my);
  }
  if (!(sxx > 0)) throw NumericalError("penetration fit is degenerate: all populations equal");
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;

  double max_count = 1;
  r.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = static_cast<double>(user_counts[i]);
    r.residuals[i] = y - (r.intercept + r.slope * areas[static_cast<AreaId>(i)].population);
    max_count = std::max(max_count, y);
  }
  r.residual_mean = std::accumulate(r.residuals.begin(), r.residuals.end(), 0.0) /
                    static_cast<double>(n);
  double ss = 0;
  for (double e : r.residuals) ss += (e - r.residual_mean) * (e - r.residual_mean);
  r.residual_sd = std::sqrt(ss / static_cast<double>(n));

  // Rounding noise on an exact fit must not count as deviation.
  const double floor_tol = 1e-9 * max_count;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = std::abs(r.residuals[i] - r.residual_mean);
    const bool outlier = dev > params.sd_mult * r.residual_sd && dev > floor_tol;
    const bool sparse = user_counts[i] < params.min_users;
    r.areas[static_cast<AreaId>(i)].included = !(outlier || sparse);
  }
  return r;
}

}  // namespace socdim
