#pragma once

// Service configuration: a JSON file, optionally overridden by EMEDGE_*
// environment variables. EMEDGE_HTTP__PORT=9000 sets http.port; a double
// underscore separates nesting levels and values are read as JSON when they
// parse, otherwise as strings.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emedge/appliance.hpp"
#include "emedge/error.hpp"
#include "emedge/recommender.hpp"
#include "emedge/store.hpp"
#include "emedge/telemetry/mqtt_client.hpp"

extern char** environ;

namespace emedge::service {

using nlohmann::json;

struct SourceConfig {
  std::optional<std::string> broker;  // mqtt://host:port
  std::string topic_filter = "em3/#";
  std::optional<std::filesystem::path> replay;
  double replay_rate = 0.0;  // events per second, 0 = as fast as possible
  bool realtime = false;
  double speedup = 1.0;
  Timestamp reorder_window_s = 30;
};

struct HttpConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

struct ServiceConfig {
  std::string site = "home";
  std::string user = "default";
  std::filesystem::path store_path = "emedge-data";
  store::StoreOptions store;
  std::vector<ApplianceSpec> appliances;
  SourceConfig source;
  HttpConfig http;
  recommender::RecommenderConfig recommender;
  std::size_t event_history = 100000;
  double maintenance_interval_s = 10.0;
};

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{"site",   "user",        "store",        "appliances", "specs_file",
                                             "source", "http",        "tariff",       "co2_factor", "currency",
                                             "recommender", "events", "maintenance_interval_s"};
  return keys;
}

// EMEDGE_* variables as (lowercase path, raw value) pairs.
inline std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    if (kv.rfind("EMEDGE_", 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    std::string key = kv.substr(7, eq - 7);
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out[key] = kv.substr(eq + 1);
  }
  return out;
}

inline void apply_overrides(json& doc, const std::map<std::string, std::string>& overrides) {
  const auto& known = known_config_keys();
  for (const auto& [key, raw] : overrides) {
    std::vector<std::string> path;
    std::size_t start = 0;
    while (true) {
      const auto sep = key.find("__", start);
      path.push_back(key.substr(start, sep == std::string::npos ? std::string::npos : sep - start));
      if (sep == std::string::npos) break;
      start = sep + 2;
    }
    if (std::find(known.begin(), known.end(), path.front()) == known.end()) continue;
    json* node = &doc;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!(*node)[path[i]].is_object()) (*node)[path[i]] = json::object();
      node = &(*node)[path[i]];
    }
    auto value = json::parse(raw, nullptr, false);
    (*node)[path.back()] = value.is_discarded() ? json(raw) : value;
  }
}

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + key, "has the wrong type");
  }
}

}  // namespace detail

// `base_dir` resolves relative paths (store, specs file, replay file).
inline ServiceConfig config_from_json(const json& j, const std::filesystem::path& base_dir = ".") {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    const auto& known = known_config_keys();
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError(key, "unknown setting");
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  using detail::get_or;
  ServiceConfig c;
  c.site = get_or<std::string>(j, "site", c.site, "");
  c.user = get_or<std::string>(j, "user", c.user, "");
  if (!valid_id(c.site)) throw ConfigError("site", "must be non-empty [A-Za-z0-9_-]");

  const json store = j.value("store", json::object());
  c.store_path = resolve(get_or<std::string>(store, "path", c.store_path.string(), "store."));
  c.store.fsync = get_or<bool>(store, "fsync", c.store.fsync, "store.");
  c.store.segment_max_lines = get_or<std::size_t>(store, "segment_max_lines", c.store.segment_max_lines, "store.");
  c.store.max_raw_bytes = get_or<std::uint64_t>(store, "max_raw_bytes", c.store.max_raw_bytes, "store.");
  if (store.contains("retention")) {
    const auto& r = store["retention"];
    c.store.retention.raw_s =
        static_cast<Timestamp>(get_or<double>(r, "raw_days", 90.0, "store.retention.") * kSecondsPerDay);
    c.store.retention.presence_s =
        static_cast<Timestamp>(get_or<double>(r, "presence_days", 21.0, "store.retention.") * kSecondsPerDay);
  }

  if (j.contains("appliances") && j.contains("specs_file"))
    throw ConfigError("specs_file", "give either appliances or specs_file, not both");
  if (j.contains("appliances")) c.appliances = specs_from_json(j["appliances"]);
  if (j.contains("specs_file")) c.appliances = load_specs(resolve(get_or<std::string>(j, "specs_file", "", "")));
  if (c.appliances.empty()) throw ConfigError("appliances", "at least one appliance is required");

  const json src = j.value("source", json::object());
  if (src.contains("broker")) c.source.broker = get_or<std::string>(src, "broker", "", "source.");
  if (src.contains("replay")) c.source.replay = resolve(get_or<std::string>(src, "replay", "", "source."));
  c.source.topic_filter = get_or<std::string>(src, "topic_filter", c.source.topic_filter, "source.");
  c.source.replay_rate = get_or<double>(src, "replay_rate", c.source.replay_rate, "source.");
  c.source.realtime = get_or<bool>(src, "realtime", c.source.realtime, "source.");
  c.source.speedup = get_or<double>(src, "speedup", c.source.speedup, "source.");
  c.source.reorder_window_s = get_or<Timestamp>(src, "reorder_window_s", c.source.reorder_window_s, "source.");
  if (c.source.broker) telemetry::parse_endpoint(*c.source.broker);
  if (c.source.replay && !std::filesystem::exists(*c.source.replay))
    throw ConfigError("source.replay", "replay file '" + c.source.replay->string() + "' not found");
  if (c.source.reorder_window_s < 0) throw ConfigError("source.reorder_window_s", "must be >= 0");
  if (!(c.source.replay_rate >= 0.0)) throw ConfigError("source.replay_rate", "must be >= 0");

  const json http = j.value("http", json::object());
  c.http.host = get_or<std::string>(http, "host", c.http.host, "http.");
  c.http.port = get_or<int>(http, "port", c.http.port, "http.");
  if (c.http.port < 0 || c.http.port > 65535) throw ConfigError("http.port", "must lie in [0, 65535]");

  auto& r = c.recommender;
  r.tariff_per_kwh = get_or<double>(j, "tariff", r.tariff_per_kwh, "");
  r.co2_kg_per_kwh = get_or<double>(j, "co2_factor", r.co2_kg_per_kwh, "");
  r.currency = get_or<std::string>(j, "currency", r.currency, "");
  const json rec = j.value("recommender", json::object());
  r.t1_margin_c = get_or<double>(rec, "t1_margin_c", r.t1_margin_c, "recommender.");
  r.t2_daylight_lux = get_or<double>(rec, "t2_daylight_lux", r.t2_daylight_lux, "recommender.");
  r.cooldown_s = get_or<Timestamp>(rec, "cooldown_s", r.cooldown_s, "recommender.");
  r.feedback_timeout_s = get_or<Timestamp>(rec, "feedback_timeout_s", r.feedback_timeout_s, "recommender.");
  r.suppress_after_rejects = get_or<std::uint32_t>(rec, "suppress_after_rejects", r.suppress_after_rejects, "recommender.");
  r.suppress_for_s = get_or<Timestamp>(rec, "suppress_for_s", r.suppress_for_s, "recommender.");
  r.max_snapshot_skew_s = get_or<Timestamp>(rec, "max_snapshot_skew_s", r.max_snapshot_skew_s, "recommender.");
  r.habit_confidence = get_or<double>(rec, "habit_confidence", r.habit_confidence, "recommender.");
  r.habit_pacing_s = get_or<Timestamp>(rec, "habit_pacing_s", r.habit_pacing_s, "recommender.");
  recommender::validate(r);

  c.event_history = get_or<std::size_t>(j.value("events", json::object()), "history", c.event_history, "events.");
  c.maintenance_interval_s = get_or<double>(j, "maintenance_interval_s", c.maintenance_interval_s, "");
  if (!(c.maintenance_interval_s > 0.0)) throw ConfigError("maintenance_interval_s", "must be > 0");
  return c;
}

// Reads `path`, applies `overrides` (normally environment_overrides()) and
// validates the result.
inline ServiceConfig load_config(const std::filesystem::path& path,
                                 const std::map<std::string, std::string>& overrides = environment_overrides()) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config", "'" + path.string() + "': " + e.what());
  }
  apply_overrides(doc, overrides);
  return config_from_json(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace emedge::service
