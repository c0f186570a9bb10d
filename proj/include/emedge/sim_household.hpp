#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "emedge/appliance.hpp"
#include "emedge/error.hpp"
#include "emedge/micromoment.hpp"
#include "emedge/time_util.hpp"

namespace emedge::sim {

inline constexpr std::string_view kOutdoorZone = "outdoor";
// 2023-11-20 00:00:00 UTC, a Monday.
inline constexpr Timestamp kDefaultStart = 1700438400;

// Multiplicative Gaussian error applied to measured watts.
struct NoiseModel {
  double relative_sigma = 0.0;

  bool operator==(const NoiseModel&) const = default;
};

// Sigma whose expected |error| equals (100 - target_accuracy) percent.
inline NoiseModel calibrate_noise(double target_accuracy_pct) {
  if (!(target_accuracy_pct > 50.0 && target_accuracy_pct < 100.0))
    throw ConfigError("target_accuracy", "must lie strictly between 50 and 100");
  const double mean_abs_error = (100.0 - target_accuracy_pct) / 100.0;
  return {mean_abs_error / std::sqrt(2.0 / std::numbers::pi)};
}

enum class DayFilter { all, weekdays, weekends };

inline bool day_matches(DayFilter f, Timestamp ts) {
  switch (f) {
    case DayFilter::all: return true;
    case DayFilter::weekdays: return !is_weekend(ts);
    case DayFilter::weekends: return is_weekend(ts);
  }
  return true;
}

// Daily ON window in seconds of day. end <= start wraps past midnight, and
// the day filter applies to the day the window opened.
struct ScheduleWindow {
  Timestamp start_s = 0;
  Timestamp end_s = 0;
  double level = 1.0;  // fraction of dacr_max_w drawn while ON
  DayFilter days = DayFilter::all;
};

struct ApplianceSchedule {
  ApplianceSpec spec;
  std::vector<ScheduleWindow> windows;
  // Optional hourly load profile: probability of being ON during each clock hour.
  std::optional<std::array<double, 24>> hourly_on_probability;
  double jitter = 0.0;  // uniform multiplicative ON-power jitter, e.g. 0.05 for +-5%
  double hourly_level = 1.0;  // level used for hours switched on by hourly_on_probability
};

struct OccupancyRule {
  std::string zone;
  std::array<double, 24> weekday{};
  std::array<double, 24> weekend{};
};

struct EnvironmentModel {
  double indoor_temp_min_c = 22.0;
  double indoor_temp_max_c = 27.0;
  double outdoor_temp_min_c = 17.0;
  double outdoor_temp_max_c = 33.0;
  double temp_peak_hour = 15.0;
  double humidity_pct = 50.0;
  double humidity_sigma = 2.0;
  double outdoor_lux_peak = 20000.0;
  double indoor_lux_peak = 400.0;
};

struct SimConfig {
  std::uint64_t seed = 0;
  std::string site = "home";
  Timestamp start = kDefaultStart;
  Timestamp duration_s = kSecondsPerDay;
  Timestamp sample_interval_s = 60;
  std::vector<ApplianceSchedule> appliances;
  std::vector<OccupancyRule> occupancy;
  EnvironmentModel environment;
  NoiseModel noise;
};

// Home 18:00-08:00 on weekdays and all day at weekends.
inline OccupancyRule default_occupancy(std::string zone, double presence = 1.0) {
  OccupancyRule r;
  r.zone = std::move(zone);
  for (int h = 0; h < 24; ++h) {
    r.weekday[static_cast<std::size_t>(h)] = (h < 8 || h >= 18) ? presence : 0.0;
    r.weekend[static_cast<std::size_t>(h)] = presence;
  }
  return r;
}

inline void validate(const SimConfig& c) {
  if (c.duration_s <= 0) throw ConfigError("duration", "must be > 0");
  if (c.sample_interval_s <= 0) throw ConfigError("sample_interval", "must be > 0");
  if (!valid_id(c.site)) throw ConfigError("site", "must be non-empty [A-Za-z0-9_-]");
  if (!(c.noise.relative_sigma >= 0.0 && c.noise.relative_sigma < 0.5))
    throw ConfigError("noise.relative_sigma", "must lie in [0, 0.5)");
  std::set<std::string> ids;
  for (const auto& a : c.appliances) {
    validate(a.spec);
    if (!ids.insert(a.spec.id).second) throw ConfigError("appliances", "duplicate id '" + a.spec.id + "'");
    if (!(a.jitter >= 0.0 && a.jitter < 1.0)) throw ConfigError("appliances." + a.spec.id + ".jitter", "must lie in [0, 1)");
    for (const auto& w : a.windows) {
      if (w.start_s < 0 || w.start_s > kSecondsPerDay || w.end_s < 0 || w.end_s > kSecondsPerDay)
        throw ConfigError("appliances." + a.spec.id + ".windows", "times must lie within one day");
      if (!(w.level > 0.0)) throw ConfigError("appliances." + a.spec.id + ".windows.level", "must be > 0");
    }
    if (!(a.hourly_level > 0.0 && a.hourly_level <= 2.0))
      throw ConfigError("appliances." + a.spec.id + ".hourly_level", "must lie in (0, 2]");
    if (a.hourly_on_probability)
      for (double p : *a.hourly_on_probability)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("appliances." + a.spec.id + ".hourly_on_probability", "must lie in [0,1]");
  }
  std::set<std::string> zones;
  for (const auto& r : c.occupancy) {
    if (!valid_id(r.zone)) throw ConfigError("occupancy.zone", "invalid zone id");
    if (!zones.insert(r.zone).second) throw ConfigError("occupancy", "duplicate zone '" + r.zone + "'");
    for (const auto* profile : {&r.weekday, &r.weekend})
      for (double p : *profile)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("occupancy." + r.zone, "presence probability outside [0,1]");
  }
}

struct ApplianceTrace {
  ApplianceSpec spec;
  std::vector<double> true_w;
  std::vector<double> measured_w;
  std::vector<MicroMoment> labels;

  bool operator==(const ApplianceTrace&) const = default;
};

struct EnvironmentTrace {
  std::vector<double> temperature_c;
  std::vector<double> humidity_pct;
  std::vector<double> lux;

  bool operator==(const EnvironmentTrace&) const = default;
};

// Every series is indexed by position in `timestamps`.
struct SimTrace {
  std::string site;
  std::vector<Timestamp> timestamps;
  std::vector<ApplianceTrace> appliances;
  std::map<std::string, std::vector<std::uint8_t>> occupancy;  // zone -> 0/1
  std::map<std::string, EnvironmentTrace> environment;         // zone (incl. outdoor) -> readings

  std::vector<OccupancyPoint> occupancy_points(const std::string& zone) const {
    std::vector<OccupancyPoint> out;
    const auto& occ = occupancy.at(zone);
    out.reserve(timestamps.size());
    for (std::size_t i = 0; i < timestamps.size(); ++i) out.push_back({timestamps[i], occ[i] != 0});
    return out;
  }

  std::vector<PowerPoint> power_points(const ApplianceTrace& a, bool measured) const {
    std::vector<PowerPoint> out;
    out.reserve(timestamps.size());
    const auto& src = measured ? a.measured_w : a.true_w;
    for (std::size_t i = 0; i < timestamps.size(); ++i) out.push_back({timestamps[i], src[i]});
    return out;
  }

  bool operator==(const SimTrace&) const = default;
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream per (seed, purpose) so adding an appliance does not
// perturb the draws of the others.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::string_view purpose) {
  return std::mt19937_64(splitmix64(seed ^ fnv1a(purpose)));
}

inline bool in_window(const ScheduleWindow& w, Timestamp ts) {
  const Timestamp sod = seconds_of_day(ts);
  if (w.start_s < w.end_s) return sod >= w.start_s && sod < w.end_s && day_matches(w.days, ts);
  if (w.start_s == w.end_s) return false;
  if (sod >= w.start_s) return day_matches(w.days, ts);
  if (sod < w.end_s) return day_matches(w.days, ts - kSecondsPerDay);
  return false;
}

// Bernoulli draw per clock hour, generated lazily in time order.
class HourlyDraw {
 public:
  explicit HourlyDraw(std::mt19937_64 rng) : rng_(std::move(rng)) {}

  bool at(Timestamp ts, double probability) {
    const Timestamp slot = floor_to(ts, kSecondsPerHour);
    if (!slot_ || *slot_ != slot) {
      slot_ = slot;
      value_ = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < probability;
    }
    return value_;
  }

 private:
  std::mt19937_64 rng_;
  std::optional<Timestamp> slot_;
  bool value_ = false;
};

inline double daily_sinusoid(double lo, double hi, double peak_hour, Timestamp ts) {
  const double phase = 2.0 * std::numbers::pi * (hour_of_day(ts) - peak_hour) / 24.0;
  return lo + (hi - lo) * 0.5 * (1.0 + std::cos(phase));
}

// 0 outside 06:00-18:00, half-sine in between.
inline double daylight_fraction(Timestamp ts) {
  const double h = hour_of_day(ts);
  if (h <= 6.0 || h >= 18.0) return 0.0;
  return std::sin(std::numbers::pi * (h - 6.0) / 12.0);
}

}  // namespace detail

inline SimTrace generate(const SimConfig& config) {
  validate(config);
  SimTrace trace;
  trace.site = config.site;
  const auto n = static_cast<std::size_t>((config.duration_s + config.sample_interval_s - 1) / config.sample_interval_s);
  trace.timestamps.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    trace.timestamps.push_back(config.start + static_cast<Timestamp>(i) * config.sample_interval_s);

  std::set<std::string> zones;
  for (const auto& r : config.occupancy) zones.insert(r.zone);
  for (const auto& a : config.appliances) zones.insert(a.spec.zone_id);

  for (const auto& zone : zones) {
    auto it = std::find_if(config.occupancy.begin(), config.occupancy.end(),
                           [&](const OccupancyRule& r) { return r.zone == zone; });
    const OccupancyRule rule = it != config.occupancy.end() ? *it : default_occupancy(zone);
    detail::HourlyDraw draw(detail::stream_rng(config.seed, "occupancy/" + zone));
    auto& occ = trace.occupancy[zone];
    occ.reserve(n);
    for (Timestamp ts : trace.timestamps) {
      const auto hour = static_cast<std::size_t>(seconds_of_day(ts) / kSecondsPerHour);
      const double p = is_weekend(ts) ? rule.weekend[hour] : rule.weekday[hour];
      occ.push_back(draw.at(ts, p) ? 1 : 0);
    }
  }

  const auto& env = config.environment;
  auto make_env = [&](const std::string& zone, bool outdoor) {
    auto rng = detail::stream_rng(config.seed, "environment/" + zone);
    std::normal_distribution<double> hum_noise(0.0, env.humidity_sigma);
    EnvironmentTrace e;
    for (Timestamp ts : trace.timestamps) {
      const double t = outdoor ? detail::daily_sinusoid(env.outdoor_temp_min_c, env.outdoor_temp_max_c, env.temp_peak_hour, ts)
                               : detail::daily_sinusoid(env.indoor_temp_min_c, env.indoor_temp_max_c, env.temp_peak_hour, ts);
      const double h = env.humidity_sigma > 0.0 ? env.humidity_pct + hum_noise(rng) : env.humidity_pct;
      const double lux = detail::daylight_fraction(ts) * (outdoor ? env.outdoor_lux_peak : env.indoor_lux_peak);
      e.temperature_c.push_back(t);
      e.humidity_pct.push_back(std::clamp(h, 0.0, 100.0));
      e.lux.push_back(lux);
    }
    return e;
  };
  for (const auto& zone : zones) trace.environment[zone] = make_env(zone, false);
  trace.environment[std::string(kOutdoorZone)] = make_env(std::string(kOutdoorZone), true);

  for (const auto& a : config.appliances) {
    ApplianceTrace out;
    out.spec = a.spec;
    out.true_w.reserve(n);
    out.measured_w.reserve(n);
    detail::HourlyDraw hourly(detail::stream_rng(config.seed, "hourly/" + a.spec.id));
    auto jitter_rng = detail::stream_rng(config.seed, "jitter/" + a.spec.id);
    auto noise_rng = detail::stream_rng(config.seed, "noise/" + a.spec.id);
    std::uniform_real_distribution<double> jitter(-a.jitter, a.jitter);
    std::normal_distribution<double> noise(0.0, config.noise.relative_sigma);

    for (Timestamp ts : trace.timestamps) {
      std::optional<double> level;
      for (const auto& w : a.windows)
        if (detail::in_window(w, ts)) {
          level = w.level;
          break;
        }
      if (!level && a.hourly_on_probability) {
        const auto hour = static_cast<std::size_t>(seconds_of_day(ts) / kSecondsPerHour);
        if (hourly.at(ts, (*a.hourly_on_probability)[hour])) level = a.hourly_level;
      }
      double w = a.spec.dspc_w;
      if (level) {
        w = *level * a.spec.dacr_max_w;
        if (a.jitter > 0.0) w *= 1.0 + jitter(jitter_rng);
      }
      out.true_w.push_back(w);
      const double eps = config.noise.relative_sigma > 0.0 ? noise(noise_rng) : 0.0;
      out.measured_w.push_back(std::max(0.0, w * (1.0 + eps)));
    }
    out.labels = extract_series(a.spec, trace.power_points(out, false), trace.occupancy_points(a.spec.zone_id));
    trace.appliances.push_back(std::move(out));
  }
  return trace;
}

// Living room with an AC, a television and a light, used to benchmark the
// classifiers. ON levels sit on both sides of the 95 % excessive threshold
// and random hourly sessions add frequent switching.
inline SimConfig benchmark_household(std::uint64_t seed, Timestamp duration_s, Timestamp sample_interval_s = 30) {
  using W = ScheduleWindow;
  constexpr Timestamp h = kSecondsPerHour;
  SimConfig c;
  c.seed = seed;
  c.duration_s = duration_s;
  c.sample_interval_s = sample_interval_s;
  auto hourly = [](int from, int to, double p) {
    std::array<double, 24> a{};
    for (int i = from; i < to; ++i) a[static_cast<std::size_t>(i)] = p;
    return a;
  };
  ApplianceSchedule ac{catalog_spec("Air conditioner", "ac1", "living"), {W{13 * h, 15 * h, 0.95}, W{18 * h, 23 * h, 0.7}},
                       hourly(8, 13, 0.35), 0.05, 0.6};
  ApplianceSchedule tv{catalog_spec("Television", "tv1", "living"), {W{19 * h, 21 * h, 0.95}, W{21 * h, 23 * h, 0.8}},
                       hourly(9, 18, 0.35), 0.05, 0.7};
  ApplianceSchedule light{catalog_spec("Light", "light1", "living"), {W{18 * h, 20 * h, 0.95}, W{20 * h, 24 * h, 0.6}},
                          hourly(0, 18, 0.3), 0.05, 0.8};
  c.appliances = {ac, tv, light};
  c.occupancy = {default_occupancy("living", 0.9)};
  return c;
}

// A small three-room household used as the default simulation.
inline SimConfig default_household(std::uint64_t seed, Timestamp duration_s) {
  using W = ScheduleWindow;
  constexpr Timestamp h = kSecondsPerHour;
  SimConfig c;
  c.seed = seed;
  c.duration_s = duration_s;

  ApplianceSchedule ac{catalog_spec("Air conditioner", "ac1", "living"), {}, std::nullopt, 0.0};
  ac.windows = {W{18 * h, 23 * h, 1.0, DayFilter::weekdays}, W{11 * h, 17 * h, 0.8, DayFilter::weekends}};
  ApplianceSchedule tv{catalog_spec("Television", "tv1", "living"), {W{19 * h, 23 * h}}, std::nullopt, 0.0};
  ApplianceSchedule light{catalog_spec("Light", "light1", "living"), {W{17 * h, 24 * h}}, std::nullopt, 0.0};
  ApplianceSchedule laptop{catalog_spec("Laptop", "laptop1", "bedroom"), {}, std::nullopt, 0.0};
  laptop.windows = {W{7 * h, 8 * h + 30 * 60, 0.7, DayFilter::weekdays}, W{20 * h, 23 * h, 0.9}};
  ApplianceSchedule fridge{catalog_spec("Refrigerator", "fridge1", "kitchen"), {}, std::nullopt, 0.0};
  fridge.hourly_on_probability.emplace();
  fridge.hourly_on_probability->fill(0.5);
  ApplianceSchedule microwave{catalog_spec("Microwave", "microwave1", "kitchen"), {}, std::nullopt, 0.0};
  microwave.windows = {W{7 * h, 7 * h + 300}, W{19 * h, 19 * h + 600}};

  c.appliances = {ac, tv, light, laptop, fridge, microwave};
  c.occupancy = {default_occupancy("living", 0.85), default_occupancy("bedroom"), default_occupancy("kitchen", 0.7)};
  return c;
}

// ---- configuration file -------------------------------------------------

inline DayFilter parse_day_filter(const std::string& s) {
  if (s == "all") return DayFilter::all;
  if (s == "weekdays") return DayFilter::weekdays;
  if (s == "weekends") return DayFilter::weekends;
  throw ConfigError("windows.days", "expected all|weekdays|weekends, got '" + s + "'");
}

inline std::string_view to_string(DayFilter f) {
  switch (f) {
    case DayFilter::all: return "all";
    case DayFilter::weekdays: return "weekdays";
    case DayFilter::weekends: return "weekends";
  }
  return "all";
}

inline nlohmann::json to_json(const SimConfig& c) {
  using nlohmann::json;
  json apps = json::array();
  for (const auto& a : c.appliances) {
    json windows = json::array();
    for (const auto& w : a.windows)
      windows.push_back({{"start_s", w.start_s}, {"end_s", w.end_s}, {"level", w.level}, {"days", std::string(to_string(w.days))}});
    json j = {{"spec", emedge::to_json(a.spec)}, {"windows", windows}, {"jitter", a.jitter}};
    if (a.hourly_on_probability) {
      j["hourly_on_probability"] = *a.hourly_on_probability;
      j["hourly_level"] = a.hourly_level;
    }
    apps.push_back(j);
  }
  json occ = json::array();
  for (const auto& r : c.occupancy) occ.push_back({{"zone", r.zone}, {"weekday", r.weekday}, {"weekend", r.weekend}});
  const auto& e = c.environment;
  return {{"seed", c.seed},
          {"site", c.site},
          {"start", c.start},
          {"duration_s", c.duration_s},
          {"sample_interval_s", c.sample_interval_s},
          {"appliances", apps},
          {"occupancy", occ},
          {"environment",
           {{"indoor_temp_min_c", e.indoor_temp_min_c},
            {"indoor_temp_max_c", e.indoor_temp_max_c},
            {"outdoor_temp_min_c", e.outdoor_temp_min_c},
            {"outdoor_temp_max_c", e.outdoor_temp_max_c},
            {"temp_peak_hour", e.temp_peak_hour},
            {"humidity_pct", e.humidity_pct},
            {"humidity_sigma", e.humidity_sigma},
            {"outdoor_lux_peak", e.outdoor_lux_peak},
            {"indoor_lux_peak", e.indoor_lux_peak}}},
          {"noise", {{"relative_sigma", c.noise.relative_sigma}}}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.site = j.value("site", c.site);
    c.start = j.value("start", c.start);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.sample_interval_s = j.value("sample_interval_s", c.sample_interval_s);
    for (const auto& a : j.value("appliances", nlohmann::json::array())) {
      ApplianceSchedule s;
      s.spec = spec_from_json(a.at("spec"));
      for (const auto& w : a.value("windows", nlohmann::json::array()))
        s.windows.push_back({w.at("start_s").get<Timestamp>(), w.at("end_s").get<Timestamp>(), w.value("level", 1.0),
                             parse_day_filter(w.value("days", std::string("all")))});
      if (a.contains("hourly_on_probability")) s.hourly_on_probability = a["hourly_on_probability"].get<std::array<double, 24>>();
      s.jitter = a.value("jitter", 0.0);
      s.hourly_level = a.value("hourly_level", 1.0);
      c.appliances.push_back(std::move(s));
    }
    for (const auto& r : j.value("occupancy", nlohmann::json::array()))
      c.occupancy.push_back({r.at("zone").get<std::string>(), r.at("weekday").get<std::array<double, 24>>(),
                             r.at("weekend").get<std::array<double, 24>>()});
    if (j.contains("environment")) {
      const auto& e = j["environment"];
      auto& m = c.environment;
      m.indoor_temp_min_c = e.value("indoor_temp_min_c", m.indoor_temp_min_c);
      m.indoor_temp_max_c = e.value("indoor_temp_max_c", m.indoor_temp_max_c);
      m.outdoor_temp_min_c = e.value("outdoor_temp_min_c", m.outdoor_temp_min_c);
      m.outdoor_temp_max_c = e.value("outdoor_temp_max_c", m.outdoor_temp_max_c);
      m.temp_peak_hour = e.value("temp_peak_hour", m.temp_peak_hour);
      m.humidity_pct = e.value("humidity_pct", m.humidity_pct);
      m.humidity_sigma = e.value("humidity_sigma", m.humidity_sigma);
      m.outdoor_lux_peak = e.value("outdoor_lux_peak", m.outdoor_lux_peak);
      m.indoor_lux_peak = e.value("indoor_lux_peak", m.indoor_lux_peak);
    }
    if (j.contains("noise")) c.noise.relative_sigma = j["noise"].value("relative_sigma", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("sim_config", e.what());
  }
  validate(c);
  return c;
}

// ---- trace files ---------------------------------------------------------

inline std::string power_topic(std::string_view site, std::string_view zone, std::string_view appliance) {
  return fmt::format("em3/{}/{}/{}/power", site, zone, appliance);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw StorageError("write failed for '" + path.string() + "'");
}

// Writes one CSV per signal plus appliances.json and the replayable
// events.jsonl stream. Environment and occupancy events precede power
// events that share a timestamp.
inline void write_trace(const SimTrace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& ts = trace.timestamps;
  std::vector<ApplianceSpec> specs;
  for (const auto& a : trace.appliances) {
    specs.push_back(a.spec);
    std::string power = "ts,true_w,measured_w\n";
    std::string labels = "ts,label\n";
    for (std::size_t i = 0; i < ts.size(); ++i) {
      power += fmt::format("{},{},{}\n", ts[i], a.true_w[i], a.measured_w[i]);
      labels += fmt::format("{},{}\n", ts[i], to_int(a.labels[i]));
    }
    write_file(dir / ("power_" + a.spec.id + ".csv"), power);
    write_file(dir / ("labels_" + a.spec.id + ".csv"), labels);
  }
  for (const auto& [zone, occ] : trace.occupancy) {
    std::string s = "ts,occupied\n";
    for (std::size_t i = 0; i < ts.size(); ++i) s += fmt::format("{},{}\n", ts[i], static_cast<int>(occ[i]));
    write_file(dir / ("occupancy_" + zone + ".csv"), s);
  }
  for (const auto& [zone, e] : trace.environment) {
    std::string s = "ts,temperature_c,humidity_pct,lux\n";
    for (std::size_t i = 0; i < ts.size(); ++i)
      s += fmt::format("{},{},{},{}\n", ts[i], e.temperature_c[i], e.humidity_pct[i], e.lux[i]);
    write_file(dir / ("env_" + zone + ".csv"), s);
  }
  auto manifest = specs_to_json(specs);
  manifest["site"] = trace.site;
  write_file(dir / "appliances.json", manifest.dump(2) + "\n");

  std::string events;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (const auto& [zone, e] : trace.environment)
      events += fmt::format(R"({{"topic":"em3/{}/{}/env","ts":{},"payload":{{"ts":{},"t":{},"h":{},"lx":{}}}}})"
                            "\n",
                            trace.site, zone, ts[i], ts[i], e.temperature_c[i], e.humidity_pct[i], e.lux[i]);
    for (const auto& [zone, occ] : trace.occupancy)
      events += fmt::format(R"({{"topic":"em3/{}/{}/occupancy","ts":{},"payload":{{"ts":{},"occ":{}}}}})"
                            "\n",
                            trace.site, zone, ts[i], ts[i], static_cast<int>(occ[i]));
    for (const auto& a : trace.appliances)
      events += fmt::format(R"({{"topic":"{}","ts":{},"payload":{{"ts":{},"w":{}}}}})"
                            "\n",
                            power_topic(trace.site, a.spec.zone_id, a.spec.id), ts[i], ts[i], a.measured_w[i]);
  }
  write_file(dir / "events.jsonl", events);
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

// Reads back what write_trace produced. The event stream is not needed.
inline SimTrace read_trace(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw StorageError("trace directory '" + dir.string() + "' not found");
  SimTrace trace;
  const auto specs = load_specs(dir / "appliances.json");
  {
    std::ifstream in(dir / "appliances.json");
    trace.site = nlohmann::json::parse(in).value("site", std::string("home"));
  }
  bool have_grid = false;
  auto check_grid = [&](const std::vector<Timestamp>& ts, const std::string& what) {
    if (!have_grid) {
      trace.timestamps = ts;
      have_grid = true;
    } else if (ts != trace.timestamps) {
      throw ValidationError("trace file '" + what + "' is not on the shared sample grid");
    }
  };
  try {
    for (const auto& spec : specs) {
      ApplianceTrace a;
      a.spec = spec;
      std::vector<Timestamp> ts;
      for (const auto& row : detail::read_csv(dir / ("power_" + spec.id + ".csv"))) {
        ts.push_back(std::stoll(row.at(0)));
        a.true_w.push_back(std::stod(row.at(1)));
        a.measured_w.push_back(std::stod(row.at(2)));
      }
      check_grid(ts, "power_" + spec.id);
      ts.clear();
      for (const auto& row : detail::read_csv(dir / ("labels_" + spec.id + ".csv"))) {
        ts.push_back(std::stoll(row.at(0)));
        a.labels.push_back(micro_moment_from_int(std::stoi(row.at(1))));
      }
      check_grid(ts, "labels_" + spec.id);
      trace.appliances.push_back(std::move(a));
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      auto zone_of = [&](std::string_view prefix) { return name.substr(prefix.size(), name.size() - prefix.size() - 4); };
      if (name.starts_with("occupancy_") && name.ends_with(".csv")) {
        std::vector<Timestamp> ts;
        auto& occ = trace.occupancy[zone_of("occupancy_")];
        for (const auto& row : detail::read_csv(entry.path())) {
          ts.push_back(std::stoll(row.at(0)));
          occ.push_back(static_cast<std::uint8_t>(std::stoi(row.at(1)) != 0));
        }
        check_grid(ts, name);
      } else if (name.starts_with("env_") && name.ends_with(".csv")) {
        std::vector<Timestamp> ts;
        auto& e = trace.environment[zone_of("env_")];
        for (const auto& row : detail::read_csv(entry.path())) {
          ts.push_back(std::stoll(row.at(0)));
          e.temperature_c.push_back(std::stod(row.at(1)));
          e.humidity_pct.push_back(std::stod(row.at(2)));
          e.lux.push_back(std::stod(row.at(3)));
        }
        check_grid(ts, name);
      }
    }
  } catch (const std::logic_error& e) {
    throw ValidationError("malformed trace file in '" + dir.string() + "': " + e.what());
  }
  for (const auto& a : trace.appliances)
    if (!trace.occupancy.contains(a.spec.zone_id))
      throw ValidationError("trace lacks occupancy for zone '" + a.spec.zone_id + "'");
  return trace;
}

}  // namespace emedge::sim
