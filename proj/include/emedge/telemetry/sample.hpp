#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <fmt/format.h>
#include <json.hpp>

#include "emedge/telemetry/topic.hpp"
#include "emedge/time_util.hpp"

namespace emedge::telemetry {

enum class SourceKind { power, occupancy, environment };

constexpr std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::power: return "power";
    case SourceKind::occupancy: return "occupancy";
    case SourceKind::environment: return "env";
  }
  return "power";
}

struct PowerReading {
  double watts = 0.0;
  bool operator==(const PowerReading&) const = default;
};

struct OccupancyReading {
  bool occupied = false;
  bool operator==(const OccupancyReading&) const = default;
};

struct EnvironmentReading {
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double lux = 0.0;
  bool operator==(const EnvironmentReading&) const = default;
};

using Reading = std::variant<PowerReading, OccupancyReading, EnvironmentReading>;

struct TelemetrySample {
  std::string site;
  std::string zone;
  std::string appliance;  // empty unless power
  Timestamp ts = 0;
  Reading reading;
  // Wall-clock arrival, used for latency accounting only.
  std::chrono::steady_clock::time_point received_at{};

  SourceKind kind() const { return static_cast<SourceKind>(reading.index()); }

  // Identifies the ordered stream this sample belongs to, e.g.
  // "home.living.ac1.power" or "home.living.occupancy".
  std::string stream_id() const {
    if (kind() == SourceKind::power) return fmt::format("{}.{}.{}.power", site, zone, appliance);
    return fmt::format("{}.{}.{}", site, zone, to_string(kind()));
  }

  bool operator==(const TelemetrySample& o) const {
    return site == o.site && zone == o.zone && appliance == o.appliance && ts == o.ts && reading == o.reading;
  }
};

inline std::string stream_id_for_power(std::string_view site, std::string_view zone, std::string_view appliance) {
  return fmt::format("{}.{}.{}.power", site, zone, appliance);
}
inline std::string stream_id_for_occupancy(std::string_view site, std::string_view zone) {
  return fmt::format("{}.{}.occupancy", site, zone);
}
inline std::string stream_id_for_env(std::string_view site, std::string_view zone) {
  return fmt::format("{}.{}.env", site, zone);
}

inline std::optional<std::string> check_invariants(const TelemetrySample& s) {
  if (const auto* p = std::get_if<PowerReading>(&s.reading)) {
    if (!std::isfinite(p->watts) || p->watts < 0.0) return "watts must be finite and >= 0";
  } else if (const auto* e = std::get_if<EnvironmentReading>(&s.reading)) {
    if (!std::isfinite(e->temperature_c)) return "temperature must be finite";
    if (!(e->humidity_pct >= 0.0 && e->humidity_pct <= 100.0)) return "humidity must lie in [0,100]";
    if (!(e->lux >= 0.0) || !std::isfinite(e->lux)) return "lux must be finite and >= 0";
  }
  return std::nullopt;
}

struct ParseOutcome {
  std::optional<TelemetrySample> sample;
  std::string error;  // set when sample is empty
};

namespace detail {

inline std::optional<double> number_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace detail

// Maps one pub/sub message onto a sample. Never throws on bad input.
inline ParseOutcome parse_message(std::string_view topic, const nlohmann::json& payload) {
  const auto address = parse_topic(topic);
  if (!address) return {std::nullopt, "topic does not follow the em3 grammar: " + std::string(topic)};
  if (address->channel == TopicChannel::set) return {std::nullopt, "command topic carries no telemetry"};
  if (!payload.is_object()) return {std::nullopt, "payload is not a JSON object"};
  if (!payload.contains("ts") || !payload["ts"].is_number_integer())
    return {std::nullopt, "payload lacks integer 'ts'"};

  TelemetrySample s;
  s.site = address->site;
  s.zone = address->zone;
  s.ts = payload["ts"].get<Timestamp>();
  switch (address->channel) {
    case TopicChannel::power: {
      auto w = detail::number_field(payload, "w");
      if (!w) return {std::nullopt, "power payload lacks numeric 'w'"};
      s.appliance = *address->appliance;
      s.reading = PowerReading{*w};
      break;
    }
    case TopicChannel::occupancy: {
      if (!payload.contains("occ")) return {std::nullopt, "occupancy payload lacks 'occ'"};
      const auto& o = payload["occ"];
      if (o.is_boolean()) {
        s.reading = OccupancyReading{o.get<bool>()};
      } else if (o.is_number_integer() && (o.get<int>() == 0 || o.get<int>() == 1)) {
        s.reading = OccupancyReading{o.get<int>() == 1};
      } else {
        return {std::nullopt, "occupancy 'occ' must be 0 or 1"};
      }
      break;
    }
    case TopicChannel::env: {
      auto t = detail::number_field(payload, "t");
      auto h = detail::number_field(payload, "h");
      auto lx = detail::number_field(payload, "lx");
      if (!t || !h || !lx) return {std::nullopt, "env payload needs numeric 't', 'h' and 'lx'"};
      s.reading = EnvironmentReading{*t, *h, *lx};
      break;
    }
    case TopicChannel::set:
      break;
  }
  if (auto why = check_invariants(s)) return {std::nullopt, *why};
  return {std::move(s), {}};
}

inline ParseOutcome parse_message(std::string_view topic, std::string_view payload) {
  auto j = nlohmann::json::parse(payload, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return {std::nullopt, "payload is not valid JSON"};
  return parse_message(topic, j);
}

inline TopicAddress address_of(const TelemetrySample& s) {
  TopicAddress a;
  a.site = s.site;
  a.zone = s.zone;
  switch (s.kind()) {
    case SourceKind::power:
      a.appliance = s.appliance;
      a.channel = TopicChannel::power;
      break;
    case SourceKind::occupancy: a.channel = TopicChannel::occupancy; break;
    case SourceKind::environment: a.channel = TopicChannel::env; break;
  }
  return a;
}

inline nlohmann::json payload_of(const TelemetrySample& s) {
  nlohmann::json j{{"ts", s.ts}};
  std::visit(
      [&](const auto& r) {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, PowerReading>) {
          j["w"] = r.watts;
        } else if constexpr (std::is_same_v<R, OccupancyReading>) {
          j["occ"] = r.occupied ? 1 : 0;
        } else {
          j["t"] = r.temperature_c;
          j["h"] = r.humidity_pct;
          j["lx"] = r.lux;
        }
      },
      s.reading);
  return j;
}

inline nlohmann::json to_json(const TelemetrySample& s) {
  nlohmann::json j = payload_of(s);
  j["stream"] = s.stream_id();
  j["kind"] = std::string(to_string(s.kind()));
  j["site"] = s.site;
  j["zone"] = s.zone;
  if (!s.appliance.empty()) j["appliance"] = s.appliance;
  return j;
}

}  // namespace emedge::telemetry
