#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emedge/appliance.hpp"
#include "emedge/error.hpp"

namespace emedge::telemetry {

inline constexpr std::string_view kTopicRoot = "em3";

enum class TopicChannel { power, occupancy, env, set };

constexpr std::string_view to_string(TopicChannel c) {
  switch (c) {
    case TopicChannel::power: return "power";
    case TopicChannel::occupancy: return "occupancy";
    case TopicChannel::env: return "env";
    case TopicChannel::set: return "set";
  }
  return "power";
}

inline std::optional<TopicChannel> parse_channel(std::string_view s) {
  if (s == "power") return TopicChannel::power;
  if (s == "occupancy") return TopicChannel::occupancy;
  if (s == "env") return TopicChannel::env;
  if (s == "set") return TopicChannel::set;
  return std::nullopt;
}

constexpr bool channel_has_appliance(TopicChannel c) { return c == TopicChannel::power || c == TopicChannel::set; }

//   em3/<site>/<zone>/<appliance>/power
//   em3/<site>/<zone>/occupancy
//   em3/<site>/<zone>/env
//   em3/<site>/<zone>/<appliance>/set
struct TopicAddress {
  std::string site;
  std::string zone;
  std::optional<std::string> appliance;
  TopicChannel channel = TopicChannel::power;

  bool operator==(const TopicAddress&) const = default;
};

inline std::vector<std::string_view> split_levels(std::string_view topic) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto slash = topic.find('/', start);
    out.push_back(topic.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return out;
}

inline std::string render(const TopicAddress& a) {
  if (!valid_id(a.site) || !valid_id(a.zone)) throw ValidationError("topic address has an invalid site or zone id");
  if (channel_has_appliance(a.channel) != a.appliance.has_value())
    throw ValidationError("appliance id required exactly for power and set channels");
  if (a.appliance && !valid_id(*a.appliance)) throw ValidationError("topic address has an invalid appliance id");
  std::string t(kTopicRoot);
  t += '/';
  t += a.site;
  t += '/';
  t += a.zone;
  if (a.appliance) {
    t += '/';
    t += *a.appliance;
  }
  t += '/';
  t += to_string(a.channel);
  return t;
}

inline std::optional<TopicAddress> parse_topic(std::string_view topic) {
  const auto levels = split_levels(topic);
  if (levels.size() < 4 || levels.size() > 5 || levels[0] != kTopicRoot) return std::nullopt;
  const auto channel = parse_channel(levels.back());
  if (!channel) return std::nullopt;
  const bool with_appliance = levels.size() == 5;
  if (with_appliance != channel_has_appliance(*channel)) return std::nullopt;
  TopicAddress a;
  a.site = std::string(levels[1]);
  a.zone = std::string(levels[2]);
  if (with_appliance) a.appliance = std::string(levels[3]);
  a.channel = *channel;
  if (!valid_id(a.site) || !valid_id(a.zone) || (a.appliance && !valid_id(*a.appliance))) return std::nullopt;
  return a;
}

// MQTT topic-filter matching with '+' (one level) and '#' (rest) wildcards.
inline bool topic_matches(std::string_view filter, std::string_view topic) {
  const auto f = split_levels(filter);
  const auto t = split_levels(topic);
  std::size_t i = 0;
  for (; i < f.size(); ++i) {
    if (f[i] == "#") return true;
    if (i >= t.size()) return false;
    if (f[i] != "+" && f[i] != t[i]) return false;
  }
  return i == t.size();
}

}  // namespace emedge::telemetry
