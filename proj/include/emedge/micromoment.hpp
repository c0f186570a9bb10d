#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emedge/appliance.hpp"
#include "emedge/error.hpp"
#include "emedge/time_util.hpp"

namespace emedge {

enum class MicroMoment : std::uint8_t {
  good_usage = 0,
  turn_on = 1,
  turn_off = 2,
  excessive = 3,
  while_outside = 4,
};

inline constexpr int kMicroMomentClasses = 5;

constexpr int to_int(MicroMoment m) { return static_cast<int>(m); }

inline MicroMoment micro_moment_from_int(int v) {
  if (v < 0 || v >= kMicroMomentClasses) throw ValidationError("micro-moment label out of range: " + std::to_string(v));
  return static_cast<MicroMoment>(v);
}

constexpr std::string_view to_string(MicroMoment m) {
  switch (m) {
    case MicroMoment::good_usage: return "good_usage";
    case MicroMoment::turn_on: return "turn_on";
    case MicroMoment::turn_off: return "turn_off";
    case MicroMoment::excessive: return "excessive";
    case MicroMoment::while_outside: return "while_outside";
  }
  return "good_usage";
}

// Per-appliance state threaded through consecutive samples.
struct ApplianceState {
  double previous_watts = 0.0;
  double operation_clock_s = 0.0;  // continuous time above standby
  std::optional<Timestamp> last_timestamp;

  bool operator==(const ApplianceState&) const = default;
};

inline constexpr double kExcessiveFraction = 0.95;
inline constexpr double kOutsideStandbyFraction = 0.95;
// Lowest draw that counts as "consuming" for the absence rule; keeps
// appliances with zero standby from being flagged while switched off.
inline constexpr double kOutsideFloorW = 2.0;

constexpr double outside_threshold_w(const ApplianceSpec& spec) {
  const double t = kOutsideStandbyFraction * spec.dspc_w;
  return t > kOutsideFloorW ? t : kOutsideFloorW;
}

// The five consumption rules, evaluated in order; a later match overrides an
// earlier one. `operation_clock_s` must already include the current sample.
constexpr MicroMoment apply_rules(const ApplianceSpec& spec, double p_prev, double p_t,
                                  double operation_clock_s, bool occupied) {
  MicroMoment label = MicroMoment::good_usage;
  if (p_t >= spec.dacr_min_w && p_t <= kExcessiveFraction * spec.dacr_max_w) label = MicroMoment::good_usage;
  if (p_t >= spec.dacr_min_w && p_prev <= spec.dspc_w) label = MicroMoment::turn_on;
  if (p_t <= spec.dspc_w && p_prev >= spec.dacr_min_w) label = MicroMoment::turn_off;
  if (p_t >= kExcessiveFraction * spec.dacr_max_w || operation_clock_s >= spec.dot_s) label = MicroMoment::excessive;
  if (spec.requires_presence && !occupied && p_t >= outside_threshold_w(spec)) label = MicroMoment::while_outside;
  return label;
}

// Continuous ON time after observing `p_t`, `dt` seconds after a sample of
// `p_prev`. The clock starts at the turn-on sample and resets at standby.
constexpr double advance_operation_clock(const ApplianceSpec& spec, double clock_s, double p_prev, double p_t,
                                         double dt) {
  if (p_t <= spec.dspc_w) return 0.0;
  return p_prev > spec.dspc_w ? clock_s + dt : 0.0;
}

struct LabelResult {
  MicroMoment label;
  ApplianceState state;
};

inline LabelResult label_sample(const ApplianceSpec& spec, const ApplianceState& state, double p_t, bool occupied,
                                Timestamp ts) {
  if (state.last_timestamp && ts <= *state.last_timestamp)
    throw OrderingError("appliance '" + spec.id + "': timestamp " + std::to_string(ts) +
                        " not after " + std::to_string(*state.last_timestamp));
  if (!(p_t >= 0.0)) throw ValidationError("appliance '" + spec.id + "': negative power");

  const double dt = state.last_timestamp ? static_cast<double>(ts - *state.last_timestamp) : 0.0;
  ApplianceState next;
  next.operation_clock_s = advance_operation_clock(spec, state.operation_clock_s, state.previous_watts, p_t, dt);
  next.previous_watts = p_t;
  next.last_timestamp = ts;
  return {apply_rules(spec, state.previous_watts, p_t, next.operation_clock_s, occupied), next};
}

struct PowerPoint {
  Timestamp ts;
  double watts;
};

struct OccupancyPoint {
  Timestamp ts;
  bool occupied;
};

// Labels a whole aligned series. Both inputs must share the same timestamps.
inline std::vector<MicroMoment> extract_series(const ApplianceSpec& spec, std::span<const PowerPoint> power,
                                               std::span<const OccupancyPoint> occupancy,
                                               ApplianceState state = {}) {
  if (power.size() != occupancy.size())
    throw ValidationError("misaligned series: " + std::to_string(power.size()) + " power vs " +
                          std::to_string(occupancy.size()) + " occupancy samples");
  std::vector<MicroMoment> labels;
  labels.reserve(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) {
    if (power[i].ts != occupancy[i].ts)
      throw ValidationError("misaligned series at index " + std::to_string(i));
    auto r = label_sample(spec, state, power[i].watts, occupancy[i].occupied, power[i].ts);
    labels.push_back(r.label);
    state = r.state;
  }
  return labels;
}

}  // namespace emedge
