#pragma once

// Scripted snapshots for the three recommendation scenarios and their
// negations.

#include "emedge/recommender.hpp"

namespace emedge::testing {

inline constexpr Timestamp kScenarioNoon = 1700481600;  // Monday 12:00 UTC

inline ApplianceSpec charger_spec() {
  ApplianceSpec s;
  s.id = "charger1";
  s.name = "charger";
  s.zone_id = "bedroom";
  s.category = ApplianceCategory::charger;
  s.dspc_w = 0.5;
  s.dacr_min_w = 2.0;
  s.dacr_max_w = 20.0;
  s.dot_s = 4 * 3600;
  s.requires_presence = true;
  return s;
}

inline recommender::Snapshot base_snapshot(Timestamp now) {
  recommender::Snapshot s;
  s.now = now;
  s.user_id = "u1";
  s.outdoor = recommender::EnvironmentState{22.0, 50.0, 100.0, now};
  return s;
}

// AC at 1000 W, 26 C inside, 22 C outside, user present.
inline recommender::Snapshot ac_scenario(Timestamp now = kScenarioNoon, double outdoor_c = 22.0) {
  auto s = base_snapshot(now);
  s.outdoor->temperature_c = outdoor_c;
  s.appliances.push_back({catalog_spec("air_conditioner", "ac1", "living"), 1000.0, MicroMoment::good_usage, now});
  s.zones["living"] = {recommender::OccupancyState{true, now}, recommender::EnvironmentState{26.0, 55.0, 120.0, now}};
  return s;
}

// Light at 60 W with 800 lux outside and the user present.
inline recommender::Snapshot light_scenario(Timestamp now = kScenarioNoon, double outdoor_lux = 800.0) {
  auto s = base_snapshot(now);
  s.outdoor->temperature_c = 30.0;
  s.outdoor->lux = outdoor_lux;
  s.appliances.push_back({catalog_spec("light", "light1", "kitchen"), 60.0, MicroMoment::good_usage, now});
  s.zones["kitchen"] = {recommender::OccupancyState{true, now}, recommender::EnvironmentState{24.0, 50.0, 300.0, now}};
  return s;
}

// Charger drawing 10 W in an empty bedroom, labelled as on while away.
inline recommender::Snapshot absence_scenario(Timestamp now = kScenarioNoon, bool occupied = false) {
  auto s = base_snapshot(now);
  s.outdoor->temperature_c = 30.0;
  const auto label = occupied ? MicroMoment::good_usage : MicroMoment::while_outside;
  s.appliances.push_back({charger_spec(), 10.0, label, now});
  s.zones["bedroom"] = {recommender::OccupancyState{occupied, now}, recommender::EnvironmentState{24.0, 50.0, 80.0, now}};
  return s;
}

}  // namespace emedge::testing
