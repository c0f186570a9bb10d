#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "emedge/sim_household.hpp"
#include "test_support.hpp"

namespace emedge::sim {
namespace {

using emedge::testing::slurp;
using emedge::testing::TempDir;

SimConfig light_only() {
  SimConfig c;
  c.seed = 1;
  c.duration_s = kSecondsPerDay;
  c.appliances.push_back({catalog_spec("Light", "light1", "living"), {{18 * 3600, 22 * 3600}}, std::nullopt, 0.0});
  return c;
}

TEST(Generate, LightFollowsItsSchedule) {
  const auto trace = generate(light_only());
  ASSERT_EQ(trace.timestamps.size(), 1440u);
  const auto& light = trace.appliances.at(0);
  for (std::size_t i = 0; i < trace.timestamps.size(); ++i) {
    const auto sod = seconds_of_day(trace.timestamps[i]);
    const double expected = (sod >= 18 * 3600 && sod < 22 * 3600) ? 60.0 : 0.0;
    ASSERT_EQ(light.true_w[i], expected) << sod;
    ASSERT_EQ(light.measured_w[i], expected);
  }
}

TEST(Generate, RejectsInvalidConfigNamingField) {
  auto c = light_only();
  c.duration_s = 0;
  try {
    generate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "duration");
  }
  c = light_only();
  c.sample_interval_s = 0;
  EXPECT_THROW(generate(c), ConfigError);
  c = light_only();
  c.appliances.push_back(c.appliances.front());
  EXPECT_THROW(generate(c), ConfigError);
  c = light_only();
  c.occupancy.push_back(default_occupancy("living"));
  c.occupancy.back().weekday[3] = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = light_only();
  c.noise.relative_sigma = 0.5;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Generate, SameSeedIsBitIdentical) {
  auto c = default_household(7, kSecondsPerDay);
  c.noise = calibrate_noise(98.16);
  const auto a = generate(c);
  const auto b = generate(c);
  EXPECT_EQ(a, b);

  TempDir d1, d2;
  write_trace(a, d1.path());
  write_trace(b, d2.path());
  for (const auto& entry : std::filesystem::directory_iterator(d1.path())) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(entry.path()), slurp(d2.path() / name)) << name;
  }
}

TEST(Generate, DifferentSeedsDiffer) {
  auto c = default_household(1, kSecondsPerDay);
  c.noise = calibrate_noise(98.16);
  auto a = generate(c);
  c.seed = 2;
  auto b = generate(c);
  EXPECT_NE(a.appliances[0].measured_w, b.appliances[0].measured_w);
}

TEST(Generate, LabelsAreRuleEngineOutputOnTruePower) {
  auto c = default_household(3, 3 * kSecondsPerDay);
  c.noise = calibrate_noise(96.88);
  const auto trace = generate(c);
  for (const auto& a : trace.appliances) {
    const auto expected =
        extract_series(a.spec, trace.power_points(a, false), trace.occupancy_points(a.spec.zone_id));
    EXPECT_EQ(a.labels, expected) << a.spec.id;
  }
}

TEST(Generate, DefaultHouseholdCoversEveryClass) {
  const auto trace = generate(default_household(3, 7 * kSecondsPerDay));
  std::array<int, kMicroMomentClasses> counts{};
  for (const auto& a : trace.appliances)
    for (auto l : a.labels) ++counts[static_cast<std::size_t>(to_int(l))];
  for (int k = 0; k < kMicroMomentClasses; ++k) EXPECT_GT(counts[static_cast<std::size_t>(k)], 0) << k;
}

// On clean data every switch-on is eventually followed by a switch-off.
TEST(Generate, TurnOnIsFollowedByTurnOff) {
  const auto trace = generate(default_household(9, 4 * kSecondsPerDay));
  for (const auto& a : trace.appliances) {
    bool open = false;
    for (auto l : a.labels) {
      if (l == MicroMoment::turn_on) open = true;
      if (l == MicroMoment::turn_off) open = false;
    }
    const bool truncated = a.true_w.back() > a.spec.dspc_w;
    EXPECT_TRUE(!open || truncated) << a.spec.id;
  }
}

TEST(Generate, WindowsWrapPastMidnight) {
  SimConfig c;
  c.duration_s = 2 * kSecondsPerDay;
  c.appliances.push_back({catalog_spec("Light", "l", "z"), {{22 * 3600, 2 * 3600}}, std::nullopt, 0.0});
  const auto trace = generate(c);
  for (std::size_t i = 0; i < trace.timestamps.size(); ++i) {
    const auto sod = seconds_of_day(trace.timestamps[i]);
    const bool on = sod >= 22 * 3600 || sod < 2 * 3600;
    ASSERT_EQ(trace.appliances[0].true_w[i], on ? 60.0 : 0.0) << sod;
  }
}

TEST(Generate, OccupancyFollowsDeterministicProfile) {
  SimConfig c;
  c.duration_s = 7 * kSecondsPerDay;
  c.occupancy.push_back(default_occupancy("z"));
  c.appliances.push_back({catalog_spec("Light", "l", "z"), {}, std::nullopt, 0.0});
  const auto trace = generate(c);
  const auto& occ = trace.occupancy.at("z");
  for (std::size_t i = 0; i < trace.timestamps.size(); ++i) {
    const auto ts = trace.timestamps[i];
    const auto h = seconds_of_day(ts) / 3600;
    const bool home = is_weekend(ts) || h < 8 || h >= 18;
    ASSERT_EQ(occ[i] != 0, home);
  }
}

TEST(Generate, EnvironmentIsPhysical) {
  const auto trace = generate(default_household(4, kSecondsPerDay));
  ASSERT_TRUE(trace.environment.contains("outdoor"));
  for (const auto& [zone, e] : trace.environment)
    for (std::size_t i = 0; i < trace.timestamps.size(); ++i) {
      ASSERT_GE(e.lux[i], 0.0);
      ASSERT_GE(e.humidity_pct[i], 0.0);
      ASSERT_LE(e.humidity_pct[i], 100.0);
      if (seconds_of_day(trace.timestamps[i]) < 6 * 3600) ASSERT_EQ(e.lux[i], 0.0);
    }
}

TEST(CalibrateNoise, MatchesAnalyticSigma) {
  EXPECT_NEAR(calibrate_noise(98.16).relative_sigma, 0.0230610, 1e-6);
  EXPECT_NEAR(calibrate_noise(96.88).relative_sigma, 0.0391034, 1e-6);
}

TEST(CalibrateNoise, RejectsOutOfRangeTargets) {
  EXPECT_THROW(calibrate_noise(100.0), ConfigError);
  EXPECT_THROW(calibrate_noise(50.0), ConfigError);
  EXPECT_THROW(calibrate_noise(120.0), ConfigError);
}

// Independent Monte-Carlo check of the half-normal mean used by the calibration.
TEST(CalibrateNoise, MonteCarloMeanAbsoluteError) {
  for (double target : {98.16, 96.88}) {
    const double sigma = calibrate_noise(target).relative_sigma;
    std::mt19937_64 rng(123);
    std::normal_distribution<double> eps(0.0, sigma);
    double sum = 0.0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) sum += std::abs(eps(rng));
    EXPECT_NEAR(100.0 * sum / n, 100.0 - target, 0.1);
  }
}

TEST(CalibrateNoise, SimulatedPlugErrorMatchesTarget) {
  SimConfig c;
  c.seed = 99;
  c.duration_s = 2 * kSecondsPerDay;
  c.sample_interval_s = 1;
  c.noise = calibrate_noise(98.16);
  c.appliances.push_back({catalog_spec("Air conditioner", "ac", "z"), {{0, 86400}}, std::nullopt, 0.0});
  const auto trace = generate(c);
  const auto& a = trace.appliances[0];
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.true_w.size(); ++i) {
    sum += std::abs(a.measured_w[i] - a.true_w[i]) / a.true_w[i];
    ++n;
  }
  ASSERT_GE(n, 100000u);
  EXPECT_NEAR(100.0 * sum / static_cast<double>(n), 1.84, 0.1);
}

TEST(TraceFiles, WriteThenReadRestoresTrace) {
  auto c = default_household(5, kSecondsPerDay / 2);
  c.noise = calibrate_noise(98.16);
  const auto trace = generate(c);
  TempDir dir;
  write_trace(trace, dir.path());
  for (const char* f : {"power_ac1.csv", "labels_ac1.csv", "occupancy_living.csv", "env_living.csv",
                        "env_outdoor.csv", "events.jsonl", "appliances.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_EQ(read_trace(dir.path()), trace);
}

TEST(TraceFiles, EventStreamHasOneLinePerReading) {
  const auto trace = generate(light_only());
  TempDir dir;
  write_trace(trace, dir.path());
  std::ifstream in(dir / "events.jsonl");
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    ASSERT_TRUE(j.contains("topic"));
    ASSERT_TRUE(j.contains("payload"));
    ++lines;
  }
  // living env + outdoor env + living occupancy + light power
  EXPECT_EQ(lines, trace.timestamps.size() * 4);
}

TEST(SimConfigJson, RoundTrip) {
  auto c = default_household(11, kSecondsPerDay);
  c.noise.relative_sigma = 0.01;
  const auto back = sim_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(generate(back), generate(c));
}

}  // namespace
}  // namespace emedge::sim
