#include <gtest/gtest.h>

#include <random>

#include "emedge/micromoment.hpp"

namespace emedge {
namespace {

ApplianceSpec ac_spec() {
  ApplianceSpec s = catalog_spec("Air conditioner", "ac1", "lab1");
  EXPECT_DOUBLE_EQ(s.dacr_min_w, 100.0);
  return s;
}

ApplianceState prev(double watts, Timestamp ts = 0, double clock = 0.0) {
  return ApplianceState{watts, clock, ts};
}

TEST(Catalog, MatchesReferenceTable) {
  const auto ac = catalog_spec("Air conditioner", "ac1", "z");
  EXPECT_EQ(ac.dacr_max_w, 1000.0);
  EXPECT_EQ(ac.dspc_w, 4.0);
  EXPECT_EQ(ac.dot_s, 55800.0);
  EXPECT_TRUE(ac.requires_presence);

  const auto light = catalog_spec("Light", "l1", "z");
  EXPECT_EQ(light.dacr_max_w, 60.0);
  EXPECT_EQ(light.dspc_w, 0.0);
  EXPECT_EQ(light.dot_s, 8 * 3600.0);

  const auto fridge = catalog_spec("refrigerator", "f1", "z");
  EXPECT_EQ(fridge.dot_s, 17 * 3600.0 + 1800.0);
  EXPECT_FALSE(fridge.requires_presence);

  // A tenth of 100 W would sit below the 20 W standby.
  const auto laptop = catalog_spec("Laptop", "lt", "z");
  EXPECT_EQ(laptop.dacr_min_w, 40.0);
  EXPECT_NO_THROW(validate(laptop));

  EXPECT_THROW(catalog_spec("toaster", "t", "z"), ConfigError);
}

TEST(Catalog, EveryEntryValidates) {
  for (const auto& e : kApplianceCatalog) EXPECT_NO_THROW(validate(catalog_spec(e.name, "x", "z"))) << e.name;
}

TEST(LabelSample, GoodUsage) {
  auto r = label_sample(ac_spec(), prev(850), 900, true, 60);
  EXPECT_EQ(r.label, MicroMoment::good_usage);
}

TEST(LabelSample, ExcessiveWattage) {
  auto r = label_sample(ac_spec(), prev(900), 980, true, 60);
  EXPECT_EQ(r.label, MicroMoment::excessive);
}

TEST(LabelSample, AbsenceOverridesGoodUsage) {
  auto r = label_sample(ac_spec(), prev(850), 900, false, 60);
  EXPECT_EQ(r.label, MicroMoment::while_outside);
}

TEST(LabelSample, TurnOn) {
  auto r = label_sample(ac_spec(), prev(3), 500, true, 60);
  EXPECT_EQ(r.label, MicroMoment::turn_on);
}

TEST(LabelSample, TurnOff) {
  auto r = label_sample(ac_spec(), prev(800), 2, true, 60);
  EXPECT_EQ(r.label, MicroMoment::turn_off);
  // Below the 3.8 W absence threshold, so still a turn-off when nobody is home.
  EXPECT_EQ(label_sample(ac_spec(), prev(800), 2, false, 60).label, MicroMoment::turn_off);
}

TEST(LabelSample, IdleDefaultsToGoodUsage) {
  auto r = label_sample(ac_spec(), prev(0), 0, true, 60);
  EXPECT_EQ(r.label, MicroMoment::good_usage);
}

TEST(LabelSample, OperationClockAdvancesAndResets) {
  const auto spec = ac_spec();
  auto r = label_sample(spec, prev(0, 0), 500, true, 60);
  EXPECT_DOUBLE_EQ(r.state.operation_clock_s, 0.0);
  r = label_sample(spec, r.state, 500, true, 120);
  EXPECT_DOUBLE_EQ(r.state.operation_clock_s, 60.0);
  r = label_sample(spec, r.state, 300, true, 200);
  EXPECT_DOUBLE_EQ(r.state.operation_clock_s, 140.0);
  r = label_sample(spec, r.state, 4, true, 260);
  EXPECT_DOUBLE_EQ(r.state.operation_clock_s, 0.0);
  EXPECT_EQ(r.state.previous_watts, 4.0);
  EXPECT_EQ(r.state.last_timestamp, 260);
}

TEST(LabelSample, FirstSampleHasNoElapsedTime) {
  auto r = label_sample(ac_spec(), ApplianceState{}, 500, true, 1000);
  EXPECT_DOUBLE_EQ(r.state.operation_clock_s, 0.0);
  EXPECT_EQ(r.label, MicroMoment::turn_on);
}

TEST(LabelSample, RejectsNonMonotoneTimestamp) {
  EXPECT_THROW(label_sample(ac_spec(), prev(0, 100), 10, true, 100), OrderingError);
  EXPECT_THROW(label_sample(ac_spec(), prev(0, 100), 10, true, 50), OrderingError);
}

TEST(LabelSample, RejectsNegativePower) {
  EXPECT_THROW(label_sample(ac_spec(), prev(0, 0), -1, true, 10), ValidationError);
}

TEST(LabelSample, ZeroStandbyFloor) {
  const auto light = catalog_spec("Light", "l1", "z");
  EXPECT_EQ(label_sample(light, prev(0), 0, false, 60).label, MicroMoment::good_usage);
  EXPECT_EQ(label_sample(light, prev(0), 1.9, false, 60).label, MicroMoment::good_usage);
  EXPECT_EQ(label_sample(light, prev(0), 2.0, false, 60).label, MicroMoment::while_outside);
}

TEST(ExtractSeries, EmptyInputGivesEmptyOutput) {
  EXPECT_TRUE(extract_series(ac_spec(), {}, {}).empty());
}

TEST(ExtractSeries, MisalignedSeriesRejected) {
  std::vector<PowerPoint> p{{0, 1}, {60, 1}};
  std::vector<OccupancyPoint> o{{0, true}};
  EXPECT_THROW(extract_series(ac_spec(), p, o), ValidationError);
  o.push_back({61, true});
  EXPECT_THROW(extract_series(ac_spec(), p, o), ValidationError);
}

TEST(ExtractSeries, LightOffAllDayWhileAbsentIsNeverFlagged) {
  const auto light = catalog_spec("Light", "l1", "z");
  std::vector<PowerPoint> p;
  std::vector<OccupancyPoint> o;
  for (Timestamp t = 0; t < kSecondsPerDay; t += 60) {
    p.push_back({t, 0.0});
    o.push_back({t, false});
  }
  for (auto l : extract_series(light, p, o)) ASSERT_EQ(l, MicroMoment::good_usage);
}

// Continuous operation beyond DOT is excessive from the crossing sample until
// the appliance switches off, whatever the wattage.
TEST(ExtractSeries, OperationTimeTriggerHoldsUntilOff) {
  std::mt19937_64 rng(11);
  const auto tv = catalog_spec("Television", "tv", "z");
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<Timestamp> step(30, 900);
    std::uniform_real_distribution<double> watts(tv.dacr_min_w, 0.9 * tv.dacr_max_w);
    std::vector<PowerPoint> p{{0, 0.0}};
    std::vector<OccupancyPoint> o{{0, true}};
    Timestamp t = 0;
    Timestamp on_at = -1;
    while (t < 2 * static_cast<Timestamp>(tv.dot_s)) {
      t += step(rng);
      if (on_at < 0) on_at = t;
      p.push_back({t, watts(rng)});
      o.push_back({t, true});
    }
    t += 60;
    p.push_back({t, 0.0});
    o.push_back({t, true});
    const auto labels = extract_series(tv, p, o);
    for (std::size_t i = 1; i + 1 < p.size(); ++i) {
      const bool over = static_cast<double>(p[i].ts - on_at) >= tv.dot_s;
      if (over) {
        ASSERT_EQ(labels[i], MicroMoment::excessive) << "trial " << trial << " i " << i;
      } else {
        ASSERT_NE(labels[i], MicroMoment::excessive) << "trial " << trial << " i " << i;
      }
    }
    EXPECT_EQ(labels.back(), MicroMoment::turn_off);
  }
}

TEST(ExtractSeries, PresenceGatingProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> watts(0.0, 1200.0);
  std::bernoulli_distribution coin(0.5);
  for (bool requires_presence : {true, false}) {
    auto spec = ac_spec();
    spec.requires_presence = requires_presence;
    std::vector<PowerPoint> p;
    std::vector<OccupancyPoint> o;
    for (Timestamp t = 0; t < 20000; t += 60) {
      p.push_back({t, coin(rng) ? watts(rng) : 4.0});
      o.push_back({t, coin(rng)});
    }
    const auto labels = extract_series(spec, p, o);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!requires_presence || o[i].occupied) ASSERT_NE(labels[i], MicroMoment::while_outside);
      ASSERT_GE(to_int(labels[i]), 0);
      ASSERT_LT(to_int(labels[i]), kMicroMomentClasses);
    }
  }
}

TEST(MicroMoment, IntRoundTrip) {
  for (int i = 0; i < kMicroMomentClasses; ++i) EXPECT_EQ(to_int(micro_moment_from_int(i)), i);
  EXPECT_THROW(micro_moment_from_int(5), ValidationError);
  EXPECT_THROW(micro_moment_from_int(-1), ValidationError);
}

}  // namespace
}  // namespace emedge
