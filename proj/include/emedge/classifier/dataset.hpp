#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "emedge/error.hpp"
#include "emedge/micromoment.hpp"
#include "emedge/sim_household.hpp"

namespace emedge::classifier {

// Index of each feature in a FeatureVector.
enum Feature : std::size_t {
  kPower,         // p_t / dacr_max
  kPrevPower,     // p_{t-1} / dacr_max
  kDeltaPower,    // (p_t - p_{t-1}) / dacr_max
  kOccupied,      // 0 or 1
  kHourSin,
  kHourCos,
  kOnTimeRatio,   // operation clock / dot
  kNeedsPresence, // 0 or 1
  kFeatureCount
};

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames{
    "p", "p_prev", "delta_p", "occupied", "hour_sin", "hour_cos", "on_time_ratio", "requires_presence"};

using FeatureVector = std::array<double, kFeatureCount>;

inline FeatureVector make_features(const ApplianceSpec& spec, double p_t, double p_prev, bool occupied, Timestamp ts,
                                   double operation_clock_s) {
  if (!(spec.dacr_max_w > 0.0) || !(spec.dot_s > 0)) throw ValidationError("feature normalization needs dacr_max > 0 and dot > 0");
  const double angle = 2.0 * std::numbers::pi * hour_of_day(ts) / 24.0;
  return {p_t / spec.dacr_max_w,
          p_prev / spec.dacr_max_w,
          (p_t - p_prev) / spec.dacr_max_w,
          occupied ? 1.0 : 0.0,
          std::sin(angle),
          std::cos(angle),
          operation_clock_s / static_cast<double>(spec.dot_s),
          spec.requires_presence ? 1.0 : 0.0};
}

struct Dataset {
  std::string id;
  std::vector<FeatureVector> x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }

  void check() const {
    if (x.size() != y.size()) throw ValidationError("dataset has " + std::to_string(x.size()) + " rows but " +
                                                    std::to_string(y.size()) + " labels");
    for (int label : y)
      if (label < 0 || label >= kMicroMomentClasses) throw ValidationError("label out of range: " + std::to_string(label));
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset d;
    d.id = id;
    d.x.reserve(rows.size());
    d.y.reserve(rows.size());
    for (auto r : rows) {
      d.x.push_back(x[r]);
      d.y.push_back(y[r]);
    }
    return d;
  }
};

// Turns a simulated trace into (features, ground-truth label) rows. Features
// come from the measured (possibly noisy) power, labels from the trace's
// rule-engine annotations of the true power.
inline Dataset dataset_from_trace(const sim::SimTrace& trace, std::string id = "sim") {
  Dataset d;
  d.id = std::move(id);
  for (const auto& a : trace.appliances) {
    const auto& occ = trace.occupancy.at(a.spec.zone_id);
    double prev = 0.0, clock = 0.0;
    for (std::size_t i = 0; i < trace.timestamps.size(); ++i) {
      const double p = a.measured_w[i];
      const Timestamp dt = i == 0 ? 0 : trace.timestamps[i] - trace.timestamps[i - 1];
      clock = i == 0 ? 0.0 : advance_operation_clock(a.spec, clock, prev, p, static_cast<double>(dt));
      d.x.push_back(make_features(a.spec, p, prev, occ[i] != 0, trace.timestamps[i], clock));
      d.y.push_back(to_int(a.labels[i]));
      prev = p;
    }
  }
  return d;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per-class shuffle, first round(train_fraction * n_c) rows of each class go
// to training. Both index lists come back sorted.
inline Split stratified_split(const std::vector<int>& y, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must be in (0,1)");
  std::array<std::vector<std::size_t>, kMicroMomentClasses> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class.at(static_cast<std::size_t>(y[i])).push_back(i);
  std::mt19937_64 rng(sim::detail::splitmix64(seed ^ 0x5eed5eedULL));
  Split s;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    s.train.insert(s.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.insert(s.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace emedge::classifier
