#pragma once

// ingest -> store -> label -> trigger, one thread per stage, connected by
// ordered channels. The store is the only state shared with API readers;
// the trigger stage publishes a copy of its world view for them.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "emedge/micromoment.hpp"
#include "emedge/recommender.hpp"
#include "emedge/service/channel.hpp"
#include "emedge/service/events.hpp"
#include "emedge/sim_household.hpp"
#include "emedge/store.hpp"
#include "emedge/telemetry/ingest.hpp"

namespace emedge::service {

using nlohmann::json;
using steady = std::chrono::steady_clock;

// Latencies in milliseconds. Keeps the most recent `capacity` values.
class LatencyRecorder {
 public:
  explicit LatencyRecorder(std::size_t capacity = 1 << 20) : capacity_(capacity) {}

  void add(double ms) {
    std::lock_guard lock(mu_);
    if (values_.size() < capacity_) {
      values_.push_back(ms);
    } else {
      values_[next_] = ms;
      next_ = (next_ + 1) % capacity_;
    }
    ++count_;
  }

  // Nearest-rank percentile, q in (0, 1].
  std::optional<double> percentile(double q) const {
    std::lock_guard lock(mu_);
    if (values_.empty()) return std::nullopt;
    auto v = values_;
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    const auto idx = std::min(v.size() - 1, rank == 0 ? 0 : rank - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
    return v[idx];
  }

  std::uint64_t count() const {
    std::lock_guard lock(mu_);
    return count_;
  }

  json to_json() const {
    json j{{"count", count()}};
    if (auto p = percentile(0.5)) j["p50_ms"] = *p;
    if (auto p = percentile(0.99)) j["p99_ms"] = *p;
    if (auto p = percentile(1.0)) j["max_ms"] = *p;
    return j;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::vector<double> values_;
  std::size_t next_ = 0;
  std::uint64_t count_ = 0;
};

struct PipelineCounters {
  std::atomic<std::uint64_t> stored{0};
  std::atomic<std::uint64_t> store_errors{0};
  std::atomic<std::uint64_t> labeled{0};
  std::atomic<std::uint64_t> label_skipped{0};
  std::atomic<std::uint64_t> unknown_appliance{0};
  std::atomic<std::uint64_t> evaluations{0};
  std::atomic<std::uint64_t> recommendations{0};
  std::atomic<std::uint64_t> processed{0};

  json to_json() const {
    return {{"stored", stored.load()},
            {"store_errors", store_errors.load()},
            {"labeled", labeled.load()},
            {"label_skipped", label_skipped.load()},
            {"unknown_appliance", unknown_appliance.load()},
            {"evaluations", evaluations.load()},
            {"recommendations", recommendations.load()},
            {"processed", processed.load()}};
  }
};

// What API readers see of the live state.
struct WorldView {
  std::map<std::string, recommender::ApplianceState> appliances;  // observed only
  std::map<std::string, recommender::ZoneState> zones;
  std::optional<recommender::EnvironmentState> outdoor;
  Timestamp clock = 0;  // newest sample time processed
};

inline json to_json(const recommender::Recommendation& r, const std::string& currency) {
  auto j = recommender::to_json(r);
  j["currency"] = currency;
  j["message"] = recommender::message(r, currency);
  return j;
}

class Pipeline {
 public:
  Pipeline(std::string user, std::vector<ApplianceSpec> specs, store::Store& store, recommender::Recommender& rec,
           EventBus& bus)
      : user_(std::move(user)), store_(store), rec_(rec), bus_(bus) {
    for (auto& s : specs) specs_.emplace(s.id, std::move(s));
  }

  ~Pipeline() { stop(); }

  void start() {
    if (running_) return;
    running_ = true;
    store_thread_ = std::jthread([this] { store_stage(); });
    label_thread_ = std::jthread([this] { label_stage(); });
    trigger_thread_ = std::jthread([this] { trigger_stage(); });
  }

  // Entry point for the ingestor. Blocks when the pipeline is saturated.
  void submit(telemetry::TelemetrySample s) { to_store_.push(std::move(s)); }

  // Drains everything already submitted, then joins the stages.
  void stop() {
    if (!running_) return;
    running_ = false;
    to_store_.close();
    if (store_thread_.joinable()) store_thread_.join();
    if (label_thread_.joinable()) label_thread_.join();
    if (trigger_thread_.joinable()) trigger_thread_.join();
  }

  // Blocks until every submitted sample went through all stages.
  bool wait_idle(std::uint64_t submitted, std::chrono::milliseconds timeout) const {
    const auto deadline = steady::now() + timeout;
    while (counters_.processed.load() + counters_.store_errors.load() < submitted) {
      if (steady::now() > deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
  }

  WorldView view() const {
    std::lock_guard lock(view_mu_);
    return view_;
  }

  Timestamp clock() const { return clock_.load(); }

  const std::map<std::string, ApplianceSpec>& specs() const { return specs_; }

  const PipelineCounters& counters() const { return counters_; }
  const LatencyRecorder& sample_latency() const { return sample_latency_; }
  const LatencyRecorder& recommendation_latency() const { return rec_latency_; }

  json health() const {
    return {{"counters", counters_.to_json()},
            {"queues", {{"store", to_store_.size()}, {"label", to_label_.size()}, {"trigger", to_trigger_.size()}}},
            {"latency", {{"sample", sample_latency_.to_json()}, {"recommendation", rec_latency_.to_json()}}},
            {"clock", clock()}};
  }

 private:
  struct Labeled {
    telemetry::TelemetrySample sample;
    std::optional<MicroMoment> label;
  };

  static double ms_since(steady::time_point t) {
    if (t == steady::time_point{}) return 0.0;
    return std::chrono::duration<double, std::milli>(steady::now() - t).count();
  }

  void store_stage() {
    while (auto s = to_store_.pop()) {
      try {
        store_.append(*s);
        ++counters_.stored;
      } catch (const Error&) {
        ++counters_.store_errors;  // surfaced through the store's health
        continue;
      }
      to_label_.push(std::move(*s));
    }
    to_label_.close();
  }

  void label_stage() {
    std::map<std::string, bool> occupied;
    std::map<std::string, ApplianceState> states;
    while (auto s = to_label_.pop()) {
      Labeled out{std::move(*s), std::nullopt};
      const auto& sample = out.sample;
      json payload = telemetry::to_json(sample);
      if (const auto* o = std::get_if<telemetry::OccupancyReading>(&sample.reading)) occupied[sample.zone] = o->occupied;
      if (const auto* p = std::get_if<telemetry::PowerReading>(&sample.reading)) {
        auto spec = specs_.find(sample.appliance);
        if (spec == specs_.end()) {
          ++counters_.unknown_appliance;
        } else {
          // A zone that never reported occupancy counts as occupied.
          const auto occ = occupied.find(sample.zone);
          const bool present = occ == occupied.end() || occ->second;
          try {
            auto r = label_sample(spec->second, states[sample.appliance], p->watts, present, sample.ts);
            states[sample.appliance] = r.state;
            out.label = r.label;
            store_.append_label(sample.site, sample.zone, sample.appliance, sample.ts, r.label);
            ++counters_.labeled;
          } catch (const OrderingError&) {
            ++counters_.label_skipped;
          } catch (const Error&) {
            ++counters_.store_errors;
          }
        }
      }
      bus_.publish(EventKind::sample, std::move(payload));
      if (out.label)
        bus_.publish(EventKind::label, {{"appliance", sample.appliance},
                                        {"zone", sample.zone},
                                        {"ts", sample.ts},
                                        {"label", to_int(*out.label)},
                                        {"name", std::string(to_string(*out.label))}});
      to_trigger_.push(std::move(out));
    }
    to_trigger_.close();
  }

  void trigger_stage() {
    WorldView world;
    while (auto u = to_trigger_.pop()) {
      const auto& s = u->sample;
      std::optional<std::string> evaluate_zone;
      if (const auto* p = std::get_if<telemetry::PowerReading>(&s.reading)) {
        auto spec = specs_.find(s.appliance);
        if (spec != specs_.end()) {
          auto& a = world.appliances[s.appliance];
          a.spec = spec->second;
          a.watts = p->watts;
          a.ts = s.ts;
          if (u->label) a.label = *u->label;
          evaluate_zone = s.zone;
        }
      } else if (const auto* o = std::get_if<telemetry::OccupancyReading>(&s.reading)) {
        world.zones[s.zone].occupancy = recommender::OccupancyState{o->occupied, s.ts};
        evaluate_zone = s.zone;
      } else if (const auto* e = std::get_if<telemetry::EnvironmentReading>(&s.reading)) {
        const recommender::EnvironmentState env{e->temperature_c, e->humidity_pct, e->lux, s.ts};
        if (s.zone == sim::kOutdoorZone)
          world.outdoor = env;
        else
          world.zones[s.zone].environment = env;
      }
      world.clock = std::max(world.clock, s.ts);
      clock_.store(world.clock);

      if (evaluate_zone) {
        recommender::Snapshot snap;
        snap.user_id = user_;
        snap.outdoor = world.outdoor;
        snap.now = s.ts;
        for (const auto& [id, a] : world.appliances)
          if (a.spec.zone_id == *evaluate_zone) {
            snap.appliances.push_back(a);
            snap.now = std::max(snap.now, a.ts);
          }
        if (auto z = world.zones.find(*evaluate_zone); z != world.zones.end()) snap.zones[*evaluate_zone] = z->second;
        if (!snap.appliances.empty()) {
          ++counters_.evaluations;
          for (const auto& r : rec_.evaluate(snap)) {
            bus_.publish(EventKind::recommendation, to_json(r, rec_.config().currency));
            ++counters_.recommendations;
            rec_latency_.add(ms_since(s.received_at));
          }
        }
      }
      {
        std::lock_guard lock(view_mu_);
        view_ = world;
      }
      if (s.kind() == telemetry::SourceKind::power) sample_latency_.add(ms_since(s.received_at));
      ++counters_.processed;
    }
  }

  std::string user_;
  std::map<std::string, ApplianceSpec> specs_;
  store::Store& store_;
  recommender::Recommender& rec_;
  EventBus& bus_;

  Channel<telemetry::TelemetrySample> to_store_;
  Channel<telemetry::TelemetrySample> to_label_;
  Channel<Labeled> to_trigger_;
  std::jthread store_thread_, label_thread_, trigger_thread_;
  bool running_ = false;

  PipelineCounters counters_;
  LatencyRecorder sample_latency_, rec_latency_;
  std::atomic<Timestamp> clock_{0};
  mutable std::mutex view_mu_;
  WorldView view_;
};

}  // namespace emedge::service
