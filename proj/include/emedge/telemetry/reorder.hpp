#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "emedge/telemetry/sample.hpp"

namespace emedge::telemetry {

// Holds samples for `window` seconds of event time so that moderately late
// arrivals can be put back in order. Release is driven by the newest
// timestamp seen across all streams, which keeps streams that share a
// timestamp in arrival order relative to each other. A sample older than
// what its stream already released is dropped.
class Reorderer {
 public:
  explicit Reorderer(Timestamp window_s = 30) : window_(window_s) {}

  std::vector<TelemetrySample> push(TelemetrySample s) {
    const std::string stream = s.stream_id();
    if (auto it = released_.find(stream); it != released_.end() && s.ts < it->second) {
      ++dropped_late_;
      return {};
    }
    if (!watermark_ || s.ts > *watermark_) watermark_ = s.ts;
    pending_.emplace(Key{s.ts, seq_++}, Entry{stream, std::move(s)});
    return release_through(*watermark_ - window_);
  }

  // Advances event time without a sample, e.g. from a wall clock in live mode.
  std::vector<TelemetrySample> advance_to(Timestamp now) {
    if (!watermark_ || now > *watermark_) watermark_ = now;
    return release_through(*watermark_ - window_);
  }

  std::vector<TelemetrySample> flush() {
    std::vector<TelemetrySample> out;
    for (auto& [key, e] : pending_) {
      released_[e.stream] = key.ts;
      out.push_back(std::move(e.sample));
    }
    pending_.clear();
    return out;
  }

  std::uint64_t dropped_late() const { return dropped_late_; }
  std::size_t pending() const { return pending_.size(); }
  Timestamp window() const { return window_; }

 private:
  struct Key {
    Timestamp ts;
    std::uint64_t seq;
    bool operator<(const Key& o) const { return std::tie(ts, seq) < std::tie(o.ts, o.seq); }
  };
  struct Entry {
    std::string stream;
    TelemetrySample sample;
  };

  std::vector<TelemetrySample> release_through(Timestamp limit) {
    std::vector<TelemetrySample> out;
    auto it = pending_.begin();
    while (it != pending_.end() && it->first.ts <= limit) {
      released_[it->second.stream] = it->first.ts;
      out.push_back(std::move(it->second.sample));
      it = pending_.erase(it);
    }
    return out;
  }

  Timestamp window_;
  std::optional<Timestamp> watermark_;
  std::uint64_t seq_ = 0;
  std::uint64_t dropped_late_ = 0;
  std::map<Key, Entry> pending_;
  std::unordered_map<std::string, Timestamp> released_;
};

}  // namespace emedge::telemetry
