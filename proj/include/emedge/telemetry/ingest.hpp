#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <utility>

#include <json.hpp>

#include "emedge/error.hpp"
#include "emedge/telemetry/pubsub.hpp"
#include "emedge/telemetry/reorder.hpp"
#include "emedge/telemetry/sample.hpp"

namespace emedge::telemetry {

struct IngestCounters {
  std::uint64_t received = 0;
  std::uint64_t delivered = 0;
  std::uint64_t malformed = 0;
  std::uint64_t dropped_late = 0;

  nlohmann::json to_json() const {
    return {{"received", received}, {"delivered", delivered}, {"malformed", malformed}, {"dropped_late", dropped_late}};
  }
};

using SampleSink = std::function<void(TelemetrySample)>;
using WarningSink = std::function<void(std::string_view)>;

// Normalizes raw messages into samples and hands them to `sink` in
// per-stream timestamp order. Thread-safe: concurrent producers are
// serialized, and the sink is only ever called from one thread at a time.
class Ingestor {
 public:
  explicit Ingestor(SampleSink sink, Timestamp reorder_window_s = 30, WarningSink warn = {})
      : sink_(std::move(sink)), warn_(std::move(warn)), reorder_(reorder_window_s) {}

  void on_message(std::string_view topic, std::string_view payload) {
    const auto arrived = std::chrono::steady_clock::now();
    handle(topic, parse_message(topic, payload), arrived);
  }

  void on_message(std::string_view topic, const nlohmann::json& payload) {
    const auto arrived = std::chrono::steady_clock::now();
    handle(topic, parse_message(topic, payload), arrived);
  }

  // Counts a message that could not even be framed (e.g. a bad replay line).
  void reject(std::string_view why) {
    std::lock_guard lock(mu_);
    ++counters_.received;
    ++counters_.malformed;
    if (warn_) warn_(why);
  }

  void advance_to(Timestamp now) {
    std::lock_guard lock(mu_);
    deliver(reorder_.advance_to(now));
  }

  void finish() {
    std::lock_guard lock(mu_);
    deliver(reorder_.flush());
  }

  IngestCounters counters() const {
    std::lock_guard lock(mu_);
    auto c = counters_;
    c.dropped_late = reorder_.dropped_late();
    return c;
  }

 private:
  void handle(std::string_view topic, ParseOutcome outcome, std::chrono::steady_clock::time_point arrived) {
    std::lock_guard lock(mu_);
    ++counters_.received;
    if (!outcome.sample) {
      ++counters_.malformed;
      if (warn_) warn_(std::string(topic) + ": " + outcome.error);
      return;
    }
    outcome.sample->received_at = arrived;
    deliver(reorder_.push(std::move(*outcome.sample)));
  }

  void deliver(std::vector<TelemetrySample> ready) {
    for (auto& s : ready) {
      ++counters_.delivered;
      sink_(std::move(s));
    }
  }

  SampleSink sink_;
  WarningSink warn_;
  mutable std::mutex mu_;
  Reorderer reorder_;
  IngestCounters counters_;
};

// Subscribes the ingestor to a live broker.
inline void subscribe(PubSubClient& client, std::string topic_filter, Ingestor& ingestor) {
  client.subscribe(std::move(topic_filter),
                   [&ingestor](std::string_view topic, std::string_view payload) { ingestor.on_message(topic, payload); });
}

struct ReplayOptions {
  // Pace by file timestamps, divided by `speedup` (1 = real time).
  bool realtime = false;
  double speedup = 1.0;
  // Pace at a fixed number of events per second; 0 disables.
  double events_per_second = 0.0;
  std::string topic_filter = "#";
};

// Replays a JSON-lines file of {topic, ts, payload} events into the ingestor
// and flushes the reorder buffer at the end. Returns the number of lines read.
inline std::uint64_t replay_file(const std::filesystem::path& path, Ingestor& ingestor, const ReplayOptions& options = {},
                                 std::stop_token stop = {}) {
  std::ifstream in(path);
  if (!in) throw StorageError("replay file '" + path.string() + "' not found");
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  std::optional<Timestamp> first_ts;
  std::uint64_t lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (stop.stop_requested()) break;
    if (line.empty()) continue;
    ++lines;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("topic") || !j["topic"].is_string() ||
        !j.contains("payload")) {
      ingestor.reject("replay line " + std::to_string(lines) + " is not a {topic, ts, payload} record");
      continue;
    }
    const std::string topic = j["topic"].get<std::string>();
    if (!topic_matches(options.topic_filter, topic)) {
      --lines;
      continue;
    }
    if (options.events_per_second > 0.0) {
      std::this_thread::sleep_until(started + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(
                                                  static_cast<double>(lines - 1) / options.events_per_second)));
    } else if (options.realtime && j.contains("ts") && j["ts"].is_number_integer()) {
      const auto ts = j["ts"].get<Timestamp>();
      if (!first_ts) first_ts = ts;
      const double offset = static_cast<double>(ts - *first_ts) / std::max(options.speedup, 1e-9);
      std::this_thread::sleep_until(started +
                                    std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(offset)));
    }
    const auto& payload = j["payload"];
    if (payload.is_string())
      ingestor.on_message(topic, std::string_view(payload.get_ref<const std::string&>()));
    else
      ingestor.on_message(topic, payload);
  }
  ingestor.finish();
  return lines;
}

enum class Command { on, off };

constexpr std::string_view to_string(Command c) { return c == Command::on ? "ON" : "OFF"; }

enum class CommandAck { sent, queued };

// Publishes ON/OFF to appliance `set` topics. While the broker is down
// commands wait in a bounded FIFO that drains on reconnect.
class CommandPublisher {
 public:
  static constexpr std::size_t kDefaultCapacity = 100;

  explicit CommandPublisher(PubSubClient& client, std::size_t capacity = kDefaultCapacity)
      : client_(client), capacity_(capacity) {
    client_.on_connected([this] { flush(); });
  }

  CommandAck publish_command(const TopicAddress& address, Command command) {
    if (address.channel != TopicChannel::set) throw ValidationError("commands must target a 'set' topic");
    std::string topic = render(address);
    std::lock_guard lock(mu_);
    drain_locked();
    if (queue_.empty() && client_.connected()) {
      try {
        client_.publish(topic, to_string(command));
        return CommandAck::sent;
      } catch (const Error&) {
      }
    }
    if (queue_.size() >= capacity_)
      throw BackpressureError("command queue full (" + std::to_string(capacity_) + " pending)");
    queue_.emplace_back(std::move(topic), std::string(to_string(command)));
    return CommandAck::queued;
  }

  // Sends queued commands in order; returns how many went out.
  std::size_t flush() {
    std::lock_guard lock(mu_);
    return drain_locked();
  }

  std::size_t queued() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  std::size_t drain_locked() {
    std::size_t sent = 0;
    while (!queue_.empty() && client_.connected()) {
      try {
        client_.publish(queue_.front().first, queue_.front().second);
      } catch (const Error&) {
        break;
      }
      queue_.pop_front();
      ++sent;
    }
    return sent;
  }

  PubSubClient& client_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<std::pair<std::string, std::string>> queue_;
};

}  // namespace emedge::telemetry
