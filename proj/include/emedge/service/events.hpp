#pragma once

// Live event feed for API clients. Every event gets the next sequence
// number; a bounded history lets a reconnecting client resume after the
// last id it saw.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emedge/error.hpp"

namespace emedge::service {

enum class EventKind { sample, label, recommendation, feedback, health };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::sample: return "sample";
    case EventKind::label: return "label";
    case EventKind::recommendation: return "recommendation";
    case EventKind::feedback: return "feedback";
    case EventKind::health: return "health";
  }
  return "sample";
}

struct ApiEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::sample;
  nlohmann::json payload;
};

// One server-sent-events frame.
inline std::string sse_frame(const ApiEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + std::string(to_string(e.kind)) + "\ndata: " + e.payload.dump() +
         "\n\n";
}

class EventBus {
 public:
  using Listener = std::function<void(const ApiEvent&)>;

  explicit EventBus(std::size_t history = 100000) : history_(history) {
    if (history_ == 0) throw ConfigError("events.history", "must be >= 1");
  }

  std::uint64_t publish(EventKind kind, nlohmann::json payload) {
    ApiEvent e;
    std::vector<Listener> listeners;
    {
      std::lock_guard lock(mu_);
      e = {++last_seq_, kind, std::move(payload)};
      events_.push_back(e);
      if (events_.size() > history_) events_.pop_front();
      listeners = listeners_;
    }
    cv_.notify_all();
    for (const auto& l : listeners) l(e);
    return e.seq;
  }

  // Listeners run synchronously on the publishing thread.
  void add_listener(Listener l) {
    std::lock_guard lock(mu_);
    listeners_.push_back(std::move(l));
  }

  // Events with seq > `after`, waiting up to `wait` for the first one.
  // Events that already fell out of the history are skipped.
  std::vector<ApiEvent> after(std::uint64_t after, std::size_t max, std::chrono::milliseconds wait) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, wait, [&] { return closed_ || last_seq_ > after; });
    std::vector<ApiEvent> out;
    if (events_.empty() || last_seq_ <= after) return out;
    const std::uint64_t first = events_.front().seq;
    std::size_t i = after < first ? 0 : static_cast<std::size_t>(after - first + 1);
    for (; i < events_.size() && out.size() < max; ++i) out.push_back(events_[i]);
    return out;
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return last_seq_;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  std::size_t history_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<ApiEvent> events_;
  std::vector<Listener> listeners_;
  std::uint64_t last_seq_ = 0;
  bool closed_ = false;
};

}  // namespace emedge::service
