#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>

namespace emedge::telemetry {

struct BackoffPolicy {
  std::chrono::milliseconds base{1000};
  std::chrono::milliseconds cap{60000};
};

// Exponential retry delay: base, 2*base, 4*base, ... capped at `cap`.
class Backoff {
 public:
  explicit Backoff(BackoffPolicy policy = {}) : policy_(policy) {}

  std::chrono::milliseconds delay_for(std::uint32_t attempt) const {
    auto d = policy_.base;
    for (std::uint32_t i = 0; i < attempt && d < policy_.cap; ++i) d *= 2;
    return std::min(d, policy_.cap);
  }

  std::chrono::milliseconds next() { return delay_for(attempt_++); }
  void reset() { attempt_ = 0; }
  std::uint32_t attempt() const { return attempt_; }

 private:
  BackoffPolicy policy_;
  std::uint32_t attempt_ = 0;
};

}  // namespace emedge::telemetry
