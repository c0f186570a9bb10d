#pragma once

#include <cmath>
#include <cstdint>
#include <ctime>
#include <string>

namespace emedge {

using Timestamp = std::int64_t;  // seconds since the Unix epoch

inline constexpr Timestamp kSecondsPerHour = 3600;
inline constexpr Timestamp kSecondsPerDay = 86400;
inline constexpr Timestamp kBucketSeconds = 300;

// Floor division that behaves for negative timestamps too.
constexpr Timestamp floor_to(Timestamp ts, Timestamp step) {
  Timestamp q = ts / step;
  if ((ts % step != 0) && ((ts < 0) != (step < 0))) --q;
  return q * step;
}

constexpr Timestamp bucket_start(Timestamp ts) { return floor_to(ts, kBucketSeconds); }

constexpr Timestamp seconds_of_day(Timestamp ts) { return ts - floor_to(ts, kSecondsPerDay); }

inline double hour_of_day(Timestamp ts) {
  return static_cast<double>(seconds_of_day(ts)) / static_cast<double>(kSecondsPerHour);
}

// 0 = Monday ... 6 = Sunday. 1970-01-01 was a Thursday.
constexpr int weekday(Timestamp ts) {
  const Timestamp days = floor_to(ts, kSecondsPerDay) / kSecondsPerDay;
  const Timestamp w = (days + 3) % 7;
  return static_cast<int>(w < 0 ? w + 7 : w);
}

constexpr bool is_weekend(Timestamp ts) { return weekday(ts) >= 5; }

// yyyy-mm-dd in UTC.
inline std::string utc_date(Timestamp ts) {
  std::time_t t = static_cast<std::time_t>(ts);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

}  // namespace emedge
