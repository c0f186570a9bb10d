#pragma once

// Embedded persistence for one edge node.
//
// On-disk layout under the store root:
//   raw/segment-<n>.jsonl       append-only sample log, one JSON object per line
//   aggregates.jsonl            5-minute buckets frozen by archival
//   archive/<stream>/<date>.jsonl.gz   archived raw samples (gzip members appended)
//   kb.jsonl                    knowledge-base upsert log
//
// The in-memory index is rebuilt from these files on open.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "emedge/error.hpp"
#include "emedge/micromoment.hpp"
#include "emedge/telemetry/sample.hpp"
#include "emedge/time_util.hpp"

namespace emedge::store {

namespace fs = std::filesystem;
using nlohmann::json;

enum class StreamKind { power, occupancy, env, label };

inline std::string_view to_string(StreamKind k) {
  switch (k) {
    case StreamKind::power: return "power";
    case StreamKind::occupancy: return "occupancy";
    case StreamKind::env: return "env";
    case StreamKind::label: return "label";
  }
  return "power";
}

// Stream ids are dot-separated: site.zone[.appliance].kind
struct StreamName {
  std::string site;
  std::string zone;
  std::string appliance;
  StreamKind kind = StreamKind::power;
};

inline std::optional<StreamName> parse_stream(std::string_view id) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const auto dot = id.find('.', pos);
    parts.emplace_back(id.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos));
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  for (const auto& p : parts)
    if (p.empty()) return std::nullopt;
  StreamName n;
  if (parts.size() == 4 && (parts[3] == "power" || parts[3] == "label")) {
    n = {parts[0], parts[1], parts[2], parts[3] == "power" ? StreamKind::power : StreamKind::label};
  } else if (parts.size() == 3 && (parts[2] == "occupancy" || parts[2] == "env")) {
    n = {parts[0], parts[1], "", parts[2] == "env" ? StreamKind::env : StreamKind::occupancy};
  } else {
    return std::nullopt;
  }
  return n;
}

inline std::string label_stream_id(std::string_view site, std::string_view zone, std::string_view appliance) {
  return fmt::format("{}.{}.{}.label", site, zone, appliance);
}

// One stored observation. `value` is watts, 0/1 occupancy, the label, or the
// temperature for env streams (which also fill humidity and lux).
struct Point {
  Timestamp ts = 0;
  double value = 0.0;
  double humidity = 0.0;
  double lux = 0.0;
  bool operator==(const Point&) const = default;
};

struct EnvMeans {
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double lux = 0.0;
  bool operator==(const EnvMeans&) const = default;
};

struct AggregateBucket {
  std::string stream;
  Timestamp bucket_start = 0;
  double mean_watts = 0.0;
  double max_watts = 0.0;
  double energy_wh = 0.0;
  double occupancy_fraction = 0.0;
  std::uint64_t sample_count = 0;
  std::optional<EnvMeans> env;
  bool operator==(const AggregateBucket&) const = default;
};

inline json to_json(const AggregateBucket& b) {
  json j{{"stream", b.stream},           {"bucket_start", b.bucket_start}, {"mean_watts", b.mean_watts},
         {"max_watts", b.max_watts},     {"energy_wh", b.energy_wh},       {"occupancy_fraction", b.occupancy_fraction},
         {"sample_count", b.sample_count}};
  if (b.env)
    j["env"] = {{"temperature_c", b.env->temperature_c}, {"humidity_pct", b.env->humidity_pct}, {"lux", b.env->lux}};
  return j;
}

inline AggregateBucket bucket_from_json(const json& j) {
  AggregateBucket b;
  b.stream = j.at("stream").get<std::string>();
  b.bucket_start = j.at("bucket_start").get<Timestamp>();
  b.mean_watts = j.at("mean_watts").get<double>();
  b.max_watts = j.at("max_watts").get<double>();
  b.energy_wh = j.at("energy_wh").get<double>();
  b.occupancy_fraction = j.at("occupancy_fraction").get<double>();
  b.sample_count = j.at("sample_count").get<std::uint64_t>();
  if (j.contains("env")) {
    const auto& e = j["env"];
    b.env = EnvMeans{e.at("temperature_c").get<double>(), e.at("humidity_pct").get<double>(), e.at("lux").get<double>()};
  }
  return b;
}

// How long each point in a bucket is held: until the next point or the
// bucket edge, whichever comes first. `points` must lie in one bucket and be
// sorted by ts.
inline std::vector<double> hold_durations(const std::vector<Point>& points, Timestamp bucket_end) {
  std::vector<double> d(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Timestamp until = i + 1 < points.size() ? points[i + 1].ts : bucket_end;
    d[i] = static_cast<double>(std::min(until, bucket_end) - points[i].ts);
  }
  return d;
}

// Summarizes the points of one bucket. Occupancy fraction is filled from the
// points themselves for occupancy streams; power buckets get it from the
// zone's occupancy bucket (see Store::aggregate_range).
inline AggregateBucket summarize(const std::string& stream, StreamKind kind, Timestamp start,
                                 const std::vector<Point>& points) {
  AggregateBucket b;
  b.stream = stream;
  b.bucket_start = start;
  b.sample_count = points.size();
  if (points.empty()) return b;
  const auto hold = hold_durations(points, start + kBucketSeconds);
  switch (kind) {
    case StreamKind::power: {
      double sum = 0.0, joules = 0.0, mx = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        sum += points[i].value;
        joules += points[i].value * hold[i];
        mx = std::max(mx, points[i].value);
      }
      b.mean_watts = sum / static_cast<double>(points.size());
      b.max_watts = mx;
      b.energy_wh = joules / 3600.0;
      break;
    }
    case StreamKind::occupancy: {
      double on = 0.0, total = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        on += points[i].value * hold[i];
        total += hold[i];
      }
      b.occupancy_fraction = total > 0.0 ? on / total : 0.0;
      break;
    }
    case StreamKind::env: {
      EnvMeans m;
      for (const auto& p : points) {
        m.temperature_c += p.value;
        m.humidity_pct += p.humidity;
        m.lux += p.lux;
      }
      const double n = static_cast<double>(points.size());
      b.env = EnvMeans{m.temperature_c / n, m.humidity_pct / n, m.lux / n};
      break;
    }
    case StreamKind::label: {
      double sum = 0.0, mx = 0.0;
      for (const auto& p : points) {
        sum += p.value;
        mx = std::max(mx, p.value);
      }
      b.mean_watts = sum / static_cast<double>(points.size());
      b.max_watts = mx;
      break;
    }
  }
  return b;
}

enum class KnowledgeKind { preference, habit_rule, recommendation, feedback_stat };

inline std::string_view to_string(KnowledgeKind k) {
  switch (k) {
    case KnowledgeKind::preference: return "preference";
    case KnowledgeKind::habit_rule: return "habit_rule";
    case KnowledgeKind::recommendation: return "recommendation";
    case KnowledgeKind::feedback_stat: return "feedback_stat";
  }
  return "preference";
}

inline KnowledgeKind parse_knowledge_kind(std::string_view s) {
  for (auto k : {KnowledgeKind::preference, KnowledgeKind::habit_rule, KnowledgeKind::recommendation,
                 KnowledgeKind::feedback_stat})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown knowledge kind '" + std::string(s) + "'");
}

struct KnowledgeRecord {
  KnowledgeKind kind = KnowledgeKind::preference;
  std::string key;
  json value;
  std::int64_t updated_at = 0;  // epoch milliseconds, strictly increasing per key
  bool operator==(const KnowledgeRecord&) const = default;
};

struct RetentionPolicy {
  Timestamp raw_s = 90 * kSecondsPerDay;
  Timestamp presence_s = 21 * kSecondsPerDay;
};

struct StoreOptions {
  bool fsync = false;  // fdatasync after every append; the log is always written through to the OS
  std::size_t segment_max_lines = 200000;
  std::uint64_t max_raw_bytes = 0;  // 0 = unlimited; exceeding it behaves like a full disk
  RetentionPolicy retention;
};

struct StoreCounters {
  std::uint64_t appended = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t frozen_drops = 0;  // writes into already-archived buckets
  std::uint64_t archived = 0;
  std::uint64_t write_errors = 0;

  json to_json() const {
    return {{"appended", appended},         {"duplicates", duplicates},
            {"frozen_drops", frozen_drops}, {"archived", archived},
            {"write_errors", write_errors}};
  }
};

struct StoreHealth {
  bool healthy = true;
  std::string last_error;
};

namespace detail {

inline std::string segment_name(std::uint64_t n) { return fmt::format("segment-{:09}.jsonl", n); }

inline std::optional<std::uint64_t> segment_number(const fs::path& p) {
  const auto name = p.filename().string();
  if (name.rfind("segment-", 0) != 0 || p.extension() != ".jsonl") return std::nullopt;
  try {
    return std::stoull(name.substr(8, name.size() - 8 - 6));
  } catch (...) {
    return std::nullopt;
  }
}

inline void write_fully(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StorageError(fmt::format("write to '{}' failed: {}", path.string(), std::strerror(errno)));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

class AppendFile {
 public:
  AppendFile() = default;
  explicit AppendFile(fs::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw StorageError(fmt::format("cannot open '{}': {}", path_.string(), std::strerror(errno)));
  }
  AppendFile(AppendFile&& o) noexcept : path_(std::move(o.path_)), fd_(std::exchange(o.fd_, -1)) {}
  AppendFile& operator=(AppendFile&& o) noexcept {
    if (this != &o) {
      close();
      path_ = std::move(o.path_);
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~AppendFile() { close(); }

  void append(std::string_view data, bool sync) {
    write_fully(fd_, data, path_);
    if (sync && ::fdatasync(fd_) != 0)
      throw StorageError(fmt::format("fsync of '{}' failed: {}", path_.string(), std::strerror(errno)));
  }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  bool is_open() const { return fd_ >= 0; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  int fd_ = -1;
};

inline void gzip_append(const fs::path& path, const std::string& data) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw StorageError(fmt::format("cannot create '{}': {}", path.parent_path().string(), ec.message()));
  gzFile f = gzopen(path.c_str(), "ab");
  if (!f) throw StorageError(fmt::format("cannot open archive '{}'", path.string()));
  const int written = data.empty() ? 0 : gzwrite(f, data.data(), static_cast<unsigned>(data.size()));
  const int rc = gzclose(f);
  if ((!data.empty() && written <= 0) || rc != Z_OK)
    throw StorageError(fmt::format("cannot write archive '{}'", path.string()));
}

}  // namespace detail

// Reads every line of a (possibly multi-member) gzip archive file.
inline std::vector<std::string> read_gzip_lines(const fs::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw StorageError(fmt::format("cannot open archive '{}'", path.string()));
  std::string all;
  char buf[1 << 15];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) all.append(buf, static_cast<std::size_t>(n));
  gzclose(f);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < all.size()) {
    auto nl = all.find('\n', pos);
    if (nl == std::string::npos) nl = all.size();
    if (nl > pos) lines.push_back(all.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

inline fs::path archive_path(const fs::path& root, const std::string& stream, Timestamp ts) {
  return root / "archive" / stream / (utc_date(ts) + ".jsonl.gz");
}

class Store {
 public:
  explicit Store(fs::path root, StoreOptions options = {}) : root_(std::move(root)), options_(options) {
    std::error_code ec;
    fs::create_directories(root_ / "raw", ec);
    if (ec) throw StorageError(fmt::format("cannot create store at '{}': {}", root_.string(), ec.message()));
    load();
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const fs::path& root() const { return root_; }

  // Appends a sample; returns once it has been written to the log.
  void append(const telemetry::TelemetrySample& s) {
    Point p{s.ts, 0.0, 0.0, 0.0};
    std::visit(
        [&](const auto& r) {
          using R = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<R, telemetry::PowerReading>) {
            p.value = r.watts;
          } else if constexpr (std::is_same_v<R, telemetry::OccupancyReading>) {
            p.value = r.occupied ? 1.0 : 0.0;
          } else {
            p.value = r.temperature_c;
            p.humidity = r.humidity_pct;
            p.lux = r.lux;
          }
        },
        s.reading);
    append(s.stream_id(), p);
  }

  void append_label(std::string_view site, std::string_view zone, std::string_view appliance, Timestamp ts,
                    MicroMoment label) {
    append(label_stream_id(site, zone, appliance), Point{ts, static_cast<double>(to_int(label)), 0.0, 0.0});
  }

  void append(const std::string& stream, const Point& p) {
    const auto name = parse_stream(stream);
    if (!name) throw ValidationError("malformed stream id '" + stream + "'");
    if (!std::isfinite(p.value) || !std::isfinite(p.humidity) || !std::isfinite(p.lux))
      throw ValidationError("non-finite value for stream '" + stream + "'");
    std::unique_lock lock(mu_);
    auto& st = streams_[stream];
    st.kind = name->kind;
    if (st.frozen.count(bucket_start(p.ts))) {
      ++counters_.frozen_drops;
      return;
    }
    std::string line = encode(stream, p);
    try {
      if (options_.max_raw_bytes && raw_bytes_ + line.size() > options_.max_raw_bytes)
        throw StorageError(fmt::format("store '{}' is full ({} byte limit)", root_.string(), options_.max_raw_bytes));
      if (!segment_.is_open() || segment_lines_ >= options_.segment_max_lines) roll_segment();
      segment_.append(line, options_.fsync);
    } catch (const StorageError& e) {
      ++counters_.write_errors;
      health_ = {false, e.what()};
      throw;
    }
    raw_bytes_ += line.size();
    ++segment_lines_;
    insert(st, p);
  }

  // Raw points in [from, to), sorted by timestamp.
  std::vector<Point> raw_range(const std::string& stream, Timestamp from, Timestamp to) const {
    std::shared_lock lock(mu_);
    std::vector<Point> out;
    auto it = streams_.find(stream);
    if (it == streams_.end()) return out;
    for (auto p = it->second.raw.lower_bound(from); p != it->second.raw.end() && p->first < to; ++p)
      out.push_back(p->second);
    return out;
  }

  std::optional<Point> latest(const std::string& stream) const {
    std::shared_lock lock(mu_);
    auto it = streams_.find(stream);
    if (it == streams_.end() || it->second.raw.empty()) return std::nullopt;
    return it->second.raw.rbegin()->second;
  }

  // Latest point at or before `ts`.
  std::optional<Point> at_or_before(const std::string& stream, Timestamp ts) const {
    std::shared_lock lock(mu_);
    auto it = streams_.find(stream);
    if (it == streams_.end()) return std::nullopt;
    auto p = it->second.raw.upper_bound(ts);
    if (p == it->second.raw.begin()) return std::nullopt;
    return std::prev(p)->second;
  }

  // Buckets overlapping [floor(from), to), sorted by start. Archived buckets
  // answer from their frozen summaries.
  std::vector<AggregateBucket> aggregate_range(const std::string& stream, Timestamp from, Timestamp to) const {
    if (from > to) throw ValidationError("aggregate_range: from > to");
    std::shared_lock lock(mu_);
    return aggregate_locked(stream, from, to);
  }

  std::vector<std::string> streams() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, st] : streams_) out.push_back(id);
    return out;
  }

  std::uint64_t raw_count(const std::string& stream) const {
    std::shared_lock lock(mu_);
    auto it = streams_.find(stream);
    return it == streams_.end() ? 0 : it->second.raw.size();
  }

  // Moves every bucket holding a raw sample older than `cutoff` into the
  // compressed archive. Aggregates of moved buckets are frozen first, so
  // queries over the archived range keep answering. Returns the number of
  // raw samples archived. On failure nothing in memory or on disk is removed.
  std::uint64_t archive_older_than(Timestamp cutoff) { return archive_impl([cutoff](StreamKind) { return cutoff; }); }

  // Applies the retention policy at time `now`: raw samples older than
  // raw_s are archived; presence data older than presence_s is archived and
  // its aggregates dropped.
  std::uint64_t apply_retention(Timestamp now) {
    const auto& r = options_.retention;
    auto n = archive_impl([&](StreamKind k) { return now - (k == StreamKind::occupancy ? r.presence_s : r.raw_s); });
    std::unique_lock lock(mu_);
    for (auto& [id, st] : streams_)
      if (st.kind == StreamKind::occupancy)
        for (auto it = st.frozen.begin(); it != st.frozen.end() && it->first < now - r.presence_s;)
          it = st.frozen.erase(it);
    rewrite_aggregates();
    return n;
  }

  // Knowledge base.
  KnowledgeRecord kb_put(KnowledgeKind kind, const std::string& key, json value) {
    std::unique_lock lock(mu_);
    const auto now_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    auto& slot = kb_[{kind, key}];
    KnowledgeRecord rec{kind, key, std::move(value), std::max<std::int64_t>(now_ms, slot.updated_at + 1)};
    json line{{"kind", to_string(kind)}, {"key", key}, {"value", rec.value}, {"updated_at", rec.updated_at}};
    try {
      if (!kb_file_.is_open()) kb_file_ = detail::AppendFile(root_ / "kb.jsonl");
      kb_file_.append(line.dump() + "\n", options_.fsync);
    } catch (const StorageError& e) {
      health_ = {false, e.what()};
      throw;
    }
    slot = rec;
    return rec;
  }

  KnowledgeRecord kb_get(KnowledgeKind kind, const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = kb_.find({kind, key});
    if (it == kb_.end())
      throw NotFoundError(fmt::format("no {} record with key '{}'", to_string(kind), key));
    return it->second;
  }

  std::optional<KnowledgeRecord> kb_find(KnowledgeKind kind, const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = kb_.find({kind, key});
    if (it == kb_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<KnowledgeRecord> kb_list(KnowledgeKind kind) const {
    std::shared_lock lock(mu_);
    std::vector<KnowledgeRecord> out;
    for (auto it = kb_.lower_bound({kind, ""}); it != kb_.end() && it->first.first == kind; ++it)
      out.push_back(it->second);
    return out;
  }

  StoreCounters counters() const {
    std::shared_lock lock(mu_);
    return counters_;
  }

  StoreHealth health() const {
    std::shared_lock lock(mu_);
    return health_;
  }

 private:
  struct StreamData {
    StreamKind kind = StreamKind::power;
    std::map<Timestamp, Point> raw;
    std::map<Timestamp, AggregateBucket> frozen;
  };

  static std::string encode(const std::string& stream, const Point& p) {
    if (p.humidity != 0.0 || p.lux != 0.0)
      return fmt::format("{{\"s\":\"{}\",\"t\":{},\"v\":{},\"h\":{},\"l\":{}}}\n", stream, p.ts, p.value, p.humidity,
                         p.lux);
    return fmt::format("{{\"s\":\"{}\",\"t\":{},\"v\":{}}}\n", stream, p.ts, p.value);
  }

  void insert(StreamData& st, const Point& p) {
    auto [it, fresh] = st.raw.insert_or_assign(p.ts, p);
    if (!fresh) ++counters_.duplicates;
    ++counters_.appended;
  }

  void roll_segment() {
    ++segment_no_;
    segment_ = detail::AppendFile(root_ / "raw" / detail::segment_name(segment_no_));
    segment_lines_ = 0;
  }

  void load() {
    if (fs::exists(root_ / "aggregates.jsonl")) {
      std::ifstream in(root_ / "aggregates.jsonl");
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;  // torn tail after a crash
        auto b = bucket_from_json(j);
        auto name = parse_stream(b.stream);
        if (!name) continue;
        auto& st = streams_[b.stream];
        st.kind = name->kind;
        st.frozen[b.bucket_start] = std::move(b);
      }
    }
    std::vector<std::pair<std::uint64_t, fs::path>> segments;
    for (const auto& e : fs::directory_iterator(root_ / "raw"))
      if (auto n = detail::segment_number(e.path())) segments.emplace_back(*n, e.path());
    std::sort(segments.begin(), segments.end());
    for (const auto& [n, path] : segments) {
      segment_no_ = std::max(segment_no_, n);
      raw_bytes_ += fs::file_size(path);
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("s")) continue;
        const auto stream = j["s"].get<std::string>();
        auto name = parse_stream(stream);
        if (!name) continue;
        Point p{j.at("t").get<Timestamp>(), j.at("v").get<double>(), j.value("h", 0.0), j.value("l", 0.0)};
        auto& st = streams_[stream];
        st.kind = name->kind;
        if (st.frozen.count(bucket_start(p.ts))) continue;
        st.raw.insert_or_assign(p.ts, p);
      }
    }
    counters_ = {};
    if (fs::exists(root_ / "kb.jsonl")) {
      std::ifstream in(root_ / "kb.jsonl");
      std::string line;
      while (std::getline(in, line)) {
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        KnowledgeRecord r{parse_knowledge_kind(j.at("kind").get<std::string>()), j.at("key").get<std::string>(),
                          j.at("value"), j.at("updated_at").get<std::int64_t>()};
        kb_[{r.kind, r.key}] = std::move(r);
      }
    }
  }

  std::vector<AggregateBucket> aggregate_locked(const std::string& stream, Timestamp from, Timestamp to) const {
    std::vector<AggregateBucket> out;
    auto it = streams_.find(stream);
    if (it == streams_.end() || from >= to) return out;
    const auto& st = it->second;
    const Timestamp first = bucket_start(from);
    std::map<Timestamp, AggregateBucket> merged;
    for (auto f = st.frozen.lower_bound(first); f != st.frozen.end() && f->first < to; ++f) merged[f->first] = f->second;
    std::vector<Point> cur;
    Timestamp cur_start = 0;
    auto flush = [&] {
      if (cur.empty()) return;
      merged[cur_start] = summarize(stream, st.kind, cur_start, cur);
      cur.clear();
    };
    for (auto p = st.raw.lower_bound(first); p != st.raw.end() && p->first < to; ++p) {
      const Timestamp b = bucket_start(p->first);
      if (!cur.empty() && b != cur_start) flush();
      cur_start = b;
      cur.push_back(p->second);
    }
    flush();
    std::string occ_stream;
    if (st.kind == StreamKind::power) {
      auto name = parse_stream(stream);
      occ_stream = telemetry::stream_id_for_occupancy(name->site, name->zone);
    }
    for (auto& [start, b] : merged) {
      if (!occ_stream.empty() && !st.frozen.count(start)) b.occupancy_fraction = occupancy_fraction_locked(occ_stream, start);
      out.push_back(std::move(b));
    }
    return out;
  }

  double occupancy_fraction_locked(const std::string& occ_stream, Timestamp start) const {
    auto b = aggregate_locked(occ_stream, start, start + kBucketSeconds);
    return b.empty() ? 0.0 : b.front().occupancy_fraction;
  }

  template <typename CutoffFor>
  std::uint64_t archive_impl(CutoffFor cutoff_for) {
    std::unique_lock lock(mu_);
    struct Plan {
      std::string stream;
      std::vector<Timestamp> buckets;
      std::vector<AggregateBucket> summaries;
      std::uint64_t samples = 0;
    };
    std::vector<Plan> plans;
    std::map<fs::path, std::string> archive_lines;
    for (const auto& [id, st] : streams_) {
      const Timestamp cutoff = cutoff_for(st.kind);
      if (st.raw.empty() || st.raw.begin()->first >= cutoff) continue;
      Plan plan{id, {}, {}, 0};
      const Timestamp last_bucket = bucket_start(std::prev(st.raw.lower_bound(cutoff))->first);
      auto end = st.raw.lower_bound(last_bucket + kBucketSeconds);
      for (auto p = st.raw.begin(); p != end; ++p) {
        const Timestamp b = bucket_start(p->first);
        if (plan.buckets.empty() || plan.buckets.back() != b) plan.buckets.push_back(b);
        archive_lines[archive_path(root_, id, p->first)] += encode(id, p->second);
        ++plan.samples;
      }
      for (Timestamp b : plan.buckets) {
        auto agg = aggregate_locked(id, b, b + kBucketSeconds);
        if (!agg.empty()) plan.summaries.push_back(agg.front());
      }
      plans.push_back(std::move(plan));
    }
    if (plans.empty()) return 0;
    try {
      for (const auto& [path, data] : archive_lines) detail::gzip_append(path, data);
      std::string frozen;
      for (const auto& plan : plans)
        for (const auto& b : plan.summaries) frozen += to_json(b).dump() + "\n";
      detail::AppendFile agg(root_ / "aggregates.jsonl");
      agg.append(frozen, true);
    } catch (const StorageError& e) {
      ++counters_.write_errors;
      health_ = {false, e.what()};
      throw;
    }
    std::uint64_t archived = 0;
    for (auto& plan : plans) {
      auto& st = streams_[plan.stream];
      for (auto& b : plan.summaries) st.frozen[b.bucket_start] = std::move(b);
      auto end = st.raw.lower_bound(plan.buckets.back() + kBucketSeconds);
      st.raw.erase(st.raw.begin(), end);
      archived += plan.samples;
    }
    counters_.archived += archived;
    compact_raw();
    return archived;
  }

  // Rewrites the raw log to hold only what is still in memory. The new
  // segment is complete on disk before the old ones are removed; a crash in
  // between leaves duplicates, which reload resolves.
  void compact_raw() {
    segment_.close();
    std::vector<fs::path> old;
    for (const auto& e : fs::directory_iterator(root_ / "raw"))
      if (detail::segment_number(e.path())) old.push_back(e.path());
    ++segment_no_;
    const auto final_path = root_ / "raw" / detail::segment_name(segment_no_);
    const auto tmp = fs::path(final_path.string() + ".tmp");
    std::uint64_t bytes = 0;
    {
      detail::AppendFile f(tmp);
      std::string chunk;
      for (const auto& [id, st] : streams_)
        for (const auto& [ts, p] : st.raw) {
          chunk += encode(id, p);
          if (chunk.size() > (1u << 20)) {
            f.append(chunk, false);
            bytes += chunk.size();
            chunk.clear();
          }
        }
      f.append(chunk, true);
      bytes += chunk.size();
    }
    fs::rename(tmp, final_path);
    for (const auto& p : old) fs::remove(p);
    raw_bytes_ = bytes;
    segment_lines_ = options_.segment_max_lines;  // next append opens a fresh segment
  }

  void rewrite_aggregates() {
    const auto path = root_ / "aggregates.jsonl";
    const auto tmp = fs::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::trunc);
      for (const auto& [id, st] : streams_)
        for (const auto& [start, b] : st.frozen) out << to_json(b).dump() << "\n";
      if (!out) throw StorageError("cannot rewrite '" + path.string() + "'");
    }
    fs::rename(tmp, path);
  }

  fs::path root_;
  StoreOptions options_;
  mutable std::shared_mutex mu_;
  std::map<std::string, StreamData> streams_;
  std::map<std::pair<KnowledgeKind, std::string>, KnowledgeRecord> kb_;
  detail::AppendFile segment_;
  detail::AppendFile kb_file_;
  std::uint64_t segment_no_ = 0;
  std::size_t segment_lines_ = 0;
  std::uint64_t raw_bytes_ = 0;
  StoreCounters counters_;
  StoreHealth health_;
};

}  // namespace emedge::store
