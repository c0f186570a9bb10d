#pragma once

// Decides when to recommend something, writes the recommendation, and
// adapts to the user's accept / reject / ignore feedback.

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "emedge/appliance.hpp"
#include "emedge/error.hpp"
#include "emedge/habits.hpp"
#include "emedge/micromoment.hpp"
#include "emedge/store.hpp"

namespace emedge::recommender {

using nlohmann::json;

enum class TriggerId { ac_outdoor_cooler, light_daylight, on_while_away };

inline std::string_view to_string(TriggerId t) {
  switch (t) {
    case TriggerId::ac_outdoor_cooler: return "T1_ac_outdoor_cooler";
    case TriggerId::light_daylight: return "T2_light_daylight";
    case TriggerId::on_while_away: return "T3_on_while_away";
  }
  return "T1_ac_outdoor_cooler";
}

inline TriggerId parse_trigger(std::string_view s) {
  for (auto t : {TriggerId::ac_outdoor_cooler, TriggerId::light_daylight, TriggerId::on_while_away})
    if (to_string(t) == s) return t;
  throw ValidationError("unknown trigger '" + std::string(s) + "'");
}

enum class Status { pending, accepted, rejected, ignored, expired };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::pending: return "pending";
    case Status::accepted: return "accepted";
    case Status::rejected: return "rejected";
    case Status::ignored: return "ignored";
    case Status::expired: return "expired";
  }
  return "pending";
}

inline std::optional<Status> parse_status(std::string_view s) {
  for (auto v : {Status::pending, Status::accepted, Status::rejected, Status::ignored, Status::expired})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

enum class Verdict { accept, reject, ignore };

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "accept") return Verdict::accept;
  if (s == "reject") return Verdict::reject;
  if (s == "ignore") return Verdict::ignore;
  return std::nullopt;
}

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::accept: return "accept";
    case Verdict::reject: return "reject";
    case Verdict::ignore: return "ignore";
  }
  return "accept";
}

enum class Style { eco, econ };

inline std::string_view to_string(Style s) { return s == Style::eco ? "eco" : "econ"; }

inline std::optional<Style> parse_style(std::string_view s) {
  if (s == "eco") return Style::eco;
  if (s == "econ") return Style::econ;
  return std::nullopt;
}

struct Persuasion {
  Style style = Style::econ;
  std::string fact_text;
  double value = 0.0;  // currency per hour (econ) or kg CO2 per hour (eco)
  bool operator==(const Persuasion&) const = default;
};

struct Recommendation {
  std::string id;
  TriggerId trigger = TriggerId::on_while_away;
  std::string user_id;
  std::string appliance_id;
  std::string zone_id;
  std::string action_text;
  std::string reason_text;
  Persuasion persuasion;
  double est_saving_energy = 0.0;  // kWh per hour
  double est_saving_cost = 0.0;    // currency per hour
  double watts = 0.0;
  Timestamp created_at = 0;
  Status status = Status::pending;
  std::optional<Timestamp> resolved_at;
  bool operator==(const Recommendation&) const = default;
};

inline json to_json(const Recommendation& r) {
  json j{{"id", r.id},
         {"trigger", to_string(r.trigger)},
         {"user", r.user_id},
         {"appliance", r.appliance_id},
         {"zone", r.zone_id},
         {"action", r.action_text},
         {"reason", r.reason_text},
         {"persuasion", {{"style", to_string(r.persuasion.style)}, {"fact", r.persuasion.fact_text}, {"value", r.persuasion.value}}},
         {"est_saving_energy_kwh_per_h", r.est_saving_energy},
         {"est_saving_cost_per_h", r.est_saving_cost},
         {"watts", r.watts},
         {"created_at", r.created_at},
         {"status", to_string(r.status)}};
  if (r.resolved_at) j["resolved_at"] = *r.resolved_at;
  return j;
}

inline Recommendation recommendation_from_json(const json& j) {
  Recommendation r;
  r.id = j.at("id").get<std::string>();
  r.trigger = parse_trigger(j.at("trigger").get<std::string>());
  r.user_id = j.at("user").get<std::string>();
  r.appliance_id = j.at("appliance").get<std::string>();
  r.zone_id = j.at("zone").get<std::string>();
  r.action_text = j.at("action").get<std::string>();
  r.reason_text = j.at("reason").get<std::string>();
  const auto& p = j.at("persuasion");
  r.persuasion = {parse_style(p.at("style").get<std::string>()).value_or(Style::econ), p.at("fact").get<std::string>(),
                  p.at("value").get<double>()};
  r.est_saving_energy = j.at("est_saving_energy_kwh_per_h").get<double>();
  r.est_saving_cost = j.at("est_saving_cost_per_h").get<double>();
  r.watts = j.value("watts", 0.0);
  r.created_at = j.at("created_at").get<Timestamp>();
  r.status = parse_status(j.at("status").get<std::string>()).value_or(Status::pending);
  if (j.contains("resolved_at")) r.resolved_at = j["resolved_at"].get<Timestamp>();
  return r;
}

// The delivered text: action and reason, then the persuasion fact and the
// cost line.
inline std::string message(const Recommendation& r, std::string_view currency) {
  return fmt::format("{}\n{}\n\n{}\nEstimated saving: {:.3f} kWh, {:.3f} {} per hour.", r.action_text, r.reason_text,
                     r.persuasion.fact_text, r.est_saving_energy, r.est_saving_cost, currency);
}

struct FeedbackStats {
  std::uint32_t accepts = 0;
  std::uint32_t rejects = 0;
  std::uint32_t ignores = 0;
  std::uint32_t consecutive_rejects = 0;
  Timestamp suppressed_until = 0;
  bool operator==(const FeedbackStats&) const = default;
};

inline json to_json(const FeedbackStats& s) {
  return {{"accepts", s.accepts},
          {"rejects", s.rejects},
          {"ignores", s.ignores},
          {"consecutive_rejects", s.consecutive_rejects},
          {"suppressed_until", s.suppressed_until}};
}

inline FeedbackStats stats_from_json(const json& j) {
  return {j.value("accepts", 0u), j.value("rejects", 0u), j.value("ignores", 0u), j.value("consecutive_rejects", 0u),
          j.value("suppressed_until", Timestamp{0})};
}

struct RecommenderConfig {
  double t1_margin_c = 1.0;
  double t2_daylight_lux = 350.0;
  Timestamp cooldown_s = 30 * 60;
  Timestamp feedback_timeout_s = 30 * 60;
  std::uint32_t suppress_after_rejects = 3;
  Timestamp suppress_for_s = kSecondsPerDay;
  Timestamp max_snapshot_skew_s = 60;
  double habit_confidence = 0.9;
  Timestamp habit_pacing_s = kSecondsPerDay;
  double tariff_per_kwh = 0.12;
  double co2_kg_per_kwh = 0.45;
  std::string currency = "QAR";
};

inline void validate(const RecommenderConfig& c) {
  if (!(c.cooldown_s > 0)) throw ConfigError("recommender.cooldown_s", "must be > 0");
  if (!(c.feedback_timeout_s > 0)) throw ConfigError("recommender.feedback_timeout_s", "must be > 0");
  if (c.suppress_after_rejects == 0) throw ConfigError("recommender.suppress_after_rejects", "must be >= 1");
  if (!(c.tariff_per_kwh >= 0.0)) throw ConfigError("tariff", "must be >= 0");
  if (!(c.co2_kg_per_kwh >= 0.0)) throw ConfigError("co2_factor", "must be >= 0");
  if (!(c.max_snapshot_skew_s > 0)) throw ConfigError("recommender.max_snapshot_skew_s", "must be > 0");
}

// Latest known state of one appliance.
struct ApplianceState {
  ApplianceSpec spec;
  double watts = 0.0;
  MicroMoment label = MicroMoment::good_usage;
  Timestamp ts = 0;
};

struct EnvironmentState {
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double lux = 0.0;
  Timestamp ts = 0;
};

struct OccupancyState {
  bool occupied = false;
  Timestamp ts = 0;
};

struct ZoneState {
  std::optional<OccupancyState> occupancy;
  std::optional<EnvironmentState> environment;
};

struct Snapshot {
  Timestamp now = 0;
  std::string user_id = "default";
  std::vector<ApplianceState> appliances;
  std::map<std::string, ZoneState> zones;
  std::optional<EnvironmentState> outdoor;
};

inline bool is_on(const ApplianceSpec& spec, double watts) { return watts > std::max(spec.dspc_w, kOutsideFloorW); }

struct Composed {
  std::string action_text;
  std::string reason_text;
};

struct FeedbackOutcome {
  Recommendation recommendation;
  FeedbackStats stats;
  bool send_off = false;  // accepted T3: switch the appliance off
};

class Recommender {
 public:
  explicit Recommender(RecommenderConfig config = {}, store::Store* kb = nullptr) : config_(std::move(config)), kb_(kb) {
    validate(config_);
    if (kb_) load();
  }

  const RecommenderConfig& config() const { return config_; }

  void set_habit_rules(std::vector<habits::HabitRule> rules) {
    std::lock_guard lock(mu_);
    habits_ = std::move(rules);
  }

  void set_style_preference(const std::string& user, Style style) {
    std::lock_guard lock(mu_);
    preferred_style_[user] = style;
    if (kb_) kb_->kb_put(store::KnowledgeKind::preference, "style/" + user, std::string(to_string(style)));
  }

  // Persuasion fact for `watts` in the given style.
  Persuasion persuade(double watts, Style style) const {
    const double kw = watts / 1000.0;
    if (style == Style::econ) {
      const double v = kw * config_.tariff_per_kwh;
      return {style, fmt::format("Switching it off saves about {:.3f} {} per hour.", v, config_.currency), v};
    }
    const double v = kw * config_.co2_kg_per_kwh;
    return {style, fmt::format("Switching it off avoids about {:.3f} kg of CO2 per hour.", v), v};
  }

  // Runs timeouts, expires recommendations whose condition has cleared and
  // emits new ones. Zones whose inputs are not within the skew window are
  // skipped and noted in health().
  std::vector<Recommendation> evaluate(const Snapshot& s) {
    std::lock_guard lock(mu_);
    expire_timeouts(s.now);
    std::map<std::string, std::vector<const ApplianceState*>> by_zone;
    for (const auto& a : s.appliances) by_zone[a.spec.zone_id].push_back(&a);
    std::vector<Recommendation> fired;
    for (const auto& [zone, apps] : by_zone) {
      const auto zit = s.zones.find(zone);
      const ZoneState zs = zit != s.zones.end() ? zit->second : ZoneState{};
      if (auto why = stale(s, zone, apps, zs)) {
        ++stale_skips_;
        last_note_ = *why;
        continue;
      }
      for (const auto* a : apps)
        for (auto t : {TriggerId::ac_outdoor_cooler, TriggerId::light_daylight, TriggerId::on_while_away}) {
          auto text = condition(t, *a, zs, s.outdoor);
          const auto key = std::make_pair(a->spec.id, t);
          auto pending = pending_.find(key);
          if (!text) {
            if (pending != pending_.end()) resolve(pending->second, Status::expired, s.now);
            continue;
          }
          if (pending != pending_.end()) continue;
          if (blocked(s.user_id, t, key, *a, zs, s.now)) continue;
          fired.push_back(create(s, *a, t, *text));
        }
    }
    return fired;
  }

  // Marks pending recommendations older than the feedback timeout as ignored.
  void tick(Timestamp now) {
    std::lock_guard lock(mu_);
    expire_timeouts(now);
  }

  FeedbackOutcome record_feedback(const std::string& id, Verdict verdict, Timestamp now) {
    std::lock_guard lock(mu_);
    auto it = recs_.find(id);
    if (it == recs_.end()) throw NotFoundError("no recommendation with id '" + id + "'");
    if (it->second.status != Status::pending)
      throw ConflictError(fmt::format("recommendation '{}' is already {}", id, to_string(it->second.status)));
    const Status s = verdict == Verdict::accept ? Status::accepted
                     : verdict == Verdict::reject ? Status::rejected
                                                  : Status::ignored;
    resolve(id, s, now);
    const auto& r = recs_.at(id);
    return {r, stats_.at({r.user_id, r.trigger}), s == Status::accepted && r.trigger == TriggerId::on_while_away};
  }

  std::optional<Recommendation> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = recs_.find(id);
    if (it == recs_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<Recommendation> list(std::optional<Status> status = std::nullopt) const {
    std::lock_guard lock(mu_);
    std::vector<Recommendation> out;
    for (const auto& [id, r] : recs_)
      if (!status || r.status == *status) out.push_back(r);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return a.created_at != b.created_at ? a.created_at < b.created_at : a.id < b.id;
    });
    return out;
  }

  FeedbackStats stats(const std::string& user, TriggerId t) const {
    std::lock_guard lock(mu_);
    auto it = stats_.find({user, t});
    return it == stats_.end() ? FeedbackStats{} : it->second;
  }

  json health() const {
    std::lock_guard lock(mu_);
    json feedback = json::object();
    for (const auto& [key, s] : stats_) feedback[key.first + "/" + std::string(to_string(key.second))] = to_json(s);
    std::size_t pending = pending_.size();
    return {{"stale_skips", stale_skips_}, {"last_note", last_note_}, {"pending", pending},
            {"total", recs_.size()},       {"feedback", feedback}};
  }

 private:
  using Key = std::pair<std::string, TriggerId>;

  // Returns the action and reason text when trigger `t` holds.
  std::optional<Composed> condition(TriggerId t, const ApplianceState& a, const ZoneState& z,
                                    const std::optional<EnvironmentState>& outdoor) const {
    const bool on = is_on(a.spec, a.watts);
    const bool present = z.occupancy && z.occupancy->occupied;
    const auto& name = a.spec.name.empty() ? a.spec.id : a.spec.name;
    switch (t) {
      case TriggerId::ac_outdoor_cooler: {
        if (a.spec.category != ApplianceCategory::air_conditioner || !on || !present || !z.environment || !outdoor)
          return std::nullopt;
        const double in = z.environment->temperature_c, out = outdoor->temperature_c;
        if (!(out + config_.t1_margin_c < in)) return std::nullopt;
        return Composed{"Open the window instead of using the AC.",
                        fmt::format("It is {:.1f} °C outside and {:.1f} °C inside, {:.1f} °C cooler outdoors.", out, in,
                                    in - out)};
      }
      case TriggerId::light_daylight: {
        if (a.spec.category != ApplianceCategory::light || !on || !present || !outdoor) return std::nullopt;
        if (!(outdoor->lux >= config_.t2_daylight_lux)) return std::nullopt;
        return Composed{fmt::format("Switch off the {} and use daylight.", name),
                        fmt::format("Outdoor light is {:.0f} lux, enough daylight to see by.", outdoor->lux)};
      }
      case TriggerId::on_while_away: {
        if (a.label != MicroMoment::while_outside) return std::nullopt;
        return Composed{fmt::format("Turn off the {}.", name),
                        fmt::format("The {} is on while you are away from the {}.", name, a.spec.zone_id)};
      }
    }
    return std::nullopt;
  }

  std::optional<std::string> stale(const Snapshot& s, const std::string& zone,
                                   const std::vector<const ApplianceState*>& apps, const ZoneState& z) const {
    std::vector<Timestamp> times;
    for (const auto* a : apps) times.push_back(a->ts);
    if (z.occupancy) times.push_back(z.occupancy->ts);
    if (z.environment) times.push_back(z.environment->ts);
    if (s.outdoor) times.push_back(s.outdoor->ts);
    const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
    if (s.now - *lo > config_.max_snapshot_skew_s || *hi - *lo > config_.max_snapshot_skew_s || *hi > s.now)
      return fmt::format("skipped zone '{}': inputs span [{}, {}] at now={} (window {} s)", zone, *lo, *hi, s.now,
                         config_.max_snapshot_skew_s);
    return std::nullopt;
  }

  bool blocked(const std::string& user, TriggerId t, const Key& key, const ApplianceState& a, const ZoneState& z,
               Timestamp now) const {
    auto st = stats_.find({user, t});
    if (st != stats_.end() && st->second.suppressed_until > now) return true;
    auto last = last_fired_.find(key);
    if (last != last_fired_.end() && now - last->second < config_.cooldown_s) return true;
    if (last != last_fired_.end() && now - last->second < config_.habit_pacing_s && contradicts_habit(a, z, now))
      return true;
    return false;
  }

  // The user habitually runs this appliance in the current circumstances.
  bool contradicts_habit(const ApplianceState& a, const ZoneState& z, Timestamp now) const {
    if (habits_.empty()) return false;
    habits::RawEvent e;
    e.appliance_id = a.spec.id;
    e.ts = now;
    e.present = z.occupancy ? z.occupancy->occupied : true;
    if (z.environment) {
      e.temperature_c = std::clamp(z.environment->temperature_c, -50.0, 60.0);
      e.humidity_pct = std::clamp(z.environment->humidity_pct, 0.0, 100.0);
    }
    const auto context = habits::discretize(e).context;
    for (const auto& r : habits_) {
      if (r.confidence < config_.habit_confidence || r.rhs.appliance_id != a.spec.id) continue;
      if (r.rhs.verb == habits::Verb::turn_off) continue;
      if (habits::rule_applies(r, context)) return true;
    }
    return false;
  }

  Style next_style(const std::string& user) {
    if (auto it = preferred_style_.find(user); it != preferred_style_.end()) return it->second;
    auto& flip = alternate_[user];
    const Style s = flip ? Style::eco : Style::econ;
    flip = !flip;
    return s;
  }

  Recommendation create(const Snapshot& s, const ApplianceState& a, TriggerId t, const Composed& text) {
    Recommendation r;
    r.id = fmt::format("rec-{:06}", ++next_id_);
    r.trigger = t;
    r.user_id = s.user_id;
    r.appliance_id = a.spec.id;
    r.zone_id = a.spec.zone_id;
    r.action_text = text.action_text;
    r.reason_text = text.reason_text;
    r.watts = a.watts;
    r.persuasion = persuade(a.watts, next_style(s.user_id));
    r.est_saving_energy = a.watts / 1000.0;
    r.est_saving_cost = r.est_saving_energy * config_.tariff_per_kwh;
    r.created_at = s.now;
    recs_[r.id] = r;
    pending_[{a.spec.id, t}] = r.id;
    last_fired_[{a.spec.id, t}] = s.now;
    persist(r);
    return r;
  }

  void resolve(const std::string& id, Status status, Timestamp now) {
    auto& r = recs_.at(id);
    r.status = status;
    r.resolved_at = now;
    pending_.erase({r.appliance_id, r.trigger});
    if (status != Status::expired) {
      auto& st = stats_[{r.user_id, r.trigger}];
      if (status == Status::accepted) {
        ++st.accepts;
        st.consecutive_rejects = 0;
      } else if (status == Status::rejected) {
        ++st.rejects;
        if (++st.consecutive_rejects >= config_.suppress_after_rejects) {
          st.suppressed_until = now + config_.suppress_for_s;
          st.consecutive_rejects = 0;
        }
      } else {
        ++st.ignores;
      }
      if (kb_) kb_->kb_put(store::KnowledgeKind::feedback_stat, r.user_id + "/" + std::string(to_string(r.trigger)), to_json(st));
    }
    persist(r);
  }

  void expire_timeouts(Timestamp now) {
    std::vector<std::string> due;
    for (const auto& [key, id] : pending_)
      if (now - recs_.at(id).created_at >= config_.feedback_timeout_s) due.push_back(id);
    for (const auto& id : due) resolve(id, Status::ignored, now);
  }

  void persist(const Recommendation& r) {
    if (kb_) kb_->kb_put(store::KnowledgeKind::recommendation, r.id, to_json(r));
  }

  void load() {
    for (const auto& rec : kb_->kb_list(store::KnowledgeKind::recommendation)) {
      auto r = recommendation_from_json(rec.value);
      if (r.status == Status::pending) pending_[{r.appliance_id, r.trigger}] = r.id;
      auto& last = last_fired_[{r.appliance_id, r.trigger}];
      last = std::max(last, r.created_at);
      if (r.id.rfind("rec-", 0) == 0) next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(r.id.substr(4)));
      recs_[r.id] = std::move(r);
    }
    for (const auto& rec : kb_->kb_list(store::KnowledgeKind::feedback_stat)) {
      const auto slash = rec.key.rfind('/');
      if (slash == std::string::npos) continue;
      stats_[{rec.key.substr(0, slash), parse_trigger(rec.key.substr(slash + 1))}] = stats_from_json(rec.value);
    }
    for (const auto& rec : kb_->kb_list(store::KnowledgeKind::preference))
      if (rec.key.rfind("style/", 0) == 0 && rec.value.is_string())
        if (auto s = parse_style(rec.value.get<std::string>())) preferred_style_[rec.key.substr(6)] = *s;
    for (const auto& rec : kb_->kb_list(store::KnowledgeKind::habit_rule)) habits_.push_back(habits::rule_from_json(rec.value));
  }

  RecommenderConfig config_;
  store::Store* kb_ = nullptr;
  mutable std::mutex mu_;
  std::map<std::string, Recommendation> recs_;
  std::map<Key, std::string> pending_;
  std::map<Key, Timestamp> last_fired_;
  std::map<std::pair<std::string, TriggerId>, FeedbackStats> stats_;
  std::map<std::string, Style> preferred_style_;
  std::map<std::string, bool> alternate_;
  std::vector<habits::HabitRule> habits_;
  std::uint64_t next_id_ = 0;
  std::uint64_t stale_skips_ = 0;
  std::string last_note_;
};

}  // namespace emedge::recommender
