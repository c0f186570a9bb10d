#pragma once

// Association-rule mining over user activity. Each event becomes a basket
// of discrete context predicates plus one action item; frequent itemsets
// are found level by level (Apriori) and turned into rules
// context-predicates => action.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "emedge/error.hpp"
#include "emedge/micromoment.hpp"
#include "emedge/time_util.hpp"

namespace emedge::habits {

enum class Verb { turn_on, turn_off, extensive_use };

inline std::string_view to_string(Verb v) {
  switch (v) {
    case Verb::turn_on: return "turn_on";
    case Verb::turn_off: return "turn_off";
    case Verb::extensive_use: return "extensive_use";
  }
  return "turn_on";
}

inline Verb parse_verb(std::string_view s) {
  for (auto v : {Verb::turn_on, Verb::turn_off, Verb::extensive_use})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown verb '" + std::string(s) + "'");
}

struct Action {
  std::string appliance_id;
  Verb verb = Verb::turn_on;

  std::string str() const { return appliance_id + ":" + std::string(to_string(verb)); }
  auto operator<=>(const Action&) const = default;
};

inline Action parse_action(std::string_view s) {
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0) throw ValidationError("action must look like <appliance>:<verb>");
  return {std::string(s.substr(0, colon)), parse_verb(s.substr(colon + 1))};
}

// An observed action with numeric circumstances, before discretization.
struct RawEvent {
  std::string user_id = "default";
  std::string appliance_id;
  Verb verb = Verb::turn_on;
  Timestamp ts = 0;
  std::optional<double> temperature_c;
  bool present = true;
  std::optional<double> humidity_pct;
};

struct ActionEvent {
  std::string user_id;
  Action action;
  std::vector<std::string> context;  // sorted, unique
  Timestamp ts = 0;
  bool operator==(const ActionEvent&) const = default;
};

inline std::string time_band(Timestamp ts) {
  const auto hour = seconds_of_day(ts) / kSecondsPerHour;
  if (hour < 6) return "night";
  if (hour < 12) return "morning";
  if (hour < 18) return "afternoon";
  return "evening";
}

// 3 degree bands, lower bound inclusive: 24.5 -> "temp[24,27)".
inline std::string temperature_band(double c) {
  const auto lo = static_cast<long>(std::floor(c / 3.0)) * 3;
  return fmt::format("temp[{},{})", lo, lo + 3);
}

// 20 % bands; 100 % falls in the top band.
inline std::string humidity_band(double h) {
  const auto lo = std::min(static_cast<long>(std::floor(h / 20.0)), 4L) * 20;
  return fmt::format("humidity[{},{})", lo, lo + 20);
}

inline ActionEvent discretize(const RawEvent& e) {
  if (e.appliance_id.empty()) throw ValidationError("event has no appliance");
  std::vector<std::string> ctx{time_band(e.ts), e.present ? "present" : "absent",
                               is_weekend(e.ts) ? "weekend" : "weekday"};
  if (e.temperature_c) {
    if (!std::isfinite(*e.temperature_c) || *e.temperature_c < -50.0 || *e.temperature_c > 60.0)
      throw ValidationError(fmt::format("temperature {} outside [-50, 60] C", *e.temperature_c));
    ctx.push_back(temperature_band(*e.temperature_c));
  }
  if (e.humidity_pct) {
    if (!std::isfinite(*e.humidity_pct) || *e.humidity_pct < 0.0 || *e.humidity_pct > 100.0)
      throw ValidationError(fmt::format("humidity {} outside [0, 100] %", *e.humidity_pct));
    ctx.push_back(humidity_band(*e.humidity_pct));
  }
  std::sort(ctx.begin(), ctx.end());
  return {e.user_id, {e.appliance_id, e.verb}, ctx, e.ts};
}

struct HabitRule {
  std::vector<std::string> lhs;  // sorted context predicates
  Action rhs;
  double support = 0.0;
  double confidence = 0.0;
  std::size_t count = 0;      // events matching lhs and rhs
  std::size_t lhs_count = 0;  // events matching lhs

  std::string key() const {
    std::string k;
    for (const auto& p : lhs) k += (k.empty() ? "" : "&") + p;
    return k + "=>" + rhs.str();
  }

  bool operator==(const HabitRule&) const = default;
};

inline nlohmann::json to_json(const HabitRule& r) {
  return {{"lhs", r.lhs},           {"rhs", r.rhs.str()}, {"support", r.support}, {"confidence", r.confidence},
          {"count", r.count},       {"lhs_count", r.lhs_count}};
}

inline HabitRule rule_from_json(const nlohmann::json& j) {
  HabitRule r;
  r.lhs = j.at("lhs").get<std::vector<std::string>>();
  r.rhs = parse_action(j.at("rhs").get<std::string>());
  r.support = j.at("support").get<double>();
  r.confidence = j.at("confidence").get<double>();
  r.count = j.value("count", std::size_t{0});
  r.lhs_count = j.value("lhs_count", std::size_t{0});
  return r;
}

inline bool rule_order(const HabitRule& a, const HabitRule& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.support != b.support) return a.support > b.support;
  if (a.lhs != b.lhs) return a.lhs < b.lhs;
  return a.rhs.str() < b.rhs.str();
}

using Itemset = std::vector<std::string>;  // sorted

struct FrequentItemset {
  Itemset items;
  std::size_t count = 0;
};

inline constexpr std::string_view kActionPrefix = "do:";

namespace detail {

inline std::vector<std::vector<int>> baskets_of(const std::vector<ActionEvent>& events, std::vector<std::string>& vocab) {
  std::set<std::string> items;
  for (const auto& e : events) {
    items.insert(e.context.begin(), e.context.end());
    items.insert(std::string(kActionPrefix) + e.action.str());
  }
  vocab.assign(items.begin(), items.end());
  std::map<std::string, int> id;
  for (std::size_t i = 0; i < vocab.size(); ++i) id[vocab[i]] = static_cast<int>(i);
  std::vector<std::vector<int>> baskets;
  baskets.reserve(events.size());
  for (const auto& e : events) {
    std::vector<int> b;
    for (const auto& c : e.context) b.push_back(id.at(c));
    b.push_back(id.at(std::string(kActionPrefix) + e.action.str()));
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    baskets.push_back(std::move(b));
  }
  return baskets;
}

inline bool meets(std::size_t count, std::size_t n, double threshold) {
  return static_cast<double>(count) >= threshold * static_cast<double>(n) - 1e-9;
}

}  // namespace detail

// All itemsets whose support reaches min_support. An itemset holds at most
// one action item since every basket has exactly one.
inline std::vector<FrequentItemset> frequent_itemsets(const std::vector<ActionEvent>& events, double min_support) {
  if (!(min_support > 0.0 && min_support <= 1.0)) throw ValidationError("min_support must lie in (0, 1]");
  std::vector<FrequentItemset> out;
  if (events.empty()) return out;
  std::vector<std::string> vocab;
  const auto baskets = detail::baskets_of(events, vocab);
  const std::size_t n = baskets.size();

  std::map<std::vector<int>, std::size_t> level;
  for (const auto& b : baskets)
    for (int i : b) ++level[{i}];
  std::erase_if(level, [&](const auto& kv) { return !detail::meets(kv.second, n, min_support); });

  while (!level.empty()) {
    for (const auto& [items, count] : level) {
      Itemset named;
      for (int i : items) named.push_back(vocab[static_cast<std::size_t>(i)]);
      out.push_back({named, count});
    }
    // Join itemsets sharing all but the last item, then prune candidates
    // with an infrequent subset.
    std::map<std::vector<int>, std::size_t> candidates;
    for (auto a = level.begin(); a != level.end(); ++a)
      for (auto b = std::next(a); b != level.end(); ++b) {
        const auto& x = a->first;
        const auto& y = b->first;
        if (!std::equal(x.begin(), x.end() - 1, y.begin())) break;
        std::vector<int> c = x;
        c.push_back(y.back());
        bool ok = true;
        for (std::size_t drop = 0; drop + 2 < c.size() && ok; ++drop) {
          std::vector<int> sub;
          for (std::size_t i = 0; i < c.size(); ++i)
            if (i != drop) sub.push_back(c[i]);
          ok = level.count(sub) > 0;
        }
        if (ok) candidates[c] = 0;
      }
    if (candidates.empty()) break;
    for (const auto& b : baskets)
      for (auto& [c, count] : candidates)
        if (std::includes(b.begin(), b.end(), c.begin(), c.end())) ++count;
    std::erase_if(candidates, [&](const auto& kv) { return !detail::meets(kv.second, n, min_support); });
    level = std::move(candidates);
  }
  return out;
}

// Every rule lhs => action with support >= min_support and confidence >=
// min_confidence, sorted by confidence, then support, then lhs.
inline std::vector<HabitRule> mine(const std::vector<ActionEvent>& events, double min_support = 0.1,
                                   double min_confidence = 0.6) {
  if (!(min_confidence > 0.0 && min_confidence <= 1.0)) throw ValidationError("min_confidence must lie in (0, 1]");
  const auto frequent = frequent_itemsets(events, min_support);
  std::map<Itemset, std::size_t> counts;
  for (const auto& f : frequent) counts[f.items] = f.count;
  const double n = static_cast<double>(events.size());
  std::vector<HabitRule> rules;
  for (const auto& f : frequent) {
    Itemset lhs;
    std::optional<std::string> action;
    for (const auto& item : f.items) {
      if (item.rfind(kActionPrefix, 0) == 0)
        action = item.substr(kActionPrefix.size());
      else
        lhs.push_back(item);
    }
    if (!action || lhs.empty()) continue;
    const auto lhs_count = counts.at(lhs);  // subsets of frequent sets are frequent
    const double confidence = static_cast<double>(f.count) / static_cast<double>(lhs_count);
    if (confidence < min_confidence - 1e-12) continue;
    rules.push_back({lhs, parse_action(*action), static_cast<double>(f.count) / n, confidence, f.count, lhs_count});
  }
  std::sort(rules.begin(), rules.end(), rule_order);
  return rules;
}

// Turns one appliance's label series into actions: label 1 -> turn_on,
// label 2 -> turn_off, and the first sample of each run of label 3 ->
// extensive_use.
struct LabeledSample {
  Timestamp ts = 0;
  MicroMoment label = MicroMoment::good_usage;
  std::optional<double> temperature_c;
  bool present = true;
  std::optional<double> humidity_pct;
};

inline std::vector<RawEvent> episodes(const std::string& user_id, const std::string& appliance_id,
                                      const std::vector<LabeledSample>& series) {
  std::vector<RawEvent> out;
  bool in_excessive = false;
  for (const auto& s : series) {
    std::optional<Verb> verb;
    if (s.label == MicroMoment::turn_on) verb = Verb::turn_on;
    if (s.label == MicroMoment::turn_off) verb = Verb::turn_off;
    if (s.label == MicroMoment::excessive && !in_excessive) verb = Verb::extensive_use;
    in_excessive = s.label == MicroMoment::excessive;
    if (verb) out.push_back({user_id, appliance_id, *verb, s.ts, s.temperature_c, s.present, s.humidity_pct});
  }
  return out;
}

// True when `rule` says the user habitually performs `action` in a context
// that includes every predicate of the rule's lhs.
inline bool rule_applies(const HabitRule& rule, const std::vector<std::string>& context) {
  return std::includes(context.begin(), context.end(), rule.lhs.begin(), rule.lhs.end());
}

}  // namespace emedge::habits
