#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emedge/error.hpp"

namespace emedge {

enum class ApplianceCategory {
  air_conditioner,
  microwave,
  oven,
  dishwasher,
  laptop,
  washing_machine,
  light,
  television,
  refrigerator,
  desktop,
  fan,
  charger,
  other,
};

inline constexpr std::array<std::pair<ApplianceCategory, std::string_view>, 13> kCategoryNames{{
    {ApplianceCategory::air_conditioner, "air_conditioner"},
    {ApplianceCategory::microwave, "microwave"},
    {ApplianceCategory::oven, "oven"},
    {ApplianceCategory::dishwasher, "dishwasher"},
    {ApplianceCategory::laptop, "laptop"},
    {ApplianceCategory::washing_machine, "washing_machine"},
    {ApplianceCategory::light, "light"},
    {ApplianceCategory::television, "television"},
    {ApplianceCategory::refrigerator, "refrigerator"},
    {ApplianceCategory::desktop, "desktop"},
    {ApplianceCategory::fan, "fan"},
    {ApplianceCategory::charger, "charger"},
    {ApplianceCategory::other, "other"},
}};

inline std::string_view to_string(ApplianceCategory c) {
  for (const auto& [cat, name] : kCategoryNames)
    if (cat == c) return name;
  return "other";
}

inline std::optional<ApplianceCategory> parse_category(std::string_view s) {
  for (const auto& [cat, name] : kCategoryNames)
    if (name == s) return cat;
  return std::nullopt;
}

// Appliances whose operation only makes sense with someone in the room.
constexpr bool presence_required_by_default(ApplianceCategory c) {
  switch (c) {
    case ApplianceCategory::air_conditioner:
    case ApplianceCategory::television:
    case ApplianceCategory::light:
    case ApplianceCategory::desktop:
    case ApplianceCategory::laptop:
    case ApplianceCategory::fan:
      return true;
    default:
      return false;
  }
}

// Operating envelope of one appliance: active consumption range, standby
// draw and the longest continuous run considered normal.
struct ApplianceSpec {
  std::string id;
  std::string name;
  std::string zone_id;
  ApplianceCategory category = ApplianceCategory::other;
  double dacr_min_w = 0.0;
  double dacr_max_w = 0.0;
  double dspc_w = 0.0;
  double dot_s = 0.0;
  bool requires_presence = false;

  bool operator==(const ApplianceSpec&) const = default;
};

// Default lower bound of the active range: a tenth of the nominal wattage,
// lifted to twice the standby draw when the tenth would not clear standby.
constexpr double default_dacr_min(double dacr_max_w, double dspc_w) {
  const double tenth = 0.1 * dacr_max_w;
  return tenth > dspc_w ? tenth : 2.0 * dspc_w;
}

inline bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-';
  });
}

inline void validate(const ApplianceSpec& s) {
  const std::string where = "appliance '" + s.id + "'";
  if (!valid_id(s.id)) throw ConfigError(where + ".id", "must be non-empty [A-Za-z0-9_-]");
  if (!valid_id(s.zone_id)) throw ConfigError(where + ".zone", "must be non-empty [A-Za-z0-9_-]");
  if (!(s.dspc_w >= 0.0)) throw ConfigError(where + ".dspc_w", "must be >= 0");
  if (!(s.dspc_w < s.dacr_min_w)) throw ConfigError(where + ".dacr_min_w", "must exceed dspc_w");
  if (!(s.dacr_min_w <= s.dacr_max_w)) throw ConfigError(where + ".dacr_max_w", "must be >= dacr_min_w");
  if (!(s.dot_s > 0.0)) throw ConfigError(where + ".dot_s", "must be > 0");
}

struct CatalogEntry {
  std::string_view name;
  ApplianceCategory category;
  double dot_s;
  double dacr_w;
  double dspc_w;
};

// Reference operating parameters for common household appliances.
inline constexpr std::array<CatalogEntry, 10> kApplianceCatalog{{
    {"Air conditioner", ApplianceCategory::air_conditioner, 15 * 3600 + 30 * 60, 1000, 4},
    {"Microwave", ApplianceCategory::microwave, 1 * 3600, 1200, 7},
    {"Oven", ApplianceCategory::oven, 3 * 3600, 2400, 6},
    {"Dishwasher", ApplianceCategory::dishwasher, 1 * 3600 + 45 * 60, 1800, 3},
    {"Laptop", ApplianceCategory::laptop, 12 * 3600 + 42 * 60, 100, 20},
    {"Washing machine", ApplianceCategory::washing_machine, 1 * 3600, 500, 6},
    {"Light", ApplianceCategory::light, 8 * 3600, 60, 0},
    {"Television", ApplianceCategory::television, 12 * 3600 + 42 * 60, 65, 6},
    {"Refrigerator", ApplianceCategory::refrigerator, 17 * 3600 + 30 * 60, 180, 0},
    {"Desktop", ApplianceCategory::desktop, 12 * 3600 + 42 * 60, 250, 12},
}};

inline const CatalogEntry* find_catalog(std::string_view name_or_category) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::replace(out.begin(), out.end(), ' ', '_');
    return out;
  };
  const std::string key = lower(name_or_category);
  for (const auto& e : kApplianceCatalog)
    if (lower(e.name) == key || to_string(e.category) == key) return &e;
  return nullptr;
}

// Builds a spec from the catalog; throws ConfigError for unknown names.
inline ApplianceSpec catalog_spec(std::string_view catalog_name, std::string id, std::string zone_id) {
  const CatalogEntry* e = find_catalog(catalog_name);
  if (!e) throw ConfigError("catalog", "unknown appliance '" + std::string(catalog_name) + "'");
  ApplianceSpec s;
  s.id = std::move(id);
  s.name = std::string(e->name);
  s.zone_id = std::move(zone_id);
  s.category = e->category;
  s.dacr_max_w = e->dacr_w;
  s.dacr_min_w = default_dacr_min(e->dacr_w, e->dspc_w);
  s.dspc_w = e->dspc_w;
  s.dot_s = e->dot_s;
  s.requires_presence = presence_required_by_default(e->category);
  return s;
}

inline nlohmann::json to_json(const ApplianceSpec& s) {
  return {{"id", s.id},
          {"name", s.name},
          {"zone", s.zone_id},
          {"category", std::string(to_string(s.category))},
          {"dacr_min_w", s.dacr_min_w},
          {"dacr_max_w", s.dacr_max_w},
          {"dspc_w", s.dspc_w},
          {"dot_s", s.dot_s},
          {"requires_presence", s.requires_presence}};
}

// Accepts either a full record or {"catalog": "...", "id": ..., "zone": ...}
// with optional overrides of any field.
inline ApplianceSpec spec_from_json(const nlohmann::json& j) {
  auto field = [&](const char* name) -> std::string { return "appliance." + std::string(name); };
  if (!j.is_object()) throw ConfigError("appliance", "expected an object");
  if (!j.contains("id") || !j["id"].is_string()) throw ConfigError(field("id"), "missing");
  if (!j.contains("zone") || !j["zone"].is_string()) throw ConfigError(field("zone"), "missing");

  ApplianceSpec s;
  if (j.contains("catalog")) {
    s = catalog_spec(j["catalog"].get<std::string>(), j["id"].get<std::string>(), j["zone"].get<std::string>());
  } else {
    s.id = j["id"].get<std::string>();
    s.zone_id = j["zone"].get<std::string>();
    for (const char* required : {"dacr_max_w", "dspc_w", "dot_s"})
      if (!j.contains(required) || !j[required].is_number()) throw ConfigError(field(required), "missing number");
    s.name = s.id;
  }
  try {
    if (j.contains("name")) s.name = j["name"].get<std::string>();
    if (j.contains("category")) {
      auto c = parse_category(j["category"].get<std::string>());
      if (!c) throw ConfigError(field("category"), "unknown category");
      s.category = *c;
      if (!j.contains("catalog")) s.requires_presence = presence_required_by_default(*c);
    }
    if (j.contains("dacr_max_w")) s.dacr_max_w = j["dacr_max_w"].get<double>();
    if (j.contains("dspc_w")) s.dspc_w = j["dspc_w"].get<double>();
    if (j.contains("dot_s")) s.dot_s = j["dot_s"].get<double>();
    s.dacr_min_w = j.contains("dacr_min_w") ? j["dacr_min_w"].get<double>() : default_dacr_min(s.dacr_max_w, s.dspc_w);
    if (j.contains("requires_presence")) s.requires_presence = j["requires_presence"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("appliance '" + s.id + "'", e.what());
  }
  validate(s);
  return s;
}

inline std::vector<ApplianceSpec> specs_from_json(const nlohmann::json& j) {
  const nlohmann::json& arr = j.is_object() && j.contains("appliances") ? j["appliances"] : j;
  if (!arr.is_array()) throw ConfigError("appliances", "expected an array");
  std::vector<ApplianceSpec> out;
  std::set<std::string> seen;
  for (const auto& item : arr) {
    out.push_back(spec_from_json(item));
    if (!seen.insert(out.back().id).second) throw ConfigError("appliances", "duplicate id '" + out.back().id + "'");
  }
  return out;
}

inline nlohmann::json specs_to_json(const std::vector<ApplianceSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : specs) arr.push_back(to_json(s));
  return {{"appliances", arr}};
}

inline std::vector<ApplianceSpec> load_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("specs", "cannot open appliance spec file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("specs", "'" + path.string() + "': " + e.what());
  }
  return specs_from_json(j);
}

}  // namespace emedge
