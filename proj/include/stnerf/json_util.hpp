#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "stnerf/error.hpp"
#include "stnerf/geometry.hpp"

namespace stnerf {

// Reads j[key] as T; ParseError names `source` and the field otherwise.
template <typename T>
T json_field(const nlohmann::json& j, const std::string& key, const std::string& source) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(source + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": field '" + key + "' is ill-formed (" + e.what() + ")");
  }
}

template <typename T>
T json_field_or(const nlohmann::json& j, const std::string& key, const std::string& source, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return json_field<T>(j, key, source);
}

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& key, const std::string& source) {
  auto v = json_field<std::vector<double>>(j, key, source);
  if (v.size() != 3) throw ParseError(source + ": field '" + key + "' must have 3 entries");
  return {v[0], v[1], v[2]};
}

inline nlohmann::json to_json_array(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace stnerf
