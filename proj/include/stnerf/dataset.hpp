#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "stnerf/camera.hpp"
#include "stnerf/geometry.hpp"
#include "stnerf/image.hpp"

namespace stnerf {

// Entity id 0 is the background layer.
struct BoundingBoxTrack {
  int entity_id = 0;
  std::vector<Aabb> boxes;  // one per frame

  const Aabb& at(int frame) const;
  bool operator==(const BoundingBoxTrack&) const = default;
};

struct Dataset {
  std::vector<CameraModel> cameras;
  int num_frames = 0;
  std::vector<int> entity_ids;  // declared non-background entities
  double fps = 25.0;
  Aabb scene_bounds;

  // Indexed [camera index][frame].
  std::vector<std::vector<Image>> images;
  std::vector<std::vector<LabelMap>> labels;
  std::vector<std::vector<DepthMap>> depth;  // optional, half resolution

  std::vector<BoundingBoxTrack> boxes;        // may include the background (id 0)
  std::optional<nlohmann::json> ground_truth;  // synthetic scene description

  int num_entities() const { return static_cast<int>(entity_ids.size()); }
  int camera_index(int camera_id) const;  // throws InvalidInput when absent
  const BoundingBoxTrack* track(int entity_id) const;

  // Throws InvalidInput describing the first violated invariant
  // ("frame count mismatch", undeclared labels, size mismatches, ...).
  void validate() const;
};

void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
// Throws ParseError naming the file and field on malformed input, and
// InvalidInput for structurally inconsistent data.
Dataset load_dataset(const std::filesystem::path& root);

nlohmann::json cameras_to_json(const std::vector<CameraModel>& cameras);
std::vector<CameraModel> cameras_from_json(const nlohmann::json& j, const std::string& source);
nlohmann::json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const nlohmann::json& j, const std::string& source);
nlohmann::json boxes_to_json(const std::vector<BoundingBoxTrack>& tracks);
std::vector<BoundingBoxTrack> boxes_from_json(const nlohmann::json& j, const std::string& source);
nlohmann::json aabb_to_json(const Aabb& box);
Aabb aabb_from_json(const nlohmann::json& j, const std::string& source);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace stnerf
