#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "stnerf/camera.hpp"
#include "stnerf/dataset.hpp"
#include "stnerf/field.hpp"

namespace stnerf {

// Everything a renderer needs: one field and one box track per layer
// (background id 0 first), the cameras and the timeline.
struct SceneModel {
  std::vector<StNerfParams<float>> layers;
  std::vector<BoundingBoxTrack> tracks;  // aligned with `layers`
  std::vector<CameraModel> cameras;
  int num_frames = 1;
  double fps = 25.0;
  nlohmann::json metadata = nlohmann::json::object();  // training and render settings

  int layer_index(int entity_id) const;  // -1 when absent
  const StNerfParams<float>& layer(int entity_id) const;
  const BoundingBoxTrack& track(int entity_id) const;
  // Throws InvalidInput when layers and tracks disagree.
  void validate() const;
  bool operator==(const SceneModel&) const = default;
};

nlohmann::json field_config_to_json(const FieldConfig& config);
FieldConfig field_config_from_json(const nlohmann::json& j, const std::string& source);

// Binary layout: "STNERFCK", u32 version, u64 header length, UTF-8 JSON
// header (scene metadata and the entity table with every layer shape),
// little-endian f32 parameter blobs in StNerfParams::networks() order
// (weights row-major, then biases), u64 FNV-1a of all preceding bytes.
std::vector<std::uint8_t> encode_checkpoint(const SceneModel& scene);
SceneModel decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source);

void save_checkpoint(const SceneModel& scene, const std::filesystem::path& path);
// Throws ParseError naming the file on a bad magic, version, shape table
// or checksum.
SceneModel load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size);

}  // namespace stnerf
