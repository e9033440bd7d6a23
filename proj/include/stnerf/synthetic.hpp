#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnerf/camera.hpp"
#include "stnerf/dataset.hpp"

namespace stnerf {

// An analytic, rigidly moving primitive.  Colors are linear in the
// primitive's local frame, so volume integration along a ray is exact.
struct Primitive {
  enum class Shape { kBox, kSphere };

  Shape shape = Shape::kBox;
  Vec3 center = Vec3::Zero();  // at frame 0
  Vec3 half_extent = Vec3::Constant(0.5);
  double radius = 0.5;
  double density = std::numeric_limits<double>::infinity();  // infinite = opaque surface
  Vec3 color = Vec3::Constant(0.5);
  Mat3 color_gradient = Mat3::Zero();  // d color / d local position
  Vec3 velocity = Vec3::Zero();        // m/s
  double spin_rate = 0.0;              // rad/s about the vertical axis through the center
  Vec3 color_pulse = Vec3::Zero();     // amplitude of a sinusoidal color change
  double pulse_period = 1.0;           // seconds

  bool opaque() const { return !std::isfinite(density); }
};

struct SyntheticEntity {
  int id = 1;
  std::vector<Primitive> primitives;
};

// Cameras on a horizontal arc around `target`, all looking at it.
struct CameraRig {
  int count = 8;
  double arc_degrees = 160.0;
  double arc_center_degrees = 0.0;  // 0 = on the +z axis
  double radius = 4.0;
  double height = 1.6;
  Vec3 target = Vec3(0.0, 0.3, 0.0);
  double fov_y_degrees = 34.0;
  int width = 64;
  int height_px = 64;

  std::vector<CameraModel> build() const;
};

struct SyntheticScene {
  std::vector<Primitive> background;
  std::vector<SyntheticEntity> entities;
  int num_frames = 8;
  double fps = 8.0;
  CameraRig rig;
  std::vector<CameraModel> cameras;  // overrides the rig when non-empty
  Vec3 background_color = Vec3::Zero();
  double noise_sigma = 0.0;  // optional Gaussian pixel noise, drawn from the seed
  bool with_depth = true;
};

nlohmann::json to_json(const SyntheticScene& scene);
SyntheticScene synthetic_scene_from_json(const nlohmann::json& j);

// Built-in scenes: "desk" (floor + two moving boxes, 17-camera 160 degree
// arc), "crossing" (two boxes passing at different depths), "sphere" (a
// static sphere seen by a ring of cameras), "empty".
SyntheticScene preset_scene(const std::string& name);

struct TraceResult {
  Vec3 color = Vec3::Zero();  // without the background color term
  double alpha = 0.0;
  int label = 0;
  double depth = 0.0;  // ray distance to the labeled surface; 0 when none
  bool ambiguous = false;
};

// Exact volume integration of the scene along one ray at `frame`.
// `only_entity` >= 0 restricts the trace to one entity (amodal masks).
TraceResult trace_ray(const SyntheticScene& scene, const Vec3& origin, const Vec3& direction, int frame,
                      int only_entity = -1);

// Tight axis-aligned box of an entity at a frame.
Aabb entity_box(const SyntheticEntity& entity, int frame, double fps);

// Pixels where the entity alone reaches alpha >= 0.5, ignoring occluders.
LabelMap amodal_mask(const SyntheticScene& scene, const CameraModel& camera, int frame, int entity_id);

// Renders images, label maps, half-resolution depth maps and per-frame
// boxes.  Ambiguous opaque overlaps are labeled by nearest surface and
// reported through warn().
Dataset synthesize_scene(const SyntheticScene& scene, std::uint64_t seed);

}  // namespace stnerf
