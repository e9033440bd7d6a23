#pragma once

#include <optional>
#include <span>
#include <vector>

#include "stnerf/geometry.hpp"

namespace stnerf {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  bool operator==(const Intrinsics&) const = default;
};

// Pinhole camera, OpenCV axes (x right, y down, z forward).  Integer pixel
// coordinates address pixel centers.
struct CameraModel {
  int id = 0;
  Intrinsics intrinsics;
  Mat3 rotation = Mat3::Identity();  // world_from_camera
  Vec3 position = Vec3::Zero();      // camera center in world meters
  int width = 1;
  int height = 1;

  // Throws InvalidInput if the rotation is not orthonormal (1e-5), focal
  // lengths are not positive or the principal point lies outside the image.
  void validate() const;

  Vec3 direction_for(double px, double py) const;
  // Pixel coordinates of a world point; nullopt if behind the camera.
  std::optional<Eigen::Vector2d> project(const Vec3& world) const;
  // Depth along the optical axis.
  double z_depth(const Vec3& world) const;
  // Same pose, intrinsics rescaled to a new resolution.
  CameraModel resized(int new_width, int new_height) const;

  static CameraModel look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_degrees,
                             int width, int height);

  bool operator==(const CameraModel& o) const {
    return id == o.id && intrinsics == o.intrinsics && rotation == o.rotation && position == o.position &&
           width == o.width && height == o.height;
  }
};

struct Pixel {
  double x = 0.0;
  double y = 0.0;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  Pixel pixel;
  int camera_id = 0;
  int frame = 0;
};

// Throws InvalidInput for a pixel outside [-0.5, size - 0.5).
std::vector<Ray> generate_rays(const CameraModel& camera, int frame, std::span<const Pixel> pixels);
Ray generate_ray(const CameraModel& camera, int frame, Pixel pixel);
// Every pixel center, row-major.
std::vector<Ray> generate_all_rays(const CameraModel& camera, int frame);

}  // namespace stnerf
