#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace stnerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool valid() const { return (min.array() < max.array()).all(); }
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  bool contains(const Vec3& p, double tolerance = 0.0) const {
    return (p.array() >= min.array() - tolerance).all() && (p.array() <= max.array() + tolerance).all();
  }
  std::array<Vec3, 8> corners() const;
  Aabb dilated(double amount) const { return {min.array() - amount, max.array() + amount}; }
  Aabb united(const Aabb& other) const { return {min.cwiseMin(other.min), max.cwiseMax(other.max)}; }
  // Maps the box onto [-1, 1]^3.
  Vec3 normalize(const Vec3& p) const { return (2.0 * (p - min).array() / extent().array() - 1.0).matrix(); }

  bool operator==(const Aabb& o) const { return min == o.min && max == o.max; }
};

// Affine map x -> linear * x + translation in world coordinates.
struct Affine {
  Mat3 linear = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Affine identity() { return {}; }
  static Affine translate(const Vec3& t) { return {Mat3::Identity(), t}; }
  static Affine scale(double s) { return {Mat3::Identity() * s, Vec3::Zero()}; }
  // Convenience pivots; both reduce to world-frame affines.
  static Affine scale_about(const Vec3& pivot, double s);
  static Affine rotate_y_about(const Vec3& pivot, double radians);

  Vec3 apply(const Vec3& p) const { return linear * p + translation; }
  Vec3 apply_vector(const Vec3& v) const { return linear * v; }
  Affine inverse() const;
  // (*this) o other: apply `other` first.
  Affine compose(const Affine& other) const { return {linear * other.linear, linear * other.translation + translation}; }
  double determinant() const { return linear.determinant(); }
  bool is_identity() const { return linear == Mat3::Identity() && translation == Vec3::Zero(); }
};

// Bounding box of the transformed corners.
Aabb transform_box(const Affine& a, const Aabb& box);

// Slab test.  Returns (near, far) with near clipped to >= 0; nullopt for a
// miss, a box behind the origin, or a degenerate (near == far) crossing.
std::optional<std::pair<double, double>> intersect_box(const Vec3& origin, const Vec3& direction, const Aabb& box);

}  // namespace stnerf
