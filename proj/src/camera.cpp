#include "stnerf/camera.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "stnerf/error.hpp"

namespace stnerf {

std::array<Vec3, 8> Aabb::corners() const {
  std::array<Vec3, 8> c;
  for (int i = 0; i < 8; ++i) {
    c[i] = Vec3((i & 1) ? max.x() : min.x(), (i & 2) ? max.y() : min.y(), (i & 4) ? max.z() : min.z());
  }
  return c;
}

Affine Affine::scale_about(const Vec3& pivot, double s) {
  return translate(pivot).compose(scale(s)).compose(translate(-pivot));
}

Affine Affine::rotate_y_about(const Vec3& pivot, double radians) {
  Affine r;
  r.linear = Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix();
  return translate(pivot).compose(r).compose(translate(-pivot));
}

Affine Affine::inverse() const {
  Affine inv;
  inv.linear = linear.inverse();
  inv.translation = -(inv.linear * translation);
  return inv;
}

Aabb transform_box(const Affine& a, const Aabb& box) {
  Aabb out{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const Vec3& c : box.corners()) {
    const Vec3 p = a.apply(c);
    out.min = out.min.cwiseMin(p);
    out.max = out.max.cwiseMax(p);
  }
  return out;
}

std::optional<std::pair<double, double>> intersect_box(const Vec3& origin, const Vec3& direction, const Aabb& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (direction[a] == 0.0) {
      // Travelling inside a face plane grazes the box: no interior crossing.
      if (origin[a] <= box.min[a] || origin[a] >= box.max[a]) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / direction[a];
    double ta = (box.min[a] - origin[a]) * inv;
    double tb = (box.max[a] - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  t0 = std::max(t0, 0.0);
  if (!(t0 < t1)) return std::nullopt;
  return std::make_pair(t0, t1);
}

void CameraModel::validate() const {
  const std::string who = "camera " + std::to_string(id);
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) throw InvalidInput(who + ": focal lengths must be positive");
  if (width < 1 || height < 1) throw InvalidInput(who + ": image size must be at least 1x1");
  if (intrinsics.cx < -0.5 || intrinsics.cx > width - 0.5 || intrinsics.cy < -0.5 || intrinsics.cy > height - 0.5) {
    throw InvalidInput(who + ": principal point outside the image");
  }
  if (!rotation.allFinite() || !position.allFinite()) throw InvalidInput(who + ": non-finite pose");
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-5 ||
      std::abs(rotation.determinant() - 1.0) > 1e-5) {
    throw InvalidInput(who + ": rotation is not orthonormal");
  }
}

Vec3 CameraModel::direction_for(double px, double py) const {
  const Vec3 local((px - intrinsics.cx) / intrinsics.fx, (py - intrinsics.cy) / intrinsics.fy, 1.0);
  return (rotation * local).normalized();
}

std::optional<Eigen::Vector2d> CameraModel::project(const Vec3& world) const {
  const Vec3 local = rotation.transpose() * (world - position);
  if (!(local.z() > 0.0)) return std::nullopt;
  return Eigen::Vector2d(intrinsics.fx * local.x() / local.z() + intrinsics.cx,
                         intrinsics.fy * local.y() / local.z() + intrinsics.cy);
}

double CameraModel::z_depth(const Vec3& world) const { return (rotation.transpose() * (world - position)).z(); }

CameraModel CameraModel::resized(int new_width, int new_height) const {
  CameraModel c = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  c.intrinsics.fx *= sx;
  c.intrinsics.fy *= sy;
  c.intrinsics.cx = (intrinsics.cx + 0.5) * sx - 0.5;
  c.intrinsics.cy = (intrinsics.cy + 0.5) * sy - 0.5;
  c.width = new_width;
  c.height = new_height;
  return c;
}

CameraModel CameraModel::look_at(int id, const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_degrees,
                                 int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  CameraModel c;
  c.id = id;
  c.rotation.col(0) = right;
  c.rotation.col(1) = down;
  c.rotation.col(2) = forward;
  c.position = eye;
  c.width = width;
  c.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_degrees * std::numbers::pi / 180.0);
  c.intrinsics = {f, f, 0.5 * (width - 1), 0.5 * (height - 1)};
  return c;
}

Ray generate_ray(const CameraModel& camera, int frame, Pixel pixel) {
  if (!(pixel.x >= -0.5 && pixel.x < camera.width - 0.5 && pixel.y >= -0.5 && pixel.y < camera.height - 0.5)) {
    throw InvalidInput("pixel (" + std::to_string(pixel.x) + ", " + std::to_string(pixel.y) + ") outside camera " +
                       std::to_string(camera.id));
  }
  Ray r;
  r.origin = camera.position;
  r.direction = camera.direction_for(pixel.x, pixel.y);
  r.pixel = pixel;
  r.camera_id = camera.id;
  r.frame = frame;
  return r;
}

std::vector<Ray> generate_rays(const CameraModel& camera, int frame, std::span<const Pixel> pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const Pixel& p : pixels) rays.push_back(generate_ray(camera, frame, p));
  return rays;
}

std::vector<Ray> generate_all_rays(const CameraModel& camera, int frame) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) rays.push_back(generate_ray(camera, frame, {double(x), double(y)}));
  return rays;
}

}  // namespace stnerf
