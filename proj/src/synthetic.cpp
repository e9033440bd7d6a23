#include "stnerf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "stnerf/error.hpp"
#include "stnerf/log.hpp"

namespace stnerf {

using nlohmann::json;

std::vector<CameraModel> CameraRig::build() const {
  std::vector<CameraModel> cams;
  for (int k = 0; k < count; ++k) {
    const double frac = count > 1 ? static_cast<double>(k) / (count - 1) - 0.5 : 0.0;
    const double angle = (arc_center_degrees + frac * arc_degrees) * std::numbers::pi / 180.0;
    const Vec3 eye(target.x() + radius * std::sin(angle), height, target.z() + radius * std::cos(angle));
    cams.push_back(CameraModel::look_at(k, eye, target, Vec3::UnitY(), fov_y_degrees, width, height_px));
  }
  return cams;
}

namespace {

struct PrimitiveState {
  Vec3 center;
  Mat3 rotation;  // world_from_local
  Vec3 pulse;     // time-dependent color offset
};

PrimitiveState state_at(const Primitive& p, int frame, double fps) {
  const double time = frame / fps;
  PrimitiveState s;
  s.center = p.center + p.velocity * time;
  s.rotation = Eigen::AngleAxisd(p.spin_rate * time, Vec3::UnitY()).toRotationMatrix();
  s.pulse = p.color_pulse * std::sin(2.0 * std::numbers::pi * time / p.pulse_period);
  return s;
}

// Entry/exit along the ray, clipped to s >= 0.
std::optional<std::pair<double, double>> intersect_primitive(const Primitive& p, const PrimitiveState& st,
                                                             const Vec3& origin, const Vec3& direction) {
  const Vec3 o = st.rotation.transpose() * (origin - st.center);
  const Vec3 d = st.rotation.transpose() * direction;
  if (p.shape == Primitive::Shape::kBox) return intersect_box(o, d, Aabb{-p.half_extent, p.half_extent});
  const double b = o.dot(d);
  const double c = o.squaredNorm() - p.radius * p.radius;
  const double disc = b * b - c;
  if (!(disc > 0.0)) return std::nullopt;
  const double root = std::sqrt(disc);
  const double s0 = std::max(-b - root, 0.0);
  const double s1 = -b + root;
  if (!(s0 < s1)) return std::nullopt;
  return std::make_pair(s0, s1);
}

struct Hit {
  double s0, s1;
  const Primitive* prim;
  PrimitiveState state;
  int entity;  // 0 for background primitives
};

Vec3 color_at(const Hit& h, const Vec3& world) {
  const Vec3 local = h.state.rotation.transpose() * (world - h.state.center);
  return h.prim->color + h.prim->color_gradient * local + h.state.pulse;
}

}  // namespace

TraceResult trace_ray(const SyntheticScene& scene, const Vec3& origin, const Vec3& direction, int frame,
                      int only_entity) {
  std::vector<Hit> hits;
  auto add = [&](const Primitive& p, int entity) {
    const auto st = state_at(p, frame, scene.fps);
    if (auto seg = intersect_primitive(p, st, origin, direction)) hits.push_back({seg->first, seg->second, &p, st, entity});
  };
  if (only_entity < 0)
    for (const auto& p : scene.background) add(p, 0);
  for (const auto& e : scene.entities) {
    if (only_entity >= 0 && e.id != only_entity) continue;
    for (const auto& p : e.primitives) add(p, e.id);
  }
  TraceResult out;
  if (hits.empty()) return out;

  // Nearest opaque entry terminates the ray.
  double opaque_s = std::numeric_limits<double>::infinity();
  const Hit* opaque = nullptr;
  for (const auto& h : hits) {
    if (h.prim->opaque() && h.s0 < opaque_s) {
      opaque_s = h.s0;
      opaque = &h;
    }
  }
  if (opaque != nullptr) {
    for (const auto& h : hits) {
      if (&h != opaque && h.prim->opaque() && h.entity != opaque->entity && std::abs(h.s0 - opaque_s) < 1e-9) {
        out.ambiguous = true;
      }
    }
  }

  std::vector<double> breaks;
  for (const auto& h : hits) {
    if (h.prim->opaque()) continue;
    if (h.s0 < opaque_s) breaks.push_back(h.s0);
    if (h.s1 < opaque_s) breaks.push_back(h.s1);
  }
  if (opaque != nullptr) breaks.push_back(opaque_s);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  std::vector<std::pair<int, double>> weight_by_entity;  // (entity, weight)
  std::vector<std::pair<int, double>> first_entry;       // (entity, s)
  auto add_weight = [&](int entity, double w, double s) {
    for (auto& [e, acc] : weight_by_entity)
      if (e == entity) {
        acc += w;
        return;
      }
    weight_by_entity.emplace_back(entity, w);
    first_entry.emplace_back(entity, s);
  };

  double transmittance = 1.0;
  Vec3 color = Vec3::Zero();
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double a = breaks[b];
    const double len = breaks[b + 1] - a;
    if (len <= 0.0) continue;
    double sigma_sum = 0.0;
    Vec3 base = Vec3::Zero();
    Vec3 slope = Vec3::Zero();
    for (const auto& h : hits) {
      if (h.prim->opaque() || h.s0 > a || h.s1 < breaks[b + 1]) continue;
      const double sg = h.prim->density;
      sigma_sum += sg;
      base += sg * color_at(h, origin + a * direction);
      slope += sg * (h.prim->color_gradient * (h.state.rotation.transpose() * direction));
    }
    if (sigma_sum <= 0.0) continue;
    const double x = sigma_sum * len;
    const double opacity = -std::expm1(-x);
    // int_0^L e^{-S u} (A + B u) du
    const double first = opacity / sigma_sum;
    const double second = x < 1e-3 ? len * len * (0.5 - x / 3.0 + x * x / 8.0)
                                    : (opacity - x * std::exp(-x)) / (sigma_sum * sigma_sum);
    color += transmittance * (base * first + slope * second);
    for (const auto& h : hits) {
      if (h.prim->opaque() || h.s0 > a || h.s1 < breaks[b + 1]) continue;
      add_weight(h.entity, transmittance * opacity * h.prim->density / sigma_sum, h.s0);
    }
    transmittance *= std::exp(-x);
  }
  if (opaque != nullptr) {
    color += transmittance * color_at(*opaque, origin + opaque_s * direction);
    add_weight(opaque->entity, transmittance, opaque->s0);
    transmittance = 0.0;
  }
  out.color = color;
  out.alpha = 1.0 - transmittance;

  // Label: the entity carrying the most weight, unless empty space or the
  // background carries more.
  double best = transmittance;
  int label = 0;
  for (const auto& [e, w] : weight_by_entity) {
    if (w > best) {
      best = w;
      label = e;
    }
  }
  out.label = label;
  for (const auto& [e, s] : first_entry)
    if (e == label) out.depth = s;
  if (label == 0) {
    // Background surface depth, if any background primitive carried weight.
    double bg_w = 0.0;
    for (const auto& [e, w] : weight_by_entity)
      if (e == 0) bg_w = w;
    if (bg_w <= transmittance) out.depth = 0.0;
  }
  return out;
}

Aabb entity_box(const SyntheticEntity& entity, int frame, double fps) {
  Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const auto& p : entity.primitives) {
    const auto st = state_at(p, frame, fps);
    Aabb pb;
    if (p.shape == Primitive::Shape::kSphere) {
      pb = {st.center.array() - p.radius, st.center.array() + p.radius};
    } else {
      Affine a{st.rotation, st.center};
      pb = transform_box(a, Aabb{-p.half_extent, p.half_extent});
    }
    box = box.united(pb);
  }
  return box;
}

LabelMap amodal_mask(const SyntheticScene& scene, const CameraModel& camera, int frame, int entity_id) {
  LabelMap m(camera.width, camera.height);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const auto r = trace_ray(scene, camera.position, camera.direction_for(x, y), frame, entity_id);
      m.labels[static_cast<std::size_t>(y) * camera.width + x] = r.alpha >= 0.5 ? 1 : 0;
    }
  return m;
}

Dataset synthesize_scene(const SyntheticScene& scene, std::uint64_t seed) {
  if (scene.num_frames < 1) throw InvalidInput("synthesize_scene: need at least one frame");
  if (!(scene.fps > 0.0)) throw InvalidInput("synthesize_scene: fps must be positive");
  Dataset ds;
  ds.cameras = scene.cameras.empty() ? scene.rig.build() : scene.cameras;
  ds.num_frames = scene.num_frames;
  ds.fps = scene.fps;
  for (const auto& e : scene.entities) {
    if (e.id < 1 || e.id > 255) throw InvalidInput("synthesize_scene: entity ids must be in [1, 255]");
    ds.entity_ids.push_back(e.id);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, scene.noise_sigma > 0.0 ? scene.noise_sigma : 1.0);
  int ambiguous = 0;

  const std::size_t nc = ds.cameras.size();
  ds.images.resize(nc);
  ds.labels.resize(nc);
  if (scene.with_depth) ds.depth.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& cam = ds.cameras[c];
    const auto half = cam.resized(std::max(1, cam.width / 2), std::max(1, cam.height / 2));
    for (int t = 0; t < scene.num_frames; ++t) {
      Image img(cam.width, cam.height);
      LabelMap lm(cam.width, cam.height);
      for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
          const auto r = trace_ray(scene, cam.position, cam.direction_for(x, y), t);
          ambiguous += r.ambiguous ? 1 : 0;
          const Vec3 rgb = r.color + (1.0 - r.alpha) * scene.background_color;
          float* px = img.at(x, y);
          for (int k = 0; k < 3; ++k) {
            const double n = scene.noise_sigma > 0.0 ? noise(rng) : 0.0;
            px[k] = static_cast<float>(std::clamp(rgb[k] + n, 0.0, 1.0));
          }
          lm.labels[static_cast<std::size_t>(y) * cam.width + x] = static_cast<std::uint8_t>(r.label);
        }
      quantize_to_8bit(img);
      ds.images[c].push_back(std::move(img));
      ds.labels[c].push_back(std::move(lm));
      if (scene.with_depth) {
        DepthMap dm(half.width, half.height);
        for (int y = 0; y < half.height; ++y)
          for (int x = 0; x < half.width; ++x) {
            const Vec3 dir = half.direction_for(x, y);
            const auto r = trace_ray(scene, half.position, dir, t);
            if (r.depth > 0.0) {
              dm.depth[static_cast<std::size_t>(y) * half.width + x] =
                  static_cast<float>(half.z_depth(half.position + r.depth * dir));
            }
          }
        ds.depth[c].push_back(std::move(dm));
      }
    }
  }
  if (ambiguous > 0) {
    warn("synthesize_scene: " + std::to_string(ambiguous) +
         " pixels hit coincident opaque surfaces of different entities; labeled by nearest surface");
  }

  Aabb bounds{Vec3::Constant(std::numeric_limits<double>::infinity()),
              Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const auto& e : scene.entities) {
    BoundingBoxTrack track;
    track.entity_id = e.id;
    for (int t = 0; t < scene.num_frames; ++t) {
      track.boxes.push_back(entity_box(e, t, scene.fps));
      bounds = bounds.united(track.boxes.back());
    }
    ds.boxes.push_back(std::move(track));
  }
  if (!scene.background.empty()) {
    SyntheticEntity bg{0, scene.background};
    const Aabb b = entity_box(bg, 0, scene.fps);
    bounds = bounds.united(b);
  }
  if (!bounds.valid()) bounds = Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  ds.scene_bounds = bounds;
  ds.ground_truth = to_json(scene);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json v3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 v3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json primitive_json(const Primitive& p) {
  json g = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g.push_back(p.color_gradient(r, c));
  json j = {{"shape", p.shape == Primitive::Shape::kBox ? "box" : "sphere"},
            {"center", v3(p.center)},
            {"half_extent", v3(p.half_extent)},
            {"radius", p.radius},
            {"color", v3(p.color)},
            {"color_gradient", g},
            {"velocity", v3(p.velocity)},
            {"spin_rate", p.spin_rate},
            {"color_pulse", v3(p.color_pulse)},
            {"pulse_period", p.pulse_period}};
  if (p.opaque()) {
    j["density"] = "opaque";
  } else {
    j["density"] = p.density;
  }
  return j;
}

Primitive primitive_from_json(const json& j) {
  Primitive p;
  const std::string shape = j.value("shape", "box");
  if (shape == "box") {
    p.shape = Primitive::Shape::kBox;
  } else if (shape == "sphere") {
    p.shape = Primitive::Shape::kSphere;
  } else {
    throw ParseError("scene primitive: unknown shape '" + shape + "'");
  }
  if (j.contains("center")) p.center = v3(j["center"]);
  if (j.contains("half_extent")) p.half_extent = v3(j["half_extent"]);
  p.radius = j.value("radius", p.radius);
  if (j.contains("density")) {
    if (j["density"].is_string()) {
      p.density = std::numeric_limits<double>::infinity();
    } else {
      p.density = j["density"].get<double>();
    }
  }
  if (j.contains("color")) p.color = v3(j["color"]);
  if (j.contains("color_gradient")) {
    auto g = j["color_gradient"].get<std::vector<double>>();
    if (g.size() != 9) throw ParseError("scene primitive: color_gradient needs 9 entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.color_gradient(r, c) = g[r * 3 + c];
  }
  if (j.contains("velocity")) p.velocity = v3(j["velocity"]);
  p.spin_rate = j.value("spin_rate", 0.0);
  if (j.contains("color_pulse")) p.color_pulse = v3(j["color_pulse"]);
  p.pulse_period = j.value("pulse_period", 1.0);
  return p;
}

}  // namespace

json to_json(const SyntheticScene& s) {
  json bg = json::array();
  for (const auto& p : s.background) bg.push_back(primitive_json(p));
  json ents = json::array();
  for (const auto& e : s.entities) {
    json prims = json::array();
    for (const auto& p : e.primitives) prims.push_back(primitive_json(p));
    ents.push_back({{"id", e.id}, {"primitives", prims}});
  }
  json j = {{"background", bg},
            {"entities", ents},
            {"num_frames", s.num_frames},
            {"fps", s.fps},
            {"background_color", v3(s.background_color)},
            {"noise_sigma", s.noise_sigma},
            {"with_depth", s.with_depth},
            {"rig",
             {{"count", s.rig.count},
              {"arc_degrees", s.rig.arc_degrees},
              {"arc_center_degrees", s.rig.arc_center_degrees},
              {"radius", s.rig.radius},
              {"height", s.rig.height},
              {"target", v3(s.rig.target)},
              {"fov_y_degrees", s.rig.fov_y_degrees},
              {"width", s.rig.width},
              {"height_px", s.rig.height_px}}}};
  if (!s.cameras.empty()) j["cameras"] = cameras_to_json(s.cameras)["cameras"];
  return j;
}

SyntheticScene synthetic_scene_from_json(const json& j) {
  SyntheticScene s;
  try {
    if (j.contains("preset")) s = preset_scene(j["preset"].get<std::string>());
    if (j.contains("background")) {
      s.background.clear();
      for (const auto& p : j["background"]) s.background.push_back(primitive_from_json(p));
    }
    if (j.contains("entities")) {
      s.entities.clear();
      for (const auto& e : j["entities"]) {
        SyntheticEntity ent;
        ent.id = e.at("id").get<int>();
        for (const auto& p : e.at("primitives")) ent.primitives.push_back(primitive_from_json(p));
        s.entities.push_back(std::move(ent));
      }
    }
    s.num_frames = j.value("num_frames", s.num_frames);
    s.fps = j.value("fps", s.fps);
    if (j.contains("background_color")) s.background_color = v3(j["background_color"]);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.with_depth = j.value("with_depth", s.with_depth);
    if (j.contains("rig")) {
      const auto& r = j["rig"];
      s.rig.count = r.value("count", s.rig.count);
      s.rig.arc_degrees = r.value("arc_degrees", s.rig.arc_degrees);
      s.rig.arc_center_degrees = r.value("arc_center_degrees", s.rig.arc_center_degrees);
      s.rig.radius = r.value("radius", s.rig.radius);
      s.rig.height = r.value("height", s.rig.height);
      if (r.contains("target")) s.rig.target = v3(r["target"]);
      s.rig.fov_y_degrees = r.value("fov_y_degrees", s.rig.fov_y_degrees);
      s.rig.width = r.value("width", s.rig.width);
      s.rig.height_px = r.value("height_px", s.rig.height_px);
    }
    if (j.contains("cameras")) s.cameras = cameras_from_json(json{{"cameras", j["cameras"]}}, "scene description");
  } catch (const json::exception& e) {
    throw ParseError(std::string("scene description: ") + e.what());
  }
  return s;
}

SyntheticScene preset_scene(const std::string& name) {
  SyntheticScene s;
  if (name == "empty") {
    s.rig.count = 4;
    return s;
  }
  if (name == "desk") {
    Primitive floor;
    floor.center = Vec3(0.0, -0.05, 0.0);
    floor.half_extent = Vec3(3.0, 0.05, 3.0);
    floor.color = Vec3(0.55, 0.5, 0.42);
    floor.color_gradient(0, 0) = 0.06;
    floor.color_gradient(2, 2) = 0.06;
    s.background.push_back(floor);

    // Spinning, two-tone red block: its box-frame shape changes over time.
    Primitive a;
    a.center = Vec3(-0.8, 0.3, 0.35);
    a.half_extent = Vec3(0.3, 0.3, 0.15);
    a.color = Vec3(0.85, 0.35, 0.2);
    a.color_gradient(1, 0) = 1.0;  // green ramps across local x
    a.velocity = Vec3(1.0, 0.0, 0.0);
    a.spin_rate = std::numbers::pi / 2.0;
    s.entities.push_back({1, {a}});

    // Blue block whose color pulses over time.
    Primitive b;
    b.center = Vec3(0.7, 0.25, -0.45);
    b.half_extent = Vec3(0.2, 0.25, 0.2);
    b.color = Vec3(0.2, 0.35, 0.8);
    b.color_gradient(2, 1) = 0.3;
    b.velocity = Vec3(-0.8, 0.0, 0.3);
    b.color_pulse = Vec3(0.25, 0.3, -0.15);
    b.pulse_period = 1.0;
    s.entities.push_back({2, {b}});

    s.num_frames = 8;
    s.fps = 8.0;
    s.rig.count = 17;
    s.rig.arc_degrees = 160.0;
    return s;
  }
  if (name == "crossing") {
    Primitive floor;
    floor.center = Vec3(0.0, -0.05, 0.0);
    floor.half_extent = Vec3(3.0, 0.05, 3.0);
    floor.color = Vec3(0.5, 0.5, 0.5);
    s.background.push_back(floor);
    Primitive near;
    near.center = Vec3(-0.9, 0.45, 0.6);
    near.half_extent = Vec3(0.2, 0.45, 0.15);
    near.color = Vec3(0.8, 0.25, 0.2);
    near.velocity = Vec3(1.8, 0.0, 0.0);
    Primitive far = near;
    far.center = Vec3(0.9, 0.45, -0.6);
    far.color = Vec3(0.2, 0.3, 0.8);
    far.velocity = Vec3(-1.8, 0.0, 0.0);
    s.entities.push_back({1, {near}});
    s.entities.push_back({2, {far}});
    s.num_frames = 8;
    s.fps = 8.0;
    s.rig.count = 8;
    s.rig.arc_degrees = 90.0;
    s.rig.width = 128;
    s.rig.height_px = 128;
    return s;
  }
  if (name == "sphere") {
    Primitive ball;
    ball.shape = Primitive::Shape::kSphere;
    ball.radius = 0.5;
    ball.color = Vec3(0.7, 0.6, 0.3);
    s.entities.push_back({1, {ball}});
    s.num_frames = 1;
    s.rig.count = 8;
    s.rig.arc_degrees = 315.0;  // 8 cameras spaced 45 degrees apart, two on each axis
    s.rig.arc_center_degrees = 22.5;
    s.rig.height = 0.0;  // equatorial ring
    s.rig.target = Vec3::Zero();
    s.rig.fov_y_degrees = 30.0;
    s.rig.width = 96;
    s.rig.height_px = 96;
    return s;
  }
  throw InvalidInput("unknown scene preset '" + name + "'");
}

}  // namespace stnerf
