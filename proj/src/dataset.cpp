#include "stnerf/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <string>

#include "stnerf/error.hpp"
#include "stnerf/json_util.hpp"

namespace stnerf {

namespace fs = std::filesystem;
using nlohmann::json;

const Aabb& BoundingBoxTrack::at(int frame) const {
  if (frame < 0 || frame >= static_cast<int>(boxes.size())) {
    throw InvalidInput("box track of entity " + std::to_string(entity_id) + " has no frame " + std::to_string(frame));
  }
  return boxes[frame];
}

int Dataset::camera_index(int camera_id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (cameras[i].id == camera_id) return static_cast<int>(i);
  throw InvalidInput("unknown camera id " + std::to_string(camera_id));
}

const BoundingBoxTrack* Dataset::track(int entity_id) const {
  for (const auto& t : boxes)
    if (t.entity_id == entity_id) return &t;
  return nullptr;
}

void Dataset::validate() const {
  const std::size_t nc = cameras.size();
  for (const auto& c : cameras) c.validate();
  auto check_sequence = [&](const auto& seq, const char* what, bool optional) {
    if (optional && seq.empty()) return;
    if (seq.size() != nc) throw InvalidInput(std::string(what) + ": camera count mismatch");
    for (std::size_t c = 0; c < nc; ++c) {
      if (static_cast<int>(seq[c].size()) != num_frames) {
        throw InvalidInput(std::string(what) + ": frame count mismatch for camera " + std::to_string(cameras[c].id));
      }
    }
  };
  check_sequence(images, "images", false);
  check_sequence(labels, "labels", true);
  check_sequence(depth, "depth", true);
  std::set<int> declared(entity_ids.begin(), entity_ids.end());
  if (declared.count(0) != 0) throw InvalidInput("entity id 0 is reserved for the background");
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& cam = cameras[c];
    for (int t = 0; t < num_frames; ++t) {
      const auto& img = images[c][t];
      if (img.width != cam.width || img.height != cam.height ||
          img.rgb.size() != static_cast<std::size_t>(cam.width) * cam.height * 3) {
        throw InvalidInput("image size mismatch for camera " + std::to_string(cam.id) + " frame " + std::to_string(t));
      }
      if (!labels.empty()) {
        const auto& lm = labels[c][t];
        if (lm.width != cam.width || lm.height != cam.height) {
          throw InvalidInput("label map size mismatch for camera " + std::to_string(cam.id) + " frame " +
                             std::to_string(t));
        }
        for (auto l : lm.labels) {
          if (l != 0 && declared.count(l) == 0) {
            throw InvalidInput("label map for camera " + std::to_string(cam.id) + " frame " + std::to_string(t) +
                               " references undeclared entity " + std::to_string(l));
          }
        }
      }
    }
  }
  for (const auto& tr : boxes) {
    if (tr.entity_id != 0 && declared.count(tr.entity_id) == 0) {
      throw InvalidInput("box track for undeclared entity " + std::to_string(tr.entity_id));
    }
    if (static_cast<int>(tr.boxes.size()) != num_frames) {
      throw InvalidInput("box track of entity " + std::to_string(tr.entity_id) + ": frame count mismatch");
    }
    for (std::size_t t = 0; t < tr.boxes.size(); ++t) {
      if (!tr.boxes[t].valid()) {
        throw InvalidInput("box of entity " + std::to_string(tr.entity_id) + " frame " + std::to_string(t) +
                           " has min >= max");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace {

template <typename T>
T field(const json& j, const std::string& key, const std::string& source) {
  return json_field<T>(j, key, source);
}

Vec3 vec3_field(const json& j, const std::string& key, const std::string& source) { return json_vec3(j, key, source); }

json vec3_json(const Vec3& v) { return to_json_array(v); }

fs::path frame_path(const fs::path& root, const char* dir, int camera_id, int t, const char* ext) {
  return root / dir / ("cam_" + std::to_string(camera_id)) / (std::to_string(t) + ext);
}

}  // namespace

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

json aabb_to_json(const Aabb& box) { return {{"min", vec3_json(box.min)}, {"max", vec3_json(box.max)}}; }

Aabb aabb_from_json(const json& j, const std::string& source) {
  return {vec3_field(j, "min", source), vec3_field(j, "max", source)};
}

json camera_to_json(const CameraModel& c) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
  return {{"id", c.id},
          {"width", c.width},
          {"height", c.height},
          {"fx", c.intrinsics.fx},
          {"fy", c.intrinsics.fy},
          {"cx", c.intrinsics.cx},
          {"cy", c.intrinsics.cy},
          {"rotation", rot},
          {"position", vec3_json(c.position)}};
}

CameraModel camera_from_json(const json& j, const std::string& source) {
  CameraModel c;
  c.id = field<int>(j, "id", source);
  const std::string where = source + " camera " + std::to_string(c.id);
  c.width = field<int>(j, "width", where);
  c.height = field<int>(j, "height", where);
  c.intrinsics.fx = field<double>(j, "fx", where);
  c.intrinsics.fy = field<double>(j, "fy", where);
  c.intrinsics.cx = field<double>(j, "cx", where);
  c.intrinsics.cy = field<double>(j, "cy", where);
  auto rot = field<std::vector<double>>(j, "rotation", where);
  if (rot.size() != 9) throw ParseError(where + ": field 'rotation' must have 9 entries (row-major)");
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[r * 3 + k];
  c.position = vec3_field(j, "position", where);
  return c;
}

json cameras_to_json(const std::vector<CameraModel>& cameras) {
  json arr = json::array();
  for (const auto& c : cameras) arr.push_back(camera_to_json(c));
  return {{"cameras", arr}};
}

std::vector<CameraModel> cameras_from_json(const json& j, const std::string& source) {
  std::vector<CameraModel> cams;
  for (const auto& c : field<json>(j, "cameras", source)) cams.push_back(camera_from_json(c, source));
  return cams;
}

json boxes_to_json(const std::vector<BoundingBoxTrack>& tracks) {
  json arr = json::array();
  for (const auto& t : tracks) {
    json boxes = json::array();
    for (const auto& b : t.boxes) boxes.push_back(aabb_to_json(b));
    arr.push_back({{"id", t.entity_id}, {"boxes", boxes}});
  }
  return {{"entities", arr}};
}

std::vector<BoundingBoxTrack> boxes_from_json(const json& j, const std::string& source) {
  std::vector<BoundingBoxTrack> tracks;
  for (const auto& e : field<json>(j, "entities", source)) {
    BoundingBoxTrack t;
    t.entity_id = field<int>(e, "id", source);
    const std::string where = source + " entity " + std::to_string(t.entity_id);
    for (const auto& b : field<json>(e, "boxes", where)) t.boxes.push_back(aabb_from_json(b, where));
    tracks.push_back(std::move(t));
  }
  return tracks;
}

// ---------------------------------------------------------------------------
// Directory layout

void save_dataset(const Dataset& ds, const fs::path& root) {
  ds.validate();
  fs::create_directories(root);
  write_json(root / "cameras.json", cameras_to_json(ds.cameras));
  json meta = {{"n_t", ds.num_frames},
               {"n_i", ds.num_entities()},
               {"entity_ids", ds.entity_ids},
               {"fps", ds.fps},
               {"scene_bounds", aabb_to_json(ds.scene_bounds)},
               {"has_depth", !ds.depth.empty()},
               {"has_labels", !ds.labels.empty()}};
  if (ds.ground_truth) meta["ground_truth"] = *ds.ground_truth;
  write_json(root / "meta.json", meta);
  write_json(root / "boxes.json", boxes_to_json(ds.boxes));
  for (std::size_t c = 0; c < ds.cameras.size(); ++c) {
    const int id = ds.cameras[c].id;
    for (int t = 0; t < ds.num_frames; ++t) {
      write_png(frame_path(root, "frames", id, t, ".png"), ds.images[c][t]);
      if (!ds.labels.empty()) write_png(frame_path(root, "labels", id, t, ".png"), ds.labels[c][t]);
      if (!ds.depth.empty()) write_depth(frame_path(root, "depth", id, t, ".f32"), ds.depth[c][t]);
    }
  }
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ParseError(root.string() + ": dataset directory not found");
  Dataset ds;
  const auto meta_path = (root / "meta.json").string();
  const json meta = read_json(root / "meta.json");
  ds.num_frames = field<int>(meta, "n_t", meta_path);
  const int n_i = field<int>(meta, "n_i", meta_path);
  if (meta.contains("entity_ids")) {
    ds.entity_ids = field<std::vector<int>>(meta, "entity_ids", meta_path);
  } else {
    for (int i = 1; i <= n_i; ++i) ds.entity_ids.push_back(i);
  }
  if (static_cast<int>(ds.entity_ids.size()) != n_i) throw ParseError(meta_path + ": 'n_i' disagrees with 'entity_ids'");
  ds.fps = field<double>(meta, "fps", meta_path);
  if (meta.contains("scene_bounds")) ds.scene_bounds = aabb_from_json(meta["scene_bounds"], meta_path + " scene_bounds");
  if (meta.contains("ground_truth")) ds.ground_truth = meta["ground_truth"];
  const bool has_depth = meta.value("has_depth", fs::exists(root / "depth"));
  const bool has_labels = meta.value("has_labels", fs::exists(root / "labels"));

  ds.cameras = cameras_from_json(read_json(root / "cameras.json"), (root / "cameras.json").string());
  if (fs::exists(root / "boxes.json")) {
    ds.boxes = boxes_from_json(read_json(root / "boxes.json"), (root / "boxes.json").string());
  }
  const std::size_t nc = ds.cameras.size();
  ds.images.resize(nc);
  if (has_labels) ds.labels.resize(nc);
  if (has_depth) ds.depth.resize(nc);
  auto count_files = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) return -1;
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
    return n;
  };
  for (std::size_t c = 0; c < nc; ++c) {
    const int id = ds.cameras[c].id;
    for (const char* dir : {"frames", "labels", "depth"}) {
      const fs::path p = root / dir / ("cam_" + std::to_string(id));
      const int n = count_files(p);
      if (n >= 0 && n != ds.num_frames) {
        throw InvalidInput(p.string() + ": frame count mismatch (" + std::to_string(n) + " files, n_t = " +
                           std::to_string(ds.num_frames) + ")");
      }
    }
    for (int t = 0; t < ds.num_frames; ++t) {
      ds.images[c].push_back(read_png_image(frame_path(root, "frames", id, t, ".png")));
      if (has_labels) ds.labels[c].push_back(read_png_labels(frame_path(root, "labels", id, t, ".png")));
      if (has_depth) ds.depth[c].push_back(read_depth(frame_path(root, "depth", id, t, ".f32")));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace stnerf
