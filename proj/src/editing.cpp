#include "stnerf/editing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "stnerf/dataset.hpp"
#include "stnerf/error.hpp"
#include "stnerf/field.hpp"
#include "stnerf/json_util.hpp"
#include "stnerf/log.hpp"
#include "stnerf/trainer.hpp"

namespace stnerf {

using nlohmann::json;

RetimeMap RetimeMap::delay(int shift, int num_output_frames) {
  RetimeMap m;
  for (int t = 0; t < num_output_frames; ++t) m.keys.emplace_back(t, std::max(t - shift, 0));
  return m;
}

int RetimeMap::at(int t_out) const {
  if (keys.empty()) return t_out;
  const std::pair<int, int>* best = nullptr;
  long best_dist = 0;
  for (const auto& k : keys) {
    const long d = std::labs(static_cast<long>(k.first) - t_out);
    if (!best || d < best_dist || (d == best_dist && k.first < best->first)) {
      best = &k;
      best_dist = d;
    }
  }
  return best->second;
}

json affine_to_json(const Affine& a) {
  json lin = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) lin.push_back(a.linear(r, c));
  return {{"linear", lin}, {"translation", to_json_array(a.translation)}};
}

Affine affine_from_json(const json& j, const std::string& source) {
  const auto lin = json_field<std::vector<double>>(j, "linear", source);
  if (lin.size() != 9) throw ParseError(source + ": field 'linear' must have 9 entries");
  Affine a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.linear(r, c) = lin[r * 3 + c];
  a.translation = json_vec3(j, "translation", source);
  return a;
}

json layer_edit_to_json(const LayerEdit& e) {
  json j = {{"entity", e.entity}, {"transparency", e.transparency}, {"visible", e.visible}};
  if (e.frames) j["frames"] = {e.frames->first, e.frames->second};
  if (e.affine) j["affine"] = affine_to_json(*e.affine);
  if (e.retime) {
    json keys = json::array();
    for (const auto& [o, i] : e.retime->keys) keys.push_back({o, i});
    j["retime"] = {{"keys", keys}};
  }
  if (e.duplicate_of) j["duplicate_of"] = *e.duplicate_of;
  return j;
}

LayerEdit layer_edit_from_json(const json& j, const std::string& source) {
  if (!j.is_object()) throw ParseError(source + ": edit must be an object");
  LayerEdit e;
  e.entity = json_field<int>(j, "entity", source);
  const std::string where = source + " edit for layer " + std::to_string(e.entity);
  if (j.contains("frames")) {
    const auto f = json_field<std::vector<int>>(j, "frames", where);
    if (f.size() != 2) throw ParseError(where + ": field 'frames' must be [first, last]");
    e.frames = std::make_pair(f[0], f[1]);
  }
  if (j.contains("affine")) e.affine = affine_from_json(j.at("affine"), where + " affine");
  if (j.contains("retime")) {
    RetimeMap m;
    for (const auto& k : json_field<std::vector<std::vector<int>>>(j.at("retime"), "keys", where + " retime")) {
      if (k.size() != 2) throw ParseError(where + ": retime keys must be [t_out, t_in] pairs");
      m.keys.emplace_back(k[0], k[1]);
    }
    e.retime = std::move(m);
  }
  e.transparency = json_field_or<double>(j, "transparency", where, 1.0);
  e.visible = json_field_or<bool>(j, "visible", where, true);
  if (j.contains("duplicate_of")) e.duplicate_of = json_field<int>(j, "duplicate_of", where);
  return e;
}

json edit_script_to_json(const EditScript& s) {
  json edits = json::array();
  for (const auto& e : s.edits) edits.push_back(layer_edit_to_json(e));
  return {{"version", s.version},
          {"output_frames", s.output_frames},
          {"camera_path", cameras_to_json(s.camera_path).at("cameras")},
          {"edits", edits}};
}

EditScript edit_script_from_json(const json& j, const std::string& source) {
  if (!j.is_object()) throw ParseError(source + ": edit script must be an object");
  EditScript s;
  s.version = json_field_or<int>(j, "version", source, 1);
  s.output_frames = json_field_or<int>(j, "output_frames", source, 0);
  if (j.contains("camera_path")) {
    const auto& path = j.at("camera_path");
    if (!path.is_array()) throw ParseError(source + ": field 'camera_path' must be a list");
    for (const auto& c : path) s.camera_path.push_back(camera_from_json(c, source));
  }
  if (j.contains("edits")) {
    const auto& edits = j.at("edits");
    if (!edits.is_array()) throw ParseError(source + ": field 'edits' must be a list");
    for (const auto& e : edits) s.edits.push_back(layer_edit_from_json(e, source));
  }
  return s;
}

SceneInfo SceneInfo::of(const SceneModel& model) {
  SceneInfo info;
  for (const auto& l : model.layers) info.layer_ids.push_back(l.entity_id);
  info.num_frames = model.num_frames;
  return info;
}

std::vector<std::string> validate_script(const EditScript& script, const SceneInfo& scene) {
  std::vector<std::string> out;
  if (script.version != 1) out.push_back("unsupported script version " + std::to_string(script.version));
  if (script.output_frames < 0) out.push_back("output_frames must be nonnegative");
  const int frames = script.output_frames > 0 ? script.output_frames : scene.num_frames;
  if (!script.camera_path.empty() && static_cast<int>(script.camera_path.size()) != frames) {
    out.push_back("camera path has " + std::to_string(script.camera_path.size()) + " poses for " +
                  std::to_string(frames) + " output frames");
  }
  for (std::size_t i = 0; i < script.camera_path.size(); ++i) {
    try {
      script.camera_path[i].validate();
    } catch (const Error& e) {
      out.push_back("camera path pose " + std::to_string(i) + ": " + e.what());
    }
  }

  std::set<int> known(scene.layer_ids.begin(), scene.layer_ids.end());
  const int last = scene.num_frames - 1;
  for (std::size_t i = 0; i < script.edits.size(); ++i) {
    const LayerEdit& e = script.edits[i];
    const std::string layer = "layer " + std::to_string(e.entity);
    if (e.duplicate_of) {
      if (!known.contains(*e.duplicate_of)) {
        out.push_back("duplicate of unknown layer " + std::to_string(*e.duplicate_of) + ", edit " + std::to_string(i));
      }
      if (known.contains(e.entity)) {
        out.push_back("duplicate id " + std::to_string(e.entity) + " already in use, edit " + std::to_string(i));
      }
      known.insert(e.entity);
    } else if (!known.contains(e.entity)) {
      out.push_back("unknown " + layer + ", edit " + std::to_string(i));
    }
    if (e.frames && (e.frames->first > e.frames->second || e.frames->first < 0 || e.frames->second >= frames)) {
      std::ostringstream m;
      m << "frame range [" << e.frames->first << ", " << e.frames->second << "] outside output timeline [0, "
        << frames - 1 << "], " << layer;
      out.push_back(m.str());
    }
    if (e.affine) {
      const double det = e.affine->determinant();
      if (!std::isfinite(det) || std::abs(det) <= 1e-9 || !e.affine->translation.allFinite()) {
        out.push_back("non-invertible affine, " + layer);
      }
    }
    if (e.retime) {
      std::set<int> seen;
      for (const auto& [t_out, t_in] : e.retime->keys) {
        if (t_in < 0 || t_in > last) {
          std::ostringstream m;
          m << "retime target " << t_in << " outside [0, " << last << "], " << layer << "; would be clamped to "
            << std::clamp(t_in, 0, std::max(last, 0));
          out.push_back(m.str());
        }
        if (t_out < 0 || t_out >= frames) {
          out.push_back("retime key frame " + std::to_string(t_out) + " outside output timeline, " + layer);
        }
        if (!seen.insert(t_out).second) out.push_back("repeated retime key frame " + std::to_string(t_out) + ", " + layer);
      }
    }
    if (!(e.transparency >= 0.0) || !std::isfinite(e.transparency)) {
      out.push_back("transparency must be a finite nonnegative scale, " + layer);
    }
  }
  return out;
}

AffinePlacement apply_affine(const Affine& a, const Aabb& box) {
  const double det = a.determinant();
  if (!std::isfinite(det) || std::abs(det) <= 1e-9) throw InvalidInput("non-invertible affine");
  return {transform_box(a, box), a.inverse()};
}

int apply_retime(const RetimeMap& map, int t_out, int num_frames) {
  const int t_in = map.at(t_out);
  const int clamped = std::clamp(t_in, 0, std::max(num_frames - 1, 0));
  if (clamped != t_in) {
    warn("retime target " + std::to_string(t_in) + " clamped to " + std::to_string(clamped));
  }
  return clamped;
}

RetimeMap compose_retime(const RetimeMap& first, const RetimeMap& second, int num_output_frames) {
  RetimeMap m;
  for (int t = 0; t < num_output_frames; ++t) m.keys.emplace_back(t, first.at(second.at(t)));
  return m;
}

int output_frame_count(const SceneModel& model, const EditScript& script) {
  return script.output_frames > 0 ? script.output_frames : model.num_frames;
}

namespace {

struct LayerState {
  bool exists = false;
  int network = -1;
  Affine affine;
  int frame = 0;
  double scale = 1.0;
  bool visible = true;
};

class Resolver {
 public:
  Resolver(const SceneModel& model, const EditScript& script) : model_(model), script_(script) {}

  // State of layer `id` after the first `k` edits, seen at output frame t.
  LayerState resolve(int id, std::size_t k, int t) const {
    if (k == 0) {
      LayerState s;
      const int index = model_.layer_index(id);
      if (index < 0) return s;
      s.exists = true;
      s.network = index;
      s.frame = std::clamp(t, 0, model_.num_frames - 1);
      if (s.frame != t) warn("output frame " + std::to_string(t) + " clamped to " + std::to_string(s.frame));
      return s;
    }
    const LayerEdit& e = script_.edits[k - 1];
    if (e.entity != id) return resolve(id, k - 1, t);
    if (!e.active_at(t)) return e.duplicate_of ? LayerState{} : resolve(id, k - 1, t);
    const int t_in = e.retime ? apply_retime(*e.retime, t, model_.num_frames) : t;
    LayerState s = resolve(e.duplicate_of ? *e.duplicate_of : id, k - 1, t_in);
    if (!s.exists) return s;
    if (e.affine) s.affine = e.affine->compose(s.affine);
    s.scale *= e.transparency;
    s.visible = s.visible && e.visible;
    return s;
  }

 private:
  const SceneModel& model_;
  const EditScript& script_;
};

}  // namespace

ComposedScene compose_scene(const SceneModel& model, const EditScript& script, int t_out) {
  const auto violations = validate_script(script, SceneInfo::of(model));
  if (!violations.empty()) throw InvalidInput("invalid edit script: " + violations.front());
  if (t_out < 0 || t_out >= output_frame_count(model, script)) {
    throw InvalidInput("output frame " + std::to_string(t_out) + " outside the output timeline");
  }

  std::vector<int> ids;
  for (const auto& l : model.layers) ids.push_back(l.entity_id);
  for (const auto& e : script.edits)
    if (e.duplicate_of) ids.push_back(e.entity);

  const Resolver resolver(model, script);
  ComposedScene out;
  for (int id : ids) {
    const LayerState s = resolver.resolve(id, script.edits.size(), t_out);
    if (!s.exists || !s.visible || s.scale == 0.0) continue;
    LayerInstance inst;
    inst.network = s.network;
    inst.key = id;
    inst.source_box = model.tracks[s.network].at(s.frame);
    inst.world_box = inst.source_box;
    if (!s.affine.is_identity()) {
      const AffinePlacement p = apply_affine(s.affine, inst.source_box);
      inst.world_box = p.world_box;
      inst.pullback = p.pullback;
    }
    inst.frame = s.frame;
    inst.time = normalized_time(s.frame, model.num_frames);
    inst.density_scale = s.scale;
    out.instances.push_back(inst);
    out.ids.push_back(id);
  }
  return out;
}

CameraModel camera_for_frame(const EditScript& script, int t_out, const CameraModel& fallback) {
  if (script.camera_path.empty()) return fallback;
  if (t_out < 0 || t_out >= static_cast<int>(script.camera_path.size())) {
    throw InvalidInput("no camera path pose for output frame " + std::to_string(t_out));
  }
  return script.camera_path[t_out];
}

RenderOutput render_edited(const SceneModel& model, const EditScript& script, const CameraModel& camera, int t_out,
                           const RenderConfig& config, int threads, bool with_alpha) {
  const ComposedScene scene = compose_scene(model, script, t_out);
  const auto networks = network_list(model);
  return render_image(camera, networks, scene.instances, config, threads, with_alpha);
}

}  // namespace stnerf
