#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stnerf/camera.hpp"
#include "stnerf/checkpoint.hpp"
#include "stnerf/geometry.hpp"
#include "stnerf/renderer.hpp"

namespace stnerf {

// Frame-to-frame map stored as sparse (t_out, t_in) keyframes.  An output
// frame takes the input frame of its nearest key; ties go to the earlier
// key.  No keys means identity.
struct RetimeMap {
  std::vector<std::pair<int, int>> keys;

  static RetimeMap freeze(int frame) { return {{{0, frame}}}; }
  // t -> max(t - shift, 0)
  static RetimeMap delay(int shift, int num_output_frames);

  int at(int t_out) const;
  bool operator==(const RetimeMap&) const = default;
};

// Edits of one layer over an output frame range.  For a duplicate,
// `entity` is the id of the new layer and `duplicate_of` its source.
struct LayerEdit {
  int entity = 0;
  std::optional<std::pair<int, int>> frames;  // inclusive; empty means all
  std::optional<Affine> affine;
  std::optional<RetimeMap> retime;
  double transparency = 1.0;  // density scale
  bool visible = true;
  std::optional<int> duplicate_of;

  bool active_at(int t_out) const { return !frames || (t_out >= frames->first && t_out <= frames->second); }
};

// Edits are applied in order, each one to the layer as left by the
// previous ones: an affine A2 after A1 acts as A2 o A1, and a retime T2
// after T1 shows the T1-edited layer at T2(t).
struct EditScript {
  int version = 1;
  int output_frames = 0;  // 0: the scene's frame count
  std::vector<CameraModel> camera_path;  // optional pose per output frame
  std::vector<LayerEdit> edits;
};

nlohmann::json edit_script_to_json(const EditScript& script);
// Throws ParseError on malformed documents; semantic checks are left to
// validate_script.
EditScript edit_script_from_json(const nlohmann::json& j, const std::string& source);
nlohmann::json layer_edit_to_json(const LayerEdit& edit);
LayerEdit layer_edit_from_json(const nlohmann::json& j, const std::string& source);
nlohmann::json affine_to_json(const Affine& a);
Affine affine_from_json(const nlohmann::json& j, const std::string& source);

struct SceneInfo {
  std::vector<int> layer_ids;  // including the background
  int num_frames = 0;

  static SceneInfo of(const SceneModel& model);
};

// Human-readable violations; empty means the script is usable.  Never
// throws.
std::vector<std::string> validate_script(const EditScript& script, const SceneInfo& scene);

struct AffinePlacement {
  Aabb world_box;
  Affine pullback;  // world -> source
};
// Box of the transformed corners, plus the inverse used to pull samples
// back into the source layer.  Throws InvalidInput for singular maps.
AffinePlacement apply_affine(const Affine& a, const Aabb& box);

// Input frame for `t_out`, clamped to [0, num_frames - 1] with a warning.
int apply_retime(const RetimeMap& map, int t_out, int num_frames);

// Single-pass map equal to applying `first` and then `second` as separate
// edits, tabulated on [0, num_output_frames).
RetimeMap compose_retime(const RetimeMap& first, const RetimeMap& second, int num_output_frames);

struct ComposedScene {
  std::vector<LayerInstance> instances;  // instance.network indexes model.layers
  std::vector<int> ids;                  // layer or duplicate id per instance
};

// Render-ready instances for output frame `t_out`.  Hidden layers and
// layers scaled to zero density are omitted.  Throws InvalidInput when the
// script has violations.
ComposedScene compose_scene(const SceneModel& model, const EditScript& script, int t_out);

int output_frame_count(const SceneModel& model, const EditScript& script);

// Camera for output frame t: the script's path if it has one, else
// `fallback`.
CameraModel camera_for_frame(const EditScript& script, int t_out, const CameraModel& fallback);

RenderOutput render_edited(const SceneModel& model, const EditScript& script, const CameraModel& camera, int t_out,
                           const RenderConfig& config, int threads = 1, bool with_alpha = false);

}  // namespace stnerf
