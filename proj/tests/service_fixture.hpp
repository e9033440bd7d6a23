#pragma once

#include "stnerf/checkpoint.hpp"
#include "stnerf/field.hpp"
#include "stnerf/synthetic.hpp"
#include "stnerf/trainer.hpp"

namespace stnerf::testing {

// Untrained desk-like model with visible density, small enough for fast
// service and CLI round trips.
inline SceneModel small_model() {
  auto s = preset_scene("desk");
  s.rig.count = 2;
  s.rig.width = 12;
  s.rig.height_px = 10;
  s.num_frames = 3;
  const Dataset d = synthesize_scene(s, 1);
  SceneModel m;
  m.tracks = training_tracks(d);
  for (const auto& t : m.tracks) {
    auto f = make_field<float>(t.entity_id, FieldConfig::desk(), 4);
    f.coarse.density.layers.back().bias[0] = 1.0f;
    f.fine.density.layers.back().bias[0] = 1.0f;
    m.layers.push_back(std::move(f));
  }
  m.num_frames = d.num_frames;
  m.cameras = d.cameras;
  m.fps = d.fps;
  RenderConfig rc = RenderConfig::preview();
  rc.background = Vec3(0.1, 0.2, 0.3);
  m.metadata = {{"render", render_config_to_json(rc)}};
  return m;
}

}  // namespace stnerf::testing
