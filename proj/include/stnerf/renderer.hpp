#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stnerf/camera.hpp"
#include "stnerf/compositing.hpp"
#include "stnerf/dataset.hpp"
#include "stnerf/field.hpp"
#include "stnerf/image.hpp"

namespace stnerf {

struct RenderConfig {
  int coarse_samples = 64;  // per segment
  int fine_samples = 64;    // per segment
  Vec3 background = Vec3::Zero();
  double near = 0.0;
  double far = 1e30;
  std::uint64_t seed = 0;

  static RenderConfig desk();     // 16 + 16
  static RenderConfig preview();  // 8 + 8
  void validate() const;
  bool operator==(const RenderConfig&) const = default;
};

// One layer placed at one instant.  A sample at world point p is evaluated
// at pullback(p) expressed in the source box frame, looking along the
// pulled-back (renormalized) direction.
struct LayerInstance {
  int network = 0;         // index into the renderer's network list
  int key = 0;             // stable id for sample generation (entity or duplicate id)
  Aabb source_box;         // box the field was trained in
  Aabb world_box;          // where the layer is drawn
  std::optional<Affine> pullback;  // world -> source; empty means identity
  int frame = 0;           // frame the layer is taken at (after retiming)
  double time = 0.0;       // normalized field time for `frame`
  double density_scale = 1.0;
};

// Unedited instances for one frame, one per track; instance i uses
// network i.
std::vector<LayerInstance> layers_at_frame(std::span<const BoundingBoxTrack> tracks, int frame, int num_frames);

struct RenderRay {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  std::uint64_t key = 0;  // see ray_key
  int context = 0;        // which instance list applies
};

std::uint64_t ray_key(std::uint64_t seed, int camera_id, int pixel_index);

enum : int { kCoarse = 0, kFine = 1 };

// Renders a batch of rays in two stages (coarse, then fine placed by the
// coarse weights of each segment) and can backpropagate pixel and
// per-layer alpha gradients into the fields.  Fine placement is treated as
// a constant.  Each instance list is a "context"; rays pick one, so one
// batch can mix frames.
template <typename T>
class BatchRenderer {
 public:
  BatchRenderer(std::vector<const StNerfParams<T>*> networks, std::vector<std::vector<LayerInstance>> contexts,
                RenderConfig config);

  void forward(std::span<const RenderRay> rays, bool record);

  int size() const { return static_cast<int>(rays_.size()); }
  const Vec3& color(int stage, int ray) const { return rays_[ray].result[stage].color; }
  // Alpha of every instance of the ray's context (0 where the ray misses).
  std::vector<double> layer_alpha(int stage, int ray) const;
  // Sum of compositing weights of each instance's samples.
  std::vector<double> layer_weight(int stage, int ray) const;
  const CompositeResult& composite_result(int stage, int ray) const { return rays_[ray].result[stage]; }
  const RaySamples& samples(int stage, int ray) const { return rays_[ray].samples[stage]; }
  const std::vector<RaySegment>& segments(int ray) const { return rays_[ray].segments; }

  // dcolor[stage][ray]; dalpha[stage][ray][instance].  `gradients` is
  // aligned with the network list; null entries are skipped.
  void backward(const std::vector<Vec3> (&dcolor)[2], const std::vector<std::vector<double>> (&dalpha)[2],
                std::span<StNerfParams<T>* const> gradients);

 private:
  struct SampleRef {
    int network;
    int column;
  };
  struct RayState {
    std::vector<RaySegment> segments;  // segment.layer = instance index
    RaySamples samples[2];             // layer field = index into `segments`
    std::vector<SampleRef> refs[2];
    CompositeResult result[2];
  };
  struct NetworkBatch {
    std::vector<T> pos, dir, time;
    FieldQuery<T> query;
    FieldResult<T> result;
    FieldTape<T> tape;
  };

  void add_samples(int stage, int ray_index, const RenderRay& ray, int segment, std::span<const double> depths);
  void evaluate(int stage, bool record);
  void gather(int stage);

  std::vector<const StNerfParams<T>*> networks_;
  std::vector<std::vector<LayerInstance>> contexts_;
  RenderConfig config_;
  std::vector<RenderRay> ray_inputs_;
  std::vector<RayState> rays_;
  std::vector<NetworkBatch> batches_[2];
  // Pending samples before sorting: (depth, segment index, reference).
  std::vector<std::vector<std::tuple<double, int, SampleRef>>> pending_;
};

struct RenderOutput {
  Image image;
  std::vector<Image> layer_alpha;   // per instance, own alpha in every channel
  std::vector<Image> layer_weight;  // per instance, share of the pixel's compositing weight
  Image coarse_image;
};

// Renders every pixel of `camera` with one instance list.  The image is
// split into fixed tiles handed to `threads` workers; the result does not
// depend on the worker count.
RenderOutput render_image(const CameraModel& camera, std::span<const StNerfParams<float>* const> networks,
                          const std::vector<LayerInstance>& layers, const RenderConfig& config, int threads = 1,
                          bool with_alpha = false);

struct PixelResult {
  Vec3 color = Vec3::Zero();
  Vec3 coarse_color = Vec3::Zero();
  std::vector<double> layer_alpha[2];
};

template <typename T>
PixelResult render_pixel(const CameraModel& camera, Pixel pixel, std::span<const StNerfParams<T>* const> networks,
                         const std::vector<LayerInstance>& layers, const RenderConfig& config);

}  // namespace stnerf
