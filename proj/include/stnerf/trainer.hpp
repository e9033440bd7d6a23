#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "stnerf/adam.hpp"
#include "stnerf/checkpoint.hpp"
#include "stnerf/dataset.hpp"
#include "stnerf/ray_sampler.hpp"
#include "stnerf/renderer.hpp"

namespace stnerf {

struct TrainConfig {
  int rays_per_batch = 3000;
  int chunk_rays = 256;  // rays rendered per forward/backward pass
  int epochs = 4;
  int steps_per_epoch = 0;  // 0: labeled pixels / rays_per_batch (at least 1)
  std::vector<double> lambda_schedule = {0.1, 0.05, 0.01};  // per epoch, then 0
  LearningRateSchedule learning_rate;  // horizon 0: total step count
  AdamConfig adam;
  std::uint64_t seed = 0;
  RenderConfig render = RenderConfig::desk();
  FieldConfig field = FieldConfig::desk();
  bool static_background = false;  // background layer without deformation
  bool motion_aware = true;
  bool layer_loss = true;  // false disables the alpha supervision entirely
  bool mean_reduction = true;  // false: plain sums over the batch
  std::vector<int> train_cameras;  // camera ids; empty means all
  int threads = 1;

  double lambda_at(int epoch) const;
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
// Missing fields keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& source);
nlohmann::json render_config_to_json(const RenderConfig& config);
RenderConfig render_config_from_json(const nlohmann::json& j, const std::string& source);

// Sum over rays of |C - C_coarse|^2 + |C - C_fine|^2.
double rgb_loss(std::span<const Vec3> target, std::span<const Vec3> coarse, std::span<const Vec3> fine);
// 1/2 sum over rays and layers of (indicator(label == id) - alpha)^2.
// alphas[r][i] belongs to layer_ids[i].
double layer_loss(std::span<const int> labels, std::span<const std::vector<double>> alphas,
                  std::span<const int> layer_ids);

struct BatchLoss {
  double rgb = 0.0;      // rgb_loss summed over the rays
  double layer = 0.0;    // layer_loss over entity layers (id != 0), both stages
  double fine_sq = 0.0;  // squared fine-stage color error
};

// Renders `rays` with tapes, evaluates both losses against `targets` and
// backpropagates (1 - lambda) L_rgb + lambda L_layer, each divided by
// `norm`, into `gradients` (aligned with the renderer's networks).
template <typename T>
BatchLoss render_loss_backward(BatchRenderer<T>& renderer, std::span<const RenderRay> rays,
                               std::span<const TrainingRay> targets, std::span<const int> layer_ids, double lambda,
                               double norm, std::span<StNerfParams<T>* const> gradients);

struct StepReport {
  double loss = 0.0;
  double rgb_loss = 0.0;    // reduced as configured
  double layer_loss = 0.0;  // reduced as configured
  double fine_mse = 0.0;    // per channel, over the batch
  double lambda = 0.0;
  double learning_rate = 0.0;
  bool aborted = false;
  std::string diagnostics;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double lambda = 0.0;
  double learning_rate = 0.0;
  double rgb_loss = 0.0;
  double layer_loss = 0.0;
  double train_psnr = 0.0;

  nlohmann::json to_json() const;
};

// Layers for a dataset: the background (its own track if present, else the
// scene bounds at every frame) followed by each entity's track from
// `tracks` (falling back to the dataset's boxes).
std::vector<BoundingBoxTrack> training_tracks(const Dataset& dataset, std::span<const BoundingBoxTrack> tracks = {});

class Trainer {
 public:
  Trainer(const Dataset& dataset, std::vector<BoundingBoxTrack> tracks, TrainConfig config);

  // One optimizer step on a freshly sampled batch.
  StepReport step(double lambda);
  // Same, on a given batch (tests).
  StepReport step_on(std::span<const TrainingRay> batch, double lambda);
  // Loss and parameter gradients for a batch without updating anything.
  StepReport gradients(std::span<const TrainingRay> batch, double lambda,
                       std::vector<StNerfParams<float>>& out) const;

  // Runs the epoch loop.  `cancel` is polled between steps; the model is
  // left consistent either way.
  std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {},
                               const std::atomic<bool>* cancel = nullptr);

  const SceneModel& model() const { return model_; }
  SceneModel& model() { return model_; }
  std::int64_t global_step() const { return step_; }
  int steps_per_epoch() const;
  const TrainConfig& config() const { return config_; }
  const RaySampler& sampler() const { return sampler_; }

 private:
  StepReport accumulate(std::span<const TrainingRay> batch, double lambda, std::vector<StNerfParams<float>>& grads) const;
  std::vector<std::vector<LayerInstance>> contexts() const;

  const Dataset& dataset_;
  TrainConfig config_;
  SceneModel model_;
  std::vector<int> camera_indices_;
  RaySampler sampler_;
  std::vector<std::vector<AdamState<float>>> adam_;  // per layer, per network
  std::int64_t step_ = 0;
};

struct EvalReport {
  double psnr = 0.0;  // mean over views
  double ssim = 0.0;
  double mae = 0.0;
  std::vector<int> layer_ids;
  std::vector<double> layer_iou;  // alpha > 0.5 vs label mask, pooled over views
  int views = 0;
};

// Renders the given cameras at the given frames (all frames when empty)
// and compares against the dataset.
EvalReport evaluate_views(const SceneModel& model, const Dataset& dataset, std::span<const int> camera_ids,
                          std::span<const int> frames, const RenderConfig& render, int threads = 1);

// Frame instances for a scene model without edits.
std::vector<const StNerfParams<float>*> network_list(const SceneModel& model);

}  // namespace stnerf
