#include "stnerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

#include "stnerf/error.hpp"
#include "stnerf/json_util.hpp"
#include "stnerf/log.hpp"
#include "stnerf/metrics.hpp"

namespace stnerf {

using nlohmann::json;

double TrainConfig::lambda_at(int epoch) const {
  if (!layer_loss) return 0.0;
  return epoch >= 0 && epoch < static_cast<int>(lambda_schedule.size()) ? lambda_schedule[epoch] : 0.0;
}

void TrainConfig::validate() const {
  if (rays_per_batch < 1) throw InvalidInput("train config: rays_per_batch must be at least 1");
  if (chunk_rays < 1) throw InvalidInput("train config: chunk_rays must be at least 1");
  if (epochs < 0 || steps_per_epoch < 0) throw InvalidInput("train config: epochs and steps must be nonnegative");
  for (double l : lambda_schedule)
    if (!(l >= 0.0 && l <= 1.0)) throw InvalidInput("train config: lambda must lie in [0, 1]");
  render.validate();
}

json render_config_to_json(const RenderConfig& c) {
  return {{"coarse_samples", c.coarse_samples}, {"fine_samples", c.fine_samples},
          {"background", to_json_array(c.background)}, {"near", c.near}, {"far", c.far}, {"seed", c.seed}};
}

RenderConfig render_config_from_json(const json& j, const std::string& source) {
  RenderConfig c;
  c.coarse_samples = json_field_or(j, "coarse_samples", source, c.coarse_samples);
  c.fine_samples = json_field_or(j, "fine_samples", source, c.fine_samples);
  if (j.contains("background")) c.background = json_vec3(j, "background", source);
  c.near = json_field_or(j, "near", source, c.near);
  c.far = json_field_or(j, "far", source, c.far);
  c.seed = json_field_or<std::uint64_t>(j, "seed", source, c.seed);
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"rays_per_batch", c.rays_per_batch},
          {"chunk_rays", c.chunk_rays},
          {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"lambda_schedule", c.lambda_schedule},
          {"learning_rate",
           {{"initial", c.learning_rate.initial}, {"final", c.learning_rate.final}, {"horizon", c.learning_rate.horizon}}},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
          {"seed", c.seed},
          {"render", render_config_to_json(c.render)},
          {"field", field_config_to_json(c.field)},
          {"static_background", c.static_background},
          {"motion_aware", c.motion_aware},
          {"layer_loss", c.layer_loss},
          {"mean_reduction", c.mean_reduction},
          {"train_cameras", c.train_cameras},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const json& j, const std::string& source) {
  TrainConfig c;
  c.rays_per_batch = json_field_or(j, "rays_per_batch", source, c.rays_per_batch);
  c.chunk_rays = json_field_or(j, "chunk_rays", source, c.chunk_rays);
  c.epochs = json_field_or(j, "epochs", source, c.epochs);
  c.steps_per_epoch = json_field_or(j, "steps_per_epoch", source, c.steps_per_epoch);
  c.lambda_schedule = json_field_or(j, "lambda_schedule", source, c.lambda_schedule);
  if (j.contains("learning_rate")) {
    const json lr = json_field<json>(j, "learning_rate", source);
    c.learning_rate.initial = json_field_or(lr, "initial", source, c.learning_rate.initial);
    c.learning_rate.final = json_field_or(lr, "final", source, c.learning_rate.final);
    c.learning_rate.horizon = json_field_or<std::int64_t>(lr, "horizon", source, c.learning_rate.horizon);
  }
  if (j.contains("adam")) {
    const json a = json_field<json>(j, "adam", source);
    c.adam.beta1 = json_field_or(a, "beta1", source, c.adam.beta1);
    c.adam.beta2 = json_field_or(a, "beta2", source, c.adam.beta2);
    c.adam.epsilon = json_field_or(a, "epsilon", source, c.adam.epsilon);
  }
  c.seed = json_field_or<std::uint64_t>(j, "seed", source, c.seed);
  if (j.contains("render")) c.render = render_config_from_json(json_field<json>(j, "render", source), source);
  if (j.contains("field")) c.field = field_config_from_json(json_field<json>(j, "field", source), source);
  c.static_background = json_field_or(j, "static_background", source, c.static_background);
  c.motion_aware = json_field_or(j, "motion_aware", source, c.motion_aware);
  c.layer_loss = json_field_or(j, "layer_loss", source, c.layer_loss);
  c.mean_reduction = json_field_or(j, "mean_reduction", source, c.mean_reduction);
  c.train_cameras = json_field_or(j, "train_cameras", source, c.train_cameras);
  c.threads = json_field_or(j, "threads", source, c.threads);
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(source + ": " + e.what());
  }
  return c;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"step", step}, {"lambda", lambda}, {"lr", learning_rate},
          {"rgb_loss", rgb_loss}, {"layer_loss", layer_loss}, {"train_psnr", train_psnr}};
}

double rgb_loss(std::span<const Vec3> target, std::span<const Vec3> coarse, std::span<const Vec3> fine) {
  if (coarse.size() != target.size() || fine.size() != target.size()) {
    throw ShapeError("rgb_loss: color arrays differ in length");
  }
  double s = 0.0;
  for (std::size_t r = 0; r < target.size(); ++r) s += (target[r] - coarse[r]).squaredNorm() + (target[r] - fine[r]).squaredNorm();
  return s;
}

double layer_loss(std::span<const int> labels, std::span<const std::vector<double>> alphas,
                  std::span<const int> layer_ids) {
  if (alphas.size() != labels.size()) throw ShapeError("layer_loss: one alpha vector per ray expected");
  double s = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (alphas[r].size() != layer_ids.size()) throw ShapeError("layer_loss: one alpha per layer expected");
    for (std::size_t i = 0; i < layer_ids.size(); ++i) {
      const double omega = labels[r] == layer_ids[i] ? 1.0 : 0.0;
      s += 0.5 * (omega - alphas[r][i]) * (omega - alphas[r][i]);
    }
  }
  return s;
}

std::vector<BoundingBoxTrack> training_tracks(const Dataset& dataset, std::span<const BoundingBoxTrack> tracks) {
  auto find = [&](int id) -> const BoundingBoxTrack* {
    for (const auto& t : tracks)
      if (t.entity_id == id) return &t;
    return dataset.track(id);
  };
  std::vector<BoundingBoxTrack> out;
  if (const auto* bg = find(0)) {
    out.push_back(*bg);
  } else {
    out.push_back({0, std::vector<Aabb>(dataset.num_frames, dataset.scene_bounds)});
  }
  for (int id : dataset.entity_ids) {
    const auto* t = find(id);
    if (t == nullptr) throw InvalidInput("no box track for entity " + std::to_string(id));
    out.push_back(*t);
  }
  return out;
}

std::vector<const StNerfParams<float>*> network_list(const SceneModel& model) {
  std::vector<const StNerfParams<float>*> out;
  for (const auto& l : model.layers) out.push_back(&l);
  return out;
}

namespace {

std::vector<int> resolve_cameras(const Dataset& dataset, const std::vector<int>& ids) {
  std::vector<int> out;
  if (ids.empty()) {
    for (std::size_t i = 0; i < dataset.cameras.size(); ++i) out.push_back(static_cast<int>(i));
  } else {
    for (int id : ids) out.push_back(dataset.camera_index(id));
  }
  return out;
}

std::vector<int> layer_ids(const std::vector<BoundingBoxTrack>& tracks) {
  std::vector<int> ids;
  for (const auto& t : tracks) ids.push_back(t.entity_id);
  return ids;
}

void add_into(StNerfParams<float>& total, const StNerfParams<float>& part) {
  auto dst = total.networks();
  auto src = part.networks();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    for (std::size_t l = 0; l < dst[k]->layers.size(); ++l) {
      auto& a = dst[k]->layers[l];
      const auto& b = src[k]->layers[l];
      for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight.data()[i] += b.weight.data()[i];
      for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
    }
  }
}

}  // namespace

Trainer::Trainer(const Dataset& dataset, std::vector<BoundingBoxTrack> tracks, TrainConfig config)
    : dataset_(dataset),
      config_(std::move(config)),
      camera_indices_(resolve_cameras(dataset, config_.train_cameras)),
      sampler_(dataset, camera_indices_, layer_ids(tracks)) {
  config_.validate();
  model_.tracks = std::move(tracks);
  model_.cameras = dataset.cameras;
  model_.num_frames = dataset.num_frames;
  model_.fps = dataset.fps;
  for (const auto& t : model_.tracks) {
    FieldConfig fc = config_.field;
    if (t.entity_id == 0 && config_.static_background) fc.use_deform = false;
    model_.layers.push_back(make_field<float>(t.entity_id, fc, config_.seed));
  }
  model_.validate();
  if (config_.learning_rate.horizon <= 0) {
    config_.learning_rate.horizon = std::max<std::int64_t>(1, static_cast<std::int64_t>(config_.epochs) * steps_per_epoch());
  }
  model_.metadata = {{"train", train_config_to_json(config_)}, {"render", render_config_to_json(config_.render)}};
  for (auto& layer : model_.layers) {
    std::vector<AdamState<float>> states;
    for (const auto* net : layer.networks()) states.push_back(AdamState<float>::for_params(*net, config_.adam));
    adam_.push_back(std::move(states));
  }
}

int Trainer::steps_per_epoch() const {
  if (config_.steps_per_epoch > 0) return config_.steps_per_epoch;
  return std::max<int>(1, static_cast<int>(sampler_.labeled_pixels() / static_cast<std::size_t>(config_.rays_per_batch)));
}

std::vector<std::vector<LayerInstance>> Trainer::contexts() const {
  std::vector<std::vector<LayerInstance>> out;
  for (int t = 0; t < model_.num_frames; ++t) out.push_back(layers_at_frame(model_.tracks, t, model_.num_frames));
  return out;
}

template <typename T>
BatchLoss render_loss_backward(BatchRenderer<T>& renderer, std::span<const RenderRay> rays,
                               std::span<const TrainingRay> targets, std::span<const int> layer_ids, double lambda,
                               double norm, std::span<StNerfParams<T>* const> gradients) {
  if (rays.size() != targets.size()) throw ShapeError("render_loss_backward: one target per ray expected");
  renderer.forward(rays, true);
  BatchLoss loss;
  std::vector<Vec3> dcolor[2];
  std::vector<std::vector<double>> dalpha[2];
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto& tr = targets[r];
    for (int s = 0; s < 2; ++s) {
      const Vec3 diff = renderer.color(s, static_cast<int>(r)) - tr.color;
      loss.rgb += diff.squaredNorm();
      if (s == kFine) loss.fine_sq += diff.squaredNorm();
      dcolor[s].push_back((1.0 - lambda) * 2.0 * diff / norm);
      const auto alpha = renderer.layer_alpha(s, static_cast<int>(r));
      if (alpha.size() != layer_ids.size()) throw ShapeError("render_loss_backward: one layer id per instance expected");
      std::vector<double> da(alpha.size(), 0.0);
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (layer_ids[i] == 0) continue;  // the background is not alpha-supervised
        const double omega = tr.label == layer_ids[i] ? 1.0 : 0.0;
        loss.layer += 0.5 * (omega - alpha[i]) * (omega - alpha[i]);
        da[i] = lambda * (alpha[i] - omega) / norm;
      }
      dalpha[s].push_back(std::move(da));
    }
  }
  renderer.backward(dcolor, dalpha, gradients);
  return loss;
}

template BatchLoss render_loss_backward<float>(BatchRenderer<float>&, std::span<const RenderRay>,
                                               std::span<const TrainingRay>, std::span<const int>, double, double,
                                               std::span<StNerfParams<float>* const>);
template BatchLoss render_loss_backward<double>(BatchRenderer<double>&, std::span<const RenderRay>,
                                                std::span<const TrainingRay>, std::span<const int>, double, double,
                                                std::span<StNerfParams<double>* const>);

StepReport Trainer::accumulate(std::span<const TrainingRay> batch, double lambda,
                               std::vector<StNerfParams<float>>& grads) const {
  const int n = static_cast<int>(batch.size());
  const double norm = config_.mean_reduction ? static_cast<double>(n) : 1.0;
  const double lam = config_.layer_loss ? lambda : 0.0;
  const auto networks = network_list(model_);
  const auto ctx = contexts();
  const int chunk = config_.chunk_rays;
  const int chunks = (n + chunk - 1) / chunk;
  std::vector<int> ids = layer_ids(model_.tracks);

  struct ChunkOut {
    std::vector<StNerfParams<float>> grads;
    BatchLoss loss;
  };
  std::vector<ChunkOut> outs(chunks);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&]() {
    try {
      BatchRenderer<float> renderer(networks, ctx, config_.render);
      std::vector<RenderRay> rays;
      for (int c = next++; c < chunks; c = next++) {
        const int begin = c * chunk;
        const int end = std::min(n, begin + chunk);
        rays.clear();
        for (int i = begin; i < end; ++i) {
          const auto& tr = batch[i];
          const auto& cam = dataset_.cameras[tr.camera_index];
          const Vec3 d = cam.direction_for(tr.pixel % cam.width, tr.pixel / cam.width);
          rays.push_back({cam.position, d,
                          hash_key({config_.seed, static_cast<std::uint64_t>(step_), static_cast<std::uint64_t>(i)}),
                          tr.frame});
        }
        ChunkOut& out = outs[c];
        out.grads.clear();
        for (const auto& l : model_.layers) out.grads.push_back(l.zeros_like());
        std::vector<StNerfParams<float>*> slots;
        for (auto& g : out.grads) slots.push_back(&g);
        out.loss = render_loss_backward(renderer, std::span<const RenderRay>(rays), batch.subspan(begin, end - begin),
                                        ids, lam, norm, std::span<StNerfParams<float>* const>(slots));
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = chunks;
    }
  };
  const int threads = std::max(1, std::min(config_.threads, chunks));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Fixed chunk order keeps the sum independent of the worker count.
  grads.clear();
  for (const auto& l : model_.layers) grads.push_back(l.zeros_like());
  StepReport rep;
  double rgb = 0.0, layer = 0.0, fine = 0.0;
  for (const auto& out : outs) {
    for (std::size_t k = 0; k < grads.size(); ++k) add_into(grads[k], out.grads[k]);
    rgb += out.loss.rgb;
    layer += out.loss.layer;
    fine += out.loss.fine_sq;
  }
  rep.rgb_loss = rgb / norm;
  rep.layer_loss = layer / norm;
  rep.loss = (1.0 - lam) * rep.rgb_loss + lam * rep.layer_loss;
  rep.fine_mse = fine / (3.0 * n);
  rep.lambda = lam;
  rep.learning_rate = config_.learning_rate.at(step_);
  return rep;
}

StepReport Trainer::gradients(std::span<const TrainingRay> batch, double lambda,
                              std::vector<StNerfParams<float>>& out) const {
  return accumulate(batch, lambda, out);
}

StepReport Trainer::step_on(std::span<const TrainingRay> batch, double lambda) {
  std::vector<StNerfParams<float>> grads;
  StepReport rep = accumulate(batch, lambda, grads);
  if (!std::isfinite(rep.loss)) {
    rep.aborted = true;
    rep.diagnostics = "non-finite loss at step " + std::to_string(step_);
  }
  for (std::size_t l = 0; l < grads.size() && !rep.aborted; ++l) {
    for (const auto* g : grads[l].networks()) {
      const std::string bad = find_non_finite(*g);
      if (!bad.empty()) {
        rep.aborted = true;
        rep.diagnostics = "layer " + std::to_string(model_.layers[l].entity_id) + ": " + bad;
        break;
      }
    }
  }
  if (rep.aborted) {
    warn("training step aborted, parameters unchanged: " + rep.diagnostics);
    return rep;
  }
  for (std::size_t l = 0; l < model_.layers.size(); ++l) {
    auto params = model_.layers[l].networks();
    auto g = grads[l].networks();
    for (std::size_t k = 0; k < params.size(); ++k) adam_step(adam_[l][k], *params[k], *g[k], rep.learning_rate);
  }
  ++step_;
  return rep;
}

StepReport Trainer::step(double lambda) {
  CounterRng rng(hash_key({config_.seed, 0x62617463ULL, static_cast<std::uint64_t>(step_)}));
  const auto batch = sampler_.sample(config_.rays_per_batch, config_.motion_aware, rng);
  return step_on(batch, lambda);
}

std::vector<EpochRecord> Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch,
                                      const std::atomic<bool>* cancel) {
  std::vector<EpochRecord> history;
  const int steps = steps_per_epoch();
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda = config_.lambda_at(epoch);
    double mse = 0.0;
    int done = 0;
    for (int s = 0; s < steps; ++s) {
      if (cancel != nullptr && cancel->load()) break;
      const StepReport rep = step(rec.lambda);
      if (rep.aborted) continue;
      rec.rgb_loss += rep.rgb_loss;
      rec.layer_loss += rep.layer_loss;
      rec.learning_rate = rep.learning_rate;
      mse += rep.fine_mse;
      ++done;
    }
    if (done > 0) {
      rec.rgb_loss /= done;
      rec.layer_loss /= done;
      rec.train_psnr = psnr_from_mse(mse / done);
    }
    rec.step = step_;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (cancel != nullptr && cancel->load()) break;
  }
  return history;
}

EvalReport evaluate_views(const SceneModel& model, const Dataset& dataset, std::span<const int> camera_ids,
                          std::span<const int> frames, const RenderConfig& render, int threads) {
  EvalReport rep;
  std::vector<int> frame_list(frames.begin(), frames.end());
  if (frame_list.empty())
    for (int t = 0; t < dataset.num_frames; ++t) frame_list.push_back(t);
  const auto networks = network_list(model);
  for (const auto& t : model.tracks)
    if (t.entity_id != 0) rep.layer_ids.push_back(t.entity_id);
  std::vector<double> inter(rep.layer_ids.size(), 0.0), uni(rep.layer_ids.size(), 0.0);
  for (int id : camera_ids) {
    const int c = dataset.camera_index(id);
    for (int t : frame_list) {
      const auto layers = layers_at_frame(model.tracks, t, model.num_frames);
      const auto out = render_image(dataset.cameras[c], networks, layers, render, threads, true);
      const auto m = compute_image_metrics(out.image, dataset.images[c][t]);
      rep.psnr += m.psnr;
      rep.ssim += m.ssim;
      rep.mae += m.mae;
      ++rep.views;
      if (dataset.labels.empty()) continue;
      const auto& labels = dataset.labels[c][t];
      const std::size_t pixels = labels.labels.size();
      for (std::size_t p = 0; p < pixels; ++p) {
        // Predicted label: the layer holding the largest share of the
        // pixel's weight, unless the leftover transmittance is larger.
        double best = 1.0;
        for (std::size_t l = 0; l < layers.size(); ++l) best -= out.layer_weight[l].rgb[3 * p];
        int predicted = 0;
        for (std::size_t l = 0; l < layers.size(); ++l) {
          const double w = out.layer_weight[l].rgb[3 * p];
          if (w > best) {
            best = w;
            predicted = model.tracks[l].entity_id;
          }
        }
        for (std::size_t i = 0; i < rep.layer_ids.size(); ++i) {
          const bool a = predicted == rep.layer_ids[i];
          const bool b = labels.labels[p] == rep.layer_ids[i];
          inter[i] += a && b;
          uni[i] += a || b;
        }
      }
    }
  }
  if (rep.views > 0) {
    rep.psnr /= rep.views;
    rep.ssim /= rep.views;
    rep.mae /= rep.views;
  }
  for (std::size_t i = 0; i < rep.layer_ids.size(); ++i) rep.layer_iou.push_back(uni[i] > 0 ? inter[i] / uni[i] : 1.0);
  return rep;
}

}  // namespace stnerf
