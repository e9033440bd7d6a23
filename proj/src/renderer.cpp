#include "stnerf/renderer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "stnerf/error.hpp"
#include "stnerf/sampling.hpp"

namespace stnerf {

RenderConfig RenderConfig::desk() {
  RenderConfig c;
  c.coarse_samples = 16;
  c.fine_samples = 16;
  return c;
}

RenderConfig RenderConfig::preview() {
  RenderConfig c;
  c.coarse_samples = 8;
  c.fine_samples = 8;
  return c;
}

void RenderConfig::validate() const {
  if (coarse_samples < 1) throw InvalidInput("render config: coarse_samples must be at least 1");
  if (fine_samples < 0) throw InvalidInput("render config: fine_samples must be nonnegative");
  if (!(near >= 0.0) || !(far > near)) throw InvalidInput("render config: need 0 <= near < far");
  if (!background.allFinite()) throw InvalidInput("render config: background must be finite");
}

std::vector<LayerInstance> layers_at_frame(std::span<const BoundingBoxTrack> tracks, int frame, int num_frames) {
  std::vector<LayerInstance> out;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    LayerInstance l;
    l.network = static_cast<int>(i);
    l.key = tracks[i].entity_id;
    l.source_box = tracks[i].at(frame);
    l.world_box = l.source_box;
    l.frame = frame;
    l.time = normalized_time(frame, num_frames);
    out.push_back(l);
  }
  return out;
}

std::uint64_t ray_key(std::uint64_t seed, int camera_id, int pixel_index) {
  return hash_key({seed, static_cast<std::uint64_t>(camera_id), static_cast<std::uint64_t>(pixel_index)});
}

namespace {

std::uint64_t segment_key(std::uint64_t ray, const LayerInstance& inst, int stage) {
  return hash_key({ray, static_cast<std::uint64_t>(inst.frame), static_cast<std::uint64_t>(inst.key),
                   static_cast<std::uint64_t>(stage)});
}

}  // namespace

template <typename T>
BatchRenderer<T>::BatchRenderer(std::vector<const StNerfParams<T>*> networks,
                                std::vector<std::vector<LayerInstance>> contexts, RenderConfig config)
    : networks_(std::move(networks)), contexts_(std::move(contexts)), config_(config) {
  config_.validate();
  for (const auto& ctx : contexts_) {
    for (const auto& inst : ctx) {
      if (inst.network < 0 || inst.network >= static_cast<int>(networks_.size()) || networks_[inst.network] == nullptr) {
        throw InvalidInput("layer instance refers to missing network " + std::to_string(inst.network));
      }
      if (!inst.source_box.valid()) throw InvalidInput("layer " + std::to_string(inst.key) + " has an empty box");
      if (!(inst.density_scale >= 0.0)) throw InvalidInput("density scale must be nonnegative");
    }
  }
}

template <typename T>
void BatchRenderer<T>::add_samples(int stage, int ray_index, const RenderRay& ray, int segment,
                                   std::span<const double> depths) {
  const auto& state = rays_[ray_index];
  const LayerInstance& inst = contexts_[ray.context][state.segments[segment].layer];
  auto& batch = batches_[stage][inst.network];
  Vec3 dir = ray.direction;
  if (inst.pullback) dir = (inst.pullback->linear * ray.direction).normalized();
  for (double s : depths) {
    const Vec3 p = ray.origin + s * ray.direction;
    const Vec3 q = inst.source_box.normalize(inst.pullback ? inst.pullback->apply(p) : p);
    const int column = static_cast<int>(batch.time.size());
    for (int k = 0; k < 3; ++k) {
      batch.pos.push_back(static_cast<T>(q[k]));
      batch.dir.push_back(static_cast<T>(dir[k]));
    }
    batch.time.push_back(static_cast<T>(inst.time));
    pending_[ray_index].emplace_back(s, segment, SampleRef{inst.network, column});
  }
}

template <typename T>
void BatchRenderer<T>::evaluate(int stage, bool record) {
  for (std::size_t n = 0; n < networks_.size(); ++n) {
    auto& b = batches_[stage][n];
    const int count = static_cast<int>(b.time.size());
    if (count == 0) continue;
    b.query.resize(count);
    for (int j = 0; j < count; ++j) {
      for (int k = 0; k < 3; ++k) {
        b.query.position(k, j) = b.pos[3 * j + k];
        b.query.direction(k, j) = b.dir[3 * j + k];
      }
    }
    std::copy(b.time.begin(), b.time.end(), b.query.time.data());
    const Stage s = stage == kCoarse ? Stage::kCoarse : Stage::kFine;
    b.result = evaluate_batch(*networks_[n], s, b.query, record ? &b.tape : nullptr);
  }
}

template <typename T>
void BatchRenderer<T>::gather(int stage) {
  for (std::size_t r = 0; r < rays_.size(); ++r) {
    auto& state = rays_[r];
    auto& pend = pending_[r];
    std::sort(pend.begin(), pend.end(), [](const auto& a, const auto& b) {
      return std::get<0>(a) < std::get<0>(b) || (std::get<0>(a) == std::get<0>(b) && std::get<1>(a) < std::get<1>(b));
    });
    RaySamples& samples = state.samples[stage];
    samples = RaySamples{};
    state.refs[stage].clear();
    const auto& ctx = contexts_[ray_inputs_[r].context];
    for (const auto& [s, seg, ref] : pend) {
      const auto& res = batches_[stage][ref.network].result;
      const double scale = ctx[state.segments[seg].layer].density_scale;
      const Vec3 rgb(res.rgb(0, ref.column), res.rgb(1, ref.column), res.rgb(2, ref.column));
      samples.push_back(s, seg, scale * static_cast<double>(res.sigma(0, ref.column)), rgb);
      state.refs[stage].push_back(ref);
    }
    pend.clear();
    state.result[stage] = composite(samples, state.segments, config_.background);
  }
}

template <typename T>
void BatchRenderer<T>::forward(std::span<const RenderRay> rays, bool record) {
  ray_inputs_.assign(rays.begin(), rays.end());
  rays_.assign(rays.size(), RayState{});
  pending_.assign(rays.size(), {});
  for (auto& stage : batches_) stage.assign(networks_.size(), NetworkBatch{});

  std::vector<Aabb> boxes;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto& ray = rays[r];
    if (ray.context < 0 || ray.context >= static_cast<int>(contexts_.size())) {
      throw InvalidInput("ray refers to missing layer context " + std::to_string(ray.context));
    }
    const auto& ctx = contexts_[ray.context];
    boxes.clear();
    for (const auto& inst : ctx) boxes.push_back(inst.world_box);
    rays_[r].segments = segment_ray(ray.origin, ray.direction, boxes, config_.near, config_.far);
    for (std::size_t k = 0; k < rays_[r].segments.size(); ++k) {
      const auto& seg = rays_[r].segments[k];
      CounterRng rng(segment_key(ray.key, ctx[seg.layer], kCoarse));
      const auto depths = sample_coarse(seg.near, seg.far, config_.coarse_samples, rng);
      add_samples(kCoarse, static_cast<int>(r), ray, static_cast<int>(k), depths);
    }
  }
  evaluate(kCoarse, record);
  gather(kCoarse);

  std::vector<double> depths, sigma, delta;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto& state = rays_[r];
    const auto& coarse = state.samples[kCoarse];
    const auto& res = state.result[kCoarse];
    for (std::size_t k = 0; k < state.segments.size(); ++k) {
      depths.clear();
      sigma.clear();
      delta.clear();
      for (std::size_t j = 0; j < coarse.size(); ++j) {
        if (coarse.layer[j] != static_cast<int>(k)) continue;
        depths.push_back(coarse.depth[j]);
        sigma.push_back(coarse.sigma[j]);
        delta.push_back(res.layer_delta[j]);
      }
      const auto& seg = state.segments[k];
      CounterRng rng(segment_key(rays[r].key, contexts_[rays[r].context][seg.layer], kFine));
      auto merged = sample_fine(seg.far, depths, segment_weights(sigma, delta), config_.fine_samples, rng);
      merged.insert(merged.end(), depths.begin(), depths.end());
      std::sort(merged.begin(), merged.end());
      add_samples(kFine, static_cast<int>(r), rays[r], static_cast<int>(k), merged);
    }
  }
  evaluate(kFine, record);
  gather(kFine);
}

template <typename T>
std::vector<double> BatchRenderer<T>::layer_alpha(int stage, int ray) const {
  const auto& state = rays_[ray];
  std::vector<double> out(contexts_[ray_inputs_[ray].context].size(), 0.0);
  for (std::size_t k = 0; k < state.segments.size(); ++k) out[state.segments[k].layer] = state.result[stage].layer_alpha[k];
  return out;
}

template <typename T>
std::vector<double> BatchRenderer<T>::layer_weight(int stage, int ray) const {
  const auto& state = rays_[ray];
  std::vector<double> out(contexts_[ray_inputs_[ray].context].size(), 0.0);
  const auto& samples = state.samples[stage];
  for (std::size_t j = 0; j < samples.size(); ++j) {
    out[state.segments[samples.layer[j]].layer] += state.result[stage].weight[j];
  }
  return out;
}

template <typename T>
void BatchRenderer<T>::backward(const std::vector<Vec3> (&dcolor)[2],
                                const std::vector<std::vector<double>> (&dalpha)[2],
                                std::span<StNerfParams<T>* const> gradients) {
  if (gradients.size() != networks_.size()) throw ShapeError("backward: one gradient slot per network expected");
  for (int stage = 0; stage < 2; ++stage) {
    const bool has_color = !dcolor[stage].empty();
    const bool has_alpha = !dalpha[stage].empty();
    if ((has_color && dcolor[stage].size() != rays_.size()) || (has_alpha && dalpha[stage].size() != rays_.size())) {
      throw ShapeError("backward: one gradient entry per ray expected");
    }
    std::vector<Matrix<T>> dsigma(networks_.size());
    std::vector<Matrix<T>> drgb(networks_.size());
    for (std::size_t n = 0; n < networks_.size(); ++n) {
      const int count = batches_[stage][n].query.size();
      dsigma[n].resize(1, count);
      drgb[n].resize(3, count);
    }
    std::vector<double> dseg;
    for (std::size_t r = 0; r < rays_.size(); ++r) {
      const auto& state = rays_[r];
      if (state.segments.empty()) continue;
      const auto& ctx = contexts_[ray_inputs_[r].context];
      dseg.assign(state.segments.size(), 0.0);
      if (has_alpha) {
        const auto& da = dalpha[stage][r];
        if (da.size() != ctx.size()) throw ShapeError("backward: one alpha gradient per layer instance expected");
        for (std::size_t k = 0; k < state.segments.size(); ++k) dseg[k] = da[state.segments[k].layer];
      }
      const Vec3 dc = has_color ? dcolor[stage][r] : Vec3::Zero();
      const auto g = composite_backward(state.samples[stage], state.result[stage], config_.background, dc, dseg);
      for (std::size_t j = 0; j < g.sigma.size(); ++j) {
        const auto ref = state.refs[stage][j];
        const double scale = ctx[state.segments[state.samples[stage].layer[j]].layer].density_scale;
        dsigma[ref.network](0, ref.column) = static_cast<T>(g.sigma[j] * scale);
        for (int k = 0; k < 3; ++k) drgb[ref.network](k, ref.column) = static_cast<T>(g.rgb[j][k]);
      }
    }
    for (std::size_t n = 0; n < networks_.size(); ++n) {
      auto& b = batches_[stage][n];
      if (gradients[n] == nullptr || b.query.size() == 0) continue;
      const Stage s = stage == kCoarse ? Stage::kCoarse : Stage::kFine;
      field_backward(*networks_[n], s, b.query, b.tape, dsigma[n], drgb[n], *gradients[n]);
    }
  }
}

template <typename T>
PixelResult render_pixel(const CameraModel& camera, Pixel pixel, std::span<const StNerfParams<T>* const> networks,
                         const std::vector<LayerInstance>& layers, const RenderConfig& config) {
  const Ray ray = generate_ray(camera, 0, pixel);
  const int index = static_cast<int>(std::lround(pixel.y)) * camera.width + static_cast<int>(std::lround(pixel.x));
  BatchRenderer<T> renderer({networks.begin(), networks.end()}, {layers}, config);
  const RenderRay rr{ray.origin, ray.direction, ray_key(config.seed, camera.id, index), 0};
  renderer.forward(std::span(&rr, 1), false);
  PixelResult out;
  out.color = renderer.color(kFine, 0);
  out.coarse_color = renderer.color(kCoarse, 0);
  out.layer_alpha[kCoarse] = renderer.layer_alpha(kCoarse, 0);
  out.layer_alpha[kFine] = renderer.layer_alpha(kFine, 0);
  return out;
}

RenderOutput render_image(const CameraModel& camera, std::span<const StNerfParams<float>* const> networks,
                          const std::vector<LayerInstance>& layers, const RenderConfig& config, int threads,
                          bool with_alpha) {
  camera.validate();
  const int w = camera.width;
  const int h = camera.height;
  const int pixels = w * h;
  constexpr int kTile = 512;
  const int tiles = (pixels + kTile - 1) / kTile;
  RenderOutput out;
  out.image = Image(w, h);
  out.coarse_image = Image(w, h);
  if (with_alpha) {
    out.layer_alpha.assign(layers.size(), Image(w, h));
    out.layer_weight.assign(layers.size(), Image(w, h));
  }

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    try {
      BatchRenderer<float> renderer({networks.begin(), networks.end()}, {layers}, config);
      std::vector<RenderRay> rays;
      for (int tile = next++; tile < tiles; tile = next++) {
        const int begin = tile * kTile;
        const int end = std::min(pixels, begin + kTile);
        rays.clear();
        for (int i = begin; i < end; ++i) {
          const Vec3 d = camera.direction_for(i % w, i / w);
          rays.push_back({camera.position, d, ray_key(config.seed, camera.id, i), 0});
        }
        renderer.forward(rays, false);
        for (int i = begin; i < end; ++i) {
          const int r = i - begin;
          float* px = out.image.rgb.data() + 3 * static_cast<std::size_t>(i);
          float* cpx = out.coarse_image.rgb.data() + 3 * static_cast<std::size_t>(i);
          for (int k = 0; k < 3; ++k) {
            px[k] = static_cast<float>(renderer.color(kFine, r)[k]);
            cpx[k] = static_cast<float>(renderer.color(kCoarse, r)[k]);
          }
          if (with_alpha) {
            const auto a = renderer.layer_alpha(kFine, r);
            const auto wt = renderer.layer_weight(kFine, r);
            for (std::size_t l = 0; l < a.size(); ++l) {
              float* apx = out.layer_alpha[l].rgb.data() + 3 * static_cast<std::size_t>(i);
              apx[0] = apx[1] = apx[2] = static_cast<float>(a[l]);
              float* wpx = out.layer_weight[l].rgb.data() + 3 * static_cast<std::size_t>(i);
              wpx[0] = wpx[1] = wpx[2] = static_cast<float>(wt[l]);
            }
          }
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = tiles;
    }
  };
  const int n_threads = std::max(1, std::min(threads <= 0 ? static_cast<int>(std::thread::hardware_concurrency()) : threads, tiles));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

template class BatchRenderer<float>;
template class BatchRenderer<double>;
template PixelResult render_pixel<float>(const CameraModel&, Pixel, std::span<const StNerfParams<float>* const>,
                                         const std::vector<LayerInstance>&, const RenderConfig&);
template PixelResult render_pixel<double>(const CameraModel&, Pixel, std::span<const StNerfParams<double>* const>,
                                          const std::vector<LayerInstance>&, const RenderConfig&);

}  // namespace stnerf
