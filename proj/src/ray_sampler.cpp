#include "stnerf/ray_sampler.hpp"

#include <algorithm>

#include "stnerf/error.hpp"
#include "stnerf/log.hpp"

namespace stnerf {

RaySampler::RaySampler(const Dataset& dataset, std::span<const int> camera_indices, std::span<const int> entity_ids)
    : dataset_(dataset), cameras_(camera_indices.begin(), camera_indices.end()) {
  if (cameras_.empty()) throw InvalidInput("ray sampler: no training cameras");
  labels_.push_back(0);
  for (int id : entity_ids)
    if (id != 0) labels_.push_back(id);
  pools_.assign(labels_.size(), {});
  const std::uint64_t frames = static_cast<std::uint64_t>(dataset.num_frames);
  for (int c : cameras_) {
    if (c < 0 || c >= static_cast<int>(dataset.cameras.size())) {
      throw InvalidInput("ray sampler: camera index " + std::to_string(c) + " out of range");
    }
    const auto& cam = dataset.cameras[c];
    const std::uint64_t pixels = static_cast<std::uint64_t>(cam.width) * cam.height;
    for (int t = 0; t < dataset.num_frames; ++t) {
      const std::uint64_t base = (static_cast<std::uint64_t>(c) * frames + t) * (1ULL << 32);
      for (std::uint64_t p = 0; p < pixels; ++p) {
        const int label = dataset.labels.empty() ? 0 : dataset.labels[c][t].labels[p];
        auto it = std::find(labels_.begin(), labels_.end(), label);
        pools_[it == labels_.end() ? 0 : it - labels_.begin()].push_back(base + p);
      }
    }
  }
  for (std::size_t i = 1; i < labels_.size();) {
    if (pools_[i].empty()) {
      warn("entity " + std::to_string(labels_[i]) + " has no labeled pixels in the training views; excluded from ray sampling");
      labels_.erase(labels_.begin() + i);
      pools_.erase(pools_.begin() + i);
    } else {
      entity_total_ += pools_[i].size();
      ++i;
    }
  }
}

std::size_t RaySampler::pool_size(int label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == label) return pools_[i].size();
  return 0;
}

std::size_t RaySampler::total_pixels() const { return pools_[0].size() + entity_total_; }

std::size_t RaySampler::labeled_pixels() const { return entity_total_; }

TrainingRay RaySampler::decode(std::uint64_t code) const {
  TrainingRay r;
  const std::uint64_t view = code >> 32;
  r.pixel = static_cast<int>(code & 0xffffffffULL);
  r.camera_index = static_cast<int>(view / static_cast<std::uint64_t>(dataset_.num_frames));
  r.frame = static_cast<int>(view % static_cast<std::uint64_t>(dataset_.num_frames));
  r.label = dataset_.labels.empty() ? 0 : dataset_.labels[r.camera_index][r.frame].labels[r.pixel];
  const float* px = dataset_.images[r.camera_index][r.frame].rgb.data() + 3 * static_cast<std::size_t>(r.pixel);
  r.color = Vec3(px[0], px[1], px[2]);
  return r;
}

std::vector<TrainingRay> RaySampler::sample(int count, bool motion_aware, CounterRng& rng) const {
  if (count < 1) throw InvalidInput("ray sampler: batch size must be at least 1");
  std::vector<TrainingRay> out;
  out.reserve(count);
  const std::size_t bg = pools_[0].size();
  auto draw = [&](std::size_t n) { return static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)); };
  // Index into the concatenation of pools_[first..].
  auto pick = [&](std::size_t first, std::size_t index) {
    for (std::size_t i = first; i < pools_.size(); ++i) {
      if (index < pools_[i].size()) return pools_[i][index];
      index -= pools_[i].size();
    }
    return pools_.back().back();
  };
  if (!motion_aware || entity_total_ == 0 || bg == 0) {
    const std::size_t total = total_pixels();
    for (int k = 0; k < count; ++k) out.push_back(decode(pick(0, draw(total))));
    return out;
  }
  const int n_entity = count / 2;
  for (int k = 0; k < count - n_entity; ++k) out.push_back(decode(pools_[0][draw(bg)]));
  for (int k = 0; k < n_entity; ++k) out.push_back(decode(pick(1, draw(entity_total_))));
  return out;
}

}  // namespace stnerf
