#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stnerf/dataset.hpp"
#include "stnerf/sampling.hpp"

namespace stnerf {

struct TrainingRay {
  int camera_index = 0;  // index into Dataset::cameras
  int frame = 0;
  int pixel = 0;  // row-major
  int label = 0;
  Vec3 color = Vec3::Zero();
};

// Pixel pools per label over the chosen cameras and all frames.
class RaySampler {
 public:
  // Entities in `entity_ids` without a single labeled pixel are dropped
  // from the pools with a warning.  Pixels with labels outside the list
  // count as background.
  RaySampler(const Dataset& dataset, std::span<const int> camera_indices, std::span<const int> entity_ids);

  // Uniform over all pixels, or, when motion-aware, half the rays from the
  // background pool and half from the entity pools in proportion to their
  // sizes (draws with replacement).
  std::vector<TrainingRay> sample(int count, bool motion_aware, CounterRng& rng) const;

  std::size_t pool_size(int label) const;
  std::size_t total_pixels() const;
  std::size_t labeled_pixels() const;  // pixels of any entity

 private:
  TrainingRay decode(std::uint64_t code) const;

  const Dataset& dataset_;
  std::vector<int> cameras_;
  std::vector<int> labels_;                      // pool labels, background first
  std::vector<std::vector<std::uint64_t>> pools_;  // aligned with labels_
  std::size_t entity_total_ = 0;
};

}  // namespace stnerf
