#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "stnerf/geometry.hpp"

namespace stnerf {

// Counter-based generator: the n-th draw is a pure function of (key, n), so
// any pixel's samples can be reproduced without replaying other pixels.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive hash of a key tuple.
std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts);

// Where a ray crosses one layer's box.
struct RaySegment {
  int layer = 0;  // index of the box in the list given to segment_ray
  double near = 0.0;
  double far = 0.0;
};

// Slab test against every box.  Misses, tangent crossings and boxes behind
// the origin are dropped; surviving segments are clipped to [near, far] and
// kept only if still strictly non-empty.
std::vector<RaySegment> segment_ray(const Vec3& origin, const Vec3& direction, std::span<const Aabb> boxes,
                                    double near = 0.0, double far = 1e30);

// One uniform draw in each of n equal bins of [near, far].  Throws
// InvalidInput for n < 1 or far <= near.
std::vector<double> sample_coarse(double near, double far, int n, CounterRng& rng);
std::vector<double> sample_coarse(double near, double far, std::span<const double> u);

// Inverse transform sampling of a piecewise-constant density over bins
// [edges[j], edges[j+1]) with nonnegative weights.  `u` must be sorted
// ascending in [0, 1); the result is then sorted too.  All-zero weights
// fall back to a uniform density over [edges.front(), edges.back()].
std::vector<double> inverse_cdf(std::span<const double> edges, std::span<const double> weights,
                                std::span<const double> u);

// Fine depths for one segment.  Bins start at the coarse depths; the last
// one ends at the segment exit.  u_k = (k + U_k) / n (stratified).
std::vector<double> sample_fine(double far, std::span<const double> coarse_depths,
                                std::span<const double> coarse_weights, int n, CounterRng& rng);

}  // namespace stnerf
