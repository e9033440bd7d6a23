#pragma once

#include <span>
#include <vector>

#include "stnerf/geometry.hpp"
#include "stnerf/sampling.hpp"

namespace stnerf {

// Merged samples of one ray, sorted by depth.  `layer` indexes the ray's
// segment list; each layer owns exactly one segment.
struct RaySamples {
  std::vector<double> depth;
  std::vector<int> layer;
  std::vector<double> sigma;  // already multiplied by any density scale
  std::vector<Vec3> rgb;

  std::size_t size() const { return depth.size(); }
  void push_back(double s, int l, double density, const Vec3& color) {
    depth.push_back(s);
    layer.push_back(l);
    sigma.push_back(density);
    rgb.push_back(color);
  }
};

struct CompositeResult {
  Vec3 color = Vec3::Zero();       // includes the background term
  double alpha = 0.0;              // 1 - final transmittance
  double final_transmittance = 1.0;
  std::vector<double> delta;         // merged interval per sample
  std::vector<double> transmittance;  // before each sample
  std::vector<double> weight;         // T_j (1 - exp(-sigma_j delta_j))
  std::vector<double> layer_delta;    // interval to the next sample of the same layer
  std::vector<double> layer_alpha;    // per segment: 1 - exp(-sum sigma delta) over its own samples
};

// Interval rule: delta_j runs to the next merged sample but never past the
// end of the union-of-segments component containing sample j, so density
// never acts outside a box and gaps between boxes are empty.  Per-layer
// alpha uses only the layer's own samples and its own segment exit.
// Throws ContractViolation for unsorted depths or samples outside their
// segment.
CompositeResult composite(const RaySamples& samples, std::span<const RaySegment> segments, const Vec3& background);

struct CompositeGradient {
  std::vector<double> sigma;
  std::vector<Vec3> rgb;
};

// Gradients of dot(dcolor, color) + sum_i dlayer_alpha[i] * layer_alpha[i].
CompositeGradient composite_backward(const RaySamples& samples, const CompositeResult& forward,
                                     const Vec3& background, const Vec3& dcolor,
                                     std::span<const double> dlayer_alpha);

// Weights of one segment's samples computed from that segment alone
// (transmittance restarts at the entry); these drive fine sampling.
std::vector<double> segment_weights(std::span<const double> sigma, std::span<const double> layer_delta);

}  // namespace stnerf
