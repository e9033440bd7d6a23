#include "stnerf/compositing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stnerf/error.hpp"

namespace stnerf {

CompositeResult composite(const RaySamples& samples, std::span<const RaySegment> segments, const Vec3& background) {
  const std::size_t n = samples.size();
  const std::size_t m = segments.size();
  if (samples.layer.size() != n || samples.sigma.size() != n || samples.rgb.size() != n) {
    throw ContractViolation("composite: sample arrays differ in length");
  }
  // End of the connected component of the segment union containing each
  // segment.
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return segments[a].near < segments[b].near || (segments[a].near == segments[b].near && a < b);
  });
  std::vector<double> component_end(m, 0.0);
  for (std::size_t a = 0; a < m;) {
    std::size_t b = a;
    double end = segments[order[a]].far;
    while (b + 1 < m && segments[order[b + 1]].near <= end) end = std::max(end, segments[order[++b]].far);
    for (std::size_t k = a; k <= b; ++k) component_end[order[k]] = end;
    a = b + 1;
  }

  CompositeResult r;
  r.delta.resize(n);
  r.layer_delta.resize(n);
  r.transmittance.resize(n);
  r.weight.resize(n);
  r.layer_alpha.assign(m, 0.0);
  std::vector<int> next_same(n, -1);
  std::vector<int> last_seen(m, -1);
  for (std::size_t j = 0; j < n; ++j) {
    const int l = samples.layer[j];
    if (l < 0 || static_cast<std::size_t>(l) >= m) throw ContractViolation("composite: sample has no segment");
    const auto& seg = segments[l];
    const double s = samples.depth[j];
    if (j > 0 && s < samples.depth[j - 1]) {
      throw ContractViolation("composite: samples not sorted by depth at index " + std::to_string(j));
    }
    if (s < seg.near || s > seg.far) throw ContractViolation("composite: sample outside its segment");
    if (last_seen[l] >= 0) next_same[last_seen[l]] = static_cast<int>(j);
    last_seen[l] = static_cast<int>(j);
  }
  for (std::size_t j = 0; j < n; ++j) {
    const int l = samples.layer[j];
    const double s = samples.depth[j];
    const double next = j + 1 < n ? samples.depth[j + 1] : component_end[l];
    r.delta[j] = std::min(next, component_end[l]) - s;
    r.layer_delta[j] = (next_same[j] >= 0 ? samples.depth[next_same[j]] : segments[l].far) - s;
  }

  std::vector<double> layer_optical(m, 0.0);
  double optical = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double t = std::exp(-optical);
    const double tau = samples.sigma[j] * r.delta[j];
    r.transmittance[j] = t;
    r.weight[j] = t * -std::expm1(-tau);
    r.color += r.weight[j] * samples.rgb[j];
    optical += tau;
    layer_optical[samples.layer[j]] += samples.sigma[j] * r.layer_delta[j];
  }
  r.final_transmittance = std::exp(-optical);
  r.alpha = -std::expm1(-optical);
  r.color += r.final_transmittance * background;
  for (std::size_t i = 0; i < m; ++i) r.layer_alpha[i] = -std::expm1(-layer_optical[i]);
  return r;
}

CompositeGradient composite_backward(const RaySamples& samples, const CompositeResult& f, const Vec3& background,
                                     const Vec3& dcolor, std::span<const double> dlayer_alpha) {
  const std::size_t n = samples.size();
  if (dlayer_alpha.size() != f.layer_alpha.size()) {
    throw ShapeError("composite_backward: one alpha gradient per segment expected");
  }
  CompositeGradient g;
  g.sigma.assign(n, 0.0);
  g.rgb.assign(n, Vec3::Zero());
  // dC/dsigma_j = delta_j (T_{j+1} c_j - sum_{k>j} w_k c_k - T_end bg)
  double tail = f.final_transmittance * dcolor.dot(background);
  for (std::size_t jj = n; jj-- > 0;) {
    const double cj = dcolor.dot(samples.rgb[jj]);
    const double t_next = f.transmittance[jj] * std::exp(-samples.sigma[jj] * f.delta[jj]);
    g.sigma[jj] = f.delta[jj] * (t_next * cj - tail);
    g.rgb[jj] = f.weight[jj] * dcolor;
    tail += f.weight[jj] * cj;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const int l = samples.layer[j];
    g.sigma[j] += dlayer_alpha[l] * f.layer_delta[j] * (1.0 - f.layer_alpha[l]);
  }
  return g;
}

std::vector<double> segment_weights(std::span<const double> sigma, std::span<const double> layer_delta) {
  std::vector<double> w(sigma.size());
  double optical = 0.0;
  for (std::size_t j = 0; j < sigma.size(); ++j) {
    const double tau = sigma[j] * layer_delta[j];
    w[j] = std::exp(-optical) * -std::expm1(-tau);
    optical += tau;
  }
  return w;
}

}  // namespace stnerf
