#include "stnerf/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stnerf/error.hpp"

namespace stnerf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x5bd1e9955bd1e995ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

std::uint64_t CounterRng::next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

std::vector<RaySegment> segment_ray(const Vec3& origin, const Vec3& direction, std::span<const Aabb> boxes,
                                    double near, double far) {
  std::vector<RaySegment> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto hit = intersect_box(origin, direction, boxes[i]);
    if (!hit) continue;
    const double a = std::max(hit->first, near);
    const double b = std::min(hit->second, far);
    if (a < b) out.push_back({static_cast<int>(i), a, b});
  }
  return out;
}

std::vector<double> sample_coarse(double near, double far, std::span<const double> u) {
  const int n = static_cast<int>(u.size());
  if (n < 1) throw InvalidInput("sample_coarse: need at least one sample");
  if (!(far > near)) throw InvalidInput("sample_coarse: degenerate segment");
  std::vector<double> s(n);
  const double width = (far - near) / n;
  for (int j = 0; j < n; ++j) {
    // Clamp so rounding can never push a draw out of its bin.
    const double lo = near + j * width;
    const double hi = j + 1 == n ? far : near + (j + 1) * width;
    s[j] = std::clamp(lo + u[j] * width, lo, hi);
  }
  return s;
}

std::vector<double> sample_coarse(double near, double far, int n, CounterRng& rng) {
  if (n < 1) throw InvalidInput("sample_coarse: need at least one sample");
  std::vector<double> u(n);
  for (double& v : u) v = rng.uniform();
  return sample_coarse(near, far, u);
}

std::vector<double> inverse_cdf(std::span<const double> edges, std::span<const double> weights,
                                std::span<const double> u) {
  const std::size_t bins = weights.size();
  if (bins == 0 || edges.size() != bins + 1) throw InvalidInput("inverse_cdf: need n + 1 edges for n weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("inverse_cdf: weights must be finite and nonnegative");
    total += w;
  }
  std::vector<double> out(u.size());
  if (total <= 0.0) {
    const double a = edges.front();
    const double b = edges.back();
    for (std::size_t k = 0; k < u.size(); ++k) out[k] = a + u[k] * (b - a);
    return out;
  }
  std::vector<double> cdf(bins + 1, 0.0);
  for (std::size_t j = 0; j < bins; ++j) cdf[j + 1] = cdf[j] + weights[j] / total;
  cdf[bins] = 1.0;
  std::size_t j = 0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    // u is sorted, so the bin index only moves forward.  Skip zero-weight
    // bins: cdf[j + 1] must strictly exceed u.
    while (j + 1 < bins && cdf[j + 1] <= u[k]) ++j;
    const double mass = cdf[j + 1] - cdf[j];
    const double f = mass > 0.0 ? std::clamp((u[k] - cdf[j]) / mass, 0.0, 1.0) : 0.0;
    out[k] = edges[j] + f * (edges[j + 1] - edges[j]);
  }
  return out;
}

std::vector<double> sample_fine(double far, std::span<const double> coarse_depths,
                                std::span<const double> coarse_weights, int n, CounterRng& rng) {
  if (n < 0) throw InvalidInput("sample_fine: negative sample count");
  if (coarse_depths.empty() || coarse_depths.size() != coarse_weights.size()) {
    throw InvalidInput("sample_fine: coarse depths and weights must match");
  }
  if (n == 0) return {};
  std::vector<double> edges(coarse_depths.begin(), coarse_depths.end());
  edges.push_back(far);
  std::vector<double> u(n);
  for (int k = 0; k < n; ++k) u[k] = (k + rng.uniform()) / n;
  return inverse_cdf(edges, coarse_weights, u);
}

}  // namespace stnerf
