#include "stnerf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "stnerf/error.hpp"

namespace stnerf {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_taps(int size) {
  std::vector<double> taps(size);
  const double mid = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    taps[i] = std::exp(-(i - mid) * (i - mid) / (2.0 * kSigma * kSigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable "valid" filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int ow = w - k + 1;
  const int oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += taps[i] * plane[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += taps[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

double ssim_channel(const Image& a, const Image& b, int channel) {
  const int w = a.width;
  const int h = a.height;
  // Images smaller than the window use a window clipped to the image.
  const int k = std::min({kWindow, w, h});
  const auto taps = gaussian_taps(k);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a.rgb[i * 3 + channel];
    y[i] = b.rgb[i * 3 + channel];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, w, h, taps);
  const auto my = filter_valid(y, w, h, taps);
  const auto mxx = filter_valid(xx, w, h, taps);
  const auto myy = filter_valid(yy, w, h, taps);
  const auto mxy = filter_valid(xy, w, h, taps);
  double sum = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    sum += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
  }
  return sum / static_cast<double>(mx.size());
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

ImageMetrics compute_image_metrics(const Image& rendered, const Image& reference) {
  if (rendered.width != reference.width || rendered.height != reference.height ||
      rendered.rgb.size() != reference.rgb.size()) {
    throw InvalidInput("compute_image_metrics: image dimensions differ (" + std::to_string(rendered.width) + "x" +
                       std::to_string(rendered.height) + " vs " + std::to_string(reference.width) + "x" +
                       std::to_string(reference.height) + ")");
  }
  if (rendered.rgb.empty()) throw InvalidInput("compute_image_metrics: empty image");
  ImageMetrics m;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < rendered.rgb.size(); ++i) {
    const double d = static_cast<double>(rendered.rgb[i]) - static_cast<double>(reference.rgb[i]);
    se += d * d;
    ae += std::abs(d);
  }
  const double count = static_cast<double>(rendered.rgb.size());
  m.mse = se / count;
  m.mae = ae / count;
  m.psnr = psnr_from_mse(m.mse);
  m.ssim = (ssim_channel(rendered, reference, 0) + ssim_channel(rendered, reference, 1) +
            ssim_channel(rendered, reference, 2)) /
           3.0;
  return m;
}

}  // namespace stnerf
