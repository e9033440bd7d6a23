#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "stnerf/error.hpp"
#include "stnerf/metrics.hpp"

using namespace stnerf;

namespace {

// Direct 2D-window SSIM, one window position at a time.
double naive_ssim(const Image& a, const Image& b) {
  const int k = 11;
  double g[11][11];
  double norm = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      norm += g[i][j];
    }
  double total = 0;
  int count = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y + k <= a.height; ++y)
      for (int x = 0; x + k <= a.width; ++x) {
        double mx = 0, my = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            mx += g[i][j] / norm * a.at(x + j, y + i)[c];
            my += g[i][j] / norm * b.at(x + j, y + i)[c];
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const double dx = a.at(x + j, y + i)[c] - mx;
            const double dy = b.at(x + j, y + i)[c] - my;
            vx += g[i][j] / norm * dx * dx;
            vy += g[i][j] / norm * dy * dy;
            cov += g[i][j] / norm * dx * dy;
          }
        const double c1 = 1e-4, c2 = 9e-4;
        total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / count;
}

Image random_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.rgb) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("identical images") {
  const auto a = random_image(20, 16, 1);
  const auto m = compute_image_metrics(a, a);
  CHECK(std::isinf(m.psnr));
  CHECK(m.psnr > 0);
  CHECK(m.mae == 0.0);
  CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant offset of 0.1") {
  Image a(16, 16, 0.3f), b(16, 16, 0.4f);
  const auto m = compute_image_metrics(b, a);
  CHECK(m.mae == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(m.mse == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(m.psnr == doctest::Approx(20.0).epsilon(1e-5));
}

TEST_CASE("metrics match a scalar-loop reference") {
  const auto a = random_image(23, 19, 2);
  auto b = a;
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 0.1f);
  for (auto& v : b.rgb) v = std::clamp(v + n(rng), 0.0f, 1.0f);
  const auto m = compute_image_metrics(b, a);
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(b.rgb[i]) - a.rgb[i];
    se += d * d;
    ae += std::abs(d);
  }
  const double mse = se / a.rgb.size();
  CHECK(std::abs(m.mse - mse) < 1e-6);
  CHECK(std::abs(m.mae - ae / a.rgb.size()) < 1e-6);
  CHECK(std::abs(m.psnr - 10 * std::log10(1 / mse)) < 1e-6);
  CHECK(std::abs(m.ssim - naive_ssim(b, a)) < 1e-6);
}

TEST_CASE("dimension mismatch") {
  CHECK_THROWS_AS(compute_image_metrics(Image(4, 4), Image(4, 5)), InvalidInput);
}
