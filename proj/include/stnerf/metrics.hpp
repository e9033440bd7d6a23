#pragma once

#include "stnerf/image.hpp"

namespace stnerf {

struct ImageMetrics {
  double psnr = 0.0;  // dB; +inf for identical images
  double ssim = 0.0;
  double mae = 0.0;
  double mse = 0.0;
};

// PSNR = 10 log10(1 / MSE); SSIM with an 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over valid window
// positions and the three channels; MAE = mean |difference|.
// Throws InvalidInput on dimension mismatch.
ImageMetrics compute_image_metrics(const Image& rendered, const Image& reference);

double psnr_from_mse(double mse);

}  // namespace stnerf
