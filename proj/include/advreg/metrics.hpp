#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "advreg/tensor.hpp"

namespace advreg::harness {

inline constexpr double kPsnrCap = 200.0;  // sentinel for an exact match

// 10 log10(peak^2 / MSE) with peak fixed at 1.0 (images live in [0,1]).
inline double psnr(const Tensor& x, const Tensor& ref) {
  x.require_same_shape(ref, "psnr");
  double mse = 0.0;
  for (int i = 0; i < x.numel(); ++i) {
    double d = x[i] - ref[i];
    mse += d * d;
  }
  mse /= x.numel();
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// data range 1.0, averaged over valid window positions.
inline double ssim(const Tensor& x, const Tensor& ref) {
  x.require_same_shape(ref, "ssim");
  if (x.rank() != 2) throw std::invalid_argument("ssim: expects (H,W) images");
  const int win = 11;
  const int h = x.extent(0), w = x.extent(1);
  if (h < win || w < win)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  static const std::vector<double> kernel = [] {
    std::vector<double> k(win * win);
    double sum = 0.0;
    for (int i = 0; i < win; ++i)
      for (int j = 0; j < win; ++j) {
        double di = i - (win - 1) / 2.0;
        double dj = j - (win - 1) / 2.0;
        k[i * win + j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
        sum += k[i * win + j];
      }
    for (auto& v : k) v /= sum;
    return k;
  }();

  double total = 0.0;
  int count = 0;
  for (int i = 0; i + win <= h; ++i) {
    for (int j = 0; j + win <= w; ++j) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int a = 0; a < win; ++a) {
        const double* xrow = x.data() + (i + a) * w + j;
        const double* yrow = ref.data() + (i + a) * w + j;
        const double* krow = kernel.data() + a * win;
        for (int b = 0; b < win; ++b) {
          double xv = xrow[b], yv = yrow[b], kv = krow[b];
          mx += kv * xv;
          my += kv * yv;
          mxx += kv * xv * xv;
          myy += kv * yv * yv;
          mxy += kv * xv * yv;
        }
      }
      double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace advreg::harness
