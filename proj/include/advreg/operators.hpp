#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "advreg/rng.hpp"
#include "advreg/tensor.hpp"

namespace advreg::ops {

namespace detail {

inline constexpr double kPi = 3.14159265358979323846;

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

enum class OpKind { Identity, Radon };

// Parallel-beam ray transform geometry: angles uniform in [0, pi), detector
// bins spaced one pixel apart, line integrals sampled every half pixel with
// bilinear interpolation. The adjoint is the literal transpose of this
// discretization, so <Ax,y> = <x,A*y> holds to rounding error.
class OperatorSpec {
 public:
  static OperatorSpec identity(int height, int width) {
    OperatorSpec op;
    op.kind_ = OpKind::Identity;
    op.h_ = height;
    op.w_ = width;
    return op;
  }

  static OperatorSpec radon(int height, int width, int n_angles) {
    if (n_angles < 1) throw std::invalid_argument("radon: need at least one angle");
    OperatorSpec op;
    op.kind_ = OpKind::Radon;
    op.h_ = height;
    op.w_ = width;
    op.n_angles_ = n_angles;
    op.n_det_ = static_cast<int>(std::ceil(std::sqrt(2.0) * std::max(height, width)));
    return op;
  }

  OpKind kind() const { return kind_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int n_angles() const { return n_angles_; }
  int n_detectors() const { return n_det_; }

  std::vector<int> image_shape() const { return {h_, w_}; }

  std::vector<int> measurement_shape() const {
    return kind_ == OpKind::Identity ? std::vector<int>{h_, w_}
                                     : std::vector<int>{n_angles_, n_det_};
  }

  Tensor apply(const Tensor& x) const {
    require_shape_(x, image_shape(), "apply");
    if (kind_ == OpKind::Identity) return x;
    Tensor sino(measurement_shape());
    trace_rays_([&](int a, int d, int pix, double w) { sino[a * n_det_ + d] += w * x[pix]; });
    return sino;
  }

  Tensor adjoint(const Tensor& m) const {
    require_shape_(m, measurement_shape(), "adjoint");
    if (kind_ == OpKind::Identity) return m;
    Tensor img(image_shape());
    trace_rays_([&](int a, int d, int pix, double w) { img[pix] += w * m[a * n_det_ + d]; });
    return img;
  }

  // Regularized pseudo-inverse. Identity: the measurement itself. Radon:
  // filtered backprojection, Ram-Lak ramp apodized by a raised-cosine window
  // cutting off at the fraction `delta` of the Nyquist frequency.
  Tensor pseudo_inverse(const Tensor& m, double delta) const {
    if (!(delta > 0.0 && delta <= 1.0))
      throw std::invalid_argument("pseudo_inverse: delta must be in (0,1], got " +
                                  std::to_string(delta));
    require_shape_(m, measurement_shape(), "pseudo_inverse");
    if (kind_ == OpKind::Identity) return m;

    const std::size_t nfft = detail::next_pow2(2 * static_cast<std::size_t>(n_det_));
    std::vector<double> filter(nfft);
    const double cutoff = 0.5 * delta;
    for (std::size_t k = 0; k < nfft; ++k) {
      double f = static_cast<double>(k <= nfft / 2 ? k : nfft - k) / static_cast<double>(nfft);
      double ramp = 2.0 * f;
      double window = f <= cutoff ? 0.5 * (1.0 + std::cos(detail::kPi * f / cutoff)) : 0.0;
      filter[k] = ramp * window;
    }

    Tensor filtered(measurement_shape());
    std::vector<std::complex<double>> buf(nfft);
    for (int a = 0; a < n_angles_; ++a) {
      std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
      for (int d = 0; d < n_det_; ++d) buf[static_cast<std::size_t>(d)] = m[a * n_det_ + d];
      detail::fft(buf, false);
      for (std::size_t k = 0; k < nfft; ++k) buf[k] *= filter[k];
      detail::fft(buf, true);
      for (int d = 0; d < n_det_; ++d) filtered[a * n_det_ + d] = buf[static_cast<std::size_t>(d)].real();
    }

    Tensor img = adjoint(filtered);
    img *= detail::kPi / (2.0 * n_angles_);
    return img;
  }

 private:
  void require_shape_(const Tensor& t, const std::vector<int>& want, const char* what) const {
    if (t.shape() != want)
      throw std::invalid_argument(std::string(what) + ": geometry mismatch, got " +
                                  Tensor::shape_string(t.shape()) + ", expected " +
                                  Tensor::shape_string(want));
  }

  // Enumerates the sparse forward matrix: visit(angle, detector, pixel,
  // weight) for every bilinear tap along every ray. apply gathers with these
  // weights, adjoint scatters with the same ones.
  template <class Visit>
  void trace_rays_(Visit&& visit) const {
    const double step = 0.5;
    const double cx = 0.5 * (w_ - 1);
    const double cy = 0.5 * (h_ - 1);
    const double half_span = 0.5 * n_det_;
    const int n_s = static_cast<int>(std::floor(2.0 * half_span / step)) + 1;
    for (int a = 0; a < n_angles_; ++a) {
      const double theta = detail::kPi * a / n_angles_;
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      for (int d = 0; d < n_det_; ++d) {
        const double t = (d - 0.5 * (n_det_ - 1));
        const double bx = cx + t * c;
        const double by = cy + t * s;
        for (int k = 0; k < n_s; ++k) {
          const double ss = -half_span + k * step;
          const double px = bx - ss * s;
          const double py = by + ss * c;
          const int x0 = static_cast<int>(std::floor(px));
          const int y0 = static_cast<int>(std::floor(py));
          if (x0 < -1 || x0 >= w_ || y0 < -1 || y0 >= h_) continue;
          const double fx = px - x0;
          const double fy = py - y0;
          const double w00 = (1.0 - fx) * (1.0 - fy) * step;
          const double w01 = fx * (1.0 - fy) * step;
          const double w10 = (1.0 - fx) * fy * step;
          const double w11 = fx * fy * step;
          if (y0 >= 0) {
            if (x0 >= 0) visit(a, d, y0 * w_ + x0, w00);
            if (x0 + 1 < w_) visit(a, d, y0 * w_ + x0 + 1, w01);
          }
          if (y0 + 1 < h_) {
            if (x0 >= 0) visit(a, d, (y0 + 1) * w_ + x0, w10);
            if (x0 + 1 < w_) visit(a, d, (y0 + 1) * w_ + x0 + 1, w11);
          }
        }
      }
    }
  }

  OpKind kind_ = OpKind::Identity;
  int h_ = 0, w_ = 0;
  int n_angles_ = 0, n_det_ = 0;
};

inline Tensor apply(const OperatorSpec& op, const Tensor& x) { return op.apply(x); }
inline Tensor adjoint(const OperatorSpec& op, const Tensor& m) { return op.adjoint(m); }
inline Tensor pseudo_inverse(const OperatorSpec& op, const Tensor& m, double delta) {
  return op.pseudo_inverse(m, delta);
}

struct NoiseModel {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

inline Tensor add_noise(const Tensor& m, const NoiseModel& noise) {
  if (noise.sigma < 0.0) throw std::invalid_argument("add_noise: sigma must be non-negative");
  Tensor out = m;
  if (noise.sigma == 0.0) return out;
  Rng rng(noise.seed);
  for (int i = 0; i < out.numel(); ++i) out[i] += noise.sigma * rng.normal();
  return out;
}

// Largest singular value estimate of A via power iteration on A*A.
inline double operator_norm_estimate(const OperatorSpec& op, int iters = 50,
                                     std::uint64_t seed = 17) {
  Rng rng(seed);
  Tensor x(op.image_shape());
  for (int i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    double n = norm(x);
    if (n == 0.0) return 0.0;
    x *= 1.0 / n;
    x = op.adjoint(op.apply(x));
    lambda = norm(x);
  }
  return std::sqrt(lambda);
}

}  // namespace advreg::ops
