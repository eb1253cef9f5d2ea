#pragma once

// Independent reference implementations used as test oracles. Everything in
// here is written as straight-line code against the public contracts and must
// not call into the implementation paths it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "advreg/nets.hpp"
#include "advreg/tensor.hpp"

namespace oracles {

using advreg::Tensor;

inline double rel_err(double got, double want) {
  double denom = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / denom;
}

inline double max_rel_err(const Tensor& got, const Tensor& want, double floor = 1e-6) {
  double worst = 0.0;
  for (int i = 0; i < got.numel(); ++i) {
    double denom = std::max(std::abs(want[i]), floor);
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

// Central finite differences of a scalar function of one tensor argument.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                          double h = 1e-5) {
  Tensor g(at.shape());
  Tensor x = at;
  for (int i = 0; i < at.numel(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Direct-summation convolution: out[co,i,j] = b[co] + sum x[ci,i*s+ki-p,j*s+kj-p]*k[co,ci,ki,kj]
inline Tensor conv2d_reference(const Tensor& x, const Tensor& k, const Tensor* bias, int stride,
                               int pad) {
  int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  int co_n = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (w + 2 * pad - kw) / stride + 1;
  Tensor out({co_n, ho, wo});
  for (int co = 0; co < co_n; ++co)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double acc = bias ? (*bias)[co] : 0.0;
        for (int ci = 0; ci < ci_n; ++ci)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
              int xi = i * stride + ki - pad;
              int xj = j * stride + kj - pad;
              if (xi < 0 || xi >= h || xj < 0 || xj >= w) continue;
              acc += x[(ci * h + xi) * w + xj] * k[((co * ci_n + ci) * kh + ki) * kw + kj];
            }
        out[(co * ho + i) * wo + j] = acc;
      }
  return out;
}

// Plain-loop re-implementation of the critic forward pass from the descriptor
// and the raw parameter tensors.
inline double critic_forward_reference(const advreg::nets::ArchDescriptor& arch,
                                       const std::vector<Tensor>& params, const Tensor& input) {
  using advreg::nets::Head;
  Tensor cur = input;
  if (cur.rank() == 2) cur = Tensor({1, cur.extent(0), cur.extent(1)}, cur.values());
  std::size_t p = 0;
  auto lrelu = [&](Tensor& t) {
    for (int i = 0; i < t.numel(); ++i)
      if (t[i] < 0.0) t[i] *= arch.leaky_slope;
  };
  for (const auto& c : arch.conv) {
    const Tensor& w = params[p++];
    const Tensor& b = params[p++];
    cur = conv2d_reference(cur, w, &b, c.stride, (c.kernel - 1) / 2);
    lrelu(cur);
  }
  if (arch.head == Head::GlobalDense) {
    for (std::size_t l = 0; l < arch.dense.size(); ++l) {
      const Tensor& w = params[p++];
      const Tensor& b = params[p++];
      int out_n = w.extent(0), in_n = w.extent(1);
      Tensor next({out_n});
      for (int i = 0; i < out_n; ++i) {
        double acc = b[i];
        for (int j = 0; j < in_n; ++j) acc += w[i * in_n + j] * cur[j];
        next[i] = acc;
      }
      cur = next;
      if (l + 1 < arch.dense.size()) lrelu(cur);
    }
    return cur[0];
  }
  const Tensor& w = params[p++];
  const Tensor& b = params[p++];
  int ci_n = cur.extent(0), h = cur.extent(1), wd = cur.extent(2);
  double acc = 0.0;
  for (int i = 0; i < h * wd; ++i) {
    double v = b[0];
    for (int ci = 0; ci < ci_n; ++ci) v += w[ci] * cur[ci * h * wd + i];
    acc += v;
  }
  return acc / (h * wd);
}

// Minimum-cost perfect matching by exhausting all permutations; n <= 10.
inline double w1_bruteforce(const std::vector<Tensor>& p, const std::vector<Tensor>& q) {
  int n = static_cast<int>(p.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += advreg::norm(p[i] - q[perm[i]]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

inline double psnr_reference(const Tensor& x, const Tensor& ref) {
  double mse = 0.0;
  for (int i = 0; i < x.numel(); ++i) mse += (x[i] - ref[i]) * (x[i] - ref[i]);
  mse /= x.numel();
  if (mse == 0.0) return 200.0;
  return 10.0 * std::log10(1.0 / mse);
}

// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, valid positions only.
inline double ssim_reference(const Tensor& x, const Tensor& y) {
  const int win = 11;
  const double sigma = 1.5, k1 = 0.01, k2 = 0.03, L = 1.0;
  const double c1 = (k1 * L) * (k1 * L), c2 = (k2 * L) * (k2 * L);
  double kernel[win][win];
  double ksum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      double di = i - (win - 1) / 2.0, dj = j - (win - 1) / 2.0;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      ksum += kernel[i][j];
    }
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) kernel[i][j] /= ksum;
  int h = x.extent(0), w = x.extent(1);
  double total = 0.0;
  int count = 0;
  for (int i = 0; i + win <= h; ++i)
    for (int j = 0; j + win <= w; ++j) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int a = 0; a < win; ++a)
        for (int b = 0; b < win; ++b) {
          double xv = x[(i + a) * w + (j + b)], yv = y[(i + a) * w + (j + b)];
          double kv = kernel[a][b];
          mx += kv * xv;
          my += kv * yv;
          mxx += kv * xv * xv;
          myy += kv * yv * yv;
          mxy += kv * xv * yv;
        }
      double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

// Hand-executed Adam recurrence for a scalar parameter stream.
inline double adam_scalar_reference(double theta, const std::vector<double>& grads, double lr,
                                    double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
  double m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
    double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  return theta;
}

}  // namespace oracles
