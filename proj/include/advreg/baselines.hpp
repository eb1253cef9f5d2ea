#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "advreg/metrics.hpp"
#include "advreg/operators.hpp"
#include "advreg/rng.hpp"
#include "advreg/tensor.hpp"

namespace advreg::baselines {

// Isotropic total variation with forward differences and Neumann boundaries:
// sum over pixels of the Euclidean norm of (dx, dy).
inline double tv_seminorm(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("tv_seminorm: expects (H,W) images");
  int h = x.extent(0), w = x.extent(1);
  double acc = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double dx = j + 1 < w ? x[i * w + j + 1] - x[i * w + j] : 0.0;
      double dy = i + 1 < h ? x[(i + 1) * w + j] - x[i * w + j] : 0.0;
      acc += std::sqrt(dx * dx + dy * dy);
    }
  return acc;
}

namespace detail {

// Forward-difference gradient, (H,W) -> (2,H,W), Neumann boundary.
inline Tensor grad_image(const Tensor& x) {
  int h = x.extent(0), w = x.extent(1);
  Tensor g({2, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      g[i * w + j] = j + 1 < w ? x[i * w + j + 1] - x[i * w + j] : 0.0;
      g[(h + i) * w + j] = i + 1 < h ? x[(i + 1) * w + j] - x[i * w + j] : 0.0;
    }
  return g;
}

// Negative divergence, the exact transpose of grad_image.
inline Tensor grad_image_adjoint(const Tensor& q) {
  int h = q.extent(1), w = q.extent(2);
  Tensor out({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double qx = q[i * w + j];
      double qy = q[(h + i) * w + j];
      if (j + 1 < w) {
        out[i * w + j] -= qx;
        out[i * w + j + 1] += qx;
      }
      if (i + 1 < h) {
        out[i * w + j] -= qy;
        out[(i + 1) * w + j] += qy;
      }
    }
  return out;
}

// Conjugate gradient on (I + 2 tau A*A) x = rhs, warm started.
inline void solve_data_prox(const ops::OperatorSpec& op, double tau, const Tensor& rhs, Tensor& x,
                            int iters) {
  auto mat = [&](const Tensor& v) {
    Tensor out = op.adjoint(op.apply(v));
    out *= 2.0 * tau;
    out += v;
    return out;
  };
  Tensor r = rhs;
  r -= mat(x);
  Tensor p = r;
  double rs = squared_norm(r);
  for (int k = 0; k < iters && rs > 1e-24; ++k) {
    Tensor ap = mat(p);
    double alpha = rs / dot(p, ap);
    axpy(alpha, p, x);
    axpy(-alpha, ap, r);
    double rs_new = squared_norm(r);
    double beta = rs_new / rs;
    rs = rs_new;
    Tensor pn = r;
    axpy(beta, p, pn);
    p = std::move(pn);
  }
}

}  // namespace detail

struct TVConfig {
  double alpha = 0.1;       // TV weight
  double sigma_dual = 0.0;  // 0: derive from the operator norm bound
  double tau_primal = 0.0;
  int iters = 300;
  bool isotropic = true;
  int cg_iters = 10;  // data proximal solve for non-identity operators
};

// ||K|| estimate for K = [A; D] stacked, via power iteration on A*A + D*D.
inline double stacked_norm_estimate(const ops::OperatorSpec& op, int iters = 50,
                                    std::uint64_t seed = 23) {
  Rng rng(seed);
  Tensor x(op.image_shape());
  for (int i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    double n = norm(x);
    if (n == 0.0) return 0.0;
    x *= 1.0 / n;
    Tensor next = op.adjoint(op.apply(x));
    next += detail::grad_image_adjoint(detail::grad_image(x));
    lambda = norm(next);
    x = std::move(next);
  }
  return std::sqrt(lambda);
}

struct TVResult {
  Tensor image;
  std::vector<double> energy;  // primal energy per iteration
};

// Chambolle-Pock primal-dual iterations for min_x ||Ax-y||^2 + alpha TV(x).
// The data term enters through its proximal map (closed form for identity, a
// few CG steps otherwise); the TV dual is a pointwise projection.
inline TVResult tv_reconstruct(const ops::OperatorSpec& op, const Tensor& y,
                               const TVConfig& cfg) {
  if (cfg.alpha < 0.0) throw std::invalid_argument("tv_reconstruct: negative alpha");
  if (cfg.iters < 1) throw std::invalid_argument("tv_reconstruct: need at least one iteration");

  double k_norm = stacked_norm_estimate(op);
  double sigma = cfg.sigma_dual, tau = cfg.tau_primal;
  if (sigma <= 0.0 || tau <= 0.0) {
    sigma = 1.0 / k_norm;
    tau = 1.0 / k_norm;
  } else if (sigma * tau * k_norm * k_norm > 1.0 + 1e-9) {
    throw std::invalid_argument("tv_reconstruct: sigma*tau*||K||^2 exceeds 1");
  }

  Tensor x = op.pseudo_inverse(y, 1.0);
  Tensor xbar = x;
  Tensor q = Tensor::zeros({2, x.extent(0), x.extent(1)});
  const int h = x.extent(0), w = x.extent(1);

  TVResult result;
  result.energy.reserve(static_cast<std::size_t>(cfg.iters));

  for (int it = 0; it < cfg.iters; ++it) {
    // dual ascent + projection onto ||.|| <= alpha
    Tensor gx = detail::grad_image(xbar);
    axpy(sigma, gx, q);
    if (cfg.isotropic) {
      for (int i = 0; i < h * w; ++i) {
        double a = q[i], b = q[h * w + i];
        double n = std::sqrt(a * a + b * b);
        if (n > cfg.alpha) {
          double s = cfg.alpha / n;
          q[i] = a * s;
          q[h * w + i] = b * s;
        }
      }
    } else {
      for (int i = 0; i < 2 * h * w; ++i)
        q[i] = std::clamp(q[i], -cfg.alpha, cfg.alpha);
    }

    // primal descent + data proximal
    Tensor z = x;
    axpy(-tau, detail::grad_image_adjoint(q), z);
    Tensor x_new;
    if (op.kind() == ops::OpKind::Identity) {
      x_new = std::move(z);
      axpy(2.0 * tau, y, x_new);
      x_new *= 1.0 / (1.0 + 2.0 * tau);
    } else {
      Tensor rhs = std::move(z);
      axpy(2.0 * tau, op.adjoint(y), rhs);
      x_new = x;
      detail::solve_data_prox(op, tau, rhs, x_new, cfg.cg_iters);
    }

    xbar = x_new;
    xbar *= 2.0;
    xbar -= x;
    x = std::move(x_new);

    Tensor r = op.apply(x);
    r -= y;
    result.energy.push_back(squared_norm(r) + cfg.alpha * tv_seminorm(x));
  }
  result.image = std::move(x);
  return result;
}

// Appendix-style line search: run TV at every alpha on a paired validation
// set and keep the PSNR-maximizing weight, breaking ties toward less
// smoothing.
inline double line_search_alpha(const ops::OperatorSpec& op, const std::vector<Tensor>& y_set,
                                const std::vector<Tensor>& truth_set,
                                std::vector<double> alpha_grid, const TVConfig& base) {
  if (alpha_grid.empty()) throw std::invalid_argument("line_search_alpha: empty grid");
  if (y_set.empty() || y_set.size() != truth_set.size())
    throw std::invalid_argument("line_search_alpha: validation pairs mismatch");
  std::sort(alpha_grid.begin(), alpha_grid.end());
  double best_alpha = alpha_grid.front();
  double best_psnr = -std::numeric_limits<double>::infinity();
  for (double alpha : alpha_grid) {
    TVConfig cfg = base;
    cfg.alpha = alpha;
    double mean_psnr = 0.0;
    for (std::size_t i = 0; i < y_set.size(); ++i) {
      TVResult r = tv_reconstruct(op, y_set[i], cfg);
      mean_psnr += harness::psnr(r.image, truth_set[i]);
    }
    mean_psnr /= y_set.size();
    if (mean_psnr > best_psnr) {  // strict: ties keep the smaller alpha
      best_psnr = mean_psnr;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

}  // namespace advreg::baselines
