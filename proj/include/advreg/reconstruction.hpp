#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advreg/functional.hpp"
#include "advreg/operators.hpp"
#include "advreg/rng.hpp"
#include "advreg/tensor.hpp"

namespace advreg::recon {

struct SolveConfig {
  double lambda = 0.0;
  double step = 0.1;       // gradient step size
  int max_iters = 200;     // fixed iteration budget N
  double grad_tol = 0.0;   // early exit when ||grad|| < tol; 0 disables
  bool backtracking = true;  // halve the step whenever the objective increases

  void validate() const {
    if (!(step > 0.0)) throw std::invalid_argument("reconstruct: step size must be positive");
    if (max_iters < 1) throw std::invalid_argument("reconstruct: need at least one iteration");
    if (grad_tol < 0.0) throw std::invalid_argument("reconstruct: negative gradient tolerance");
  }
};

struct TraceRecord {
  double objective = 0.0;
  double data_term = 0.0;
  double regularizer = 0.0;
  double grad_norm = 0.0;
};

struct SolveTrace {
  std::vector<TraceRecord> records;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "iteration,objective,data_term,regularizer,grad_norm\n";
    for (std::size_t i = 0; i < records.size(); ++i)
      os << i << ',' << records[i].objective << ',' << records[i].data_term << ','
         << records[i].regularizer << ',' << records[i].grad_norm << '\n';
    return os.str();
  }
};

struct NonFiniteIterate : std::runtime_error {
  NonFiniteIterate(const std::string& msg, SolveTrace t)
      : std::runtime_error(msg), trace(std::move(t)) {}
  SolveTrace trace;
};

// lambda = 2 E||A* e||_2, Monte-Carlo over noise draws. Exactly linear in
// sigma under a fixed seed.
inline double estimate_lambda(const ops::OperatorSpec& op, const ops::NoiseModel& noise,
                              int n_samples) {
  if (n_samples < 1) throw std::invalid_argument("estimate_lambda: need at least one sample");
  if (noise.sigma == 0.0) return 0.0;
  Rng rng(noise.seed);
  Tensor e(op.measurement_shape());
  double acc = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < e.numel(); ++i) e[i] = noise.sigma * rng.normal();
    acc += norm(op.adjoint(e));
  }
  return 2.0 * acc / n_samples;
}

inline double objective_value(const Functional& reg, const ops::OperatorSpec& op, const Tensor& y,
                              double lambda, const Tensor& x) {
  Tensor r = op.apply(x);
  r -= y;
  double data = squared_norm(r);
  return lambda != 0.0 ? data + lambda * reg.value(x) : data;
}

// 2 A*(Ax - y) + lambda grad psi(x), composed from apply/adjoint rather than
// taped through the operator.
inline Tensor objective_gradient(const Functional& reg, const ops::OperatorSpec& op,
                                 const Tensor& y, double lambda, const Tensor& x) {
  Tensor r = op.apply(x);
  r -= y;
  Tensor g = op.adjoint(r);
  g *= 2.0;
  if (lambda != 0.0) axpy(lambda, reg.grad(x), g);
  return g;
}

struct SolveResult {
  Tensor image;
  SolveTrace trace;
};

// Algorithm 2: gradient descent on ||Ax-y||^2 + lambda psi(x), started from
// the regularized pseudo-inverse.
inline SolveResult reconstruct(const Functional& reg, const ops::OperatorSpec& op, const Tensor& y,
                               const SolveConfig& cfg, double delta) {
  cfg.validate();
  Tensor x = op.pseudo_inverse(y, delta);
  SolveTrace trace;
  trace.records.reserve(static_cast<std::size_t>(cfg.max_iters));
  double step = cfg.step;
  const double min_step = 1e-14;

  auto eval = [&](const Tensor& at, TraceRecord& rec) {
    Tensor r = op.apply(at);
    r -= y;
    rec.data_term = squared_norm(r);
    rec.regularizer = cfg.lambda != 0.0 ? reg.value(at) : 0.0;
    rec.objective = rec.data_term + cfg.lambda * rec.regularizer;
  };

  TraceRecord cur;
  eval(x, cur);
  for (int it = 0; it < cfg.max_iters; ++it) {
    Tensor g = objective_gradient(reg, op, y, cfg.lambda, x);
    cur.grad_norm = norm(g);
    trace.records.push_back(cur);
    if (!std::isfinite(cur.objective) || !std::isfinite(cur.grad_norm))
      throw NonFiniteIterate("reconstruct: non-finite iterate at iteration " + std::to_string(it),
                             std::move(trace));
    if (cfg.grad_tol > 0.0 && cur.grad_norm < cfg.grad_tol) break;

    Tensor candidate = x;
    axpy(-step, g, candidate);
    TraceRecord next;
    eval(candidate, next);
    if (cfg.backtracking) {
      while (next.objective > cur.objective && step > min_step) {
        step *= 0.5;
        candidate = x;
        axpy(-step, g, candidate);
        eval(candidate, next);
      }
    }
    x = std::move(candidate);
    cur = next;
  }
  return {std::move(x), std::move(trace)};
}

// g_eta(x) = x - eta * grad psi(x)
inline Tensor flow_step(const Functional& reg, const Tensor& x, double eta) {
  Tensor out = x;
  if (eta != 0.0) axpy(-eta, reg.grad(x), out);
  return out;
}

}  // namespace advreg::recon
