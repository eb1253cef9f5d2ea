#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "advreg/tensor.hpp"

namespace advreg::nets {

enum class OptKind { Adam, RMSProp };

struct OptimizerConfig {
  OptKind kind = OptKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;   // Adam first-moment decay
  double beta2 = 0.999;  // Adam second-moment decay
  double rho = 0.9;      // RMSProp decay
  double eps = 1e-8;
};

// Per-parameter moment accumulators mirror the parameter shapes exactly.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const std::vector<Tensor>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.shape()));
      v_.push_back(Tensor::zeros(p.shape()));
    }
  }

  long step_count() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size())
      throw std::invalid_argument("optimizer_step: expected " + std::to_string(params.size()) +
                                  " gradients, got " + std::to_string(grads.size()));
    if (params.size() != m_.size())
      throw std::invalid_argument("optimizer_step: parameter count changed under the state");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (!params[i].same_shape(grads[i]))
        throw std::invalid_argument("optimizer_step: gradient shape mismatch at parameter " +
                                    std::to_string(i));
    ++t_;
    if (cfg_.kind == OptKind::Adam) {
      double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        const Tensor& g = grads[i];
        for (int j = 0; j < p.numel(); ++j) {
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
          double mhat = m[j] / c1;
          double vhat = v[j] / c2;
          p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        Tensor& v = v_[i];
        const Tensor& g = grads[i];
        for (int j = 0; j < p.numel(); ++j) {
          v[j] = cfg_.rho * v[j] + (1.0 - cfg_.rho) * g[j] * g[j];
          p[j] -= cfg_.lr * g[j] / (std::sqrt(v[j]) + cfg_.eps);
        }
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace advreg::nets
