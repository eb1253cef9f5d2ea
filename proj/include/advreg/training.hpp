#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advreg/nets.hpp"
#include "advreg/operators.hpp"
#include "advreg/optim.hpp"
#include "advreg/rng.hpp"
#include "advreg/tensor.hpp"

namespace advreg::training {

struct TrainConfig {
  double mu = 10.0;  // gradient-penalty coefficient
  int batch = 16;
  nets::OptimizerConfig opt;
  int steps = 1;
  std::uint64_t seed = 0;
  double delta = 1.0;  // pseudo-inverse smoothing for the noisy pool

  void validate() const {
    if (!(mu > 0.0)) throw std::invalid_argument("train: mu must be positive");
    if (batch < 1) throw std::invalid_argument("train: batch size must be at least 1");
    if (steps < 1) throw std::invalid_argument("train: step count must be at least 1");
  }
};

struct TrainRecord {
  double gap = 0.0;       // E[psi(x_r)] - E[psi(x_n)] over the batch
  double penalty = 0.0;   // mean (||grad psi(x_i)|| - 1)_+^2
  double mean_grad_norm = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,gap,penalty,mean_grad_norm\n";
    for (std::size_t i = 0; i < records.size(); ++i)
      os << i << ',' << records[i].gap << ',' << records[i].penalty << ','
         << records[i].mean_grad_norm << '\n';
    return os.str();
  }
};

struct Triplet {
  Tensor real;
  Tensor noisy;
  Tensor interpolate;
  double epsilon = 0.0;
};

// Draws (x_r, x_n = pseudo-inverse of y, interpolate) triples. The noisy pool
// is mapped through the pseudo-inverse once up front.
class TripletSampler {
 public:
  TripletSampler(const ops::OperatorSpec& op, std::vector<Tensor> real_pool,
                 const std::vector<Tensor>& measurement_pool, double delta)
      : real_(std::move(real_pool)) {
    if (real_.empty() || measurement_pool.empty())
      throw std::invalid_argument("sample_triplet: empty dataset");
    noisy_.reserve(measurement_pool.size());
    for (const auto& y : measurement_pool) noisy_.push_back(op.pseudo_inverse(y, delta));
  }

  Triplet sample(Rng& rng) const {
    Triplet t;
    t.real = real_[rng.index(real_.size())];
    t.noisy = noisy_[rng.index(noisy_.size())];
    t.epsilon = rng.uniform();
    t.interpolate = t.real;
    t.interpolate *= t.epsilon;
    axpy(1.0 - t.epsilon, t.noisy, t.interpolate);
    return t;
  }

  const std::vector<Tensor>& real_pool() const { return real_; }
  const std::vector<Tensor>& noisy_pool() const { return noisy_; }

 private:
  std::vector<Tensor> real_;
  std::vector<Tensor> noisy_;
};

inline Triplet sample_triplet(const TripletSampler& sampler, Rng& rng) {
  return sampler.sample(rng);
}

// Empirical critic loss of Algorithm 1:
//   mean psi(x_r) - mean psi(x_n) + mu * mean (||grad_x psi(x_i)|| - 1)_+^2
inline double critic_loss(const nets::CriticNetwork& net, const std::vector<Tensor>& real_batch,
                          const std::vector<Tensor>& noisy_batch,
                          const std::vector<Tensor>& interpolates, double mu) {
  if (real_batch.empty() || real_batch.size() != noisy_batch.size() ||
      real_batch.size() != interpolates.size())
    throw std::invalid_argument("critic_loss: batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < real_batch.size(); ++i) {
    acc += net.forward(real_batch[i]) - net.forward(noisy_batch[i]);
    double n = norm(net.grad_x(interpolates[i]));
    double e = n - 1.0;
    acc += mu * (e > 0.0 ? e * e : 0.0);
  }
  return acc / static_cast<double>(real_batch.size());
}

// Algorithm 1 with the convergence loop replaced by a fixed step budget.
inline TrainLog train(nets::CriticNetwork& net, const ops::OperatorSpec& op,
                      const std::vector<Tensor>& real_pool,
                      const std::vector<Tensor>& measurement_pool, const TrainConfig& cfg) {
  cfg.validate();
  TripletSampler sampler(op, real_pool, measurement_pool, cfg.delta);
  Rng rng(cfg.seed);
  nets::Optimizer opt(cfg.opt, net.parameters());

  std::vector<Tensor> accum;
  for (const auto& p : net.parameters()) accum.push_back(Tensor::zeros(p.shape()));

  TrainLog log;
  log.records.reserve(static_cast<std::size_t>(cfg.steps));
  const double inv_m = 1.0 / cfg.batch;

  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& a : accum) a.fill(0.0);
    double sum_real = 0.0, sum_noisy = 0.0, sum_pen = 0.0, sum_gn = 0.0;
    for (int i = 0; i < cfg.batch; ++i) {
      Triplet t = sampler.sample(rng);
      double vr = 0.0, vn = 0.0;
      auto gr = net.grad_theta(t.real, &vr);
      auto gn = net.grad_theta(t.noisy, &vn);
      auto pg = net.penalty_grad_theta(t.interpolate);
      sum_real += vr;
      sum_noisy += vn;
      sum_pen += pg.penalty;
      sum_gn += pg.grad_norm;
      for (std::size_t p = 0; p < accum.size(); ++p) {
        accum[p] += gr[p];
        accum[p] -= gn[p];
        axpy(cfg.mu, pg.dtheta[p], accum[p]);
      }
    }
    TrainRecord rec;
    rec.gap = (sum_real - sum_noisy) * inv_m;
    rec.penalty = sum_pen * inv_m;
    rec.mean_grad_norm = sum_gn * inv_m;
    double loss = rec.gap + cfg.mu * rec.penalty;
    if (!std::isfinite(loss)) {
      const char* term = !std::isfinite(rec.gap) ? "critic gap" : "gradient penalty";
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               " (offending term: " + term + ")");
    }
    for (auto& a : accum) a *= inv_m;
    opt.step(net.mutable_parameters(), accum);
    log.records.push_back(rec);
  }
  return log;
}

struct LipschitzStats {
  double min = std::numeric_limits<double>::infinity();
  double mean = 0.0;
  double max = 0.0;
};

// Gradient norms of the critic at `count` fresh interpolates.
inline LipschitzStats lipschitz_report(const nets::CriticNetwork& net,
                                       const TripletSampler& sampler, int count,
                                       std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("lipschitz_report: count must be at least 1");
  Rng rng(seed);
  LipschitzStats stats;
  for (int k = 0; k < count; ++k) {
    Triplet t = sampler.sample(rng);
    double n = norm(net.grad_x(t.interpolate));
    stats.min = std::min(stats.min, n);
    stats.max = std::max(stats.max, n);
    stats.mean += n;
  }
  stats.mean /= count;
  return stats;
}

}  // namespace advreg::training
