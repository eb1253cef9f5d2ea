#pragma once

#include <functional>
#include <utility>

#include "advreg/tensor.hpp"

namespace advreg {

// A scalar functional on image space together with its input gradient. Both
// learned critics and analytic stand-ins (norms, manifold distances) are
// passed around in this form.
struct Functional {
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> grad;

  static Functional zero() {
    return {[](const Tensor&) { return 0.0; },
            [](const Tensor& x) { return Tensor::zeros(x.shape()); }};
  }

  // f(x) = ||x||, with the subgradient at the origin taken as zero.
  static Functional l2_norm() {
    return {[](const Tensor& x) { return norm(x); },
            [](const Tensor& x) {
              double n = norm(x);
              Tensor g = Tensor::zeros(x.shape());
              if (n > 0.0)
                for (int i = 0; i < x.numel(); ++i) g[i] = x[i] / n;
              return g;
            }};
  }
};

}  // namespace advreg
