#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace advreg {

// Dense row-major tensor over a scalar type (double, or Dual for the
// second-order tape). Shape extents must be positive.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count_(shape_)), S{});
  }

  TensorT(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count_(shape_) != static_cast<long long>(data_.size()))
      throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, S v) {
    TensorT t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static TensorT ones(std::vector<int> shape) { return full(std::move(shape), S{1.0}); }

  static TensorT scalar(S v) { return TensorT({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int d) const { return shape_[static_cast<std::size_t>(d)]; }
  int numel() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& values() { return data_; }
  const std::vector<S>& values() const { return data_; }

  S& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  TensorT& operator+=(const TensorT& o) {
    require_same_shape(o, "+=");
    for (int i = 0; i < numel(); ++i) data_[static_cast<std::size_t>(i)] += o[i];
    return *this;
  }

  TensorT& operator-=(const TensorT& o) {
    require_same_shape(o, "-=");
    for (int i = 0; i < numel(); ++i) data_[static_cast<std::size_t>(i)] -= o[i];
    return *this;
  }

  TensorT& operator*=(S c) {
    for (auto& x : data_) x *= c;
    return *this;
  }

  void fill(S v) {
    for (auto& x : data_) x = v;
  }

  void require_same_shape(const TensorT& o, const char* what) const {
    if (!same_shape(o))
      throw std::invalid_argument(std::string("tensor: shape mismatch in ") + what + ": " +
                                  shape_string(shape_) + " vs " + shape_string(o.shape_));
  }

  static std::string shape_string(const std::vector<int>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) r += ",";
      r += std::to_string(s[i]);
    }
    return r + ")";
  }

 private:
  static long long count_(const std::vector<int>& shape) {
    long long n = 1;
    for (int e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent");
      n *= e;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<S> data_;
};

using Tensor = TensorT<double>;

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(double c, Tensor a) { return a *= c; }

inline double dot(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "dot");
  double s = 0.0;
  for (int i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }

inline double norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

// y += c * x
inline void axpy(double c, const Tensor& x, Tensor& y) {
  x.require_same_shape(y, "axpy");
  for (int i = 0; i < x.numel(); ++i) y[i] += c * x[i];
}

inline bool all_finite(const Tensor& a) {
  for (int i = 0; i < a.numel(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

}  // namespace advreg
