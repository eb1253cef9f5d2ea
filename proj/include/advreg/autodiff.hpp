#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "advreg/tensor.hpp"

namespace advreg::ad {

// Forward-mode scalar carried through the reverse tape. Running the whole
// forward+reverse sweep in Dual arithmetic with the input tangent seeded at u
// yields d/de[adjoints](x + e*u), i.e. Hessian-vector structure.
struct Dual {
  double v = 0.0;
  double t = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}
  constexpr Dual(double value, double tangent) : v(value), t(tangent) {}

  Dual& operator+=(const Dual& o) {
    v += o.v;
    t += o.t;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    t -= o.t;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    t = t * o.v + v * o.t;
    v *= o.v;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.t}; }
inline Dual operator/(const Dual& a, const Dual& b) {
  return {a.v / b.v, (a.t * b.v - a.v * b.t) / (b.v * b.v)};
}
inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

inline Dual sqrt(const Dual& a) {
  double s = std::sqrt(a.v);
  return {s, s > 0.0 ? a.t / (2.0 * s) : 0.0};
}
using std::sqrt;

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

enum class OpKind {
  Leaf,
  Add,
  Sub,
  ScalarMul,
  MatMul,
  Conv2d,
  LeakyRelu,
  Sum,
  Mean,
  L2Norm,
  Square,
  PositivePart,
  Reshape,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::L2Norm: return "l2_norm";
    case OpKind::Square: return "square";
    case OpKind::PositivePart: return "positive_part";
    case OpKind::Reshape: return "reshape";
  }
  return "?";
}

// Reverse-mode tape over dense tensors. Nodes are appended in topological
// order; values are computed eagerly at construction and can be replayed
// bit-identically with forward() after leaves are rebound.
template <class S>
class Graph {
 public:
  using scalar_type = S;

  struct Node {
    OpKind op = OpKind::Leaf;
    int a = -1, b = -1, c = -1;  // inputs; c is the conv bias (may be -1)
    TensorT<S> value;
    double attr = 0.0;  // scalar_mul factor / leaky slope
    int stride = 1, pad = 0;
  };

  int leaf(TensorT<S> v) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return last_();
  }

  int add(int a, int b) { return binary_(OpKind::Add, a, b); }
  int sub(int a, int b) { return binary_(OpKind::Sub, a, b); }

  int scalar_mul(int a, double c) {
    Node n;
    n.op = OpKind::ScalarMul;
    n.a = a;
    n.attr = c;
    nodes_.push_back(std::move(n));
    compute_(last_());
    return last_();
  }

  int matmul(int a, int b) { return binary_(OpKind::MatMul, a, b); }

  int conv2d(int x, int k, int bias, int stride, int pad) {
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    Node n;
    n.op = OpKind::Conv2d;
    n.a = x;
    n.b = k;
    n.c = bias;
    n.stride = stride;
    n.pad = pad;
    nodes_.push_back(std::move(n));
    compute_(last_());
    return last_();
  }

  int leaky_relu(int a, double slope) {
    Node n;
    n.op = OpKind::LeakyRelu;
    n.a = a;
    n.attr = slope;
    nodes_.push_back(std::move(n));
    compute_(last_());
    return last_();
  }

  int sum(int a) { return unary_(OpKind::Sum, a); }
  int mean(int a) { return unary_(OpKind::Mean, a); }
  int l2_norm(int a) { return unary_(OpKind::L2Norm, a); }
  int square(int a) { return unary_(OpKind::Square, a); }
  int positive_part(int a) { return unary_(OpKind::PositivePart, a); }

  int reshape(int a, std::vector<int> shape) {
    Node n;
    n.op = OpKind::Reshape;
    n.a = a;
    n.value = TensorT<S>(std::move(shape));
    nodes_.push_back(std::move(n));
    if (nodes_.back().value.numel() != node_(a).value.numel())
      fail_(last_(), "reshape changes element count");
    compute_(last_());
    return last_();
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  const TensorT<S>& value(int id) const { return node_(id).value; }

  void set_leaf(int id, const TensorT<S>& v) {
    Node& n = node_(id);
    if (n.op != OpKind::Leaf) throw std::invalid_argument("set_leaf: node is not a leaf");
    if (!n.value.shape().empty() && !n.value.same_shape(v))
      fail_(id, "leaf rebind shape mismatch " + Tensor::shape_string(v.shape()) + " vs " +
                    Tensor::shape_string(n.value.shape()));
    n.value = v;
  }

  // Replays every non-leaf node in recorded order.
  void forward() {
    for (int i = 0; i < size(); ++i)
      if (nodes_[static_cast<std::size_t>(i)].op != OpKind::Leaf) compute_(i);
  }

  // Recomputes and returns the root value.
  const TensorT<S>& eval(int root) {
    forward();
    return value(root);
  }

  // Reverse sweep from a scalar root. Returns adjoints aligned with `wrt`
  // (zero tensors for leaves the root does not depend on).
  std::vector<TensorT<S>> grad(int root, const std::vector<int>& wrt) {
    if (node_(root).value.numel() != 1)
      fail_(root, "grad requires a scalar root");
    adjoints_.assign(static_cast<std::size_t>(size()), TensorT<S>());
    adjoint_(root) = TensorT<S>::scalar(S{1.0});
    for (int i = root; i >= 0; --i) {
      if (adjoint_(i).empty()) continue;
      backward_(i);
    }
    std::vector<TensorT<S>> out;
    out.reserve(wrt.size());
    for (int id : wrt) {
      if (node_(id).op != OpKind::Leaf)
        throw std::invalid_argument("grad: requested id is not a leaf");
      if (adjoint_(id).empty())
        out.push_back(TensorT<S>::zeros(node_(id).value.shape()));
      else
        out.push_back(adjoint_(id));
    }
    return out;
  }

  // Spec-facing bundle: leaf id -> gradient, domain exactly the requested set.
  std::map<int, TensorT<S>> grad_map(int root, const std::vector<int>& wrt) {
    auto g = grad(root, wrt);
    std::map<int, TensorT<S>> m;
    for (std::size_t i = 0; i < wrt.size(); ++i) m[wrt[i]] = std::move(g[i]);
    return m;
  }

 private:
  int last_() const { return size() - 1; }

  Node& node_(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node_(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  TensorT<S>& adjoint_(int id) { return adjoints_[static_cast<std::size_t>(id)]; }

  [[noreturn]] void fail_(int id, const std::string& msg) const {
    throw std::invalid_argument("node " + std::to_string(id) + " (" + op_name(node_(id).op) +
                                "): " + msg);
  }

  int binary_(OpKind op, int a, int b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    nodes_.push_back(std::move(n));
    compute_(last_());
    return last_();
  }

  int unary_(OpKind op, int a) {
    Node n;
    n.op = op;
    n.a = a;
    nodes_.push_back(std::move(n));
    compute_(last_());
    return last_();
  }

  void accumulate_(int id, const TensorT<S>& g) {
    TensorT<S>& adj = adjoint_(id);
    if (adj.empty())
      adj = g;
    else
      adj += g;
  }

  TensorT<S>& ensure_adjoint_(int id) {
    TensorT<S>& adj = adjoint_(id);
    if (adj.empty()) adj = TensorT<S>::zeros(node_(id).value.shape());
    return adj;
  }

  static std::vector<int> conv_out_shape_(const std::vector<int>& xs, const std::vector<int>& ks,
                                          int stride, int pad) {
    int ho = (xs[1] + 2 * pad - ks[2]) / stride + 1;
    int wo = (xs[2] + 2 * pad - ks[3]) / stride + 1;
    return {ks[0], ho, wo};
  }

  void compute_(int id) {
    Node& n = node_(id);
    switch (n.op) {
      case OpKind::Leaf:
        break;
      case OpKind::Add:
      case OpKind::Sub: {
        const TensorT<S>& a = node_(n.a).value;
        const TensorT<S>& b = node_(n.b).value;
        if (!a.same_shape(b))
          fail_(id, "operand shapes " + Tensor::shape_string(a.shape()) + " vs " +
                        Tensor::shape_string(b.shape()));
        n.value = a;
        if (n.op == OpKind::Add)
          n.value += b;
        else
          n.value -= b;
        break;
      }
      case OpKind::ScalarMul: {
        n.value = node_(n.a).value;
        n.value *= S{n.attr};
        break;
      }
      case OpKind::MatMul:
        matmul_forward_(id);
        break;
      case OpKind::Conv2d:
        conv_forward_(id);
        break;
      case OpKind::LeakyRelu: {
        const TensorT<S>& a = node_(n.a).value;
        if (!n.value.same_shape(a)) n.value = TensorT<S>(a.shape());
        for (int i = 0; i < a.numel(); ++i)
          n.value[i] = value_of(a[i]) >= 0.0 ? a[i] : a[i] * S{n.attr};
        break;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        const TensorT<S>& a = node_(n.a).value;
        S acc{};
        for (int i = 0; i < a.numel(); ++i) acc += a[i];
        if (n.op == OpKind::Mean) acc = acc * S{1.0 / a.numel()};
        n.value = TensorT<S>::scalar(acc);
        break;
      }
      case OpKind::L2Norm: {
        const TensorT<S>& a = node_(n.a).value;
        S acc{};
        for (int i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
        n.value = TensorT<S>::scalar(sqrt(acc));
        break;
      }
      case OpKind::Square: {
        const TensorT<S>& a = node_(n.a).value;
        if (!n.value.same_shape(a)) n.value = TensorT<S>(a.shape());
        for (int i = 0; i < a.numel(); ++i) n.value[i] = a[i] * a[i];
        break;
      }
      case OpKind::PositivePart: {
        const TensorT<S>& a = node_(n.a).value;
        if (!n.value.same_shape(a)) n.value = TensorT<S>(a.shape());
        for (int i = 0; i < a.numel(); ++i)
          n.value[i] = value_of(a[i]) > 0.0 ? a[i] : S{0.0};
        break;
      }
      case OpKind::Reshape: {
        const TensorT<S>& a = node_(n.a).value;
        std::vector<int> shape = n.value.shape();
        n.value = TensorT<S>(std::move(shape), a.values());
        break;
      }
    }
  }

  void matmul_forward_(int id) {
    Node& n = node_(id);
    const TensorT<S>& a = node_(n.a).value;
    const TensorT<S>& b = node_(n.b).value;
    if (a.rank() != 2) fail_(id, "lhs must be rank 2, got " + Tensor::shape_string(a.shape()));
    int m = a.extent(0), k = a.extent(1);
    if (b.rank() == 1) {
      if (b.extent(0) != k)
        fail_(id, "inner extents " + Tensor::shape_string(a.shape()) + " vs " +
                      Tensor::shape_string(b.shape()));
      if (n.value.shape() != std::vector<int>{m}) n.value = TensorT<S>({m});
      for (int i = 0; i < m; ++i) {
        S acc{};
        const S* arow = a.data() + static_cast<std::ptrdiff_t>(i) * k;
        for (int j = 0; j < k; ++j) acc += arow[j] * b[j];
        n.value[i] = acc;
      }
    } else if (b.rank() == 2) {
      if (b.extent(0) != k)
        fail_(id, "inner extents " + Tensor::shape_string(a.shape()) + " vs " +
                      Tensor::shape_string(b.shape()));
      int c = b.extent(1);
      if (n.value.shape() != std::vector<int>{m, c}) n.value = TensorT<S>({m, c});
      n.value.fill(S{0.0});
      for (int i = 0; i < m; ++i) {
        const S* arow = a.data() + static_cast<std::ptrdiff_t>(i) * k;
        S* orow = n.value.data() + static_cast<std::ptrdiff_t>(i) * c;
        for (int j = 0; j < k; ++j) {
          S av = arow[j];
          const S* brow = b.data() + static_cast<std::ptrdiff_t>(j) * c;
          for (int l = 0; l < c; ++l) orow[l] += av * brow[l];
        }
      }
    } else {
      fail_(id, "rhs must be rank 1 or 2");
    }
  }

  void conv_forward_(int id) {
    Node& n = node_(id);
    const TensorT<S>& x = node_(n.a).value;
    const TensorT<S>& k = node_(n.b).value;
    if (x.rank() != 3) fail_(id, "input must be (C,H,W), got " + Tensor::shape_string(x.shape()));
    if (k.rank() != 4) fail_(id, "kernel must be (Co,Ci,Kh,Kw)");
    if (k.extent(1) != x.extent(0))
      fail_(id, "kernel in-channels " + std::to_string(k.extent(1)) + " vs input channels " +
                    std::to_string(x.extent(0)));
    auto os = conv_out_shape_(x.shape(), k.shape(), n.stride, n.pad);
    if (os[1] <= 0 || os[2] <= 0) fail_(id, "empty output for input " + Tensor::shape_string(x.shape()));
    if (n.c >= 0) {
      const TensorT<S>& bias = node_(n.c).value;
      if (bias.rank() != 1 || bias.extent(0) != k.extent(0))
        fail_(id, "bias must be (Co)");
    }
    if (n.value.shape() != os) n.value = TensorT<S>(os);
    int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
    int co_n = os[0], ho = os[1], wo = os[2], kh = k.extent(2), kw = k.extent(3);
    int s = n.stride, p = n.pad;
    for (int co = 0; co < co_n; ++co) {
      S* oc = n.value.data() + static_cast<std::ptrdiff_t>(co) * ho * wo;
      S b0 = n.c >= 0 ? node_(n.c).value[co] : S{0.0};
      for (int i = 0; i < ho * wo; ++i) oc[i] = b0;
      for (int ci = 0; ci < ci_n; ++ci) {
        const S* xc = x.data() + static_cast<std::ptrdiff_t>(ci) * h * w;
        const S* kc = k.data() + (static_cast<std::ptrdiff_t>(co) * ci_n + ci) * kh * kw;
        for (int ki = 0; ki < kh; ++ki) {
          for (int kj = 0; kj < kw; ++kj) {
            S kv = kc[ki * kw + kj];
            for (int i = 0; i < ho; ++i) {
              int xi = i * s + ki - p;
              if (xi < 0 || xi >= h) continue;
              const S* xrow = xc + static_cast<std::ptrdiff_t>(xi) * w;
              S* orow = oc + static_cast<std::ptrdiff_t>(i) * wo;
              int j0 = std::max(0, (p - kj + s - 1) / s);
              int j1 = std::min(wo - 1, (w - 1 - kj + p) / s);
              for (int j = j0; j <= j1; ++j) orow[j] += kv * xrow[j * s + kj - p];
            }
          }
        }
      }
    }
  }

  void backward_(int id) {
    Node& n = node_(id);
    const TensorT<S>& g = adjoint_(id);
    switch (n.op) {
      case OpKind::Leaf:
        break;
      case OpKind::Add:
        accumulate_(n.a, g);
        accumulate_(n.b, g);
        break;
      case OpKind::Sub: {
        accumulate_(n.a, g);
        TensorT<S>& gb = ensure_adjoint_(n.b);
        for (int i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        break;
      }
      case OpKind::ScalarMul: {
        TensorT<S>& ga = ensure_adjoint_(n.a);
        for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * S{n.attr};
        break;
      }
      case OpKind::MatMul:
        matmul_backward_(id);
        break;
      case OpKind::Conv2d:
        conv_backward_(id);
        break;
      case OpKind::LeakyRelu: {
        const TensorT<S>& a = node_(n.a).value;
        TensorT<S>& ga = ensure_adjoint_(n.a);
        for (int i = 0; i < g.numel(); ++i)
          ga[i] += value_of(a[i]) >= 0.0 ? g[i] : g[i] * S{n.attr};
        break;
      }
      case OpKind::Sum: {
        TensorT<S>& ga = ensure_adjoint_(n.a);
        S gv = g[0];
        for (int i = 0; i < ga.numel(); ++i) ga[i] += gv;
        break;
      }
      case OpKind::Mean: {
        TensorT<S>& ga = ensure_adjoint_(n.a);
        S gv = g[0] * S{1.0 / ga.numel()};
        for (int i = 0; i < ga.numel(); ++i) ga[i] += gv;
        break;
      }
      case OpKind::L2Norm: {
        // d||a||/da = a / ||a||; the subgradient at a = 0 is the zero vector
        const TensorT<S>& a = node_(n.a).value;
        S nv = n.value[0];
        if (value_of(nv) > 0.0) {
          TensorT<S>& ga = ensure_adjoint_(n.a);
          S c = g[0] / nv;
          for (int i = 0; i < a.numel(); ++i) ga[i] += c * a[i];
        }
        break;
      }
      case OpKind::Square: {
        const TensorT<S>& a = node_(n.a).value;
        TensorT<S>& ga = ensure_adjoint_(n.a);
        for (int i = 0; i < g.numel(); ++i) ga[i] += S{2.0} * a[i] * g[i];
        break;
      }
      case OpKind::PositivePart: {
        const TensorT<S>& a = node_(n.a).value;
        TensorT<S>& ga = ensure_adjoint_(n.a);
        for (int i = 0; i < g.numel(); ++i)
          if (value_of(a[i]) > 0.0) ga[i] += g[i];
        break;
      }
      case OpKind::Reshape: {
        TensorT<S>& ga = ensure_adjoint_(n.a);
        for (int i = 0; i < g.numel(); ++i) ga[i] += g[i];
        break;
      }
    }
  }

  void matmul_backward_(int id) {
    Node& n = node_(id);
    const TensorT<S>& g = adjoint_(id);
    const TensorT<S>& a = node_(n.a).value;
    const TensorT<S>& b = node_(n.b).value;
    TensorT<S>& ga = ensure_adjoint_(n.a);
    TensorT<S>& gb = ensure_adjoint_(n.b);
    int m = a.extent(0), k = a.extent(1);
    if (b.rank() == 1) {
      for (int i = 0; i < m; ++i) {
        S gv = g[i];
        S* garow = ga.data() + static_cast<std::ptrdiff_t>(i) * k;
        const S* arow = a.data() + static_cast<std::ptrdiff_t>(i) * k;
        for (int j = 0; j < k; ++j) {
          garow[j] += gv * b[j];
          gb[j] += gv * arow[j];
        }
      }
    } else {
      int c = b.extent(1);
      for (int i = 0; i < m; ++i) {
        const S* grow = g.data() + static_cast<std::ptrdiff_t>(i) * c;
        const S* arow = a.data() + static_cast<std::ptrdiff_t>(i) * k;
        S* garow = ga.data() + static_cast<std::ptrdiff_t>(i) * k;
        for (int j = 0; j < k; ++j) {
          const S* brow = b.data() + static_cast<std::ptrdiff_t>(j) * c;
          S* gbrow = gb.data() + static_cast<std::ptrdiff_t>(j) * c;
          S acc{};
          S av = arow[j];
          for (int l = 0; l < c; ++l) {
            acc += grow[l] * brow[l];
            gbrow[l] += av * grow[l];
          }
          garow[j] += acc;
        }
      }
    }
  }

  void conv_backward_(int id) {
    Node& n = node_(id);
    const TensorT<S>& g = adjoint_(id);
    const TensorT<S>& x = node_(n.a).value;
    const TensorT<S>& k = node_(n.b).value;
    TensorT<S>& gx = ensure_adjoint_(n.a);
    TensorT<S>& gk = ensure_adjoint_(n.b);
    int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
    int co_n = g.extent(0), ho = g.extent(1), wo = g.extent(2);
    int kh = k.extent(2), kw = k.extent(3);
    int s = n.stride, p = n.pad;
    for (int co = 0; co < co_n; ++co) {
      const S* gc = g.data() + static_cast<std::ptrdiff_t>(co) * ho * wo;
      for (int ci = 0; ci < ci_n; ++ci) {
        const S* xc = x.data() + static_cast<std::ptrdiff_t>(ci) * h * w;
        S* gxc = gx.data() + static_cast<std::ptrdiff_t>(ci) * h * w;
        const S* kc = k.data() + (static_cast<std::ptrdiff_t>(co) * ci_n + ci) * kh * kw;
        S* gkc = gk.data() + (static_cast<std::ptrdiff_t>(co) * ci_n + ci) * kh * kw;
        for (int ki = 0; ki < kh; ++ki) {
          for (int kj = 0; kj < kw; ++kj) {
            S kv = kc[ki * kw + kj];
            S kacc{};
            for (int i = 0; i < ho; ++i) {
              int xi = i * s + ki - p;
              if (xi < 0 || xi >= h) continue;
              const S* xrow = xc + static_cast<std::ptrdiff_t>(xi) * w;
              S* gxrow = gxc + static_cast<std::ptrdiff_t>(xi) * w;
              const S* grow = gc + static_cast<std::ptrdiff_t>(i) * wo;
              int j0 = std::max(0, (p - kj + s - 1) / s);
              int j1 = std::min(wo - 1, (w - 1 - kj + p) / s);
              for (int j = j0; j <= j1; ++j) {
                S gv = grow[j];
                kacc += gv * xrow[j * s + kj - p];
                gxrow[j * s + kj - p] += gv * kv;
              }
            }
            gkc[ki * kw + kj] += kacc;
          }
        }
      }
    }
    if (n.c >= 0) {
      TensorT<S>& gb = ensure_adjoint_(n.c);
      for (int co = 0; co < co_n; ++co) {
        const S* gc = g.data() + static_cast<std::ptrdiff_t>(co) * ho * wo;
        S acc{};
        for (int i = 0; i < ho * wo; ++i) acc += gc[i];
        gb[co] += acc;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<TensorT<S>> adjoints_;
};

// Ids of the distinguished leaves and the scalar root of a taped function.
struct Binding {
  int x = -1;
  std::vector<int> theta;
  int root = -1;
};

struct PenaltyGrad {
  double penalty = 0.0;      // (||grad_x psi|| - 1)_+^2
  double grad_norm = 0.0;    // ||grad_x psi||
  std::vector<Tensor> dtheta;  // aligned with the theta leaves
};

// One scalar function of (x, theta) recorded on a double tape and a Dual
// tape. The Dual tape supplies the mixed second derivatives needed for the
// gradient-penalty parameter gradient.
class TapePair {
 public:
  template <class BuildFn>
  explicit TapePair(BuildFn&& build) {
    b_ = build(g_);
    bd_ = build(gd_);
  }

  const Binding& binding() const { return b_; }
  Graph<double>& graph() { return g_; }

  void set_theta(const std::vector<Tensor>& theta) {
    if (theta.size() != b_.theta.size())
      throw std::invalid_argument("set_theta: expected " + std::to_string(b_.theta.size()) +
                                  " tensors, got " + std::to_string(theta.size()));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      g_.set_leaf(b_.theta[i], theta[i]);
      gd_.set_leaf(bd_.theta[i], to_dual_(theta[i], nullptr));
    }
  }

  double value(const Tensor& x) {
    g_.set_leaf(b_.x, x);
    g_.forward();
    return g_.value(b_.root)[0];
  }

  Tensor grad_x(const Tensor& x) {
    g_.set_leaf(b_.x, x);
    g_.forward();
    return g_.grad(b_.root, {b_.x})[0];
  }

  std::vector<Tensor> grad_theta(const Tensor& x, double* value_out = nullptr) {
    g_.set_leaf(b_.x, x);
    g_.forward();
    if (value_out) *value_out = g_.value(b_.root)[0];
    return g_.grad(b_.root, b_.theta);
  }

  // Parameter gradient of (||grad_x psi(x)|| - 1)_+^2 by forward-over-reverse:
  // a plain sweep yields g = grad_x psi; the Dual sweep, seeded with input
  // tangent u = dh/dg, returns d/dtheta <u, grad_x psi> in the adjoint tangents.
  PenaltyGrad penalty_grad_theta(const Tensor& x) {
    PenaltyGrad out;
    g_.set_leaf(b_.x, x);
    g_.forward();
    Tensor gx = g_.grad(b_.root, {b_.x})[0];
    double n = norm(gx);
    out.grad_norm = n;
    double excess = n - 1.0;
    out.penalty = excess > 0.0 ? excess * excess : 0.0;
    if (excess <= 0.0 || n == 0.0) {
      out.dtheta.reserve(b_.theta.size());
      for (int id : b_.theta) out.dtheta.push_back(Tensor::zeros(g_.value(id).shape()));
      return out;
    }
    double c = 2.0 * excess / n;
    gd_.set_leaf(bd_.x, to_dual_(x, [&](int i) { return c * gx[i]; }));
    gd_.forward();
    auto gtheta = gd_.grad(bd_.root, bd_.theta);
    out.dtheta.reserve(gtheta.size());
    for (const auto& gt : gtheta) {
      Tensor t(gt.shape());
      for (int i = 0; i < gt.numel(); ++i) t[i] = gt[i].t;
      out.dtheta.push_back(std::move(t));
    }
    return out;
  }

 private:
  template <class TanFn>
  static TensorT<Dual> to_dual_(const Tensor& v, TanFn&& tan) {
    TensorT<Dual> d(v.shape());
    for (int i = 0; i < v.numel(); ++i) d[i] = Dual{v[i], tan(i)};
    return d;
  }

  static TensorT<Dual> to_dual_(const Tensor& v, std::nullptr_t) {
    TensorT<Dual> d(v.shape());
    for (int i = 0; i < v.numel(); ++i) d[i] = Dual{v[i], 0.0};
    return d;
  }

  Graph<double> g_;
  Graph<Dual> gd_;
  Binding b_, bd_;
};

}  // namespace advreg::ad
