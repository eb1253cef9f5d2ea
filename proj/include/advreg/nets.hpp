#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "advreg/autodiff.hpp"
#include "advreg/functional.hpp"
#include "advreg/rng.hpp"
#include "advreg/tensor.hpp"

namespace advreg::nets {

struct ConvSpec {
  int channels = 0;
  int kernel = 3;
  int stride = 1;
};

enum class Head { GlobalDense, LocalAveragePool };

// Critic architecture. Every conv layer is 3x3 by default, zero-padded to
// (k-1)/2 and followed by a leaky ReLU; the global head flattens the final
// feature map into a dense stack ending in width 1, the local head maps to a
// single channel with a 1x1 conv and takes the spatial mean.
struct ArchDescriptor {
  std::vector<int> input_shape;  // {C,H,W} for images, {n} for flat inputs
  std::vector<ConvSpec> conv;
  double leaky_slope = 0.1;
  std::vector<int> dense;  // global head only
  Head head = Head::GlobalDense;

  // 8 conv layers, channels 16..128 doubling every other layer, strides
  // alternating 1,2, dense 256 -> 1.
  static ArchDescriptor default_critic(int height, int width, int channels = 1) {
    ArchDescriptor a;
    a.input_shape = {channels, height, width};
    const int chans[8] = {16, 16, 32, 32, 64, 64, 128, 128};
    for (int i = 0; i < 8; ++i) a.conv.push_back({chans[i], 3, i % 2 == 0 ? 1 : 2});
    a.dense = {256, 1};
    return a;
  }

  void validate() const {
    if (input_shape.size() != 1 && input_shape.size() != 3)
      throw std::invalid_argument("architecture: input shape must be (n) or (C,H,W)");
    for (int e : input_shape)
      if (e <= 0) throw std::invalid_argument("architecture: non-positive input extent");
    if (!conv.empty() && input_shape.size() != 3)
      throw std::invalid_argument("architecture: conv layers require a (C,H,W) input");
    int stride_product = 1;
    for (const auto& c : conv) {
      if (c.channels <= 0) throw std::invalid_argument("architecture: zero-channel conv layer");
      if (c.kernel <= 0 || c.kernel % 2 == 0)
        throw std::invalid_argument("architecture: conv kernel must be odd and positive");
      if (c.stride != 1 && c.stride != 2)
        throw std::invalid_argument("architecture: conv stride must be 1 or 2");
      stride_product *= c.stride;
    }
    if (input_shape.size() == 3 &&
        (input_shape[1] % stride_product != 0 || input_shape[2] % stride_product != 0))
      throw std::invalid_argument("architecture: spatial size " +
                                  std::to_string(input_shape[1]) + "x" +
                                  std::to_string(input_shape[2]) +
                                  " not divisible by total stride " +
                                  std::to_string(stride_product));
    if (head == Head::GlobalDense) {
      if (dense.empty() || dense.back() != 1)
        throw std::invalid_argument("architecture: global head needs dense widths ending in 1");
      for (int w : dense)
        if (w <= 0) throw std::invalid_argument("architecture: non-positive dense width");
    } else {
      if (input_shape.size() != 3)
        throw std::invalid_argument("architecture: local head requires a (C,H,W) input");
      if (!dense.empty())
        throw std::invalid_argument("architecture: local head takes no dense widths");
    }
  }

  // Spatial extent after the conv stack for a given input spatial size.
  std::pair<int, int> conv_output_hw(int h, int w) const {
    for (const auto& c : conv) {
      int p = (c.kernel - 1) / 2;
      h = (h + 2 * p - c.kernel) / c.stride + 1;
      w = (w + 2 * p - c.kernel) / c.stride + 1;
      if (h <= 0 || w <= 0)
        throw std::invalid_argument("architecture: conv stack collapses a " +
                                    std::to_string(h) + "x" + std::to_string(w) + " map");
    }
    return {h, w};
  }

  int conv_output_channels() const {
    return conv.empty() ? input_shape[0] : conv.back().channels;
  }

  std::string canonical_text() const {
    nlohmann::json j;
    j["alpha"] = leaky_slope;
    j["conv"] = nlohmann::json::array();
    for (const auto& c : conv) j["conv"].push_back({{"c", c.channels}, {"k", c.kernel}, {"s", c.stride}});
    j["dense"] = dense;
    j["head"] = head == Head::GlobalDense ? "global" : "local";
    j["input"] = input_shape;
    return j.dump();
  }

  static ArchDescriptor parse(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ArchDescriptor a;
    a.leaky_slope = j.at("alpha").get<double>();
    for (const auto& c : j.at("conv"))
      a.conv.push_back({c.at("c").get<int>(), c.at("k").get<int>(), c.at("s").get<int>()});
    a.dense = j.at("dense").get<std::vector<int>>();
    std::string head = j.at("head").get<std::string>();
    if (head == "global")
      a.head = Head::GlobalDense;
    else if (head == "local")
      a.head = Head::LocalAveragePool;
    else
      throw std::invalid_argument("architecture: unknown head '" + head + "'");
    a.input_shape = j.at("input").get<std::vector<int>>();
    a.validate();
    return a;
  }
};

inline std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(
    const ArchDescriptor& a) {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  int ci = a.input_shape.size() == 3 ? a.input_shape[0] : 0;
  for (std::size_t i = 0; i < a.conv.size(); ++i) {
    const auto& c = a.conv[i];
    out.push_back({"conv" + std::to_string(i) + ".w", {c.channels, ci, c.kernel, c.kernel}});
    out.push_back({"conv" + std::to_string(i) + ".b", {c.channels}});
    ci = c.channels;
  }
  if (a.head == Head::GlobalDense) {
    int in;
    if (a.input_shape.size() == 3) {
      auto [h, w] = a.conv_output_hw(a.input_shape[1], a.input_shape[2]);
      in = a.conv_output_channels() * h * w;
    } else {
      in = a.input_shape[0];
    }
    for (std::size_t i = 0; i < a.dense.size(); ++i) {
      out.push_back({"dense" + std::to_string(i) + ".w", {a.dense[i], in}});
      out.push_back({"dense" + std::to_string(i) + ".b", {a.dense[i]}});
      in = a.dense[i];
    }
  } else {
    out.push_back({"head.w", {1, a.conv_output_channels(), 1, 1}});
    out.push_back({"head.b", {1}});
  }
  return out;
}

// The learned regularization functional: image -> scalar, differentiable in
// both the input and the parameters.
class CriticNetwork {
 public:
  CriticNetwork() = default;

  CriticNetwork(ArchDescriptor arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    Rng rng(seed);
    for (const auto& [name, shape] : parameter_layout(arch_)) {
      names_.push_back(name);
      Tensor p(shape);
      if (shape.size() > 1) {
        // He-style fan-in scaling; biases start at zero
        long long fan_in = 1;
        for (std::size_t d = 1; d < shape.size(); ++d) fan_in *= shape[d];
        double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (int i = 0; i < p.numel(); ++i) p[i] = sd * rng.normal();
      }
      params_.push_back(std::move(p));
    }
  }

  CriticNetwork(const CriticNetwork& o)
      : arch_(o.arch_), names_(o.names_), params_(o.params_) {}

  CriticNetwork& operator=(const CriticNetwork& o) {
    arch_ = o.arch_;
    names_ = o.names_;
    params_ = o.params_;
    tape_.reset();
    ++version_;
    return *this;
  }

  CriticNetwork(CriticNetwork&&) = default;
  CriticNetwork& operator=(CriticNetwork&&) = default;

  const ArchDescriptor& arch() const { return arch_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  const std::vector<Tensor>& parameters() const { return params_; }

  // Writable access for the optimizer; invalidates the cached tape bindings.
  std::vector<Tensor>& mutable_parameters() {
    ++version_;
    return params_;
  }

  double forward(const Tensor& x) const {
    Tensor xin = canonical_input_(x);
    ensure_tape_(xin.shape());
    return tape_->value(xin);
  }

  Tensor grad_x(const Tensor& x) const {
    Tensor xin = canonical_input_(x);
    ensure_tape_(xin.shape());
    Tensor g = tape_->grad_x(xin);
    return Tensor(x.shape(), g.values());
  }

  std::vector<Tensor> grad_theta(const Tensor& x, double* value = nullptr) const {
    Tensor xin = canonical_input_(x);
    ensure_tape_(xin.shape());
    return tape_->grad_theta(xin, value);
  }

  // Parameter gradient of the Lipschitz penalty (||grad_x psi(x)|| - 1)_+^2.
  ad::PenaltyGrad penalty_grad_theta(const Tensor& x) const {
    Tensor xin = canonical_input_(x);
    ensure_tape_(xin.shape());
    return tape_->penalty_grad_theta(xin);
  }

 private:
  // Accepts (H,W) images for single-channel configs and flat vectors for
  // dense-only configs.
  Tensor canonical_input_(const Tensor& x) const {
    const auto& in = arch_.input_shape;
    if (in.size() == 1) {
      if (x.numel() != in[0])
        throw std::invalid_argument("critic: input has " + std::to_string(x.numel()) +
                                    " values, expected " + std::to_string(in[0]));
      return Tensor({in[0]}, x.values());
    }
    std::vector<int> s = x.shape();
    if (s.size() == 2 && in[0] == 1) s = {1, s[0], s[1]};
    if (s.size() != 3 || s[0] != in[0])
      throw std::invalid_argument("critic: input shape " + Tensor::shape_string(x.shape()) +
                                  " does not match configured channels");
    if (arch_.head == Head::GlobalDense && (s[1] != in[1] || s[2] != in[2]))
      throw std::invalid_argument("critic: global head requires " + std::to_string(in[1]) + "x" +
                                  std::to_string(in[2]) + " input, got " + std::to_string(s[1]) +
                                  "x" + std::to_string(s[2]));
    return Tensor(s, x.values());
  }

  void ensure_tape_(const std::vector<int>& input_shape) const {
    if (tape_ && tape_shape_ == input_shape) {
      if (synced_version_ != version_) {
        tape_->set_theta(params_);
        synced_version_ = version_;
      }
      return;
    }
    const ArchDescriptor& a = arch_;
    auto build = [&a, &input_shape](auto& g) -> ad::Binding {
      using S = typename std::remove_reference_t<decltype(g)>::scalar_type;
      ad::Binding b;
      b.x = g.leaf(TensorT<S>(input_shape));
      int cur = b.x;
      int ci = input_shape.size() == 3 ? input_shape[0] : 0;
      for (const auto& c : a.conv) {
        int w = g.leaf(TensorT<S>({c.channels, ci, c.kernel, c.kernel}));
        int bias = g.leaf(TensorT<S>({c.channels}));
        b.theta.push_back(w);
        b.theta.push_back(bias);
        cur = g.conv2d(cur, w, bias, c.stride, (c.kernel - 1) / 2);
        cur = g.leaky_relu(cur, a.leaky_slope);
        ci = c.channels;
      }
      if (a.head == Head::GlobalDense) {
        int in = g.value(cur).numel();
        cur = g.reshape(cur, {in});
        for (std::size_t i = 0; i < a.dense.size(); ++i) {
          int w = g.leaf(TensorT<S>({a.dense[i], in}));
          int bias = g.leaf(TensorT<S>({a.dense[i]}));
          b.theta.push_back(w);
          b.theta.push_back(bias);
          cur = g.add(g.matmul(w, cur), bias);
          if (i + 1 < a.dense.size()) cur = g.leaky_relu(cur, a.leaky_slope);
          in = a.dense[i];
        }
        b.root = cur;
      } else {
        int w = g.leaf(TensorT<S>({1, ci, 1, 1}));
        int bias = g.leaf(TensorT<S>({1}));
        b.theta.push_back(w);
        b.theta.push_back(bias);
        cur = g.conv2d(cur, w, bias, 1, 0);
        b.root = g.mean(cur);
      }
      return b;
    };
    tape_ = std::make_unique<ad::TapePair>(build);
    tape_shape_ = input_shape;
    tape_->set_theta(params_);
    synced_version_ = version_;
  }

  ArchDescriptor arch_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  std::uint64_t version_ = 0;
  mutable std::unique_ptr<ad::TapePair> tape_;
  mutable std::vector<int> tape_shape_;
  mutable std::uint64_t synced_version_ = ~0ULL;
};

inline CriticNetwork build_critic(const ArchDescriptor& arch, std::uint64_t seed) {
  return CriticNetwork(arch, seed);
}

inline double critic_forward(const CriticNetwork& net, const Tensor& x) {
  return net.forward(x);
}

namespace detail {

constexpr std::uint16_t kWeightsVersion = 1;

inline void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_f64(std::ostream& os, double x) {
  auto v = std::bit_cast<std::uint64_t>(x);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void need(std::istream& is, char* dst, std::streamsize n, const char* what) {
  is.read(dst, n);
  if (is.gcount() != n) throw std::runtime_error(std::string("weights file truncated in ") + what);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  need(is, reinterpret_cast<char*>(b), 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  need(is, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  unsigned char b[8];
  need(is, reinterpret_cast<char*>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

// Format: "ADVR", u16 version, length-prefixed canonical architecture text,
// then per-parameter records (name, shape, little-endian f64 data).
inline void save_weights(const CriticNetwork& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_weights: cannot open " + path);
  os.write("ADVR", 4);
  detail::put_u16(os, detail::kWeightsVersion);
  std::string desc = net.arch().canonical_text();
  detail::put_u32(os, static_cast<std::uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(net.parameters().size()));
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const std::string& name = net.parameter_names()[i];
    const Tensor& p = net.parameters()[i];
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.shape().size()));
    for (int e : p.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (int j = 0; j < p.numel(); ++j) detail::put_f64(os, p[j]);
  }
  if (!os) throw std::runtime_error("save_weights: write failed for " + path);
}

inline CriticNetwork load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_weights: cannot open " + path);
  char magic[4];
  detail::need(is, magic, 4, "magic");
  if (std::string(magic, 4) != "ADVR")
    throw std::runtime_error("load_weights: bad magic, not a weights file");
  std::uint16_t version = detail::get_u16(is, "version");
  if (version != detail::kWeightsVersion)
    throw std::runtime_error("load_weights: unsupported version " + std::to_string(version));
  std::uint32_t desc_len = detail::get_u32(is, "descriptor length");
  std::string desc(desc_len, '\0');
  detail::need(is, desc.data(), desc_len, "descriptor");
  ArchDescriptor arch = ArchDescriptor::parse(desc);
  auto layout = parameter_layout(arch);
  std::uint32_t count = detail::get_u32(is, "parameter count");
  if (count != layout.size())
    throw std::runtime_error("load_weights: descriptor expects " +
                             std::to_string(layout.size()) + " parameters, file has " +
                             std::to_string(count));
  CriticNetwork net(arch, 0);
  auto& params = net.mutable_parameters();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::get_u32(is, "name length");
    std::string name(name_len, '\0');
    detail::need(is, name.data(), name_len, "name");
    if (name != layout[i].first)
      throw std::runtime_error("load_weights: parameter '" + name + "' where '" +
                               layout[i].first + "' was expected");
    std::uint32_t rank = detail::get_u32(is, "rank");
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(detail::get_u32(is, "extent"));
    if (shape != layout[i].second)
      throw std::runtime_error("load_weights: shape of '" + name +
                               "' disagrees with the architecture descriptor");
    Tensor p(shape);
    for (int j = 0; j < p.numel(); ++j) p[j] = detail::get_f64(is, "values");
    params[i] = std::move(p);
  }
  return net;
}

}  // namespace advreg::nets
