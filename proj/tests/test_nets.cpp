#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "advreg/nets.hpp"
#include "advreg/optim.hpp"
#include "advreg/rng.hpp"
#include "oracles.hpp"

using namespace advreg;
using namespace advreg::nets;

namespace {

Tensor random_image(int h, int w, Rng& rng) {
  Tensor t({h, w});
  for (int i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

ArchDescriptor small_arch(int h, int w) {
  ArchDescriptor a;
  a.input_shape = {1, h, w};
  a.conv = {{4, 3, 1}, {8, 3, 2}};
  a.dense = {8, 1};
  return a;
}

std::string temp_path(const char* name) {
  return std::string("advreg_test_") + name;
}

}  // namespace

TEST_CASE("default critic shape arithmetic: 64x64 input leaves a 4x4 map") {
  ArchDescriptor a = ArchDescriptor::default_critic(64, 64);
  auto [h, w] = a.conv_output_hw(64, 64);
  CHECK(h == 4);
  CHECK(w == 4);
  // flattened dense input of the default head: 128 channels * 4 * 4
  for (const auto& [name, shape] : parameter_layout(a))
    if (name == "dense0.w") CHECK(shape == std::vector<int>{256, 128 * 4 * 4});
}

TEST_CASE("build_critic is deterministic in the seed") {
  ArchDescriptor a = small_arch(8, 8);
  CriticNetwork n1(a, 99), n2(a, 99), n3(a, 100);
  bool identical = true, differs = false;
  for (std::size_t p = 0; p < n1.parameters().size(); ++p)
    for (int i = 0; i < n1.parameters()[p].numel(); ++i) {
      identical = identical && n1.parameters()[p][i] == n2.parameters()[p][i];
      differs = differs || n1.parameters()[p][i] != n3.parameters()[p][i];
    }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("build_critic rejects bad configurations") {
  ArchDescriptor odd = small_arch(9, 9);  // 9 not divisible by stride product 2
  CHECK_THROWS_AS(CriticNetwork(odd, 1), std::invalid_argument);
  ArchDescriptor zero = small_arch(8, 8);
  zero.conv[0].channels = 0;
  CHECK_THROWS_AS(CriticNetwork(zero, 1), std::invalid_argument);
}

TEST_CASE("zeroed final dense layer maps everything to zero") {
  ArchDescriptor a = small_arch(8, 8);
  CriticNetwork net(a, 7);
  auto& params = net.mutable_parameters();
  params[params.size() - 2].fill(0.0);  // dense1.w
  params[params.size() - 1].fill(0.0);  // dense1.b
  Rng rng(1);
  CHECK(net.forward(random_image(8, 8, rng)) == 0.0);
}

TEST_CASE("final dense layer is linear: scaling it scales the output") {
  ArchDescriptor a = small_arch(8, 8);
  CriticNetwork net(a, 7);
  Rng rng(2);
  Tensor x = random_image(8, 8, rng);
  double before = net.forward(x);
  auto& params = net.mutable_parameters();
  params[params.size() - 2] *= 3.0;
  params[params.size() - 1] *= 3.0;
  CHECK(net.forward(x) == Catch::Approx(3.0 * before).epsilon(1e-12));
}

TEST_CASE("forward matches the straight-line reference") {
  Rng rng(31);
  SECTION("global head") {
    ArchDescriptor a = small_arch(10, 12);
    a.conv = {{3, 3, 1}, {5, 3, 2}};
    a.dense = {6, 1};
    CriticNetwork net(a, 8);
    for (int t = 0; t < 5; ++t) {
      Tensor x = random_image(10, 12, rng);
      CHECK(net.forward(x) ==
            Catch::Approx(oracles::critic_forward_reference(a, net.parameters(), x))
                .epsilon(1e-12));
    }
  }
  SECTION("local head") {
    ArchDescriptor a;
    a.input_shape = {1, 8, 8};
    a.conv = {{4, 3, 1}, {6, 3, 2}};
    a.head = Head::LocalAveragePool;
    CriticNetwork net(a, 8);
    for (int t = 0; t < 5; ++t) {
      Tensor x = random_image(8, 8, rng);
      CHECK(net.forward(x) ==
            Catch::Approx(oracles::critic_forward_reference(a, net.parameters(), x))
                .epsilon(1e-12));
    }
  }
  SECTION("dense-only input") {
    ArchDescriptor a;
    a.input_shape = {5};
    a.dense = {7, 1};
    CriticNetwork net(a, 8);
    Tensor x({5});
    for (int i = 0; i < 5; ++i) x[i] = rng.normal();
    CHECK(net.forward(x) ==
          Catch::Approx(oracles::critic_forward_reference(a, net.parameters(), x))
              .epsilon(1e-12));
  }
}

TEST_CASE("net input gradient agrees with finite differences") {
  ArchDescriptor a = small_arch(6, 6);
  a.conv = {{3, 3, 1}};
  a.dense = {4, 1};
  CriticNetwork net(a, 19);
  Rng rng(4);
  Tensor x = random_image(6, 6, rng);
  Tensor g = net.grad_x(x);
  Tensor fd = oracles::fd_gradient([&](const Tensor& p) { return net.forward(p); }, x);
  CHECK(oracles::max_rel_err(g, fd, 1e-3) < 1e-4);
}

TEST_CASE("local head accepts other spatial sizes with the same weights") {
  ArchDescriptor a;
  a.input_shape = {1, 64, 64};
  a.conv = {{4, 3, 2}, {8, 3, 2}};
  a.head = Head::LocalAveragePool;
  CriticNetwork net(a, 3);
  Rng rng(5);
  double y64 = net.forward(random_image(64, 64, rng));
  double y128 = net.forward(random_image(128, 128, rng));
  CHECK(std::isfinite(y64));
  CHECK(std::isfinite(y128));

  // the global head pins the spatial size instead
  ArchDescriptor g = small_arch(8, 8);
  CriticNetwork gnet(g, 3);
  CHECK_THROWS_AS(gnet.forward(random_image(16, 16, rng)), std::invalid_argument);
}

TEST_CASE("local head pools patch contributions linearly") {
  // With 1x1 convs every pixel contributes independently, so swapping the
  // disjoint halves of two images permutes contributions without changing
  // their average.
  ArchDescriptor a;
  a.input_shape = {1, 8, 8};
  a.conv = {{4, 1, 1}, {4, 1, 1}};
  a.head = Head::LocalAveragePool;
  CriticNetwork net(a, 23);
  Rng rng(6);
  Tensor A = random_image(8, 8, rng), B = random_image(8, 8, rng);
  Tensor X1 = A, X2 = B;
  for (int i = 0; i < 8; ++i)
    for (int j = 4; j < 8; ++j) {
      X1[i * 8 + j] = B[i * 8 + j];
      X2[i * 8 + j] = A[i * 8 + j];
    }
  double lhs = 0.5 * (net.forward(X1) + net.forward(X2));
  double rhs = 0.5 * (net.forward(A) + net.forward(B));
  CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("adam first step moves a fresh scalar by about the learning rate") {
  std::vector<Tensor> params = {Tensor({1}, {0.0})};
  Optimizer opt({.kind = OptKind::Adam, .lr = 0.1}, params);
  opt.step(params, {Tensor({1}, {1.0})});
  CHECK(params[0][0] == Catch::Approx(-0.1).margin(1e-6));
  CHECK(params[0][0] ==
        Catch::Approx(oracles::adam_scalar_reference(0.0, {1.0}, 0.1)).epsilon(1e-15));
  CHECK(opt.step_count() == 1);

  // longer stream against the hand-executed recurrence
  std::vector<double> stream = {1.0, -0.5, 0.25, 2.0, -1.0};
  std::vector<Tensor> p2 = {Tensor({1}, {0.3})};
  Optimizer opt2({.kind = OptKind::Adam, .lr = 0.01}, p2);
  for (double g : stream) opt2.step(p2, {Tensor({1}, {g})});
  CHECK(p2[0][0] == Catch::Approx(oracles::adam_scalar_reference(0.3, stream, 0.01)).epsilon(1e-15));
}

TEST_CASE("optimizer edge cases") {
  std::vector<Tensor> params = {Tensor({2}, {1.0, 2.0}), Tensor({2}, {1.0, 2.0})};
  SECTION("zero gradient leaves parameters unchanged") {
    Optimizer opt({.kind = OptKind::Adam, .lr = 0.5}, params);
    opt.step(params, {Tensor::zeros({2}), Tensor::zeros({2})});
    CHECK(params[0][0] == 1.0);
    CHECK(params[1][1] == 2.0);
  }
  SECTION("identical parameters with identical gradients update identically") {
    for (auto kind : {OptKind::Adam, OptKind::RMSProp}) {
      auto p = params;
      Optimizer opt({.kind = kind, .lr = 0.05}, p);
      Tensor g({2}, {0.3, -0.7});
      for (int s = 0; s < 5; ++s) opt.step(p, {g, g});
      CHECK(p[0][0] == p[1][0]);
      CHECK(p[0][1] == p[1][1]);
    }
  }
  SECTION("missing or extra gradients are rejected") {
    Optimizer opt({}, params);
    CHECK_THROWS_AS(opt.step(params, {Tensor::zeros({2})}), std::invalid_argument);
    CHECK_THROWS_AS(
        opt.step(params, {Tensor::zeros({2}), Tensor::zeros({2}), Tensor::zeros({2})}),
        std::invalid_argument);
    CHECK_THROWS_AS(opt.step(params, {Tensor::zeros({2}), Tensor::zeros({3})}),
                    std::invalid_argument);
  }
}

TEST_CASE("rmsprop update matches the recurrence") {
  std::vector<Tensor> params = {Tensor({1}, {1.0})};
  Optimizer opt({.kind = OptKind::RMSProp, .lr = 0.01, .rho = 0.9, .eps = 1e-8}, params);
  double v = 0.0, theta = 1.0;
  for (double g : {0.5, -1.5, 0.75}) {
    opt.step(params, {Tensor({1}, {g})});
    v = 0.9 * v + 0.1 * g * g;
    theta -= 0.01 * g / (std::sqrt(v) + 1e-8);
  }
  CHECK(params[0][0] == Catch::Approx(theta).epsilon(1e-15));
}

TEST_CASE("weights round-trip bit-identically") {
  ArchDescriptor a = small_arch(8, 8);
  CriticNetwork net(a, 77);
  std::string path = temp_path("weights.advr");
  save_weights(net, path);
  CriticNetwork back = load_weights(path);
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (std::size_t p = 0; p < net.parameters().size(); ++p)
    for (int i = 0; i < net.parameters()[p].numel(); ++i)
      CHECK(back.parameters()[p][i] == net.parameters()[p][i]);
  Rng rng(8);
  Tensor x = random_image(8, 8, rng);
  CHECK(back.forward(x) == net.forward(x));
  CHECK(back.arch().canonical_text() == net.arch().canonical_text());
  std::remove(path.c_str());
}

TEST_CASE("weights loader rejects malformed files") {
  ArchDescriptor a = small_arch(8, 8);
  CriticNetwork net(a, 77);
  std::string path = temp_path("weights_bad.advr");

  SECTION("wrong magic") {
    std::ofstream os(path, std::ios::binary);
    os.write("NOPE", 4);
    os.close();
    CHECK_THROWS_WITH(load_weights(path), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("truncated file") {
    save_weights(net, path);
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    os.close();
    CHECK_THROWS_WITH(load_weights(path), Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("shape disagreeing with the descriptor") {
    save_weights(net, path);
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    // first parameter record: skip magic+version+descriptor+count+name, then
    // bump the first extent of conv0.w
    std::size_t off = 4 + 2;
    auto u32_at = [&](std::size_t o) {
      return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o])) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + 1])) << 8) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + 2])) << 16) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + 3])) << 24);
    };
    std::uint32_t desc_len = u32_at(off);
    off += 4 + desc_len + 4;  // descriptor, param count
    std::uint32_t name_len = u32_at(off);
    off += 4 + name_len + 4;  // name, rank
    bytes[off] = static_cast<char>(bytes[off] + 1);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.close();
    CHECK_THROWS_WITH(load_weights(path), Catch::Matchers::ContainsSubstring("shape"));
  }
  std::remove(path.c_str());
}

TEST_CASE("architecture descriptor text parses back to itself") {
  ArchDescriptor a = ArchDescriptor::default_critic(64, 64);
  ArchDescriptor b = ArchDescriptor::parse(a.canonical_text());
  CHECK(a.canonical_text() == b.canonical_text());
}
