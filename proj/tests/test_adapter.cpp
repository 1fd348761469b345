#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "ospg/adapter.hpp"
#include "ospg/gradcheck.hpp"

using namespace ospg;
using namespace ospg::num;
using testutil::random_tensor;

namespace {
model::AdapterConfig small() {
  model::AdapterConfig c;
  c.input_width = 16;
  c.conv_channels = 4;
  c.layers = 1;
  c.heads = 4;
  c.ff_mult = 2;
  c.output_width = 12;
  return c;
}
}  // namespace

TEST_CASE("downsample time length") {
  model::Adapter<float> ad(model::AdapterConfig{}, 1);
  CHECK(ad.downsample(Tensor<float>::zeros({16, 64})).dim(1) == 4);
  CHECK(ad.downsample(Tensor<float>::zeros({1, 64})).dim(1) == 1);
  CHECK(ad.downsample(Tensor<float>::zeros({17, 64})).dim(1) == 5);
  CHECK(ad.downsample(Tensor<float>::zeros({16, 64})).dim(0) == 8);
}

TEST_CASE("compression and width laws") {
  std::mt19937_64 rng(2);
  model::Adapter<float> ad(model::AdapterConfig{}, 1);
  auto z = ad.adapt(random_tensor<float>({16, 64}, rng));
  CHECK(z.dims() == Shape{4, 64});
  for (int t = 1; t <= 64; ++t) {
    CAPTURE(t);
    CHECK(ad.adapt(random_tensor<float>({t, 64}, rng)).dims() == Shape{(t + 3) / 4, 64});
    CHECK(model::compressed_length(t) == (t + 3) / 4);
  }
  for (int width : {8, 12, 32, 96}) {
    auto cfg = small();
    cfg.output_width = width;
    model::Adapter<float> other(cfg, 3);
    CHECK(other.adapt(random_tensor<float>({7, 16}, rng)).dim(1) == width);
  }
}

TEST_CASE("zero input gives identical rows") {
  // Conv biases are zero at init, so the conv stack maps zero input to zero
  // and zero padding at the grid edges has nothing to disturb.
  auto cfg = small();
  cfg.positions = false;
  model::Adapter<float> ad(cfg, 4);
  ad.visit("", [](const std::string& name, Tensor<float>& t) {
    if (name == "proj.b" || name == "norm.beta")
      for (std::size_t i = 0; i < t.size(); ++i) t.data_mut()[i] = 0.1f * static_cast<float>(i + 1);
  });
  auto z = ad.adapt(Tensor<float>::zeros({24, 16}));
  REQUIRE(z.dim(0) == 6);
  bool nonzero = false;
  for (int r = 1; r < 6; ++r)
    for (int c = 0; c < z.dim(1); ++c) CHECK(z.at(r, c) == doctest::Approx(z.at(0, c)).epsilon(1e-6));
  for (int c = 0; c < z.dim(1); ++c) nonzero = nonzero || z.at(0, c) != 0.0f;
  CHECK(nonzero);
}

TEST_CASE("adapter width mismatch is an error") {
  model::Adapter<float> ad(small(), 1);
  CHECK_THROWS_AS(ad.adapt(Tensor<float>::zeros({8, 15})), ShapeError);
}

TEST_CASE("finite differences through adapt") {
  model::Adapter<double> ad(small(), 5);
  std::mt19937_64 rng(5);
  auto h = random_tensor<double>({9, 16}, rng);
  auto w = random_tensor<double>({3, 12}, rng);
  auto f = [&] { return sum(mul(ad.adapt(h), w)); };
  CHECK(finite_diff_check<double>(f, h, 1e-3, 1e-4).passed);
}

TEST_CASE("every adapter parameter receives a nonzero gradient") {
  model::Adapter<double> ad(small(), 6);
  std::mt19937_64 rng(6);
  auto h = random_tensor<double>({13, 16}, rng);
  auto w = random_tensor<double>({4, 12}, rng);
  std::vector<std::pair<std::string, Tensor<double>>> params;
  ad.visit("", [&](const std::string& name, Tensor<double>& t) {
    t.set_requires_grad(true);
    t.clear_grad();
    params.emplace_back(name, t);
  });
  sum(mul(ad.adapt(h), w)).backward();
  for (auto& [name, t] : params) {
    CAPTURE(name);
    REQUIRE(t.has_grad());
    bool any = false;
    for (double g : t.grad()) any = any || g != 0.0;
    CHECK(any);
  }
}
