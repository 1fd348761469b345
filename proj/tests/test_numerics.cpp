#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>

#include "helpers.hpp"
#include "ospg/adapter.hpp"
#include "ospg/encoder.hpp"
#include "ospg/gradcheck.hpp"
#include "ospg/lm.hpp"
#include "ospg/ops.hpp"
#include "ospg/optim.hpp"

using namespace ospg;
using namespace ospg::num;
using testutil::random_tensor;
using testutil::values;

namespace {

// Hand triple loop, the oracle for matmul.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

// Weighted sum against fixed random coefficients, so every output element
// contributes a distinct amount to the probe.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor<double>(y.dims(), rng);
  return sum(mul(y, w));
}

constexpr double kH = 1e-3;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("tensor storage is cache-line aligned") {
  // Results must not depend on where the allocator happens to put a buffer.
  const auto aligned = [](const auto& t) { return reinterpret_cast<std::uintptr_t>(t.data().data()) % 64 == 0; };
  std::vector<Tensor<float>> keep;
  for (int n = 1; n < 20; ++n) {
    Tensor<float> a(Shape{n, 3}, std::vector<float>(3 * n, 1.0f), true);
    Tensor<float> b = Tensor<float>::zeros({3, n});
    auto c = matmul(a, b);
    sum(c).backward();
    CHECK(aligned(a));
    CHECK(aligned(c));
    CHECK(reinterpret_cast<std::uintptr_t>(a.grad().data()) % 64 == 0);
    keep.push_back(c);
  }
}

TEST_CASE("matmul examples") {
  Tensor<float> eye({2, 2}, {1, 0, 0, 1});
  Tensor<float> m({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(eye, m)) == std::vector<float>{1, 2, 3, 4});

  Tensor<float> b({2, 2}, {5, 6, 7, 8});
  CHECK(values(matmul(m, b)) == std::vector<float>{19, 22, 43, 50});

  std::mt19937_64 rng(3);
  auto any = random_tensor<float>({3, 4}, rng);
  auto z = matmul(Tensor<float>::zeros({2, 3}), any);
  CHECK(z.dims() == Shape{2, 4});
  for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("matmul agrees with the triple loop on random shapes") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = dim(rng), k = dim(rng), n = dim(rng);
    auto a = random_tensor<double>({m, k}, rng);
    auto b = random_tensor<double>({k, n}, rng);
    auto c = matmul(a, b);
    REQUIRE(c.dims() == Shape{m, n});
    auto ref = naive_matmul(values(a), values(b), m, k, n);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto u = softmax(Tensor<float>({4}, {0, 0, 0, 0}));
  for (float v : u.data()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));

  auto p = softmax(Tensor<double>({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  CHECK(p.data()[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(p.data()[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

  std::mt19937_64 rng(5);
  auto x = random_tensor<float>({3, 7}, rng, -5, 5);
  auto shifted = Tensor<float>(x.dims(), values(x));
  for (float& v : shifted.data_mut()) v += 100.0f;
  auto a = softmax(x);
  auto b = softmax(shifted);
  for (int r = 0; r < 3; ++r) {
    double total = 0;
    for (int c = 0; c < 7; ++c) {
      CHECK(a.at(r, c) > 0.0f);
      CHECK(a.at(r, c) == doctest::Approx(b.at(r, c)).epsilon(1e-5));
      total += a.at(r, c);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("layer_norm examples") {
  auto gamma = Tensor<double>::full({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  auto z = layer_norm(Tensor<double>::full({4}, 3.5), gamma, beta);
  for (double v : z.data()) CHECK(v == doctest::Approx(0.0));

  auto two = layer_norm(Tensor<double>({2}, {1, 3}), Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}),
                        1e-12);
  CHECK(two.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(two.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

  std::mt19937_64 rng(8);
  auto x = random_tensor<double>({5, 6}, rng, -3, 3);
  auto y = layer_norm(x, Tensor<double>::full({6}, 1.0), Tensor<double>::full({6}, 0.7));
  auto n = layer_norm(x, Tensor<double>::full({6}, 1.0), Tensor<double>::zeros({6}));
  for (int r = 0; r < 5; ++r) {
    double mean = 0, var = 0, ymean = 0;
    for (int c = 0; c < 6; ++c) {
      mean += n.at(r, c);
      ymean += y.at(r, c);
    }
    mean /= 6;
    for (int c = 0; c < 6; ++c) var += (n.at(r, c) - mean) * (n.at(r, c) - mean);
    var /= 6;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(ymean / 6 == doctest::Approx(0.7).epsilon(1e-5));
  }
}

TEST_CASE("conv2d examples") {
  std::vector<float> grid(16);
  for (int i = 0; i < 16; ++i) grid[i] = static_cast<float>(i);
  Tensor<float> x({1, 4, 4}, grid);
  auto y = conv2d(x, Tensor<float>({1, 1, 1, 1}, {1}), Tensor<float>{}, {2, 1, 0, 0});
  REQUIRE(y.dims() == Shape{1, 2, 4});
  CHECK(values(y) == std::vector<float>{0, 1, 2, 3, 8, 9, 10, 11});

  auto nine = conv2d(Tensor<float>::full({1, 3, 3}, 1), Tensor<float>::full({1, 1, 3, 3}, 1), Tensor<float>{}, {});
  REQUIRE(nine.dims() == Shape{1, 1, 1});
  CHECK(nine.item() == 9.0f);

  auto halved = conv2d(Tensor<float>::zeros({1, 16, 5}), Tensor<float>::zeros({2, 1, 1, 1}), Tensor<float>{}, {2, 1, 0, 0});
  CHECK(halved.dims() == Shape{2, 8, 5});

  CHECK_THROWS_AS(conv2d(Tensor<float>::zeros({1, 2, 2}), Tensor<float>::zeros({1, 1, 3, 3}), Tensor<float>{}, {}),
                  ShapeError);
}

TEST_CASE("conv2d output shape matches the closed form") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> d(1, 8), s(1, 3), p(0, 2), k(1, 3);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = d(rng), w = d(rng), kh = k(rng), kw = k(rng), sh = s(rng), sw = s(rng), ph = p(rng), pw = p(rng);
    if (h + 2 * ph < kh || w + 2 * pw < kw) continue;
    auto y = conv2d(Tensor<float>::zeros({2, h, w}), Tensor<float>::zeros({3, 2, kh, kw}), Tensor<float>::zeros({3}),
                    {sh, sw, ph, pw});
    CHECK(y.dims() == Shape{3, (h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1});
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("conv2d matches a direct cross-correlation") {
  std::mt19937_64 rng(4);
  auto x = random_tensor<double>({2, 5, 6}, rng);
  auto k = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y = conv2d(x, k, b, {2, 2, 1, 1});
  const int ho = 3, wo = 3;
  REQUIRE(y.dims() == Shape{3, ho, wo});
  auto xv = values(x), kv = values(k);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double acc = b.data()[o];
        for (int c = 0; c < 2; ++c)
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              const int r = i * 2 - 1 + u, q = j * 2 - 1 + v;
              if (r < 0 || r >= 5 || q < 0 || q >= 6) continue;
              acc += xv[(c * 5 + r) * 6 + q] * kv[((o * 2 + c) * 3 + u) * 3 + v];
            }
        CHECK(y.data()[(o * ho + i) * wo + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("cross_entropy examples") {
  const std::vector<int> t1{3};
  const std::vector<std::uint8_t> m1{1};
  std::vector<double> peaked(16, 0.0);
  peaked[3] = 60.0;
  CHECK(cross_entropy(Tensor<double>({1, 16}, peaked), t1, m1).item() < 1e-20);

  CHECK(cross_entropy(Tensor<float>::zeros({1, 16}), t1, m1).item() == doctest::Approx(std::log(16.0)).epsilon(1e-6));
  CHECK(std::log(16.0) == doctest::Approx(2.7726).epsilon(1e-4));

  std::mt19937_64 rng(2);
  auto logits = random_tensor<double>({3, 5}, rng, -2, 2);
  const std::vector<int> targets{1, 4, 0};
  const std::vector<std::uint8_t> mask{0, 1, 0};
  auto row = slice_rows(logits, 1, 2);
  const std::vector<int> single{4};
  CHECK(cross_entropy(logits, targets, mask).item() ==
        doctest::Approx(cross_entropy(row, single, m1).item()).epsilon(1e-12));

  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, targets, none), ValueError);
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamGroup<float> g{"g", {}, true};
    Tensor<float> p({3}, {0.5f, -1.0f, 2.0f}, true);
    g.add("p", p);
    p.node()->ensure_grad();
    Adam<float> adam;
    std::vector<ParamGroup<float>> groups{g};
    adam.step(groups);
    CHECK(values(p) == std::vector<float>{0.5f, -1.0f, 2.0f});
  }
  SUBCASE("first step with g=1 moves by about lr") {
    ParamGroup<double> g{"g", {}, true};
    Tensor<double> p({1}, {1.0}, true);
    g.add("p", p);
    p.node()->ensure_grad();
    p.grad_mut()[0] = 1.0;
    Adam<double> adam({0.01, 0.9, 0.999, 1e-8});
    std::vector<ParamGroup<double>> groups{g};
    adam.step(groups);
    CHECK(p.item() == doctest::Approx(1.0 - 0.01).epsilon(1e-7));
  }
  SUBCASE("frozen group is bit-identical after 100 steps") {
    std::mt19937_64 rng(9);
    auto frozen = random_tensor<float>({4, 4}, rng, -1, 1, true);
    auto live = random_tensor<float>({4}, rng, -1, 1, true);
    const auto before = frozen.detach();
    std::vector<ParamGroup<float>> groups{{"frozen", {}, false}, {"live", {}, true}};
    groups[0].add("w", frozen);
    groups[1].add("b", live);
    Adam<float> adam;
    for (int s = 0; s < 100; ++s) {
      frozen.node()->ensure_grad();
      live.node()->ensure_grad();
      for (float& g : frozen.grad_mut()) g = 1.0f;
      for (float& g : live.grad_mut()) g = 1.0f;
      adam.step(groups);
    }
    CHECK(bit_equal(frozen, before));
    CHECK(live.data()[0] != 0.0f);
  }
  SUBCASE("missing gradient on a trainable tensor is an error") {
    std::vector<ParamGroup<float>> groups{{"g", {}, true}};
    groups[0].add("p", Tensor<float>({1}, {1.0f}, true));
    Adam<float> adam;
    CHECK_THROWS_AS(adam.step(groups), ValueError);
  }
}

TEST_CASE("finite_diff_check examples") {
  std::mt19937_64 rng(12);
  auto x = random_tensor<double>({6}, rng);
  auto sq = finite_diff_check<double>([&] { return sum(mul(x, x)); }, x, kH, 1e-6);
  CHECK(sq.passed);
  CHECK(sq.max_rel_error < 1e-6);

  auto w = random_tensor<double>({6}, rng);
  auto lin = finite_diff_check<double>([&] { return sum(mul(x, w)); }, x, kH, 1e-9);
  CHECK(lin.max_rel_error < 1e-9);

  auto kernels = random_tensor<double>({2, 1, 3, 3}, rng);
  auto img = random_tensor<double>({1, 5, 5}, rng);
  const std::vector<int> targets{0, 3, 1};
  const std::vector<std::uint8_t> mask{1, 1, 1};
  auto composite = [&] {
    auto y = conv2d(img, kernels, Tensor<double>{}, {2, 2, 1, 1});  // [2,3,3]
    auto rows = reshape(y, {3, 6});
    auto p = softmax(rows);
    return cross_entropy(scale(p, 4.0), targets, mask);
  };
  CHECK(finite_diff_check<double>(composite, kernels, kH, kTol).passed);
  CHECK(finite_diff_check<double>(composite, img, kH, kTol).passed);
}

TEST_CASE("gradient check for every primitive on random small tensors") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 5; ++trial) {
    CAPTURE(trial);
    const int m = dim(rng), k = dim(rng), n = dim(rng);
    {
      auto a = random_tensor<double>({m, k}, rng);
      auto b = random_tensor<double>({k, n}, rng);
      auto f = [&] { return probe(matmul(a, b), 1); };
      CHECK(finite_diff_check<double>(f, a, kH, kTol).passed);
      CHECK(finite_diff_check<double>(f, b, kH, kTol).passed);
    }
    {
      auto x = random_tensor<double>({m, n}, rng, -2, 2);
      CHECK(finite_diff_check<double>([&] { return probe(softmax(x), 2); }, x, kH, kTol).passed);
    }
    {
      auto x = random_tensor<double>({m, n + 1}, rng, -2, 2);
      auto g = random_tensor<double>({n + 1}, rng, 0.5, 1.5);
      auto b = random_tensor<double>({n + 1}, rng);
      auto f = [&] { return probe(layer_norm(x, g, b), 3); };
      CHECK(finite_diff_check<double>(f, x, kH, kTol).passed);
      CHECK(finite_diff_check<double>(f, g, kH, kTol).passed);
      CHECK(finite_diff_check<double>(f, b, kH, kTol).passed);
    }
    {
      const int h = dim(rng) + 2, w = dim(rng) + 2;
      auto x = random_tensor<double>({2, h, w}, rng);
      auto kern = random_tensor<double>({3, 2, 3, 3}, rng);
      auto bias = random_tensor<double>({3}, rng);
      auto f = [&] { return probe(conv2d(x, kern, bias, {2, 1, 1, 0}), 4); };
      CHECK(finite_diff_check<double>(f, x, kH, kTol).passed);
      CHECK(finite_diff_check<double>(f, kern, kH, kTol).passed);
      CHECK(finite_diff_check<double>(f, bias, kH, kTol).passed);
    }
    {
      auto logits = random_tensor<double>({m, n + 1}, rng, -2, 2);
      std::vector<int> targets(m);
      std::vector<std::uint8_t> mask(m);
      for (int i = 0; i < m; ++i) {
        targets[i] = static_cast<int>(rng() % (n + 1));
        mask[i] = (i % 2 == 0) ? 1 : 0;
      }
      CHECK(finite_diff_check<double>([&] { return cross_entropy(logits, targets, mask); }, logits, kH, kTol).passed);
    }
    {
      auto table = random_tensor<double>({n + 2, k}, rng);
      std::vector<int> ids(m);
      for (int& id : ids) id = static_cast<int>(rng() % (n + 2));
      CHECK(finite_diff_check<double>([&] { return probe(embedding(table, ids), 5); }, table, kH, kTol).passed);
    }
    {
      const int heads = 2, width = 2 * std::max(1, k / 2);
      auto q = random_tensor<double>({m, width}, rng);
      auto kk = random_tensor<double>({m, width}, rng);
      auto v = random_tensor<double>({m, width}, rng);
      for (bool causal : {false, true}) {
        auto f = [&] { return probe(attention(q, kk, v, heads, causal), 6); };
        CHECK(finite_diff_check<double>(f, q, kH, kTol).passed);
        CHECK(finite_diff_check<double>(f, kk, kH, kTol).passed);
        CHECK(finite_diff_check<double>(f, v, kH, kTol).passed);
      }
    }
  }
}

TEST_CASE("gradient check through encode, adapt, the LM and the loss") {
  model::EncoderConfig ec;
  ec.n_mels = 6;
  ec.width = 8;
  ec.layers = 1;
  ec.heads = 2;
  ec.frozen = false;
  model::AdapterConfig ac;
  ac.input_width = 8;
  ac.conv_channels = 2;
  ac.layers = 1;
  ac.heads = 2;
  ac.output_width = 8;
  lm::LmConfig lc;
  lc.width = 8;
  lc.layers = 1;
  lc.heads = 2;
  lc.vocab_size = 11;
  model::Encoder<double> enc(ec, 1);
  model::Adapter<double> ad(ac, 2);
  lm::CausalLm<double> lmod(lc, 3);
  auto lora = lm::Lora<double>::init(lc, {2, 4.0}, 4);
  // Nonzero up-projections so LoRA paths carry gradient in both factors.
  std::mt19937_64 rng(17);
  for (auto& b : lora.blocks) {
    for (auto* pair : {&b.query, &b.value})
      for (double& v : pair->up.data_mut()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  }
  auto mel = random_tensor<double>({7, 6}, rng);
  const std::vector<int> right{3, 4, 5};
  auto loss = [&] {
    auto h = enc.encode(mel);
    auto z = ad.adapt(h);
    auto seq = lm::assemble_hybrid<double>({1, 2}, z, right, 8);
    auto logits = lmod.forward(seq, &lora);
    const int rows = logits.dim(0);
    std::vector<int> targets(rows);
    std::vector<std::uint8_t> mask(rows, 1);
    for (int i = 0; i < rows; ++i) targets[i] = (i * 7 + 3) % 11;
    return cross_entropy(logits, targets, mask);
  };
  // Deep graph: h=1e-3 truncation error swamps the smallest (~1e-6) weight
  // gradients, so this check uses a finer step.
  constexpr double h = 1e-5;
  CHECK(finite_diff_check<double>(loss, mel, h, kTol).passed);
  int checked = 0;
  auto check_all = [&](const std::string& name, Tensor<double>& t) {
    CAPTURE(name);
    auto r = finite_diff_check<double>(loss, t, h, kTol);
    CAPTURE(r.max_rel_error);
    CAPTURE(r.analytic);
    CAPTURE(r.numeric);
    CHECK(r.passed);
    ++checked;
  };
  enc.visit("encoder.", check_all);
  ad.visit("adapter.", check_all);
  lora.visit("lora.", check_all);
  CHECK(checked > 20);
}

TEST_CASE("determinism: same inputs give bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto a = random_tensor<float>({4, 5}, rng, -1, 1, true);
    auto b = random_tensor<float>({5, 3}, rng, -1, 1, true);
    auto y = softmax(matmul(a, b));
    auto s = sum(mul(y, y));
    s.backward();
    return std::make_tuple(values(y), std::vector<float>(a.grad().begin(), a.grad().end()));
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite values are rejected") {
  Tensor<float> x({2}, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(scale(x, 1.0f), NumericError);
}
