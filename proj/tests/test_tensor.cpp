#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "loco/nn.hpp"
#include "loco/optim.hpp"
#include "loco/tensor.hpp"

using namespace loco;

namespace {

// Reference matmul: plain triple loop, no blocking, no reassociation tricks.
std::vector<double> matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                               std::int64_t m, std::int64_t k, std::int64_t n) {
  std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// Reference conv: direct nested loops over every output element and tap.
std::vector<double> conv_ref(const std::vector<double>& x, const std::vector<double>& w,
                             int B, int Ci, int H, int W, int Co, int kh, int kw, int stride,
                             int pad, int Ho, int Wo) {
  std::vector<double> out(static_cast<std::size_t>(B) * Co * Ho * Wo, 0.0);
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double s = 0.0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const int iy = oy * stride + u - pad;
                const int ix = ox * stride + v - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += x[((b * Ci + ci) * H + iy) * W + ix] * w[((co * Ci + ci) * kh + u) * kw + v];
              }
          out[((b * Co + co) * Ho + oy) * Wo + ox] = s;
        }
  return out;
}

}  // namespace

TEST_CASE("factories and shape validation") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
  CHECK_THROWS_AS(z.item(), ShapeError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("elementwise broadcast semantics") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3}, {10, 20, 30});
  Tensor c = add(a, b);
  const std::vector<double> want{11, 22, 33, 14, 25, 36};
  for (int i = 0; i < 6; ++i) CHECK(c.values()[i] == want[i]);

  Tensor s = Tensor::scalar(2.0);
  Tensor d = mul(a, s);
  CHECK(d.values()[5] == 12.0);

  Tensor bad = Tensor::from_data({2}, {1, 2});
  CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("matmul small hand value") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, b).item() == 11.0);
}

TEST_CASE("matmul matches triple-loop reference") {
  Rng rng(123);
  const int m = 7, k = 5, n = 4;
  Tensor a = Tensor::uniform({m, k}, -1, 1, rng);
  Tensor b = Tensor::uniform({k, n}, -1, 1, rng);
  Tensor c = matmul(a, b);
  auto ref = matmul_ref({a.values().begin(), a.values().end()},
                        {b.values().begin(), b.values().end()}, m, k, n);
  for (int i = 0; i < m * n; ++i) CHECK(c.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  // batched lhs, shared rhs
  Tensor ab = Tensor::uniform({3, 2, 4}, -1, 1, rng);
  Tensor bb = Tensor::uniform({4, 5}, -1, 1, rng);
  Tensor cb = matmul(ab, bb);
  CHECK(cb.shape() == Shape{3, 2, 5});
  for (int p = 0; p < 3; ++p) {
    std::vector<double> ap(ab.values().begin() + p * 8, ab.values().begin() + (p + 1) * 8);
    auto refp = matmul_ref(ap, {bb.values().begin(), bb.values().end()}, 2, 4, 5);
    for (int i = 0; i < 10; ++i)
      CHECK(cb.values()[p * 10 + i] == doctest::Approx(refp[i]).epsilon(1e-12));
  }

  // batched both sides
  Tensor b3 = Tensor::uniform({3, 4, 5}, -1, 1, rng);
  Tensor c3 = matmul(ab, b3);
  CHECK(c3.shape() == Shape{3, 2, 5});
  for (int p = 0; p < 3; ++p) {
    std::vector<double> ap(ab.values().begin() + p * 8, ab.values().begin() + (p + 1) * 8);
    std::vector<double> bp(b3.values().begin() + p * 20, b3.values().begin() + (p + 1) * 20);
    auto refp = matmul_ref(ap, bp, 2, 4, 5);
    for (int i = 0; i < 10; ++i)
      CHECK(c3.values()[p * 10 + i] == doctest::Approx(refp[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({6, 2})), ShapeError);
}

TEST_CASE("conv2d all-ones sanity") {
  Tensor x = Tensor::full({1, 5, 5}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(x, w, 1, 1);
  CHECK(y.shape() == Shape{1, 5, 5});
  // interior taps see the full 3x3 window, corners only 2x2
  CHECK(y.values()[12] == 9.0);
  CHECK(y.values()[0] == 4.0);
  CHECK(y.values()[2] == 6.0);
}

TEST_CASE("conv2d matches direct reference") {
  Rng rng(7);
  const int B = 2, Ci = 3, H = 9, W = 9, Co = 4, kh = 3, kw = 3, stride = 2, pad = 1;
  Tensor x = Tensor::uniform({B, Ci, H, W}, -1, 1, rng);
  Tensor w = Tensor::uniform({Co, Ci, kh, kw}, -1, 1, rng);
  Tensor y = conv2d(x, w, stride, pad);
  CHECK(y.shape() == Shape{B, Co, 5, 5});
  auto ref = conv_ref({x.values().begin(), x.values().end()},
                      {w.values().begin(), w.values().end()}, B, Ci, H, W, Co, kh, kw, stride,
                      pad, 5, 5);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-10));

  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 2, 3, 3}), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, w, 4, 0), ConfigError);  // (9-3) % 4 != 0
}

TEST_CASE("softmax known distribution and row sums") {
  Tensor x = Tensor::from_data({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tensor s = softmax(x, 0);
  CHECK(s.values()[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(s.values()[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

  Rng rng(99);
  Tensor big = Tensor::uniform({4, 17, 17}, -30, 30, rng);
  Tensor sm = softmax(big, 2);
  for (int r = 0; r < 4 * 17; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 17; ++j) sum += sm.values()[r * 17 + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm forward") {
  LayerNorm ln(4);
  Tensor x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  Tensor y = ln.forward(x);
  CHECK(y.values()[0] == doctest::Approx(-1.34164).epsilon(1e-3));
  CHECK(y.values()[1] == doctest::Approx(-0.447214).epsilon(1e-3));
  CHECK(y.values()[2] == doctest::Approx(0.447214).epsilon(1e-3));
  CHECK(y.values()[3] == doctest::Approx(1.34164).epsilon(1e-3));
  // constant row collapses to the bias
  Tensor c = Tensor::full({2, 4}, 3.0);
  Tensor yc = ln.forward(c);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(yc.values()[i]) < 1e-3);
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor y = sum_all(add(mul(x, x), x));  // d/dx (x^2 + x) = 2x + 1
  backward(y);
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == 5.0);
  CHECK(x.grad()[2] == 7.0);

  // grads accumulate additively across separate backward passes
  Tensor y2 = sum_all(mul(x, x));
  backward(y2);
  CHECK(x.grad()[1] == 5.0 + 4.0);
}

TEST_CASE("no-grad guard suppresses the tape") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = sum_all(mul(x, x));
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(backward(y), RuntimeFault);
}

TEST_CASE("finite-difference checks per op") {
  Rng rng(2024);
  auto check_op = [&](const std::function<Tensor(std::span<const Tensor>)>& f,
                      std::vector<Tensor> inputs, double tol = 1e-6) {
    const double err = grad_check(f, inputs, 1e-5);
    CHECK(err < tol);
  };

  check_op([](std::span<const Tensor> in) { return sum_all(mul(in[0], in[1])); },
           {Tensor::uniform({3, 4}, -1, 1, rng), Tensor::uniform({4}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(divide(in[0], in[1])); },
           {Tensor::uniform({3, 4}, -1, 1, rng), Tensor::uniform({4}, 1.0, 2.0, rng)});
  check_op([](std::span<const Tensor> in) { return mean_all(matmul(in[0], in[1])); },
           {Tensor::uniform({3, 5}, -1, 1, rng), Tensor::uniform({5, 2}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return mean_all(matmul(in[0], in[1])); },
           {Tensor::uniform({2, 3, 5}, -1, 1, rng), Tensor::uniform({2, 5, 4}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(conv2d(in[0], in[1], 2, 1)); },
           {Tensor::uniform({2, 2, 5, 5}, -1, 1, rng), Tensor::uniform({3, 2, 3, 3}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(square(softmax(in[0], 1))); },
           {Tensor::uniform({3, 5}, -1, 1, rng)});
  check_op(
      [](std::span<const Tensor> in) {
        return sum_all(square(layer_norm(in[0], in[1], in[2], 1e-5)));
      },
      {Tensor::uniform({3, 6}, -1, 1, rng), Tensor::uniform({6}, 0.5, 1.5, rng),
       Tensor::uniform({6}, -0.5, 0.5, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(exp_op(in[0])); },
           {Tensor::uniform({7}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(log_op(in[0])); },
           {Tensor::uniform({7}, 0.5, 2.0, rng)});
  // keep relu inputs away from the kink
  check_op([](std::span<const Tensor> in) { return sum_all(relu(in[0])); },
           {Tensor::uniform({8}, 0.2, 1.0, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(minimum(in[0], in[1])); },
           {Tensor::uniform({6}, -1, -0.2, rng), Tensor::uniform({6}, 0.2, 1.0, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(clamp_op(in[0], -10, 10)); },
           {Tensor::uniform({6}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(transpose_last2(in[0])); },
           {Tensor::uniform({2, 3, 4}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(square(slice(in[0], 1, 1, 3))); },
           {Tensor::uniform({2, 4}, -1, 1, rng)});
  check_op(
      [](std::span<const Tensor> in) {
        const Tensor parts[] = {in[0], in[1]};
        return sum_all(square(concat(parts, 1)));
      },
      {Tensor::uniform({2, 3}, -1, 1, rng), Tensor::uniform({2, 2}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(square(mean_over(in[0], 1))); },
           {Tensor::uniform({3, 4}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(square(sum_over(in[0], 0))); },
           {Tensor::uniform({3, 4}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return sum_all(bias_add_channels(in[0], in[1])); },
           {Tensor::uniform({2, 3, 2, 2}, -1, 1, rng), Tensor::uniform({3}, -1, 1, rng)});
  check_op([](std::span<const Tensor> in) { return mean_all(square(reshape(in[0], {6}))); },
           {Tensor::uniform({2, 3}, -1, 1, rng)});
}

TEST_CASE("finite-difference check through a composite mlp") {
  Rng rng(5);
  // x[4x3] -> relu(x W1 + b1) W2 + b2 -> mean
  std::vector<Tensor> inputs = {
      Tensor::uniform({4, 3}, -1, 1, rng), Tensor::uniform({3, 5}, -1, 1, rng),
      Tensor::uniform({5}, -0.5, 0.5, rng), Tensor::uniform({5, 2}, -1, 1, rng),
      Tensor::uniform({2}, -0.5, 0.5, rng)};
  auto f = [](std::span<const Tensor> in) {
    Tensor h = relu(add(matmul(in[0], in[1]), in[2]));
    return mean_all(add(matmul(h, in[3]), in[4]));
  };
  CHECK(grad_check(f, inputs, 1e-5) < 1e-6);
}

TEST_CASE("gemm determinism across worker counts") {
  Rng rng(31);
  Tensor a = Tensor::uniform({64, 96}, -1, 1, rng);
  Tensor b = Tensor::uniform({96, 80}, -1, 1, rng);
  set_worker_count(1);
  Tensor c1 = matmul(a, b);
  set_worker_count(4);
  Tensor c2 = matmul(a, b);
  set_worker_count(0);
  for (std::int64_t i = 0; i < c1.numel(); ++i) CHECK(c1.values()[i] == c2.values()[i]);
}

TEST_CASE("adam first step oracle") {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  p.grad_mut()[0] = 1.0;
  AdamState st;
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(p, st, cfg, 1);
  // mhat = vhat = 1 after bias correction, so the step is -lr/(1+eps)
  CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam drives a quadratic to its minimum") {
  Tensor x = Tensor::from_data({1}, {0.0}, true);
  Adam opt;
  opt.add_group({x}, 0.05);
  for (int i = 0; i < 4000; ++i) {
    opt.zero_grad();
    Tensor loss = square(add_scalar(x, -3.0));
    backward(loss);
    opt.step();
  }
  CHECK(std::abs(x.values()[0] - 3.0) < 1e-3);
  CHECK(opt.step_count() == 4000);
}

TEST_CASE("linear and mlp modules") {
  Rng rng(11);
  Linear l(4, 3, rng);
  CHECK(l.weight.shape() == Shape{4, 3});
  for (double b : l.bias.values()) CHECK(b == 0.0);
  const double bound = 1.0 / std::sqrt(4.0);
  for (double w : l.weight.values()) {
    CHECK(w >= -bound);
    CHECK(w <= bound);
  }
  Tensor x = Tensor::uniform({5, 4}, -1, 1, rng);
  CHECK(l.forward(x).shape() == Shape{5, 3});
  CHECK_THROWS_AS(l.forward(Tensor::zeros({4})), ShapeError);

  const int hidden[] = {8, 8};
  MLP mlp(4, hidden, 2, rng);
  CHECK(mlp.layers.size() == 3);
  CHECK(mlp.forward(x).shape() == Shape{5, 2});
  NamedParams np;
  mlp.collect("mlp", np);
  CHECK(np.size() == 6);
  CHECK(np[0].first == "mlp.fc0.weight");

  Linear z = Linear::zero_init(3, 2);
  for (double w : z.weight.values()) CHECK(w == 0.0);
}

TEST_CASE("seeded rng reproducibility") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(42), d(43);
  bool same = true;
  for (int i = 0; i < 10; ++i) same = same && (c.normal() == d.normal());
  CHECK_FALSE(same);
}
