#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "loco/encoders.hpp"

using namespace loco;

namespace {

NetConfig paper_cfg() { return NetConfig{}; }

NetConfig mini_cfg() {
  NetConfig c;
  c.depth_size = 32;
  c.proprio_hidden = {64, 64};
  c.conv_plan = {{8, 8, 4, 2}, {16, 4, 2, 1}, {16, 3, 1, 1}, {32, 2, 2, 0}};
  c.token_dim = 32;
  c.attn_dim = 32;
  c.mlp_hidden = 64;
  c.head_hidden = {64, 64};
  return c;
}

}  // namespace

TEST_CASE("paper config produces the documented shapes") {
  NetConfig cfg = paper_cfg();
  CHECK(cfg.grid_size() == 4);
  Rng rng(1);
  ProprioEncoder pe(cfg, rng);
  DepthEncoder de(cfg, rng);
  Tokenizer tok(cfg, rng);

  Tensor prop = Tensor::uniform({1, 93}, -1, 1, rng);
  Tensor depth = Tensor::uniform({1, 4, 64, 64}, 0, 1, rng);
  Tensor ef = pe.forward(prop);
  CHECK(ef.shape() == Shape{1, 256});
  Tensor vmap = de.forward(depth);
  CHECK(vmap.shape() == Shape{1, 128, 4, 4});
  Tensor tokens = tok.forward(ef, vmap);
  CHECK(tokens.shape() == Shape{1, 17, 128});
}

TEST_CASE("mini config grid") {
  NetConfig cfg = mini_cfg();
  CHECK(cfg.grid_size() == 2);
  Rng rng(2);
  DepthEncoder de(cfg, rng);
  Tensor depth = Tensor::uniform({2, 4, 32, 32}, 0, 1, rng);
  CHECK(de.forward(depth).shape() == Shape{2, 32, 2, 2});
}

TEST_CASE("zero input with zero biases gives zero features") {
  NetConfig cfg = mini_cfg();
  Rng rng(3);
  ProprioEncoder pe(cfg, rng);
  DepthEncoder de(cfg, rng);
  Tensor zp = Tensor::zeros({1, 93});
  Tensor fp = pe.forward(zp);
  for (double v : fp.values()) CHECK(v == 0.0);
  Tensor zd = Tensor::zeros({1, 4, 32, 32});
  Tensor fd = de.forward(zd);
  for (double v : fd.values()) CHECK(v == 0.0);
}

TEST_CASE("history portion of proprio affects the feature") {
  NetConfig cfg = mini_cfg();
  Rng rng(4);
  ProprioEncoder pe(cfg, rng);
  Tensor a = Tensor::uniform({1, 93}, -1, 1, rng);
  std::vector<double> bvals(a.values().begin(), a.values().end());
  for (int i = 31; i < 93; ++i) bvals[static_cast<std::size_t>(i)] += 0.5;
  Tensor b = Tensor::from_data({1, 93}, bvals);
  auto fa = pe.forward(a);
  auto fb = pe.forward(b);
  double diff = 0.0;
  for (int i = 0; i < fa.numel(); ++i) diff += std::abs(fa.values()[i] - fb.values()[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("translating input content moves the responding cell") {
  NetConfig cfg = paper_cfg();
  Rng rng(5);
  DepthEncoder de(cfg, rng);
  auto blob_at = [](int cx) {
    std::vector<double> img(4 * 64 * 64, 1.0);
    for (int s = 0; s < 4; ++s)
      for (int y = 24; y < 40; ++y)
        for (int x = cx; x < cx + 16; ++x) img[(s * 64 + y) * 64 + x] = 0.0;
    return Tensor::from_data({1, 4, 64, 64}, img);
  };
  auto cell_energy = [](const Tensor& fm) {
    // per-cell sum of |activation| over channels on the 4x4 grid
    std::vector<double> e(16, 0.0);
    for (int c = 0; c < 128; ++c)
      for (int i = 0; i < 16; ++i) e[i] += std::abs(fm.values()[c * 16 + i]);
    return e;
  };
  auto ea = cell_energy(de.forward(blob_at(8)));
  auto eb = cell_energy(de.forward(blob_at(24)));  // shifted 16 px = one grid cell
  int amax_a = 0, amax_b = 0;
  for (int i = 1; i < 16; ++i) {
    if (ea[i] > ea[amax_a]) amax_a = i;
    if (eb[i] > eb[amax_b]) amax_b = i;
  }
  CHECK(amax_a != amax_b);
}

TEST_CASE("tokenize is lossless for visual features") {
  NetConfig cfg = mini_cfg();
  Rng rng(6);
  Tokenizer tok(cfg, rng);
  const int N = cfg.grid_size(), C = cfg.token_dim;
  Tensor prop = Tensor::uniform({1, cfg.proprio_feature()}, -1, 1, rng);
  Tensor vis = Tensor::uniform({1, C, N, N}, -1, 1, rng);
  Tensor tokens = tok.forward(prop, vis);
  REQUIRE(tokens.shape() == Shape{1, N * N + 1, C});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int c = 0; c < C; ++c) {
        const double tv = tokens.values()[(1 + i * N + j) * C + c];
        const double vv = vis.values()[(c * N + i) * N + j];
        CHECK(tv == vv);  // bit-exact
      }
}

TEST_CASE("zero tokenizer weights give a zero proprio token") {
  NetConfig cfg = mini_cfg();
  Rng rng(7);
  Tokenizer tok(cfg, rng);
  for (auto& v : tok.prop_token.weight.values_mut()) v = 0.0;
  Tensor prop = Tensor::uniform({1, cfg.proprio_feature()}, -1, 1, rng);
  Tensor vis = Tensor::zeros({1, cfg.token_dim, 2, 2});
  Tensor tokens = tok.forward(prop, vis);
  for (double v : tokens.values()) CHECK(v == 0.0);
}

TEST_CASE("gradients flow to the right inputs") {
  NetConfig cfg = mini_cfg();
  Rng rng(8);
  ProprioEncoder pe(cfg, rng);
  DepthEncoder de(cfg, rng);
  Tokenizer tok(cfg, rng);
  Tensor prop = Tensor::uniform({1, 93}, -1, 1, rng, true);
  Tensor depth = Tensor::uniform({1, 4, 32, 32}, 0.1, 0.9, rng, true);
  Tensor tokens = tok.forward(pe.forward(prop), de.forward(depth));
  const int C = cfg.token_dim;

  SUBCASE("visual token reaches depth pixels") {
    backward(sum_all(square(slice(tokens, 1, 2, 3))));
    double g = 0.0;
    for (double v : depth.grad()) g += std::abs(v);
    CHECK(g > 0.0);
  }
  SUBCASE("token 0 reaches proprio") {
    backward(sum_all(square(slice(tokens, 1, 0, 1))));
    double g = 0.0;
    for (double v : prop.grad()) g += std::abs(v);
    CHECK(g > 0.0);
  }
  SUBCASE("proprio change touches only token 0") {
    std::vector<double> p2(prop.values().begin(), prop.values().end());
    p2[5] += 0.25;
    Tensor tokens2 = tok.forward(pe.forward(Tensor::from_data({1, 93}, p2)), de.forward(depth));
    bool token0_changed = false;
    for (int c = 0; c < C; ++c)
      token0_changed = token0_changed || tokens.values()[c] != tokens2.values()[c];
    CHECK(token0_changed);
    for (std::int64_t i = C; i < tokens.numel(); ++i)
      CHECK(tokens.values()[i] == tokens2.values()[i]);
  }
}

TEST_CASE("input validation") {
  NetConfig cfg = mini_cfg();
  Rng rng(9);
  ProprioEncoder pe(cfg, rng);
  DepthEncoder de(cfg, rng);
  CHECK_THROWS_AS(pe.forward(Tensor::zeros({1, 92})), ShapeError);
  CHECK_THROWS_AS(de.forward(Tensor::zeros({4, 32, 32})), ShapeError);

  NetConfig bad = cfg;
  bad.token_dim = 64;  // disagrees with conv plan output channels
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  NetConfig bad2 = cfg;
  bad2.conv_plan[0].stride = 3;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("out-of-range depth input is clamped") {
  NetConfig cfg = mini_cfg();
  Rng rng(10);
  DepthEncoder de(cfg, rng);
  Tensor hot = Tensor::full({1, 4, 32, 32}, 3.0);
  Tensor one = Tensor::full({1, 4, 32, 32}, 1.0);
  auto a = de.forward(hot);
  auto b = de.forward(one);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == b.values()[i]);
}
