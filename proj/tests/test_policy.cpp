#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "loco/policy.hpp"

using namespace loco;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

NetConfig tiny_cfg(int layers = 1) {
  NetConfig c;
  c.depth_size = 16;
  c.proprio_hidden = {16, 16};
  c.conv_plan = {{4, 8, 4, 2}, {8, 3, 1, 1}, {8, 2, 2, 0}};  // 16 -> 4 -> 4 -> 2
  c.token_dim = 8;
  c.attn_dim = 8;
  c.layers = layers;
  c.mlp_hidden = 16;
  c.head_hidden = {16, 16};
  return c;
}

std::vector<double> rand_proprio(Rng& rng) {
  std::vector<double> v(93);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

std::vector<double> rand_depth(Rng& rng, const NetConfig& c) {
  std::vector<double> v(static_cast<std::size_t>(c.depth_stack) * c.depth_size * c.depth_size);
  for (auto& x : v) x = rng.uniform(0, 1);
  return v;
}

}  // namespace

TEST_CASE("variant names round-trip and reject unknowns") {
  CHECK(variant_from_string("state_only") == VariantKind::state_only);
  CHECK(variant_from_string("concat") == VariantKind::state_depth_concat);
  CHECK(variant_from_string("locotransformer") == VariantKind::loco_transformer);
  CHECK(variant_to_string(VariantKind::depth_only) == "depth_only");
  CHECK_THROWS_AS(variant_from_string("lstm"), ConfigError);
}

TEST_CASE("fresh policy is exactly standard gaussian") {
  GaussianPolicy pol(VariantKind::loco_transformer, tiny_cfg(), 17);
  Rng rng(1);
  auto prop = rand_proprio(rng);
  auto depth = rand_depth(rng, pol.net.config());
  auto det = pol.act(prop, depth, nullptr, false);
  for (double a : det.action) CHECK(a == 0.0);  // zero-init output layer
  for (double v : pol.net.log_std.values()) CHECK(v == 0.0);
  // log density of the mean action under N(0, I), 12 dims
  CHECK(det.log_prob == doctest::Approx(-0.5 * 12 * kLog2Pi).epsilon(1e-12));
}

TEST_CASE("deterministic action clamps the mean") {
  GaussianPolicy pol(VariantKind::state_only, tiny_cfg(), 3);
  auto params = pol.net.named_params();
  for (auto& [name, t] : params) {
    if (name == "policy_out.bias")
      for (auto& v : t.values_mut()) v = 0.5;
  }
  Rng rng(2);
  auto prop = rand_proprio(rng);
  auto act = pol.act(prop, {}, nullptr, false);
  for (double a : act.action) CHECK(a == 0.2);
}

TEST_CASE("tiny log_std collapses sampling onto the mean") {
  GaussianPolicy pol(VariantKind::state_only, tiny_cfg(), 4);
  for (auto& v : pol.net.log_std.values_mut()) v = -40.0;
  Rng rng(5);
  auto prop = rand_proprio(rng);
  auto stoch = pol.act(prop, {}, &rng, true);
  auto det = pol.act(prop, {}, nullptr, false);
  for (int j = 0; j < 12; ++j) CHECK(stoch.action[j] == doctest::Approx(det.action[j]).epsilon(1e-12));
}

TEST_CASE("entropy closed form") {
  GaussianPolicy pol(VariantKind::state_only, tiny_cfg(), 6);
  Rng rng(7);
  auto prop = rand_proprio(rng);
  Tensor pt = pol.obs_proprio_tensor(prop);
  Tensor actions = Tensor::zeros({1, 12});
  auto ev = pol.evaluate_batch(pt, Tensor(), actions);
  CHECK(ev.entropy.item() == doctest::Approx(6.0 * (1.0 + kLog2Pi)).epsilon(1e-12));
  CHECK(ev.value.shape() == Shape{1});
}

TEST_CASE("act and evaluate agree on log probabilities") {
  for (VariantKind kind : {VariantKind::state_only, VariantKind::depth_only,
                           VariantKind::state_depth_concat, VariantKind::loco_transformer}) {
    GaussianPolicy pol(kind, tiny_cfg(), 8);
    Rng rng(9);
    auto prop = rand_proprio(rng);
    auto depth = rand_depth(rng, pol.net.config());
    auto a = pol.act(prop, depth, &rng, true);  // clamping is very likely here
    Tensor pt = pol.obs_proprio_tensor(prop);
    Tensor dt = pol.obs_depth_tensor(depth);
    Tensor at = Tensor::from_data({1, 12}, a.action);
    NoGradGuard ng;
    auto ev = pol.evaluate_batch(pt, dt, at);
    CHECK(ev.log_prob.values()[0] == doctest::Approx(a.log_prob).epsilon(1e-10));
    CHECK(ev.value.values()[0] == doctest::Approx(a.value).epsilon(1e-12));
  }
}

TEST_CASE("state_only ignores depth bit-for-bit") {
  GaussianPolicy pol(VariantKind::state_only, tiny_cfg(), 10);
  Rng rng(11);
  auto prop = rand_proprio(rng);
  auto d1 = rand_depth(rng, pol.net.config());
  auto d2 = rand_depth(rng, pol.net.config());
  auto a1 = pol.act(prop, d1, nullptr, false);
  auto a2 = pol.act(prop, d2, nullptr, false);
  CHECK(a1.value == a2.value);
  for (int j = 0; j < 12; ++j) CHECK(a1.action[j] == a2.action[j]);
}

TEST_CASE("concat feature width is twice the proprio feature") {
  NetConfig cfg = tiny_cfg();
  VariantNetwork net(VariantKind::state_depth_concat, cfg, 12);
  bool found = false;
  for (const auto& [name, t] : net.named_params()) {
    if (name == "policy_proj.fc0.weight") {
      CHECK(t.shape()[0] == 2 * cfg.proprio_feature());
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("same seed rebuilds identical parameters") {
  NetConfig cfg = tiny_cfg();
  VariantNetwork a(VariantKind::loco_transformer, cfg, 99);
  VariantNetwork b(VariantKind::loco_transformer, cfg, 99);
  CHECK(a.param_count() == b.param_count());
  auto pa = a.named_params();
  auto pb = b.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    for (std::int64_t j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pa[i].second.values()[j] == pb[i].second.values()[j]);
  }
  VariantNetwork c(VariantKind::loco_transformer, cfg, 100);
  bool any_diff = false;
  auto pc = c.named_params();
  for (std::size_t i = 0; i < pa.size() && !any_diff; ++i)
    for (std::int64_t j = 0; j < pa[i].second.numel() && !any_diff; ++j)
      any_diff = pa[i].second.values()[j] != pc[i].second.values()[j];
  CHECK(any_diff);
}

TEST_CASE("value loss reaches shared encoder parameters") {
  GaussianPolicy pol(VariantKind::loco_transformer, tiny_cfg(), 13);
  Rng rng(14);
  auto prop = rand_proprio(rng);
  auto depth = rand_depth(rng, pol.net.config());
  Tensor pt = pol.obs_proprio_tensor(prop);
  Tensor dt = pol.obs_depth_tensor(depth);
  auto out = pol.net.forward(pt, dt);
  backward(mean_all(square(out.value)));
  double g = 0.0;
  for (const auto& [name, t] : pol.net.policy_params()) {
    if (name.rfind("prop_enc", 0) == 0 || name.rfind("depth_enc", 0) == 0) {
      if (t.has_grad())
        for (double v : t.grad()) g += std::abs(v);
    }
  }
  CHECK(g > 0.0);
}

TEST_CASE("log-prob gradient w.r.t. mean matches finite differences") {
  Rng rng(15);
  Tensor mean = Tensor::uniform({3, 12}, -0.5, 0.5, rng);
  Tensor log_std = Tensor::uniform({12}, -0.3, 0.3, rng);
  Tensor actions = Tensor::uniform({3, 12}, -0.2, 0.2, rng);
  auto f = [&](std::span<const Tensor> in) {
    Tensor inv_std = exp_op(mul_scalar(in[1], -1.0));
    Tensor z = mul(sub(actions, in[0]), inv_std);
    Tensor logp = add_scalar(sub(mul_scalar(sum_over(square(z), 1), -0.5), sum_all(in[1])),
                             -0.5 * 12 * kLog2Pi);
    return sum_all(logp);
  };
  const Tensor inputs[] = {mean, log_std};
  CHECK(grad_check(f, inputs, 1e-5) < 1e-6);
}

TEST_CASE("non-finite network output raises a runtime fault") {
  GaussianPolicy pol(VariantKind::state_only, tiny_cfg(), 16);
  auto params = pol.net.named_params();
  for (auto& [name, t] : params) {
    if (name == "policy_out.bias") t.values_mut()[0] = std::nan("");
  }
  const bool prev = debug_checks_enabled();
  set_debug_checks(false);  // reach the policy-level check, not the per-op one
  Rng rng(17);
  auto prop = rand_proprio(rng);
  CHECK_THROWS_AS(pol.act(prop, {}, nullptr, false), RuntimeFault);
  set_debug_checks(prev);
}

TEST_CASE("full tiny network passes finite-difference checks") {
  GaussianPolicy pol(VariantKind::loco_transformer, tiny_cfg(), 18);
  Rng rng(19);
  // the zero-initialized output layer would make the mean check vacuous
  auto params = pol.net.named_params();
  for (auto& [name, t] : params) {
    if (name == "policy_out.weight" || name == "policy_out.bias")
      for (auto& v : t.values_mut()) v = rng.uniform(-0.3, 0.3);
  }
  Tensor prop = Tensor::uniform({1, 93}, -1, 1, rng);
  Tensor depth = Tensor::uniform({1, 4, 16, 16}, 0.1, 0.9, rng);
  auto f_mean = [&](std::span<const Tensor> in) {
    auto out = pol.net.forward(in[0], in[1]);
    return sum_all(out.mean);
  };
  auto f_value = [&](std::span<const Tensor> in) {
    auto out = pol.net.forward(in[0], in[1]);
    return sum_all(out.value);
  };
  const Tensor inputs[] = {prop, depth};
  CHECK(grad_check(f_mean, inputs, 1e-4) < 1e-4);
  CHECK(grad_check(f_value, inputs, 1e-4) < 1e-4);
}
