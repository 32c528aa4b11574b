#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "loco/nn.hpp"
#include "loco/ppo.hpp"

using namespace loco;

namespace {

NetConfig tiny_state_cfg() {
  NetConfig c;
  c.proprio_hidden = {16, 16};
  c.head_hidden = {8, 8};
  return c;
}

// one-step-wise linear-reward task: reward equals action[0]
class BanditEnv : public EnvBase {
 public:
  explicit BanditEnv(int episode_len) : len_(episode_len) {}

  void reset(std::uint64_t) override { t_ = 0; }

  Step step(std::span<const double> action) override {
    ++t_;
    Step s;
    s.reward = action[0];
    s.done = t_ >= len_;
    return s;
  }

  const std::vector<double>& proprio() const override { return prop_; }
  const std::vector<double>& depth() const override { return depth_; }
  void set_render_depth(bool) override {}

 private:
  int len_;
  int t_ = 0;
  std::vector<double> prop_ = std::vector<double>(93, 0.0);
  std::vector<double> depth_;
};

Rollout synthetic_rollout(int lanes, int steps, Rng& rng, double done_prob) {
  Rollout r;
  r.lanes = lanes;
  r.steps = steps;
  r.proprio_dim = 1;
  r.depth_dim = 0;
  r.action_dim = 1;
  int n = lanes * steps;
  r.proprio.assign(n, 0.0);
  r.actions.assign(n, 0.0);
  r.rewards.resize(n);
  r.values.resize(n);
  r.log_probs.assign(n, 0.0);
  r.dones.resize(n);
  r.bootstrap.resize(lanes);
  for (int i = 0; i < n; ++i) {
    r.rewards[i] = rng.normal();
    r.values[i] = rng.normal();
    r.dones[i] = rng.uniform() < done_prob ? 1.0 : 0.0;
  }
  for (int l = 0; l < lanes; ++l) {
    bool ended = r.dones[r.idx(l, steps - 1)] > 0.5;
    r.bootstrap[l] = ended ? 0.0 : rng.normal();
  }
  return r;
}

// independent double-sum evaluation of the advantage series
std::vector<double> gae_oracle(const Rollout& r, double gamma, double lam) {
  std::vector<double> out(r.total(), 0.0);
  for (int l = 0; l < r.lanes; ++l) {
    int T = r.steps;
    std::vector<double> delta(T);
    for (int t = 0; t < T; ++t) {
      std::size_t i = r.idx(l, t);
      double v_next = (t + 1 < T) ? r.values[r.idx(l, t + 1)] : r.bootstrap[l];
      delta[t] = r.rewards[i] + gamma * v_next * (1.0 - r.dones[i]) - r.values[i];
    }
    for (int t = 0; t < T; ++t) {
      double acc = 0.0;
      double w = 1.0;
      for (int k = t; k < T; ++k) {
        acc += w * delta[k];
        if (r.dones[r.idx(l, k)] > 0.5) break;
        w *= gamma * lam;
      }
      out[r.idx(l, t)] = acc;
    }
  }
  return out;
}

double clipped_objective(double ratio, double adv, double eps) {
  double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * adv, clipped * adv);
}

}  // namespace

TEST_CASE("discounted return") {
  std::vector<double> r3 = {1.0, 2.0, 3.0};
  CHECK(discounted_return(r3, 0.5) == doctest::Approx(2.75).epsilon(1e-15));

  std::vector<double> ones(1000, 1.0);
  double expect = (1.0 - std::pow(0.99, 1000)) / 0.01;
  CHECK(discounted_return(ones, 0.99) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gae: lambda 0 reduces to one-step TD errors") {
  Rng rng(1);
  Rollout r = synthetic_rollout(2, 40, rng, 0.1);
  compute_gae(r, 0.99, 0.0);
  for (int l = 0; l < r.lanes; ++l)
    for (int t = 0; t < r.steps; ++t) {
      std::size_t i = r.idx(l, t);
      double v_next = (t + 1 < r.steps) ? r.values[r.idx(l, t + 1)] : r.bootstrap[l];
      double delta = r.rewards[i] + 0.99 * v_next * (1.0 - r.dones[i]) - r.values[i];
      CHECK(r.advantages[i] == doctest::Approx(delta).epsilon(1e-12));
      CHECK(r.returns[i] == doctest::Approx(delta + r.values[i]).epsilon(1e-12));
    }
}

TEST_CASE("gae: gamma = lambda = 1 with zero values gives suffix sums") {
  Rng rng(2);
  Rollout r = synthetic_rollout(1, 30, rng, 0.0);
  for (double& v : r.values) v = 0.0;
  r.bootstrap[0] = 0.0;
  compute_gae(r, 1.0, 1.0);
  double suffix = 0.0;
  for (int t = r.steps - 1; t >= 0; --t) {
    suffix += r.rewards[t];
    CHECK(r.advantages[t] == doctest::Approx(suffix).epsilon(1e-12));
  }
}

TEST_CASE("gae matches the double-sum oracle on random sequences") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    int steps = 20 + static_cast<int>(rng.uniform_index(181));  // up to 200
    Rollout r = synthetic_rollout(4, steps, rng, 0.05);
    compute_gae(r, 0.99, 0.95);
    std::vector<double> oracle = gae_oracle(r, 0.99, 0.95);
    for (int i = 0; i < r.total(); ++i)
      REQUIRE(r.advantages[i] == doctest::Approx(oracle[i]).epsilon(1e-10));
  }
}

TEST_CASE("clipped surrogate hand cases") {
  // ratio inside the clip band: objective is plain ratio * advantage
  CHECK(clipped_objective(1.0, 1.0, 0.2) == 1.0);
  // ratio 1.5 with positive advantage clips at 1 + eps
  CHECK(clipped_objective(1.5, 1.0, 0.2) == (1.0 + 0.2) * 1.0);
  CHECK(clipped_objective(1.5, 1.0, 0.2) == doctest::Approx(1.2).epsilon(1e-12));
  // ratio 0.5 with negative advantage: the min picks the clipped branch
  CHECK(clipped_objective(0.5, -1.0, 0.2) == (1.0 - 0.2) * -1.0);
  CHECK(clipped_objective(0.5, -1.0, 0.2) == doctest::Approx(-0.8).epsilon(1e-12));
}

TEST_CASE("collect: seeding is reproducible and episodes are segmented") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 11);
  PPOConfig pc;
  pc.lanes = 4;
  pc.samples_per_update = 256;  // 64 steps per lane
  pc.minibatch = 64;

  EnvFactory factory = [] { return std::make_unique<BanditEnv>(16); };
  Rollout a = collect_rollout(policy, factory, pc, 999, 3);
  Rollout b = collect_rollout(policy, factory, pc, 999, 3);
  REQUIRE(a.actions == b.actions);
  REQUIRE(a.rewards == b.rewards);
  REQUIRE(a.log_probs == b.log_probs);
  REQUIRE(a.values == b.values);
  REQUIRE(a.bootstrap == b.bootstrap);

  Rollout c = collect_rollout(policy, factory, pc, 999, 4);
  CHECK(a.actions != c.actions);  // a different update draws different noise

  // episode length 16 divides the 64-step window: 4 episodes per lane
  CHECK(a.episodes.size() == 16);
  for (const EpisodeMetrics& m : a.episodes) CHECK(m.steps == 16);
  // every lane ends exactly at an episode boundary, so no bootstrap is needed
  for (double bv : a.bootstrap) CHECK(bv == 0.0);
}

TEST_CASE("collect: window-edge bootstrap uses the value network") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 12);
  PPOConfig pc;
  pc.lanes = 2;
  pc.samples_per_update = 40;  // 20 steps per lane, episode never ends
  pc.minibatch = 20;

  EnvFactory factory = [] { return std::make_unique<BanditEnv>(1000); };
  Rollout r = collect_rollout(policy, factory, pc, 5, 0);
  std::vector<double> zeros(93, 0.0);
  GaussianPolicy::Act ref = policy.act(zeros, {}, nullptr, false);
  for (double bv : r.bootstrap)
    CHECK(bv == doctest::Approx(ref.value).epsilon(1e-12));
  for (double d : r.dones) CHECK(d == 0.0);
}

TEST_CASE("collect: stored log-probs match a later evaluate pass") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 13);
  PPOConfig pc;
  pc.lanes = 2;
  pc.samples_per_update = 64;
  pc.minibatch = 32;
  EnvFactory factory = [] { return std::make_unique<BanditEnv>(8); };
  Rollout r = collect_rollout(policy, factory, pc, 21, 0);

  int n = r.total();
  Tensor prop = Tensor::from_data({n, r.proprio_dim}, r.proprio);
  const NetConfig& nc = policy.net.config();
  Tensor depth = Tensor::zeros({n, nc.depth_stack, nc.depth_size, nc.depth_size});
  Tensor act = Tensor::from_data({n, r.action_dim}, r.actions);
  GaussianPolicy::Eval ev = policy.evaluate_batch(prop, depth, act);
  for (int i = 0; i < n; ++i)
    REQUIRE(ev.log_prob.values()[i] == doctest::Approx(r.log_probs[i]).epsilon(1e-10));
}

TEST_CASE("update: zero advantages leave the policy untouched") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 14);
  PPOConfig pc;
  pc.lanes = 2;
  pc.samples_per_update = 64;
  pc.minibatch = 32;
  pc.epochs = 2;
  pc.value_coef = 0.0;  // isolate the policy surrogate
  pc.entropy_coef = 0.0;

  EnvFactory factory = [] { return std::make_unique<BanditEnv>(8); };
  Rollout r = collect_rollout(policy, factory, pc, 31, 0);
  r.advantages.assign(r.total(), 0.0);
  r.returns = r.values;

  NamedParams before = policy.net.named_params();
  std::vector<std::vector<double>> snap;
  for (const auto& [name, t] : before)
    snap.emplace_back(t.values().begin(), t.values().end());

  Adam opt = make_optimizer(policy, pc);
  UpdateStats st = ppo_update(policy, opt, r, pc, 31, 0);
  CHECK(st.minibatches == 4);
  CHECK(st.skipped == 0);

  NamedParams after = policy.net.named_params();
  for (size_t k = 0; k < after.size(); ++k) {
    const auto vals = after[k].second.values();
    for (size_t j = 0; j < vals.size(); ++j)
      REQUIRE(vals[j] == snap[k][j]);
  }
}

TEST_CASE("update: minibatch count and determinism of the shuffle") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 15);
  PPOConfig pc;
  pc.lanes = 4;
  pc.samples_per_update = 512;
  pc.minibatch = 64;
  pc.epochs = 3;

  EnvFactory factory = [] { return std::make_unique<BanditEnv>(16); };
  Rollout r = collect_rollout(policy, factory, pc, 77, 0);
  compute_gae(r, pc.gamma, pc.lam);

  GaussianPolicy twin(VariantKind::state_only, tiny_state_cfg(), 15);
  Adam opt_a = make_optimizer(policy, pc);
  Adam opt_b = make_optimizer(twin, pc);
  UpdateStats sa = ppo_update(policy, opt_a, r, pc, 77, 0);
  UpdateStats sb = ppo_update(twin, opt_b, r, pc, 77, 0);

  CHECK(sa.minibatches == 512 / 64 * 3);
  CHECK(sa.policy_loss == sb.policy_loss);
  CHECK(sa.value_loss == sb.value_loss);

  NamedParams pa = policy.net.named_params();
  NamedParams pb = twin.net.named_params();
  for (size_t k = 0; k < pa.size(); ++k) {
    auto va = pa[k].second.values();
    auto vb = pb[k].second.values();
    for (size_t j = 0; j < va.size(); ++j) REQUIRE(va[j] == vb[j]);
  }
}

TEST_CASE("update: rejects a rollout without advantages") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 16);
  PPOConfig pc;
  pc.lanes = 2;
  pc.samples_per_update = 32;
  pc.minibatch = 16;
  EnvFactory factory = [] { return std::make_unique<BanditEnv>(8); };
  Rollout r = collect_rollout(policy, factory, pc, 1, 0);
  Adam opt = make_optimizer(policy, pc);
  CHECK_THROWS_AS(ppo_update(policy, opt, r, pc, 1, 0), RuntimeFault);
}

TEST_CASE("config validation") {
  PPOConfig pc;
  pc.samples_per_update = 100;
  pc.lanes = 8;  // not a divisor
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = PPOConfig{};
  pc.clip_eps = 0.0;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = PPOConfig{};
  pc.minibatch = pc.samples_per_update + 1;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  CHECK_NOTHROW(PPOConfig{}.validate());
}

TEST_CASE("ppo learns the linear bandit") {
  GaussianPolicy policy(VariantKind::state_only, tiny_state_cfg(), 17);
  PPOConfig pc;
  pc.lanes = 4;
  pc.samples_per_update = 256;
  pc.minibatch = 64;
  pc.epochs = 4;
  pc.lr = 1e-2;
  pc.gamma = 0.9;
  pc.lam = 0.9;

  EnvFactory factory = [] { return std::make_unique<BanditEnv>(16); };
  Adam opt = make_optimizer(policy, pc);

  std::vector<double> mean_returns;
  for (int update = 0; update < 30; ++update) {
    Rollout r = collect_rollout(policy, factory, pc, 123, update);
    compute_gae(r, pc.gamma, pc.lam);
    double mr = 0;
    for (const EpisodeMetrics& m : r.episodes) mr += m.episode_return;
    mean_returns.push_back(mr / r.episodes.size());
    UpdateStats st = ppo_update(policy, opt, r, pc, 123, update);
    CHECK(st.skipped == 0);
  }

  double early = (mean_returns[0] + mean_returns[1] + mean_returns[2]) / 3;
  double late = 0;
  for (size_t i = mean_returns.size() - 3; i < mean_returns.size(); ++i)
    late += mean_returns[i] / 3;
  CHECK(late > early + 1.0);

  // the deterministic action should now push its first component to the bound
  std::vector<double> zeros(93, 0.0);
  GaussianPolicy::Act a = policy.act(zeros, {}, nullptr, false);
  CHECK(a.action[0] > 0.1);
}
