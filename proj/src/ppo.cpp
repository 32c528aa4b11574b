#include "loco/ppo.hpp"

#include "loco/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace loco {

void PPOConfig::validate() const {
  if (clip_eps <= 0 || clip_eps >= 1) throw ConfigError("clip_eps must lie in (0, 1)");
  if (gamma <= 0 || gamma > 1) throw ConfigError("gamma must lie in (0, 1]");
  if (lam < 0 || lam > 1) throw ConfigError("lam must lie in [0, 1]");
  if (lanes < 1) throw ConfigError("lanes must be >= 1");
  if (samples_per_update < lanes || samples_per_update % lanes != 0)
    throw ConfigError("samples_per_update must be a positive multiple of lanes");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (minibatch < 1 || minibatch > samples_per_update)
    throw ConfigError("minibatch must lie in [1, samples_per_update]");
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (value_coef < 0 || entropy_coef < 0)
    throw ConfigError("loss coefficients must be >= 0");
}

Adam make_optimizer(const GaussianPolicy& policy, const PPOConfig& cfg) {
  Adam opt;
  opt.add_group(param_tensors(policy.net.policy_params()), cfg.lr);
  opt.add_group(param_tensors(policy.net.value_params()), cfg.lr);
  return opt;
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double g = 0.0;
  for (size_t i = rewards.size(); i-- > 0;) g = rewards[i] + gamma * g;
  return g;
}

namespace {

constexpr std::uint64_t kLaneStream = 0x6c616e65ull;    // lane seeding
constexpr std::uint64_t kNoiseStream = 0x6e6f6973ull;   // action noise
constexpr std::uint64_t kShuffleStream = 0x73687566ull; // minibatch order

}  // namespace

Rollout collect_rollout(const GaussianPolicy& policy, const EnvFactory& factory,
                        const PPOConfig& cfg, std::uint64_t master_seed,
                        int update_idx) {
  cfg.validate();
  const NetConfig& nc = policy.net.config();
  const bool want_depth = policy.net.consumes_depth();
  const int L = cfg.lanes;
  const int T = cfg.samples_per_update / L;
  const int A = nc.action_dim;

  std::vector<std::unique_ptr<EnvBase>> envs(L);
  std::vector<std::uint64_t> lane_base(L);
  std::vector<int> episode_ctr(L, 0);
  std::vector<Rng> noise;
  noise.reserve(L);
  for (int l = 0; l < L; ++l) {
    envs[l] = factory();
    envs[l]->set_render_depth(want_depth);
    lane_base[l] = mix64(master_seed, kLaneStream,
                         static_cast<std::uint64_t>(update_idx) * 1024 + l);
    envs[l]->reset(mix64(lane_base[l], 0));
    noise.emplace_back(mix64(lane_base[l], kNoiseStream));
  }

  const int P = static_cast<int>(envs[0]->proprio().size());
  const int D = want_depth ? static_cast<int>(envs[0]->depth().size()) : 0;
  if (want_depth && D != nc.depth_stack * nc.depth_size * nc.depth_size)
    throw ShapeError("environment depth size does not match the network");

  Rollout r;
  r.lanes = L;
  r.steps = T;
  r.proprio_dim = P;
  r.depth_dim = D;
  r.action_dim = A;
  const std::size_t n = static_cast<std::size_t>(L) * T;
  r.proprio.resize(n * P);
  r.depth.resize(n * D);
  r.actions.resize(n * A);
  r.rewards.resize(n);
  r.values.resize(n);
  r.log_probs.resize(n);
  r.dones.resize(n);
  r.bootstrap.assign(L, 0.0);

  // reusable observation buffers: one batched forward per step
  std::vector<double> prop_buf(static_cast<std::size_t>(L) * P);
  std::vector<double> depth_buf(static_cast<std::size_t>(L) *
                                (want_depth ? D : nc.depth_stack * nc.depth_size * nc.depth_size),
                                0.0);
  Shape depth_shape = {L, nc.depth_stack, nc.depth_size, nc.depth_size};

  std::vector<std::vector<double>> ep_rewards(L);
  std::vector<std::vector<StepInfo>> ep_infos(L);
  std::vector<char> lane_done(L, 0);

  double sphere_bonus = 0.0;
  if (auto* le = dynamic_cast<LocomotionEnv*>(envs[0].get()))
    sphere_bonus = le->config().sphere_bonus;

  auto gather = [&]() {
    for (int l = 0; l < L; ++l) {
      const std::vector<double>& p = envs[l]->proprio();
      std::copy(p.begin(), p.end(), prop_buf.begin() + static_cast<std::size_t>(l) * P);
      if (want_depth) {
        const std::vector<double>& d = envs[l]->depth();
        std::copy(d.begin(), d.end(), depth_buf.begin() + static_cast<std::size_t>(l) * D);
      }
    }
  };

  for (int t = 0; t < T; ++t) {
    gather();
    Tensor prop_t = Tensor::from_data({L, P}, prop_buf);
    Tensor depth_t = Tensor::from_data(depth_shape, depth_buf);
    GaussianPolicy::ActBatch ab = policy.act_batch(prop_t, depth_t, noise, true);

    for (int l = 0; l < L; ++l) {
      std::size_t i = r.idx(l, t);
      std::copy_n(prop_buf.begin() + static_cast<std::size_t>(l) * P, P,
                  r.proprio.begin() + i * P);
      if (want_depth)
        std::copy_n(depth_buf.begin() + static_cast<std::size_t>(l) * D, D,
                    r.depth.begin() + i * D);
      std::span<const double> act(ab.actions.data() + static_cast<std::size_t>(l) * A, A);
      std::copy(act.begin(), act.end(), r.actions.begin() + i * A);

      EnvBase::Step st = envs[l]->step(act);
      r.rewards[i] = st.reward;
      r.values[i] = ab.values[l];
      r.log_probs[i] = ab.log_probs[l];
      r.dones[i] = st.done ? 1.0 : 0.0;
      lane_done[l] = st.done ? 1 : 0;

      ep_rewards[l].push_back(st.reward);
      ep_infos[l].push_back(st.info);
      if (st.done) {
        r.episodes.push_back(
            accumulate_metrics(ep_rewards[l], ep_infos[l], sphere_bonus));
        ep_rewards[l].clear();
        ep_infos[l].clear();
        ++episode_ctr[l];
        envs[l]->reset(mix64(lane_base[l], episode_ctr[l]));
      }
    }
  }

  // window-edge bootstrap for lanes cut mid-episode
  gather();
  Tensor prop_t = Tensor::from_data({L, P}, prop_buf);
  Tensor depth_t = Tensor::from_data(depth_shape, depth_buf);
  GaussianPolicy::ActBatch tail = policy.act_batch(prop_t, depth_t, noise, false);
  for (int l = 0; l < L; ++l)
    r.bootstrap[l] = lane_done[l] ? 0.0 : tail.values[l];

  return r;
}

void compute_gae(Rollout& r, double gamma, double lam) {
  const std::size_t n = static_cast<std::size_t>(r.total());
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  for (int l = 0; l < r.lanes; ++l) {
    double a_next = 0.0;
    double v_next = r.bootstrap[l];
    for (int t = r.steps - 1; t >= 0; --t) {
      std::size_t i = r.idx(l, t);
      double nonterm = 1.0 - r.dones[i];
      double delta = r.rewards[i] + gamma * v_next * nonterm - r.values[i];
      double a = delta + gamma * lam * nonterm * a_next;
      r.advantages[i] = a;
      r.returns[i] = a + r.values[i];
      a_next = a;
      v_next = r.values[i];
    }
  }
}

UpdateStats ppo_update(GaussianPolicy& policy, Adam& opt, const Rollout& r,
                       const PPOConfig& cfg, std::uint64_t master_seed,
                       int update_idx) {
  cfg.validate();
  if (r.advantages.size() != static_cast<std::size_t>(r.total()))
    throw RuntimeFault("ppo_update called before compute_gae");

  const int n = r.total();
  const NetConfig& nc = policy.net.config();
  const bool want_depth = policy.net.consumes_depth();
  const int P = r.proprio_dim;
  const int A = r.action_dim;
  const int D = want_depth ? r.depth_dim : nc.depth_stack * nc.depth_size * nc.depth_size;

  // batch-level advantage normalization; a near-constant batch is left as-is
  std::vector<double> adv = r.advantages;
  double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  double sd = std::sqrt(var / n);
  if (sd >= 1e-8)
    for (double& a : adv) a = (a - mean) / sd;

  UpdateStats st;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuf(mix64(master_seed, kShuffleStream,
                   static_cast<std::uint64_t>(update_idx) * 16 + epoch));
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(shuf.uniform_index(i + 1));
      std::swap(order[i], order[j]);
    }

    for (int start = 0; start < n; start += cfg.minibatch) {
      const int b = std::min(cfg.minibatch, n - start);
      std::vector<double> mb_prop(static_cast<std::size_t>(b) * P);
      std::vector<double> mb_depth(static_cast<std::size_t>(b) * D, 0.0);
      std::vector<double> mb_act(static_cast<std::size_t>(b) * A);
      std::vector<double> mb_logp(b), mb_adv(b), mb_ret(b);
      for (int k = 0; k < b; ++k) {
        const std::size_t i = order[start + k];
        std::copy_n(r.proprio.begin() + i * P, P,
                    mb_prop.begin() + static_cast<std::size_t>(k) * P);
        if (want_depth)
          std::copy_n(r.depth.begin() + i * D, D,
                      mb_depth.begin() + static_cast<std::size_t>(k) * D);
        std::copy_n(r.actions.begin() + i * A, A,
                    mb_act.begin() + static_cast<std::size_t>(k) * A);
        mb_logp[k] = r.log_probs[i];
        mb_adv[k] = adv[i];
        mb_ret[k] = r.returns[i];
      }

      Tensor prop_t = Tensor::from_data({b, P}, std::move(mb_prop));
      Tensor depth_t = Tensor::from_data({b, nc.depth_stack, nc.depth_size, nc.depth_size},
                                         std::move(mb_depth));
      Tensor act_t = Tensor::from_data({b, A}, std::move(mb_act));

      GaussianPolicy::Eval ev = policy.evaluate_batch(prop_t, depth_t, act_t);
      Tensor logp_old = Tensor::from_data({b}, std::move(mb_logp));
      Tensor ratio = exp_op(sub(ev.log_prob, logp_old));

      bool finite = true;
      int clipped = 0, outliers = 0;
      for (double v : ratio.values()) {
        if (!std::isfinite(v)) { finite = false; break; }
        if (std::abs(v - 1.0) > cfg.clip_eps) ++clipped;
        if (std::abs(v - 1.0) > 2.0 * cfg.clip_eps) ++outliers;
      }
      if (!finite) {
        std::fprintf(stderr,
                     "[ppo] update %d epoch %d: non-finite ratio, minibatch skipped\n",
                     update_idx, epoch);
        ++st.skipped;
        continue;
      }

      Tensor adv_t = Tensor::from_data({b}, std::move(mb_adv));
      Tensor surr1 = mul(ratio, adv_t);
      Tensor surr2 = mul(clamp_op(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_t);
      Tensor pi_loss = mul_scalar(mean_all(minimum(surr1, surr2)), -1.0);

      Tensor ret_t = Tensor::from_data({b}, std::move(mb_ret));
      Tensor v_loss = mean_all(square(sub(ev.value, ret_t)));

      Tensor total = add(pi_loss, mul_scalar(v_loss, cfg.value_coef));
      if (cfg.entropy_coef != 0.0)
        total = sub(total, mul_scalar(ev.entropy, cfg.entropy_coef));

      opt.zero_grad();
      backward(total);
      opt.step();

      st.policy_loss += pi_loss.values()[0];
      st.value_loss += v_loss.values()[0];
      st.entropy += ev.entropy.values()[0];
      st.clip_fraction += static_cast<double>(clipped) / b;
      st.ratio_outlier_fraction += static_cast<double>(outliers) / b;
      ++st.minibatches;
    }
  }

  if (st.minibatches > 0) {
    st.policy_loss /= st.minibatches;
    st.value_loss /= st.minibatches;
    st.entropy /= st.minibatches;
    st.clip_fraction /= st.minibatches;
    st.ratio_outlier_fraction /= st.minibatches;
  }
  return st;
}

}  // namespace loco
