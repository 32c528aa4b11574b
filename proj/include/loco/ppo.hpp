#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "loco/env.hpp"
#include "loco/optim.hpp"
#include "loco/policy.hpp"

namespace loco {

struct PPOConfig {
  double clip_eps = 0.2;
  double gamma = 0.99;
  double lam = 0.95;
  int samples_per_update = 8192;
  int lanes = 8;
  int epochs = 3;
  int minibatch = 256;
  double lr = 1e-4;
  double value_coef = 0.5;
  double entropy_coef = 0.0;

  void validate() const;
};

// Fresh environments are built per update; the collector owns all seeding.
using EnvFactory = std::function<std::unique_ptr<EnvBase>()>;

// Flat lane-major storage: sample (lane, t) lives at lane * steps + t.
struct Rollout {
  int lanes = 0;
  int steps = 0;  // per lane
  int proprio_dim = 0;
  int depth_dim = 0;  // 0 when the variant ignores depth
  int action_dim = 0;

  std::vector<double> proprio;    // [lanes*steps*proprio_dim]
  std::vector<double> depth;     // [lanes*steps*depth_dim]
  std::vector<double> actions;   // [lanes*steps*action_dim]
  std::vector<double> rewards;   // [lanes*steps]
  std::vector<double> values;    // [lanes*steps]
  std::vector<double> log_probs; // [lanes*steps]
  std::vector<double> dones;     // [lanes*steps], 0/1
  std::vector<double> bootstrap; // [lanes], V(s_T) or 0 if the lane ended done

  std::vector<double> advantages;
  std::vector<double> returns;

  std::vector<EpisodeMetrics> episodes;  // completed inside the window

  std::size_t idx(int lane, int t) const {
    return static_cast<std::size_t>(lane) * steps + t;
  }
  int total() const { return lanes * steps; }
};

// Runs lanes in lockstep so each environment step costs one batched forward.
// Lane seeds derive from (master_seed, update_idx, lane); episode e within a
// lane resets with mix64(lane_base, e).
Rollout collect_rollout(const GaussianPolicy& policy, const EnvFactory& factory,
                        const PPOConfig& cfg, std::uint64_t master_seed,
                        int update_idx);

// delta_t = r_t + gamma*V_{t+1}*(1-d_t) - V_t
// A_t     = delta_t + gamma*lam*(1-d_t)*A_{t+1}
// returns = A + V; the bootstrap value stands in for V at the window edge.
void compute_gae(Rollout& r, double gamma, double lam);

struct UpdateStats {
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;          // |ratio - 1| > eps
  double ratio_outlier_fraction = 0; // |ratio - 1| > 2*eps (soft monitor)
  int minibatches = 0;
  int skipped = 0;  // minibatches dropped due to non-finite ratios
};

UpdateStats ppo_update(GaussianPolicy& policy, Adam& opt, const Rollout& r,
                       const PPOConfig& cfg, std::uint64_t master_seed,
                       int update_idx);

// Two parameter groups: trunk + policy head + log_std, and the value head.
Adam make_optimizer(const GaussianPolicy& policy, const PPOConfig& cfg);

double discounted_return(std::span<const double> rewards, double gamma);

}  // namespace loco
