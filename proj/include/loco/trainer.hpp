#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "loco/config.hpp"
#include "loco/io.hpp"
#include "loco/ppo.hpp"

namespace loco {

struct TrainOptions {
  RunConfig rc;
  std::uint64_t master_seed = 0;
  std::string out_dir = "run_out";
  std::string resume_path;  // empty = train from scratch
  int eval_every = 0;       // updates between deterministic eval rows; 0 = off
  int eval_episodes = 3;
  bool quiet = false;
};

struct TrainResult {
  long long updates = 0;
  long long env_steps = 0;
  // mean episode return averaged over the last (up to) 3 updates
  double final_mean_return = 0;
  double final_mean_distance = 0;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string eval_path;  // set when eval_every > 0
};

TrainResult run_train(const TrainOptions& opt);

struct EvalOptions {
  RunConfig rc;
  std::string checkpoint_path;  // empty: evaluate the untrained init
  std::uint64_t master_seed = 0;
  int episodes = 5;
  bool stochastic = false;
  std::string record_replay_path;  // record the first episode if non-empty
  bool quiet = false;
};

struct EvalResult {
  int episodes = 0;
  double mean_return = 0, std_return = 0;
  double mean_distance = 0, std_distance = 0;
  double mean_collisions = 0, std_collisions = 0;
  double mean_sphere_reward = 0, std_sphere_reward = 0;
  double mean_steps = 0;
  // trace of the recorded episode, for replay verification
  std::vector<double> first_episode_rewards;
  std::uint64_t first_episode_obs_hash = 0;
};

// Scores an in-memory policy; run_eval loads a checkpoint first. The
// environment need not match the one the policy was trained on (transfer
// evaluation), only the observation shapes must agree.
EvalResult eval_policy(const GaussianPolicy& policy, const RunConfig& rc,
                       std::uint64_t master_seed, int episodes, bool stochastic,
                       const std::string& record_path, bool quiet);

EvalResult run_eval(const EvalOptions& opt);

struct ReplayResult {
  EpisodeMetrics metrics;
  std::vector<double> rewards;
  std::uint64_t obs_hash = 0;
  bool done = false;
};

// Re-runs a recorded action sequence on a freshly built environment.
ReplayResult run_replay(const std::string& path, bool quiet = false);

struct AttnmapOptions {
  RunConfig rc;
  std::string checkpoint_path;
  std::uint64_t master_seed = 0;
  std::string out_dir = "attn_out";
  // observation indices to capture; 0 is the reset observation. Requesting an
  // index past the episode end is an error naming the valid range.
  std::vector<int> steps = {0, 5, 10, 20};
  bool quiet = false;
};

struct AttnmapResult {
  // one renormalized grid-cell distribution (N*N, sums to 1) per frame
  std::vector<std::vector<double>> maps;
  std::string csv_path;
};

AttnmapResult run_attnmap(const AttnmapOptions& opt);

struct AblateOptions {
  std::string axis = "both";  // tokens | layers | both
  std::string profile = "mini";
  std::string env_variant = "thin_obs";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  long long steps = 100000;
  std::string out_dir = "ablate_out";
  std::vector<int> token_grid = {1, 2, 4};   // visual tokens per side
  std::vector<int> layer_grid = {1, 2, 3};   // transformer depth
  // applied to every run before the studied setting; handy for scaled-down
  // sweeps
  std::function<void(RunConfig&)> tweak;
  bool quiet = false;
};

struct AblateResult {
  std::string tokens_csv, tokens_summary_csv;
  std::string layers_csv, layers_summary_csv;
};

AblateResult run_ablate(const AblateOptions& opt);

// Token-grid override: the last conv layer's kernel and stride are rewritten
// so the feature map comes out n_side x n_side.
NetConfig with_token_grid(const NetConfig& base, int n_side);

}  // namespace loco
