#include "loco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>

#include "loco/transformer.hpp"

namespace fs = std::filesystem;

namespace loco {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ull;   // network init
constexpr std::uint64_t kEvalStream = 0x6576616cull;   // eval episode seeds
constexpr std::uint64_t kEvalNoise = 0x656e6f69ull;    // eval action noise

struct Window {
  int episodes = 0;
  double ret = 0, dist = 0, coll = 0, sph = 0;
};

Window summarize(const std::vector<EpisodeMetrics>& eps) {
  Window w;
  w.episodes = static_cast<int>(eps.size());
  if (eps.empty()) return w;
  for (const EpisodeMetrics& m : eps) {
    w.ret += m.episode_return;
    w.dist += m.distance;
    w.coll += m.collisions;
    w.sph += m.sphere_reward;
  }
  w.ret /= w.episodes;
  w.dist /= w.episodes;
  w.coll /= w.episodes;
  w.sph /= w.episodes;
  return w;
}

GaussianPolicy build_policy(const RunConfig& rc, std::uint64_t master_seed) {
  return GaussianPolicy(variant_from_string(rc.net_variant), rc.net,
                        mix64(master_seed, kInitStream), rc.env.action_bound);
}

void hash_obs(std::uint64_t& h, const EnvBase& env) {
  h = mix64(h, hash_doubles(env.proprio()));
  h = mix64(h, hash_doubles(env.depth()));
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (xs.size() - 1));
}

}  // namespace

NetConfig with_token_grid(const NetConfig& base, int n_side) {
  NetConfig c = base;
  if (c.conv_plan.empty()) throw ConfigError("conv plan is empty");
  int s = c.depth_size;
  for (size_t i = 0; i + 1 < c.conv_plan.size(); ++i) {
    const ConvSpec& l = c.conv_plan[i];
    int num = s + 2 * l.padding - l.kernel;
    if (num < 0 || num % l.stride != 0)
      throw ConfigError("conv plan does not tile the depth input");
    s = num / l.stride + 1;
  }
  if (n_side < 1 || s % n_side != 0)
    throw ConfigError("token grid " + std::to_string(n_side) +
                      " does not divide the pre-pool feature map (" +
                      std::to_string(s) + ")");
  ConvSpec& last = c.conv_plan.back();
  last.kernel = s / n_side;
  last.stride = s / n_side;
  last.padding = 0;
  return c;
}

TrainResult run_train(const TrainOptions& opt) {
  RunConfig rc = opt.rc;
  rc.validate();
  fs::create_directories(opt.out_dir);

  std::string cfg_text = serialize_run_config(rc);
  {
    std::ofstream f(opt.out_dir + "/config.ini");
    if (!f) throw RuntimeFault("cannot write config to " + opt.out_dir);
    f << cfg_text;
  }
  const std::uint64_t cfg_hash = run_config_hash(rc);

  std::uint64_t master_seed = opt.master_seed;
  GaussianPolicy policy = build_policy(rc, master_seed);
  Adam optimizer = make_optimizer(policy, rc.ppo);

  long long update0 = 0;
  long long env_steps = 0;
  bool resuming = !opt.resume_path.empty();
  if (resuming) {
    CheckpointMeta meta = load_checkpoint(opt.resume_path, policy, optimizer);
    if (meta.config_hash != cfg_hash)
      throw ConfigError("checkpoint was trained under a different config; "
                        "refusing to resume");
    update0 = meta.update_idx;
    env_steps = meta.env_steps;
    if (opt.master_seed != 0 && opt.master_seed != meta.master_seed && !opt.quiet)
      std::fprintf(stderr, "[train] note: resuming with the checkpoint seed %llu\n",
                   static_cast<unsigned long long>(meta.master_seed));
    master_seed = meta.master_seed;
  }

  const long long total_updates =
      (rc.total_steps + rc.ppo.samples_per_update - 1) / rc.ppo.samples_per_update;

  EnvFactory factory = [&rc]() -> std::unique_ptr<EnvBase> {
    return std::make_unique<LocomotionEnv>(rc.env);
  };

  std::string metrics_path = opt.out_dir + "/metrics.csv";
  CsvWriter csv(metrics_path,
                {"update", "env_steps", "episodes", "mean_return", "mean_distance",
                 "mean_collisions", "mean_sphere_reward", "policy_loss", "value_loss",
                 "entropy", "clip_fraction", "ratio_outliers", "skipped_minibatches"},
                1, resuming);
  std::string ckpt_path = opt.out_dir + "/checkpoint.bin";

  std::unique_ptr<CsvWriter> eval_csv;
  std::string eval_path = opt.out_dir + "/eval.csv";
  if (opt.eval_every > 0)
    eval_csv = std::make_unique<CsvWriter>(
        eval_path,
        std::vector<std::string>{"update", "env_steps", "mean_return", "std_return",
                                 "mean_distance", "std_distance", "mean_collisions",
                                 "mean_sphere_reward"},
        1, resuming);

  std::deque<std::pair<double, double>> recent;  // (return, distance)

  for (long long update = update0; update < total_updates; ++update) {
    Rollout roll = collect_rollout(policy, factory, rc.ppo, master_seed,
                                   static_cast<int>(update));
    compute_gae(roll, rc.ppo.gamma, rc.ppo.lam);
    UpdateStats st = ppo_update(policy, optimizer, roll, rc.ppo, master_seed,
                                static_cast<int>(update));
    env_steps += rc.ppo.samples_per_update;

    Window w = summarize(roll.episodes);
    if (w.episodes > 0) {
      recent.emplace_back(w.ret, w.dist);
      if (recent.size() > 3) recent.pop_front();
    }

    csv.row(std::vector<double>{
        static_cast<double>(update + 1), static_cast<double>(env_steps),
        static_cast<double>(w.episodes), w.ret, w.dist, w.coll, w.sph,
        st.policy_loss, st.value_loss, st.entropy, st.clip_fraction,
        st.ratio_outlier_fraction, static_cast<double>(st.skipped)});
    csv.flush();

    if (!opt.quiet)
      std::printf("[train] update %lld/%lld steps %lld eps %d return %.3f "
                  "dist %.2f vloss %.4f clip %.3f\n",
                  update + 1, total_updates, env_steps, w.episodes, w.ret, w.dist,
                  st.value_loss, st.clip_fraction);

    if (eval_csv && (update + 1) % opt.eval_every == 0) {
      EvalResult ev = eval_policy(policy, rc, master_seed, opt.eval_episodes,
                                  false, "", true);
      eval_csv->row(std::vector<double>{
          static_cast<double>(update + 1), static_cast<double>(env_steps),
          ev.mean_return, ev.std_return, ev.mean_distance, ev.std_distance,
          ev.mean_collisions, ev.mean_sphere_reward});
      eval_csv->flush();
    }

    if ((update + 1) % rc.checkpoint_every == 0 || update + 1 == total_updates) {
      CheckpointMeta meta;
      meta.config_hash = cfg_hash;
      meta.master_seed = master_seed;
      meta.update_idx = update + 1;
      meta.env_steps = env_steps;
      meta.adam_step = optimizer.step_count();
      save_checkpoint(ckpt_path, policy, optimizer, meta);
    }
  }

  TrainResult res;
  res.updates = total_updates;
  res.env_steps = env_steps;
  res.checkpoint_path = ckpt_path;
  res.metrics_path = metrics_path;
  if (eval_csv) res.eval_path = eval_path;
  if (!recent.empty()) {
    for (const auto& [r, d] : recent) {
      res.final_mean_return += r;
      res.final_mean_distance += d;
    }
    res.final_mean_return /= recent.size();
    res.final_mean_distance /= recent.size();
  }
  if (update0 >= total_updates && !opt.quiet)
    std::printf("[train] checkpoint already covers %lld updates; nothing to do\n",
                total_updates);
  return res;
}

EvalResult eval_policy(const GaussianPolicy& policy, const RunConfig& rc,
                       std::uint64_t master_seed, int episodes, bool stochastic,
                       const std::string& record_path, bool quiet) {
  if (episodes < 1) throw ConfigError("eval needs at least one episode");

  LocomotionEnv env(rc.env);
  env.set_render_depth(policy.net.consumes_depth());

  ReplayFile replay;
  replay.config_text = serialize_run_config(rc);
  replay.action_dim = rc.net.action_dim;

  EvalResult res;
  res.episodes = episodes;
  std::vector<double> returns, distances, collisions, spheres;

  for (int e = 0; e < episodes; ++e) {
    std::uint64_t ep_seed = mix64(master_seed, kEvalStream, e);
    env.reset(ep_seed);
    Rng noise(mix64(master_seed, kEvalNoise, e));

    std::vector<double> rewards;
    std::vector<StepInfo> infos;
    bool record = e == 0 && !record_path.empty();
    std::uint64_t oh = 0;
    if (record) {
      replay.seed = ep_seed;
      hash_obs(oh, env);
    }

    bool done = false;
    while (!done) {
      GaussianPolicy::Act a = policy.act(env.proprio(), env.depth(),
                                         stochastic ? &noise : nullptr, stochastic);
      EnvBase::Step st = env.step(a.action);
      rewards.push_back(st.reward);
      infos.push_back(st.info);
      done = st.done;
      if (record) {
        replay.actions.insert(replay.actions.end(), a.action.begin(), a.action.end());
        hash_obs(oh, env);
      }
    }

    EpisodeMetrics m = accumulate_metrics(rewards, infos, rc.env.sphere_bonus);
    returns.push_back(m.episode_return);
    distances.push_back(m.distance);
    collisions.push_back(m.collisions);
    spheres.push_back(m.sphere_reward);
    res.mean_steps += m.steps;
    if (record) {
      res.first_episode_rewards = rewards;
      res.first_episode_obs_hash = oh;
      save_replay(record_path, replay);
    }
    if (!quiet)
      std::printf("[eval] episode %d: return %.3f distance %.2f collisions %d "
                  "steps %d\n",
                  e, m.episode_return, m.distance, m.collisions, m.steps);
  }

  auto mean = [episodes](const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / episodes;
  };
  res.mean_return = mean(returns);
  res.mean_distance = mean(distances);
  res.mean_collisions = mean(collisions);
  res.mean_sphere_reward = mean(spheres);
  res.std_return = sample_std(returns, res.mean_return);
  res.std_distance = sample_std(distances, res.mean_distance);
  res.std_collisions = sample_std(collisions, res.mean_collisions);
  res.std_sphere_reward = sample_std(spheres, res.mean_sphere_reward);
  res.mean_steps /= episodes;
  if (!quiet)
    std::printf("[eval] return %.3f +- %.3f | distance %.2f +- %.2f | "
                "collisions %.2f +- %.2f | sphere reward %.2f +- %.2f\n",
                res.mean_return, res.std_return, res.mean_distance,
                res.std_distance, res.mean_collisions, res.std_collisions,
                res.mean_sphere_reward, res.std_sphere_reward);
  return res;
}

EvalResult run_eval(const EvalOptions& opt) {
  RunConfig rc = opt.rc;
  rc.validate();

  // Shapes are the compatibility contract, not the full config: evaluating a
  // checkpoint on an environment it was not trained on is the transfer case.
  GaussianPolicy policy = build_policy(rc, opt.master_seed);
  if (!opt.checkpoint_path.empty()) {
    Adam optimizer = make_optimizer(policy, rc.ppo);
    load_checkpoint(opt.checkpoint_path, policy, optimizer);
  }
  return eval_policy(policy, rc, opt.master_seed, opt.episodes, opt.stochastic,
                     opt.record_replay_path, opt.quiet);
}

ReplayResult run_replay(const std::string& path, bool quiet) {
  ReplayFile r = load_replay(path);
  RunConfig rc = run_config_from_kv(KVConfig::parse_text(r.config_text));
  if (r.action_dim != rc.net.action_dim)
    throw RuntimeFault("replay action width does not match the config");

  LocomotionEnv env(rc.env);
  env.set_render_depth(variant_from_string(rc.net_variant) != VariantKind::state_only);
  env.reset(r.seed);

  ReplayResult out;
  hash_obs(out.obs_hash, env);
  std::vector<StepInfo> infos;
  int steps = r.steps();
  for (int t = 0; t < steps; ++t) {
    std::span<const double> a(r.actions.data() +
                                  static_cast<std::size_t>(t) * r.action_dim,
                              static_cast<std::size_t>(r.action_dim));
    EnvBase::Step st = env.step(a);
    out.rewards.push_back(st.reward);
    infos.push_back(st.info);
    hash_obs(out.obs_hash, env);
    out.done = st.done;
    if (st.done && t + 1 < steps)
      throw RuntimeFault("replay continues past episode termination");
  }
  out.metrics = accumulate_metrics(out.rewards, infos, rc.env.sphere_bonus);
  if (!quiet)
    std::printf("[replay] %d steps, return %.6f, distance %.3f, obs hash %016llx\n",
                steps, out.metrics.episode_return, out.metrics.distance,
                static_cast<unsigned long long>(out.obs_hash));
  return out;
}

AttnmapResult run_attnmap(const AttnmapOptions& opt) {
  RunConfig rc = opt.rc;
  rc.validate();
  if (variant_from_string(rc.net_variant) != VariantKind::loco_transformer)
    throw ConfigError("attention maps exist only for the locotransformer variant");
  std::vector<int> want = opt.steps;
  std::sort(want.begin(), want.end());
  want.erase(std::unique(want.begin(), want.end()), want.end());
  if (want.empty()) throw ConfigError("no observation indices requested");
  if (want.front() < 0) throw ConfigError("observation indices start at 0");

  GaussianPolicy policy = build_policy(rc, opt.master_seed);
  if (!opt.checkpoint_path.empty()) {
    Adam optimizer = make_optimizer(policy, rc.ppo);
    load_checkpoint(opt.checkpoint_path, policy, optimizer);
  }

  fs::create_directories(opt.out_dir);
  const int grid = rc.net.grid_size();
  const int S = rc.env.depth_size;
  const int s2 = S * S;

  LocomotionEnv env(rc.env);
  env.set_render_depth(true);
  env.reset(mix64(opt.master_seed, kEvalStream, 0));

  std::vector<std::string> cols = {"frame", "env_step"};
  for (int i = 0; i < grid * grid; ++i) cols.push_back("w" + std::to_string(i));
  std::string csv_path = opt.out_dir + "/attention.csv";
  CsvWriter csv(csv_path, cols, 1);

  AttnmapResult res;
  res.csv_path = csv_path;
  int t = 0;  // completed env steps == index of the current observation
  bool done = false;
  size_t next = 0;

  while (next < want.size()) {
    if (want[next] == t) {
      int f = static_cast<int>(next);
      Tensor w = policy.attention(env.proprio(), env.depth());
      std::vector<double> map = extract_attention_map(w, grid, 0);
      res.maps.push_back(map);

      // newest frame of the stack
      std::span<const double> frame(env.depth().data() + env.depth().size() - s2,
                                    static_cast<std::size_t>(s2));
      char name[64];
      std::snprintf(name, sizeof(name), "/depth_%04d.pgm", f);
      write_pgm(opt.out_dir + name, frame, S, S);

      double peak = *std::max_element(map.begin(), map.end());
      std::vector<double> up(static_cast<std::size_t>(s2));
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          up[static_cast<std::size_t>(r) * S + c] =
              peak > 0 ? map[(r * grid / S) * grid + (c * grid / S)] / peak : 0.0;
      std::snprintf(name, sizeof(name), "/attn_%04d.pgm", f);
      write_pgm(opt.out_dir + name, up, S, S);

      std::vector<double> overlay(static_cast<std::size_t>(s2));
      for (int i = 0; i < s2; ++i) overlay[i] = 0.5 * frame[i] + 0.5 * up[i];
      std::snprintf(name, sizeof(name), "/overlay_%04d.pgm", f);
      write_pgm(opt.out_dir + name, overlay, S, S);

      std::vector<double> row;
      row.push_back(f);
      row.push_back(t);
      row.insert(row.end(), map.begin(), map.end());
      csv.row(row);
      ++next;
      continue;
    }
    if (done)
      throw ConfigError("episode ended after " + std::to_string(t) +
                        " steps; valid observation indices are 0.." +
                        std::to_string(t));
    GaussianPolicy::Act a = policy.act(env.proprio(), env.depth(), nullptr, false);
    done = env.step(a.action).done;
    ++t;
  }
  if (!opt.quiet)
    std::printf("[attnmap] wrote %zu frames to %s\n", res.maps.size(),
                opt.out_dir.c_str());
  return res;
}

AblateResult run_ablate(const AblateOptions& opt) {
  const bool tokens = opt.axis == "tokens" || opt.axis == "both";
  const bool layers = opt.axis == "layers" || opt.axis == "both";
  if (!tokens && !layers)
    throw ConfigError("unknown ablation axis: " + opt.axis);
  fs::create_directories(opt.out_dir);
  RunConfig base = make_run_config(opt.profile, opt.env_variant, "locotransformer");
  base.total_steps = opt.steps;

  AblateResult res;
  auto study = [&](const std::string& name, const std::vector<int>& settings,
                   auto apply, std::string& raw_path, std::string& summary_path) {
    raw_path = opt.out_dir + "/ablate_" + name + ".csv";
    summary_path = opt.out_dir + "/ablate_" + name + "_summary.csv";
    CsvWriter raw(raw_path, {"setting", "seed", "final_return", "final_distance"}, 1);
    CsvWriter summary(summary_path,
                      {"setting", "mean_return", "std_return", "mean_distance",
                       "std_distance"},
                      1);
    for (int setting : settings) {
      RunConfig rc = base;
      if (opt.tweak) opt.tweak(rc);
      apply(rc, setting);
      rc.validate();
      std::vector<double> rets, dists;
      for (std::uint64_t seed : opt.seeds) {
        TrainOptions to;
        to.rc = rc;
        to.master_seed = seed;
        to.out_dir = opt.out_dir + "/" + name + "_" + std::to_string(setting) +
                     "_seed" + std::to_string(seed);
        to.quiet = opt.quiet;
        if (!opt.quiet)
          std::printf("[ablate] %s=%d seed=%llu\n", name.c_str(), setting,
                      static_cast<unsigned long long>(seed));
        TrainResult tr = run_train(to);
        rets.push_back(tr.final_mean_return);
        dists.push_back(tr.final_mean_distance);
        raw.row(std::vector<double>{static_cast<double>(setting),
                                    static_cast<double>(seed), tr.final_mean_return,
                                    tr.final_mean_distance});
        raw.flush();
      }
      double mr = std::accumulate(rets.begin(), rets.end(), 0.0) / rets.size();
      double md = std::accumulate(dists.begin(), dists.end(), 0.0) / dists.size();
      summary.row(std::vector<double>{static_cast<double>(setting), mr,
                                      sample_std(rets, mr), md,
                                      sample_std(dists, md)});
      summary.flush();
    }
  };

  if (tokens)
    study("tokens", opt.token_grid,
          [](RunConfig& rc, int n) { rc.net = with_token_grid(rc.net, n); },
          res.tokens_csv, res.tokens_summary_csv);
  if (layers)
    study("layers", opt.layer_grid,
          [](RunConfig& rc, int l) { rc.net.layers = l; },
          res.layers_csv, res.layers_summary_csv);
  return res;
}

}  // namespace loco
