// Command-line driver: train / eval / attnmap / ablate / replay.
// Exit codes: 0 success, 2 config error, 3 runtime fault.
#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "loco/trainer.hpp"

using namespace loco;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string profile = "mini";
  std::string env_variant = "thin_obs";
  std::string net_variant = "locotransformer";
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path,
                  "config file; replaces the preset flags");
  cmd->add_option("--profile", f.profile, "mini or paper")
      ->check(CLI::IsMember({"mini", "paper"}));
  cmd->add_option("--env", f.env_variant, "environment variant");
  cmd->add_option("--variant", f.net_variant, "network variant")
      ->check(CLI::IsMember(
          {"state_only", "depth_only", "concat", "locotransformer"}));
  cmd->add_flag("--quiet", f.quiet, "suppress per-step chatter");
}

// --config and the preset flags are either/or; --env may still override the
// evaluation environment afterwards (transfer runs).
RunConfig resolve_config(const CLI::App* cmd, const CommonFlags& f,
                         bool allow_env_override) {
  if (!f.config_path.empty()) {
    for (const char* flag : {"--profile", "--variant"})
      if (cmd->count(flag) > 0)
        throw ConfigError(std::string(flag) +
                          " conflicts with --config; pick one source");
    if (!allow_env_override && cmd->count("--env") > 0)
      throw ConfigError("--env conflicts with --config; pick one source");
    RunConfig rc = run_config_from_kv(KVConfig::parse_file(f.config_path));
    if (allow_env_override && cmd->count("--env") > 0) {
      rc.env_variant = f.env_variant;
      rc.env = make_env_config(f.env_variant, rc.profile);
      rc.validate();
    }
    return rc;
  }
  return make_run_config(f.profile, f.env_variant, f.net_variant);
}

int cmd_train(CLI::App& app) {
  CLI::App* cmd = app.add_subcommand("train", "run PPO training");
  static CommonFlags f;
  static std::vector<std::uint64_t> seeds;
  static std::string out_dir = "run_out";
  static std::string resume_path;
  static long long steps = 0;
  static int checkpoint_every = 0;
  static int eval_every = 0;
  static int eval_episodes = 3;
  add_common(cmd, f);
  cmd->add_option("--seed", seeds, "master seed; repeat for several runs");
  cmd->add_option("--out", out_dir, "output directory");
  cmd->add_option("--steps", steps, "total environment steps");
  cmd->add_option("--checkpoint-every", checkpoint_every,
                  "updates between checkpoints");
  cmd->add_option("--resume", resume_path, "checkpoint to continue from");
  cmd->add_option("--eval-every", eval_every,
                  "updates between deterministic eval rows (0 = off)");
  cmd->add_option("--eval-episodes", eval_episodes, "episodes per eval row");

  cmd->callback([cmd]() {
    RunConfig rc = resolve_config(cmd, f, false);
    if (steps > 0) rc.total_steps = steps;
    if (checkpoint_every > 0) rc.checkpoint_every = checkpoint_every;
    if (seeds.empty()) seeds.push_back(0);
    if (!resume_path.empty() && seeds.size() > 1)
      throw ConfigError("--resume applies to a single seed");

    for (std::uint64_t seed : seeds) {
      TrainOptions to;
      to.rc = rc;
      to.master_seed = seed;
      to.out_dir = seeds.size() == 1
                       ? out_dir
                       : out_dir + "/seed" + std::to_string(seed);
      to.resume_path = resume_path;
      to.eval_every = eval_every;
      to.eval_episodes = eval_episodes;
      to.quiet = f.quiet;
      TrainResult res = run_train(to);
      std::printf("train: seed %llu, %lld updates, %lld env steps, "
                  "final return %.3f, final distance %.2f\n",
                  static_cast<unsigned long long>(seed), res.updates,
                  res.env_steps, res.final_mean_return, res.final_mean_distance);
    }
  });
  return 0;
}

int cmd_eval(CLI::App& app) {
  CLI::App* cmd = app.add_subcommand("eval", "score a policy over episodes");
  static CommonFlags f;
  static std::string checkpoint;
  static std::string record_path;
  static std::vector<std::uint64_t> seeds;
  static int episodes = 5;
  static bool stochastic = false;
  add_common(cmd, f);
  cmd->add_option("--checkpoint", checkpoint,
                  "checkpoint to load; omit for the untrained init");
  cmd->add_option("--episodes", episodes, "episodes to aggregate")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", seeds, "eval seed");
  cmd->add_option("--record", record_path, "record the first episode here");
  cmd->add_flag("--stochastic", stochastic, "sample actions instead of means");

  cmd->callback([cmd]() {
    EvalOptions eo;
    eo.rc = resolve_config(cmd, f, true);
    eo.checkpoint_path = checkpoint;
    eo.master_seed = seeds.empty() ? 0 : seeds.front();
    eo.episodes = episodes;
    eo.stochastic = stochastic;
    eo.record_replay_path = record_path;
    eo.quiet = f.quiet;
    run_eval(eo);
  });
  return 0;
}

int cmd_attnmap(CLI::App& app) {
  CLI::App* cmd =
      app.add_subcommand("attnmap", "export attention maps as PGM + CSV");
  static CommonFlags f;
  static std::string checkpoint;
  static std::string out_dir = "attn_out";
  static std::vector<int> at;
  static std::vector<std::uint64_t> seeds;
  add_common(cmd, f);
  cmd->add_option("--checkpoint", checkpoint, "locotransformer checkpoint");
  cmd->add_option("--out", out_dir, "output directory");
  cmd->add_option("--at", at, "observation indices to capture (repeatable)");
  cmd->add_option("--seed", seeds, "episode seed");

  cmd->callback([cmd]() {
    AttnmapOptions ao;
    ao.rc = resolve_config(cmd, f, true);
    ao.checkpoint_path = checkpoint;
    ao.master_seed = seeds.empty() ? 0 : seeds.front();
    ao.out_dir = out_dir;
    if (!at.empty()) ao.steps = at;
    ao.quiet = f.quiet;
    run_attnmap(ao);
  });
  return 0;
}

int cmd_ablate(CLI::App& app) {
  CLI::App* cmd =
      app.add_subcommand("ablate", "token/layer sweeps at mini profile");
  static CommonFlags f;
  static std::string axis;
  static std::string out_dir = "ablate_out";
  static std::vector<std::uint64_t> seeds;
  static long long steps = 100000;
  add_common(cmd, f);
  cmd->add_option("--axis", axis, "tokens or layers")
      ->required()
      ->check(CLI::IsMember({"tokens", "layers"}));
  cmd->add_option("--seed", seeds, "training seed (repeatable)");
  cmd->add_option("--out", out_dir, "output directory");
  cmd->add_option("--steps", steps, "env steps per run")
      ->check(CLI::PositiveNumber);

  cmd->callback([cmd]() {
    if (f.config_path.empty() && cmd->count("--variant") > 0)
      throw ConfigError("ablation always trains the locotransformer variant");
    AblateOptions ao;
    ao.axis = axis;
    ao.profile = f.profile;
    ao.env_variant = f.env_variant;
    if (!seeds.empty()) ao.seeds = seeds;
    ao.steps = steps;
    ao.out_dir = out_dir;
    ao.quiet = f.quiet;
    AblateResult res = run_ablate(ao);
    const std::string& summary =
        axis == "tokens" ? res.tokens_summary_csv : res.layers_summary_csv;
    std::printf("ablate: summary written to %s\n", summary.c_str());
  });
  return 0;
}

int cmd_replay(CLI::App& app) {
  CLI::App* cmd = app.add_subcommand("replay", "re-run a recorded episode");
  static std::string path;
  static bool quiet = false;
  cmd->add_option("file", path, "replay file")->required();
  cmd->add_flag("--quiet", quiet, "print nothing on success");
  cmd->callback([]() { run_replay(path, quiet); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locomotion policy training and analysis"};
  app.require_subcommand(1);
  cmd_train(app);
  cmd_eval(app);
  cmd_attnmap(app);
  cmd_ablate(app);
  cmd_replay(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime fault: %s\n", e.what());
    return 3;
  }
  return 0;
}
