#include "loco/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace loco {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int(long long v) { return std::to_string(v); }

}  // namespace

KVConfig KVConfig::parse_text(const std::string& text) {
  KVConfig out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": empty section name");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": key outside any [section]");
    out.kv_[section + "." + key] = value;
  }
  return out;
}

KVConfig KVConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str());
}

const std::string& KVConfig::get(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

std::string KVConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

long long KVConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: " + s);
  }
}

double KVConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: " + s);
  }
}

bool KVConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key " + key + ": not a boolean: " + s);
}

void KVConfig::set(const std::string& key, const std::string& value) {
  if (key.find('.') == std::string::npos)
    throw ConfigError("config keys take the form section.key: " + key);
  kv_[key] = value;
}

std::string KVConfig::canonical_text() const {
  std::string out;
  std::string section;
  for (const auto& [key, value] : kv_) {
    size_t dot = key.find('.');
    std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

std::uint64_t KVConfig::hash() const {
  std::string text = canonical_text();
  return hash_bytes(text.data(), text.size());
}

std::string conv_plan_to_string(const std::vector<ConvSpec>& plan) {
  std::string out;
  for (size_t i = 0; i < plan.size(); ++i) {
    if (i) out += ",";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%dx%ds%dp%d", plan[i].out_ch, plan[i].kernel,
                  plan[i].stride, plan[i].padding);
    out += buf;
  }
  return out;
}

std::vector<ConvSpec> conv_plan_from_string(const std::string& text) {
  std::vector<ConvSpec> plan;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    ConvSpec s;
    if (std::sscanf(item.c_str(), "%dx%ds%dp%d", &s.out_ch, &s.kernel, &s.stride,
                    &s.padding) != 4)
      throw ConfigError("bad conv layer spec: " + item +
                        " (expected OUTxKsSpP, e.g. 32x8s4p2)");
    plan.push_back(s);
  }
  if (plan.empty()) throw ConfigError("empty conv plan");
  return plan;
}

std::string int_list_to_string(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> int_list_from_string(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      size_t pos = 0;
      out.push_back(std::stoi(trim(item), &pos));
    } catch (const std::exception&) {
      throw ConfigError("bad integer list element: " + item);
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

void RunConfig::validate() const {
  if (profile != "mini" && profile != "paper")
    throw ConfigError("unknown profile: " + profile);
  variant_from_string(net_variant);  // throws on unknown
  if (total_steps < 1) throw ConfigError("steps must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  env.validate();
  ppo.validate();
  net.validate();
  if (net.depth_size != env.depth_size || net.depth_stack != env.depth_stack)
    throw ConfigError("network depth input does not match the environment");
}

RunConfig make_run_config(const std::string& profile, const std::string& env_variant,
                          const std::string& net_variant) {
  RunConfig rc;
  rc.profile = profile;
  rc.net_variant = net_variant;
  rc.env_variant = env_variant;
  rc.env = make_env_config(env_variant, profile);

  if (profile == "mini") {
    rc.net.proprio_hidden = {64, 64};
    rc.net.conv_plan = {{8, 8, 4, 2}, {16, 4, 2, 1}, {16, 3, 1, 1}, {32, 2, 2, 0}};
    rc.net.token_dim = 32;
    rc.net.attn_dim = 32;
    rc.net.layers = 2;
    rc.net.mlp_hidden = 64;
    rc.net.head_hidden = {64, 64};
    rc.total_steps = 1000000;
  } else {
    // paper-scale defaults are baked into NetConfig
    rc.total_steps = 15000000;
  }
  rc.net.depth_size = rc.env.depth_size;
  rc.net.depth_stack = rc.env.depth_stack;
  rc.validate();
  return rc;
}

namespace {

// every recognized override; anything else in a config file is a typo
void apply_kv(RunConfig& rc, const KVConfig& kv) {
  for (const auto& [key, value] : kv.entries()) {
    if (key == "run.version" || key == "run.profile" || key == "run.variant" ||
        key == "run.env")
      continue;  // consumed before presets were applied
    else if (key == "run.steps") rc.total_steps = kv.get_int(key);
    else if (key == "run.checkpoint_every")
      rc.checkpoint_every = static_cast<int>(kv.get_int(key));
    else if (key == "net.proprio_hidden")
      rc.net.proprio_hidden = int_list_from_string(value);
    else if (key == "net.conv_plan") rc.net.conv_plan = conv_plan_from_string(value);
    else if (key == "net.token_dim") rc.net.token_dim = static_cast<int>(kv.get_int(key));
    else if (key == "net.attn_dim") rc.net.attn_dim = static_cast<int>(kv.get_int(key));
    else if (key == "net.layers") rc.net.layers = static_cast<int>(kv.get_int(key));
    else if (key == "net.mlp_hidden") rc.net.mlp_hidden = static_cast<int>(kv.get_int(key));
    else if (key == "net.head_hidden") rc.net.head_hidden = int_list_from_string(value);
    else if (key == "env.horizon") rc.env.horizon = static_cast<int>(kv.get_int(key));
    else if (key == "env.depth_size") rc.env.depth_size = static_cast<int>(kv.get_int(key));
    else if (key == "env.depth_stack") rc.env.depth_stack = static_cast<int>(kv.get_int(key));
    else if (key == "env.arena_length") rc.env.arena_length = kv.get_double(key);
    else if (key == "env.arena_half_width") rc.env.arena_half_width = kv.get_double(key);
    else if (key == "env.obstacle_count")
      rc.env.obstacle_count = static_cast<int>(kv.get_int(key));
    else if (key == "env.obstacle_width_min") rc.env.obstacle_width_min = kv.get_double(key);
    else if (key == "env.obstacle_width_max") rc.env.obstacle_width_max = kv.get_double(key);
    else if (key == "env.obstacle_depth") rc.env.obstacle_depth = kv.get_double(key);
    else if (key == "env.obstacle_height") rc.env.obstacle_height = kv.get_double(key);
    else if (key == "env.obstacle_min_x") rc.env.obstacle_min_x = kv.get_double(key);
    else if (key == "env.sphere_count")
      rc.env.sphere_count = static_cast<int>(kv.get_int(key));
    else if (key == "env.sphere_radius") rc.env.sphere_radius = kv.get_double(key);
    else if (key == "env.sphere_bonus") rc.env.sphere_bonus = kv.get_double(key);
    else if (key == "env.pickup_radius") rc.env.pickup_radius = kv.get_double(key);
    else if (key == "env.obstacle_speed") rc.env.obstacle_speed = kv.get_double(key);
    else if (key == "env.redirect_period")
      rc.env.redirect_period = static_cast<int>(kv.get_int(key));
    else if (key == "env.height_amplitude") rc.env.height_amplitude = kv.get_double(key);
    else if (key == "env.height_roughness") rc.env.height_roughness = kv.get_double(key);
    else if (key == "env.heightfield_res")
      rc.env.heightfield_res = static_cast<int>(kv.get_int(key));
    else if (key == "env.goal_x") rc.env.goal_x = kv.get_double(key);
    else if (key == "env.goal_y") rc.env.goal_y = kv.get_double(key);
    else if (key == "env.goal_height") rc.env.goal_height = kv.get_double(key);
    else if (key == "env.action_bound") rc.env.action_bound = kv.get_double(key);
    else if (key == "env.joint_limit") rc.env.joint_limit = kv.get_double(key);
    else if (key == "env.c_forward") rc.env.c_forward = kv.get_double(key);
    else if (key == "env.c_turn") rc.env.c_turn = kv.get_double(key);
    else if (key == "env.robot_radius") rc.env.robot_radius = kv.get_double(key);
    else if (key == "env.cam_fov_deg") rc.env.cam_fov_deg = kv.get_double(key);
    else if (key == "env.cam_near") rc.env.cam_near = kv.get_double(key);
    else if (key == "env.cam_far") rc.env.cam_far = kv.get_double(key);
    else if (key == "env.cam_pitch_deg") rc.env.cam_pitch_deg = kv.get_double(key);
    else if (key == "env.cam_forward") rc.env.cam_forward = kv.get_double(key);
    else if (key == "env.cam_height") rc.env.cam_height = kv.get_double(key);
    else if (key == "env.w_forward") rc.env.w_forward = kv.get_double(key);
    else if (key == "env.w_energy") rc.env.w_energy = kv.get_double(key);
    else if (key == "env.w_alive") rc.env.w_alive = kv.get_double(key);
    else if (key == "env.attitude_limit") rc.env.attitude_limit = kv.get_double(key);
    else if (key == "env.stuck_limit")
      rc.env.stuck_limit = static_cast<int>(kv.get_int(key));
    else if (key == "ppo.clip_eps") rc.ppo.clip_eps = kv.get_double(key);
    else if (key == "ppo.gamma") rc.ppo.gamma = kv.get_double(key);
    else if (key == "ppo.lam") rc.ppo.lam = kv.get_double(key);
    else if (key == "ppo.samples_per_update")
      rc.ppo.samples_per_update = static_cast<int>(kv.get_int(key));
    else if (key == "ppo.lanes") rc.ppo.lanes = static_cast<int>(kv.get_int(key));
    else if (key == "ppo.epochs") rc.ppo.epochs = static_cast<int>(kv.get_int(key));
    else if (key == "ppo.minibatch") rc.ppo.minibatch = static_cast<int>(kv.get_int(key));
    else if (key == "ppo.lr") rc.ppo.lr = kv.get_double(key);
    else if (key == "ppo.value_coef") rc.ppo.value_coef = kv.get_double(key);
    else if (key == "ppo.entropy_coef") rc.ppo.entropy_coef = kv.get_double(key);
    else throw ConfigError("unknown config key: " + key);
  }
}

}  // namespace

RunConfig run_config_from_kv(const KVConfig& kv) {
  if (!kv.has("run.version"))
    throw ConfigError("config is missing the required run.version key");
  if (kv.get("run.version") != "1")
    throw ConfigError("unsupported config version: " + kv.get("run.version"));

  std::string profile = kv.get_or("run.profile", "mini");
  std::string env_variant = kv.get_or("run.env", "thin_obs");
  std::string net_variant = kv.get_or("run.variant", "locotransformer");
  RunConfig rc = make_run_config(profile, env_variant, net_variant);
  apply_kv(rc, kv);
  rc.net.depth_size = rc.env.depth_size;
  rc.net.depth_stack = rc.env.depth_stack;
  rc.validate();
  return rc;
}

KVConfig run_config_to_kv(const RunConfig& rc) {
  KVConfig kv;
  kv.set("run.version", "1");
  kv.set("run.profile", rc.profile);
  kv.set("run.variant", rc.net_variant);
  kv.set("run.env", rc.env_variant);
  kv.set("run.steps", fmt_int(rc.total_steps));
  kv.set("run.checkpoint_every", fmt_int(rc.checkpoint_every));

  kv.set("net.proprio_hidden", int_list_to_string(rc.net.proprio_hidden));
  kv.set("net.conv_plan", conv_plan_to_string(rc.net.conv_plan));
  kv.set("net.token_dim", fmt_int(rc.net.token_dim));
  kv.set("net.attn_dim", fmt_int(rc.net.attn_dim));
  kv.set("net.layers", fmt_int(rc.net.layers));
  kv.set("net.mlp_hidden", fmt_int(rc.net.mlp_hidden));
  kv.set("net.head_hidden", int_list_to_string(rc.net.head_hidden));

  const EnvConfig& e = rc.env;
  kv.set("env.horizon", fmt_int(e.horizon));
  kv.set("env.depth_size", fmt_int(e.depth_size));
  kv.set("env.depth_stack", fmt_int(e.depth_stack));
  kv.set("env.arena_length", fmt_double(e.arena_length));
  kv.set("env.arena_half_width", fmt_double(e.arena_half_width));
  kv.set("env.obstacle_count", fmt_int(e.obstacle_count));
  kv.set("env.obstacle_width_min", fmt_double(e.obstacle_width_min));
  kv.set("env.obstacle_width_max", fmt_double(e.obstacle_width_max));
  kv.set("env.obstacle_depth", fmt_double(e.obstacle_depth));
  kv.set("env.obstacle_height", fmt_double(e.obstacle_height));
  kv.set("env.obstacle_min_x", fmt_double(e.obstacle_min_x));
  kv.set("env.sphere_count", fmt_int(e.sphere_count));
  kv.set("env.sphere_radius", fmt_double(e.sphere_radius));
  kv.set("env.sphere_bonus", fmt_double(e.sphere_bonus));
  kv.set("env.pickup_radius", fmt_double(e.pickup_radius));
  kv.set("env.obstacle_speed", fmt_double(e.obstacle_speed));
  kv.set("env.redirect_period", fmt_int(e.redirect_period));
  kv.set("env.height_amplitude", fmt_double(e.height_amplitude));
  kv.set("env.height_roughness", fmt_double(e.height_roughness));
  kv.set("env.heightfield_res", fmt_int(e.heightfield_res));
  kv.set("env.goal_x", fmt_double(e.goal_x));
  kv.set("env.goal_y", fmt_double(e.goal_y));
  kv.set("env.goal_height", fmt_double(e.goal_height));
  kv.set("env.action_bound", fmt_double(e.action_bound));
  kv.set("env.joint_limit", fmt_double(e.joint_limit));
  kv.set("env.c_forward", fmt_double(e.c_forward));
  kv.set("env.c_turn", fmt_double(e.c_turn));
  kv.set("env.robot_radius", fmt_double(e.robot_radius));
  kv.set("env.cam_fov_deg", fmt_double(e.cam_fov_deg));
  kv.set("env.cam_near", fmt_double(e.cam_near));
  kv.set("env.cam_far", fmt_double(e.cam_far));
  kv.set("env.cam_pitch_deg", fmt_double(e.cam_pitch_deg));
  kv.set("env.cam_forward", fmt_double(e.cam_forward));
  kv.set("env.cam_height", fmt_double(e.cam_height));
  kv.set("env.w_forward", fmt_double(e.w_forward));
  kv.set("env.w_energy", fmt_double(e.w_energy));
  kv.set("env.w_alive", fmt_double(e.w_alive));
  kv.set("env.attitude_limit", fmt_double(e.attitude_limit));
  kv.set("env.stuck_limit", fmt_int(e.stuck_limit));

  const PPOConfig& p = rc.ppo;
  kv.set("ppo.clip_eps", fmt_double(p.clip_eps));
  kv.set("ppo.gamma", fmt_double(p.gamma));
  kv.set("ppo.lam", fmt_double(p.lam));
  kv.set("ppo.samples_per_update", fmt_int(p.samples_per_update));
  kv.set("ppo.lanes", fmt_int(p.lanes));
  kv.set("ppo.epochs", fmt_int(p.epochs));
  kv.set("ppo.minibatch", fmt_int(p.minibatch));
  kv.set("ppo.lr", fmt_double(p.lr));
  kv.set("ppo.value_coef", fmt_double(p.value_coef));
  kv.set("ppo.entropy_coef", fmt_double(p.entropy_coef));
  return kv;
}

}  // namespace loco
