#include "loco/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace loco {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// displacement along +x, or toward the goal for the mountain variant
double forward_progress(const WorldState& before, const WorldState& after,
                        const EnvConfig& cfg) {
  if (cfg.is_mountain()) {
    double gx = cfg.goal_x - before.x;
    double gy = cfg.goal_y - before.y;
    double n = std::hypot(gx, gy);
    if (n < 1e-9) return 0.0;
    return ((after.x - before.x) * gx + (after.y - before.y) * gy) / n;
  }
  return after.x - before.x;
}

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void EnvConfig::validate() const {
  static const char* kVariants[] = {"flat",           "thin_obs",   "wide_obs",
                                    "thin_obs_sphere", "wide_obs_sphere",
                                    "moving_obs",     "mountain"};
  bool known = false;
  for (const char* v : kVariants) known = known || variant == v;
  if (!known) throw ConfigError("unknown environment variant: " + variant);
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (depth_size < 4) throw ConfigError("depth_size must be >= 4");
  if (depth_stack < 1) throw ConfigError("depth_stack must be >= 1");
  if (arena_length <= 4.0) throw ConfigError("arena_length must exceed 4");
  if (arena_half_width <= 2.0 * robot_radius)
    throw ConfigError("arena_half_width too small for the robot");
  if (obstacle_count < 0 || sphere_count < 0)
    throw ConfigError("object counts must be non-negative");
  if (obstacle_count > 0) {
    if (obstacle_width_min <= 0 || obstacle_width_min > obstacle_width_max)
      throw ConfigError("invalid obstacle width range");
    if (obstacle_width_max / 2.0 >= arena_half_width)
      throw ConfigError("obstacles wider than the arena");
    if (obstacle_depth <= 0 || obstacle_height <= 0)
      throw ConfigError("obstacle extents must be positive");
    if (obstacle_min_x < 0 || obstacle_min_x >= arena_length - 1.0)
      throw ConfigError("obstacle_min_x out of range");
  }
  if (sphere_count > 0 && (sphere_radius <= 0 || pickup_radius <= 0))
    throw ConfigError("sphere radii must be positive");
  if (obstacle_speed < 0) throw ConfigError("obstacle_speed must be >= 0");
  if (redirect_period < 0) throw ConfigError("redirect_period must be >= 0");
  if (is_mountain()) {
    if (!(heightfield_res >= 5 && power_of_two(heightfield_res - 1)))
      throw ConfigError("heightfield_res must be 2^k + 1 with k >= 2");
    if (height_amplitude < 0) throw ConfigError("height_amplitude must be >= 0");
  }
  if (action_bound <= 0 || joint_limit <= 0)
    throw ConfigError("action_bound and joint_limit must be positive");
  if (c_forward < 0 || c_turn < 0) throw ConfigError("gait gains must be >= 0");
  if (robot_radius <= 0) throw ConfigError("robot_radius must be positive");
  if (!(cam_fov_deg > 0 && cam_fov_deg < 180))
    throw ConfigError("cam_fov_deg must lie in (0, 180)");
  if (!(cam_near > 0 && cam_near < cam_far))
    throw ConfigError("camera near/far planes invalid");
  if (attitude_limit <= 0) throw ConfigError("attitude_limit must be positive");
  if (stuck_limit < 1) throw ConfigError("stuck_limit must be >= 1");
}

EnvConfig make_env_config(const std::string& variant, const std::string& profile) {
  if (profile != "mini" && profile != "paper")
    throw ConfigError("unknown profile: " + profile);
  bool mini = profile == "mini";

  EnvConfig c;
  c.variant = variant;
  c.horizon = mini ? 400 : 1000;
  c.depth_size = mini ? 32 : 64;
  c.arena_length = mini ? 24.0 : 40.0;
  c.arena_half_width = mini ? 3.0 : 4.0;
  c.obstacle_count = 0;
  c.obstacle_speed = 0.0;

  auto thin = [&] {
    c.obstacle_count = mini ? 12 : 20;
    c.obstacle_width_min = 0.2;
    c.obstacle_width_max = 0.4;
  };
  auto wide = [&] {
    c.obstacle_count = mini ? 4 : 6;
    c.obstacle_width_min = mini ? 1.0 : 1.5;
    c.obstacle_width_max = mini ? 2.0 : 3.0;
  };

  if (variant == "flat") {
    // no objects
  } else if (variant == "thin_obs") {
    thin();
  } else if (variant == "wide_obs") {
    wide();
  } else if (variant == "thin_obs_sphere") {
    thin();
    c.sphere_count = mini ? 5 : 8;
  } else if (variant == "wide_obs_sphere") {
    wide();
    c.sphere_count = mini ? 5 : 8;
  } else if (variant == "moving_obs") {
    thin();
    c.obstacle_count = mini ? 10 : 16;
    c.obstacle_speed = 0.02;
    c.redirect_period = 50;
  } else if (variant == "mountain") {
    c.height_amplitude = mini ? 1.0 : 1.5;
    c.height_roughness = 0.6;
    c.heightfield_res = 33;
    c.goal_x = mini ? 14.0 : 20.0;
    c.goal_y = 0.0;
    c.goal_height = mini ? 3.0 : 4.0;
  } else {
    throw ConfigError("unknown environment variant: " + variant);
  }
  c.validate();
  return c;
}

double Heightfield::height(double x, double y) const {
  if (empty()) return 0.0;
  double gx = std::clamp((x - x0) / cell, 0.0, res - 1 - 1e-9);
  double gy = std::clamp((y - y0) / cell, 0.0, res - 1 - 1e-9);
  int i = static_cast<int>(gx);
  int j = static_cast<int>(gy);
  double fx = gx - i, fy = gy - j;
  double h00 = h[j * res + i], h10 = h[j * res + i + 1];
  double h01 = h[(j + 1) * res + i], h11 = h[(j + 1) * res + i + 1];
  return (1 - fx) * (1 - fy) * h00 + fx * (1 - fy) * h10 +
         (1 - fx) * fy * h01 + fx * fy * h11;
}

void Heightfield::gradient(double x, double y, double& dhdx, double& dhdy) const {
  dhdx = dhdy = 0.0;
  if (empty()) return;
  double gx = std::clamp((x - x0) / cell, 0.0, res - 1 - 1e-9);
  double gy = std::clamp((y - y0) / cell, 0.0, res - 1 - 1e-9);
  int i = static_cast<int>(gx);
  int j = static_cast<int>(gy);
  double fx = gx - i, fy = gy - j;
  double h00 = h[j * res + i], h10 = h[j * res + i + 1];
  double h01 = h[(j + 1) * res + i], h11 = h[(j + 1) * res + i + 1];
  dhdx = ((1 - fy) * (h10 - h00) + fy * (h11 - h01)) / cell;
  dhdy = ((1 - fx) * (h01 - h00) + fx * (h11 - h10)) / cell;
}

namespace {

// midpoint-displacement fractal plus a smooth peak centered on the goal
Heightfield make_mountain(const EnvConfig& cfg, Rng& rng) {
  Heightfield hf;
  hf.res = cfg.heightfield_res;
  double side = std::max(cfg.arena_length + 8.0, 2.0 * cfg.arena_half_width + 8.0);
  hf.cell = side / (hf.res - 1);
  hf.x0 = -4.0;
  hf.y0 = -side / 2.0;
  hf.h.assign(static_cast<size_t>(hf.res) * hf.res, 0.0);

  auto at = [&](int i, int j) -> double& { return hf.h[j * hf.res + i]; };
  int n = hf.res - 1;
  double amp = cfg.height_amplitude;
  for (int size = n; size > 1; size /= 2) {
    int half = size / 2;
    for (int j = half; j < n; j += size)
      for (int i = half; i < n; i += size) {
        double avg = (at(i - half, j - half) + at(i + half, j - half) +
                      at(i - half, j + half) + at(i + half, j + half)) / 4.0;
        at(i, j) = avg + rng.uniform(-amp, amp);
      }
    for (int j = 0; j <= n; j += half)
      for (int i = ((j / half) % 2 == 0) ? half : 0; i <= n; i += size) {
        double sum = 0.0;
        int cnt = 0;
        if (i - half >= 0) { sum += at(i - half, j); ++cnt; }
        if (i + half <= n) { sum += at(i + half, j); ++cnt; }
        if (j - half >= 0) { sum += at(i, j - half); ++cnt; }
        if (j + half <= n) { sum += at(i, j + half); ++cnt; }
        at(i, j) = sum / cnt + rng.uniform(-amp, amp);
      }
    amp *= std::pow(2.0, -cfg.height_roughness);
  }

  double sigma = std::max(2.0, cfg.arena_length / 8.0);
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) {
      double px = hf.x0 + i * hf.cell;
      double py = hf.y0 + j * hf.cell;
      double d2 = (px - cfg.goal_x) * (px - cfg.goal_x) +
                  (py - cfg.goal_y) * (py - cfg.goal_y);
      at(i, j) += cfg.goal_height * std::exp(-d2 / (2.0 * sigma * sigma));
    }
  return hf;
}

}  // namespace

void gait_reduce(std::span<const double> joints, std::span<const double> action,
                 const EnvConfig& cfg, double& dx_body, double& dheading) {
  (void)joints;
  auto d = [&](int i) {
    return std::clamp(action[i], -cfg.action_bound, cfg.action_bound);
  };
  double u = (d(0) + d(9)) / 2.0;  // FR + RL hips
  double w = (d(3) + d(6)) / 2.0;  // FL + RR hips
  double score = std::max(0.0, 0.5 * std::abs(u - w) - 0.5 * std::abs(u + w));
  dx_body = cfg.c_forward * score;
  dheading = cfg.c_turn * ((d(3) + d(9)) / 2.0 - (d(0) + d(6)) / 2.0);
}

double compute_reward(const WorldState& before, const WorldState& after,
                      std::span<const double> action, int spheres_collected,
                      const EnvConfig& cfg) {
  double progress = forward_progress(before, after, cfg);
  double energy = 0.0;
  for (double a : action) energy += a * a;
  double alive = after.terminated_unsafe ? 0.0 : 1.0;
  return cfg.w_forward * progress + cfg.w_energy * (-energy) +
         cfg.w_alive * alive + spheres_collected * cfg.sphere_bonus;
}

void move_obstacles(WorldState& world, const EnvConfig& cfg) {
  if (cfg.obstacle_speed <= 0.0) return;
  bool redirect = cfg.redirect_period > 0 && world.step_count > 0 &&
                  world.step_count % cfg.redirect_period == 0;
  for (Obstacle& o : world.obstacles) {
    if (redirect) {
      double th = world.rng.uniform(0.0, 2.0 * std::numbers::pi);
      o.vx = cfg.obstacle_speed * std::cos(th);
      o.vy = cfg.obstacle_speed * std::sin(th);
    }
    o.cx += o.vx;
    o.cy += o.vy;
    double lo_x = cfg.obstacle_min_x + o.hx;
    double hi_x = cfg.arena_length - o.hx;
    double lo_y = -(cfg.arena_half_width - o.hy);
    double hi_y = cfg.arena_half_width - o.hy;
    if (o.cx < lo_x) { o.cx = 2 * lo_x - o.cx; o.vx = -o.vx; }
    if (o.cx > hi_x) { o.cx = 2 * hi_x - o.cx; o.vx = -o.vx; }
    if (o.cy < lo_y) { o.cy = 2 * lo_y - o.cy; o.vy = -o.vy; }
    if (o.cy > hi_y) { o.cy = 2 * hi_y - o.cy; o.vy = -o.vy; }
  }
}

EpisodeMetrics accumulate_metrics(std::span<const double> rewards,
                                  std::span<const StepInfo> infos,
                                  double sphere_bonus) {
  EpisodeMetrics m;
  m.steps = static_cast<int>(infos.size());
  for (double r : rewards) m.episode_return += r;
  for (const StepInfo& s : infos) {
    m.distance += s.distance_moved;
    if (s.collided && s.passed_first) ++m.collisions;
    m.sphere_reward += s.spheres_collected * sphere_bonus;
  }
  return m;
}

LocomotionEnv::LocomotionEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

void LocomotionEnv::set_render_depth(bool enabled) { render_enabled_ = enabled; }

double LocomotionEnv::terrain_height(double x, double y) const {
  return world_.terrain.height(x, y);
}

void LocomotionEnv::update_attitude(bool first) {
  double dhdx = 0, dhdy = 0;
  world_.terrain.gradient(world_.x, world_.y, dhdx, dhdy);
  double ch = std::cos(world_.heading), sh = std::sin(world_.heading);
  double slope_fwd = dhdx * ch + dhdy * sh;
  double slope_lat = -dhdx * sh + dhdy * ch;
  double new_pitch = -std::atan(slope_fwd);
  double new_roll = std::atan(slope_lat);
  world_.roll_rate = first ? 0.0 : new_roll - world_.roll;
  world_.pitch_rate = first ? 0.0 : new_pitch - world_.pitch;
  world_.roll = new_roll;
  world_.pitch = new_pitch;
}

bool LocomotionEnv::inside_inflated(double x, double y, const Obstacle& o) const {
  return std::abs(x - o.cx) < o.hx + cfg_.robot_radius &&
         std::abs(y - o.cy) < o.hy + cfg_.robot_radius;
}

// fraction of the (dx, dy) translation that can be taken before entering an
// inflated obstacle box; a hair is backed off so the robot stays outside
double LocomotionEnv::sweep_obstacles(double x0, double y0, double dx, double dy,
                                      bool& hit) const {
  hit = false;
  double len = std::hypot(dx, dy);
  if (len < 1e-12) return 1.0;
  double best = 1.0;
  for (const Obstacle& o : world_.obstacles) {
    double lo_x = o.cx - o.hx - cfg_.robot_radius;
    double hi_x = o.cx + o.hx + cfg_.robot_radius;
    double lo_y = o.cy - o.hy - cfg_.robot_radius;
    double hi_y = o.cy + o.hy + cfg_.robot_radius;
    double t0 = 0.0, t1 = 1.0;
    bool miss = false;
    auto slab = [&](double origin, double delta, double lo, double hi) {
      if (std::abs(delta) < 1e-12) {
        if (origin <= lo || origin >= hi) miss = true;
        return;
      }
      double ta = (lo - origin) / delta;
      double tb = (hi - origin) / delta;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) miss = true;
    };
    slab(x0, dx, lo_x, hi_x);
    if (!miss) slab(y0, dy, lo_y, hi_y);
    if (!miss && t0 > 0.0 && t0 < best) {
      best = t0;
      hit = true;
    }
  }
  if (hit) best = std::max(0.0, best - 1e-6 / len);
  return best;
}

void LocomotionEnv::push_proprio_block() {
  std::array<double, 31> b{};
  for (int i = 0; i < 12; ++i) b[i] = world_.joints[i];
  b[12] = world_.roll;
  b[13] = world_.pitch;
  b[14] = world_.roll_rate;
  b[15] = world_.pitch_rate;
  b[16] = world_.x;
  b[17] = world_.y;
  b[18] = world_.z;
  for (int i = 0; i < 12; ++i) b[19 + i] = world_.last_action[i];
  history_.push_back(b);
  if (history_.size() > 3) history_.erase(history_.begin());
}

void LocomotionEnv::rebuild_proprio() {
  proprio_obs_.resize(kProprioDim);
  for (size_t k = 0; k < history_.size(); ++k)
    std::copy(history_[k].begin(), history_[k].end(),
              proprio_obs_.begin() + k * kProprioBlock);
}

void LocomotionEnv::push_depth_frame() {
  int s2 = cfg_.depth_size * cfg_.depth_size;
  std::vector<double> f = render_frame();
  std::move(depth_obs_.begin() + s2, depth_obs_.end(), depth_obs_.begin());
  std::copy(f.begin(), f.end(), depth_obs_.end() - s2);
}

void LocomotionEnv::reset(std::uint64_t seed) {
  world_ = WorldState{};
  world_.rng = Rng(mix64(seed, 0x656e76ull));

  if (cfg_.is_mountain())
    world_.terrain = make_mountain(cfg_, world_.rng);

  world_.z = terrain_height(0.0, 0.0);
  update_attitude(true);

  // rejection placement; deterministic given the seed
  for (int i = 0; i < cfg_.obstacle_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Obstacle o;
      double w = world_.rng.uniform(cfg_.obstacle_width_min, cfg_.obstacle_width_max);
      o.hy = w / 2.0;
      o.hx = cfg_.obstacle_depth / 2.0;
      o.height = cfg_.obstacle_height;
      o.cx = world_.rng.uniform(cfg_.obstacle_min_x + o.hx, cfg_.arena_length - 1.0);
      o.cy = world_.rng.uniform(-(cfg_.arena_half_width - o.hy),
                                cfg_.arena_half_width - o.hy);
      bool ok = true;
      for (const Obstacle& p : world_.obstacles) {
        bool sep_x = std::abs(o.cx - p.cx) > o.hx + p.hx + 0.8;
        bool sep_y = std::abs(o.cy - p.cy) > o.hy + p.hy + 0.8;
        if (!(sep_x || sep_y)) { ok = false; break; }
      }
      if (!ok) continue;
      if (cfg_.is_moving()) {
        double th = world_.rng.uniform(0.0, 2.0 * std::numbers::pi);
        o.vx = cfg_.obstacle_speed * std::cos(th);
        o.vy = cfg_.obstacle_speed * std::sin(th);
      }
      world_.obstacles.push_back(o);
      placed = true;
    }
    if (!placed)
      throw RuntimeFault("environment generation: obstacle placement failed");
  }

  for (int i = 0; i < cfg_.sphere_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      SphereObj s;
      s.r = cfg_.sphere_radius;
      s.x = world_.rng.uniform(cfg_.obstacle_min_x, cfg_.arena_length - 1.0);
      s.y = world_.rng.uniform(-(cfg_.arena_half_width - s.r),
                               cfg_.arena_half_width - s.r);
      bool ok = true;
      for (const Obstacle& o : world_.obstacles)
        if (std::abs(s.x - o.cx) < o.hx + s.r + 0.1 &&
            std::abs(s.y - o.cy) < o.hy + s.r + 0.1) { ok = false; break; }
      for (const SphereObj& p : world_.spheres)
        if (std::hypot(s.x - p.x, s.y - p.y) < 1.0) { ok = false; break; }
      if (!ok) continue;
      s.z = terrain_height(s.x, s.y) + s.r;
      world_.spheres.push_back(s);
      placed = true;
    }
    if (!placed)
      throw RuntimeFault("environment generation: sphere placement failed");
  }

  world_.first_obstacle_near_x = kInf;
  for (const Obstacle& o : world_.obstacles)
    world_.first_obstacle_near_x =
        std::min(world_.first_obstacle_near_x, o.cx - o.hx);

  history_.clear();
  push_proprio_block();
  while (history_.size() < 3) history_.push_back(history_.back());
  rebuild_proprio();

  int s2 = cfg_.depth_size * cfg_.depth_size;
  if (render_enabled_) {
    std::vector<double> f = render_frame();
    depth_obs_.resize(static_cast<size_t>(cfg_.depth_stack) * s2);
    for (int k = 0; k < cfg_.depth_stack; ++k)
      std::copy(f.begin(), f.end(), depth_obs_.begin() + static_cast<size_t>(k) * s2);
  } else {
    depth_obs_.clear();
  }
}

EnvBase::Step LocomotionEnv::step(std::span<const double> action) {
  if (history_.empty()) throw RuntimeFault("step() called before reset()");
  if (static_cast<int>(action.size()) != kActionDim)
    throw ShapeError("action must have 12 components, got " +
                     std::to_string(action.size()));
  for (double a : action)
    if (!std::isfinite(a)) throw RuntimeFault("non-finite action component");

  std::array<double, 12> act{};
  for (int i = 0; i < kActionDim; ++i)
    act[i] = std::clamp(action[i], -cfg_.action_bound, cfg_.action_bound);

  WorldState before = world_;

  if (cfg_.is_moving()) move_obstacles(world_, cfg_);

  StepInfo info;
  // an obstacle that moved onto the robot shoves it out along the axis of
  // least penetration
  for (const Obstacle& o : world_.obstacles) {
    if (!inside_inflated(world_.x, world_.y, o)) continue;
    double push_xp = (o.cx + o.hx + cfg_.robot_radius) - world_.x;
    double push_xn = world_.x - (o.cx - o.hx - cfg_.robot_radius);
    double push_yp = (o.cy + o.hy + cfg_.robot_radius) - world_.y;
    double push_yn = world_.y - (o.cy - o.hy - cfg_.robot_radius);
    double m = std::min({push_xp, push_xn, push_yp, push_yn});
    if (m == push_xp) world_.x += push_xp + 1e-9;
    else if (m == push_xn) world_.x -= push_xn + 1e-9;
    else if (m == push_yp) world_.y += push_yp + 1e-9;
    else world_.y -= push_yn + 1e-9;
    info.collided = true;
  }

  double dx_body = 0, dturn = 0;
  gait_reduce(world_.joints, act, cfg_, dx_body, dturn);
  world_.heading = wrap_angle(world_.heading + dturn);

  double ch = std::cos(world_.heading), sh = std::sin(world_.heading);
  bool hit = false;
  double frac = sweep_obstacles(world_.x, world_.y, dx_body * ch, dx_body * sh, hit);
  double achieved = dx_body * frac;
  world_.x += achieved * ch;
  world_.y += achieved * sh;
  if (hit) info.collided = true;

  double wall = cfg_.arena_half_width - cfg_.robot_radius;
  world_.y = std::clamp(world_.y, -wall, wall);
  world_.z = terrain_height(world_.x, world_.y);
  update_attitude(false);

  int picked = 0;
  for (SphereObj& s : world_.spheres) {
    if (s.collected) continue;
    if (std::hypot(world_.x - s.x, world_.y - s.y) <= cfg_.pickup_radius) {
      s.collected = true;
      ++picked;
    }
  }

  for (int i = 0; i < kActionDim; ++i) {
    world_.joints[i] = std::clamp(world_.joints[i] + act[i], -cfg_.joint_limit,
                                  cfg_.joint_limit);
    world_.last_action[i] = act[i];
  }

  if (dx_body > 1e-9 && achieved < 1e-9)
    ++world_.consecutive_blocked;
  else
    world_.consecutive_blocked = 0;

  world_.step_count += 1;
  if (!world_.passed_first && world_.x > world_.first_obstacle_near_x)
    world_.passed_first = true;

  bool unsafe = std::abs(world_.roll) > cfg_.attitude_limit ||
                std::abs(world_.pitch) > cfg_.attitude_limit ||
                world_.consecutive_blocked >= cfg_.stuck_limit;
  world_.terminated_unsafe = unsafe;
  bool done = unsafe || world_.step_count >= cfg_.horizon;

  double reward = compute_reward(before, world_, act, picked, cfg_);
  info.distance_moved = forward_progress(before, world_, cfg_);
  info.passed_first = world_.passed_first;
  info.spheres_collected = picked;

  push_proprio_block();
  rebuild_proprio();
  if (render_enabled_) push_depth_frame();

  return {reward, done, info};
}

std::vector<double> LocomotionEnv::render_frame() const {
  const int S = cfg_.depth_size;
  std::vector<double> out(static_cast<size_t>(S) * S, 1.0);

  double hdg = world_.heading;
  double chd = std::cos(hdg), shd = std::sin(hdg);
  double phi = cfg_.cam_pitch_deg * std::numbers::pi / 180.0;
  double cph = std::cos(phi), sph = std::sin(phi);

  double ox = world_.x + cfg_.cam_forward * chd;
  double oy = world_.y + cfg_.cam_forward * shd;
  double oz = world_.z + cfg_.cam_height;

  double fwd[3] = {cph * chd, cph * shd, sph};
  double right[3] = {shd, -chd, 0.0};
  double up[3] = {-sph * chd, -sph * shd, cph};

  double tanf = std::tan(cfg_.cam_fov_deg * std::numbers::pi / 360.0);
  bool flat = world_.terrain.empty();
  double range = cfg_.cam_far - cfg_.cam_near;

  struct Box { double lo[3], hi[3]; };
  std::vector<Box> boxes;
  boxes.reserve(world_.obstacles.size());
  for (const Obstacle& o : world_.obstacles) {
    double zb = flat ? 0.0 : world_.terrain.height(o.cx, o.cy);
    boxes.push_back({{o.cx - o.hx, o.cy - o.hy, zb},
                     {o.cx + o.hx, o.cy + o.hy, zb + o.height}});
  }

  for (int r = 0; r < S; ++r) {
    for (int c = 0; c < S; ++c) {
      double u = ((c + 0.5) / S * 2.0 - 1.0) * tanf;
      double v = (1.0 - (r + 0.5) / S * 2.0) * tanf;
      double dx = fwd[0] + u * right[0] + v * up[0];
      double dy = fwd[1] + u * right[1] + v * up[1];
      double dz = fwd[2] + u * right[2] + v * up[2];
      double inv = 1.0 / std::sqrt(dx * dx + dy * dy + dz * dz);
      dx *= inv; dy *= inv; dz *= inv;
      double axial = dx * fwd[0] + dy * fwd[1] + dz * fwd[2];

      double t_best = kInf;

      if (flat) {
        if (dz < -1e-12) {
          double t = -oz / dz;
          if (t > 0) t_best = std::min(t_best, t);
        }
      } else {
        // ray-march the heightfield, then bisect the crossing
        double t_max = 3.0 * cfg_.cam_far;
        double t_prev = 0.0;
        double f_prev = oz - world_.terrain.height(ox, oy);
        if (f_prev <= 0) {
          t_best = 0.0;
        } else {
          double t = 0.0;
          while (t < t_max) {
            t = std::min(t + 0.25, t_max);
            double f = (oz + t * dz) -
                       world_.terrain.height(ox + t * dx, oy + t * dy);
            if (f < 0) {
              double a = t_prev, b = t;
              for (int it = 0; it < 40; ++it) {
                double m = 0.5 * (a + b);
                double fm = (oz + m * dz) -
                            world_.terrain.height(ox + m * dx, oy + m * dy);
                if (fm >= 0) a = m; else b = m;
              }
              t_best = std::min(t_best, 0.5 * (a + b));
              break;
            }
            t_prev = t;
            f_prev = f;
            if (t >= t_max) break;
          }
        }
      }

      for (const Box& b : boxes) {
        double t0 = 0.0, t1 = kInf;
        bool miss = false;
        double org[3] = {ox, oy, oz};
        double dir[3] = {dx, dy, dz};
        for (int ax = 0; ax < 3 && !miss; ++ax) {
          if (std::abs(dir[ax]) < 1e-12) {
            if (org[ax] < b.lo[ax] || org[ax] > b.hi[ax]) miss = true;
          } else {
            double ta = (b.lo[ax] - org[ax]) / dir[ax];
            double tb = (b.hi[ax] - org[ax]) / dir[ax];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 > t1) miss = true;
          }
        }
        if (!miss && t1 > 0) t_best = std::min(t_best, std::max(t0, 0.0));
      }

      for (const SphereObj& s : world_.spheres) {
        if (s.collected) continue;
        double ocx = ox - s.x, ocy = oy - s.y, ocz = oz - s.z;
        double bq = ocx * dx + ocy * dy + ocz * dz;
        double cq = ocx * ocx + ocy * ocy + ocz * ocz - s.r * s.r;
        double disc = bq * bq - cq;
        if (disc < 0) continue;
        double sq = std::sqrt(disc);
        double t = -bq - sq;
        if (t < 0) t = std::max(-bq + sq, 0.0);
        if (t >= 0 && -bq + sq > 0) t_best = std::min(t_best, t);
      }

      double& px = out[static_cast<size_t>(r) * S + c];
      if (std::isfinite(t_best)) {
        double depth_axial = t_best * axial;
        px = clamp01((depth_axial - cfg_.cam_near) / range);
      } else {
        px = 1.0;
      }
    }
  }
  return out;
}

}  // namespace loco
