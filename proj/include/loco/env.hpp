#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loco/common.hpp"

namespace loco {

struct EnvConfig {
  std::string variant = "thin_obs";  // thin_obs, wide_obs, thin_obs_sphere,
                                     // wide_obs_sphere, moving_obs, mountain
  int horizon = 1000;
  int depth_size = 64;
  int depth_stack = 4;

  // arena: x in [0, arena_length], y in [-arena_half_width, +arena_half_width]
  double arena_length = 40.0;
  double arena_half_width = 4.0;

  // obstacles (axis-aligned cuboids; thin vs wide differ in y extent)
  int obstacle_count = 20;
  double obstacle_width_min = 0.2;
  double obstacle_width_max = 0.4;
  double obstacle_depth = 0.2;
  double obstacle_height = 1.5;
  double obstacle_min_x = 2.0;

  // spheres (reward pickups, never blocking)
  int sphere_count = 0;
  double sphere_radius = 0.3;
  double sphere_bonus = 20.0;
  double pickup_radius = 0.5;

  // moving-obstacle variant
  double obstacle_speed = 0.0;  // meters per step
  int redirect_period = 50;     // steps between random redirections; 0 = never

  // mountain variant
  double height_amplitude = 0.0;
  double height_roughness = 0.5;
  int heightfield_res = 33;  // 2^k + 1
  double goal_x = 20.0;
  double goal_y = 0.0;
  double goal_height = 4.0;

  // robot and gait reduction
  double action_bound = 0.2;
  double joint_limit = 1.57;
  double c_forward = 0.5;
  double c_turn = 0.3;
  double robot_radius = 0.3;

  // head-mounted depth camera
  double cam_fov_deg = 90.0;
  double cam_near = 0.1;
  double cam_far = 10.0;
  double cam_pitch_deg = -20.0;
  double cam_forward = 0.25;
  double cam_height = 0.45;

  // reward weights
  double w_forward = 1.0;
  double w_energy = 0.005;
  double w_alive = 0.1;

  // termination
  double attitude_limit = 0.6;
  int stuck_limit = 50;

  void validate() const;
  bool is_mountain() const { return variant == "mountain"; }
  bool is_moving() const { return variant == "moving_obs"; }
};

// Variant + profile presets ("mini" or "paper").
EnvConfig make_env_config(const std::string& variant, const std::string& profile);

struct Obstacle {
  double cx = 0, cy = 0;  // center
  double hx = 0, hy = 0;  // half extents
  double height = 0;
  double vx = 0, vy = 0;  // meters per step (moving variant)
};

struct SphereObj {
  double x = 0, y = 0, z = 0, r = 0;
  bool collected = false;
};

// Regular-grid terrain, bilinear interpolation, coordinates clamped at edges.
struct Heightfield {
  int res = 0;
  double x0 = 0, y0 = 0, cell = 1;
  std::vector<double> h;

  bool empty() const { return h.empty(); }
  double height(double x, double y) const;
  void gradient(double x, double y, double& dhdx, double& dhdy) const;
};

struct WorldState {
  double x = 0, y = 0, z = 0;
  double heading = 0;
  std::array<double, 12> joints{};
  std::array<double, 12> last_action{};
  double roll = 0, pitch = 0, roll_rate = 0, pitch_rate = 0;
  std::vector<Obstacle> obstacles;
  std::vector<SphereObj> spheres;
  Heightfield terrain;
  int step_count = 0;
  bool passed_first = false;
  double first_obstacle_near_x = 0;
  int consecutive_blocked = 0;
  bool terminated_unsafe = false;
  Rng rng{0};
};

struct StepInfo {
  double distance_moved = 0;  // along the target direction, this step
  bool collided = false;
  bool passed_first = false;
  int spheres_collected = 0;
};

// Kinematic stand-in for legged dynamics: maps the 12 commanded joint deltas
// to body forward motion and turning. Legs are FR, FL, RR, RL with the hip at
// offsets 0/3/6/9. Forward speed rewards anti-phase diagonal pairs
// (FR+RL vs FL+RR); turning follows the left-right hip asymmetry.
// The current joint state is accepted for interface stability but the
// reduction is delta-driven.
void gait_reduce(std::span<const double> joints, std::span<const double> action,
                 const EnvConfig& cfg, double& dx_body, double& dheading);

// R = w_forward * progress + w_energy * (-|a|^2) + w_alive * alive + K * bonus.
// Progress is displacement along +x, or along the direction to the goal for
// the mountain variant; alive is 0 only on an unsafe-termination step.
double compute_reward(const WorldState& before, const WorldState& after,
                      std::span<const double> action, int spheres_collected,
                      const EnvConfig& cfg);

void move_obstacles(WorldState& world, const EnvConfig& cfg);

struct EpisodeMetrics {
  double episode_return = 0;
  double distance = 0;
  double sphere_reward = 0;
  int collisions = 0;
  int steps = 0;
};

EpisodeMetrics accumulate_metrics(std::span<const double> rewards,
                                  std::span<const StepInfo> infos, double sphere_bonus);

// Minimal environment contract used by the PPO collector.
class EnvBase {
 public:
  virtual ~EnvBase() = default;

  struct Step {
    double reward = 0;
    bool done = false;
    StepInfo info;
  };

  virtual void reset(std::uint64_t seed) = 0;
  virtual Step step(std::span<const double> action) = 0;
  virtual const std::vector<double>& proprio() const = 0;
  virtual const std::vector<double>& depth() const = 0;
  virtual void set_render_depth(bool enabled) = 0;
};

class LocomotionEnv : public EnvBase {
 public:
  explicit LocomotionEnv(EnvConfig cfg);

  void reset(std::uint64_t seed) override;
  Step step(std::span<const double> action) override;

  // proprio: 3 stacked 31-dim blocks, oldest first; each block is
  // [joints(12), roll, pitch, roll_rate, pitch_rate, base x, y, z, last action(12)]
  const std::vector<double>& proprio() const override { return proprio_obs_; }
  // depth: depth_stack frames of depth_size^2, oldest first, values in [0,1]
  const std::vector<double>& depth() const override { return depth_obs_; }
  void set_render_depth(bool enabled) override;

  const WorldState& world() const { return world_; }
  // escape hatch for tools and tests that plant geometry at known poses
  WorldState& mutable_world() { return world_; }
  const EnvConfig& config() const { return cfg_; }
  // current single frame (size depth_size^2)
  std::vector<double> render_frame() const;

  static constexpr int kProprioBlock = 31;
  static constexpr int kProprioDim = 93;
  static constexpr int kActionDim = 12;

 private:
  void rebuild_proprio();
  void push_proprio_block();
  void push_depth_frame();
  double terrain_height(double x, double y) const;
  void update_attitude(bool first);
  bool inside_inflated(double x, double y, const Obstacle& o) const;
  double sweep_obstacles(double x0, double y0, double dx, double dy, bool& hit) const;

  EnvConfig cfg_;
  WorldState world_;
  bool render_enabled_ = true;
  std::vector<double> proprio_obs_;
  std::vector<double> depth_obs_;
  std::vector<std::array<double, 31>> history_;
};

}  // namespace loco
