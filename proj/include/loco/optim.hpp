#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loco/tensor.hpp"

namespace loco {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers for a single parameter tensor.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update on a single tensor. `t` is the 1-based step
// index after this update (pass state.step after incrementing).
void adam_step(Tensor& param, AdamState& state, const AdamConfig& cfg, std::int64_t t);

class Adam {
 public:
  // Parameters grouped by learning rate; groups step together.
  void add_group(std::vector<Tensor> params, double lr);
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t t) { step_ = t; }

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  struct Group {
    std::vector<Tensor> params;
    std::vector<AdamState> states;
    double lr;
  };
  std::vector<Group>& groups() { return groups_; }
  const std::vector<Group>& groups() const { return groups_; }

 private:
  std::vector<Group> groups_;
  std::int64_t step_ = 0;
};

}  // namespace loco
