#include "loco/optim.hpp"

#include <cmath>

namespace loco {

void adam_step(Tensor& param, AdamState& state, const AdamConfig& cfg, std::int64_t t) {
  const auto n = static_cast<std::size_t>(param.numel());
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (!param.has_grad()) return;
  auto vals = param.values_mut();
  auto g = param.grad();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    vals[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void Adam::add_group(std::vector<Tensor> params, double lr) {
  Group g;
  g.params = std::move(params);
  g.states.resize(g.params.size());
  g.lr = lr;
  groups_.push_back(std::move(g));
}

void Adam::step() {
  ++step_;
  for (auto& g : groups_) {
    AdamConfig cfg{g.lr, beta1, beta2, eps};
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      adam_step(g.params[i], g.states[i], cfg, step_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

}  // namespace loco
