#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loco/encoders.hpp"
#include "loco/transformer.hpp"

namespace loco {

enum class VariantKind { state_only, depth_only, state_depth_concat, loco_transformer };

VariantKind variant_from_string(const std::string& name);
std::string variant_to_string(VariantKind kind);

// Shared trunk producing one feature vector, then two projection heads
// (policy and value) each followed by a final linear layer. The policy output
// layer is zero-initialized so the initial policy is exactly N(0, I) together
// with log_std = 0.
class VariantNetwork {
 public:
  VariantNetwork() = default;
  VariantNetwork(VariantKind kind, const NetConfig& cfg, std::uint64_t init_seed);

  struct Out {
    Tensor mean;   // [B, action_dim]
    Tensor value;  // [B, 1]
    Tensor attn;   // [B, n, n], defined only for loco_transformer when requested
  };
  Out forward(const Tensor& proprio, const Tensor& depth, bool want_attn = false) const;

  NamedParams named_params() const;   // everything, incl. log_std
  NamedParams policy_params() const;  // trunk + policy head + log_std
  NamedParams value_params() const;   // value head only
  std::int64_t param_count() const;

  VariantKind kind() const { return kind_; }
  const NetConfig& config() const { return cfg_; }
  bool consumes_depth() const {
    return kind_ != VariantKind::state_only;
  }
  bool consumes_proprio() const { return kind_ != VariantKind::depth_only; }

  Tensor log_std;  // [action_dim], learned, state-independent

 private:
  Tensor trunk_forward(const Tensor& proprio, const Tensor& depth, bool want_attn,
                       Tensor* attn_out) const;

  VariantKind kind_ = VariantKind::state_only;
  NetConfig cfg_;
  int feature_dim_ = 0;

  ProprioEncoder prop_enc_;
  DepthEncoder depth_enc_;
  Linear vis_proj_;  // flattened conv output -> proprio feature width
  Tokenizer tokenizer_;
  TransformerStack stack_;

  MLP policy_proj_;
  Linear policy_out_;
  MLP value_proj_;
  Linear value_out_;
};

// Diagonal Gaussian policy over the variant network. Actions are sampled from
// N(mean, exp(log_std)) and clamped to [-action_bound, action_bound]; log
// probabilities are the unclamped Gaussian's density evaluated at the clamped
// action, so stored actions and later evaluate() calls agree exactly.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(VariantKind kind, const NetConfig& cfg, std::uint64_t init_seed,
                 double action_bound = 0.2);

  struct ActBatch {
    std::vector<double> actions;    // [B * action_dim]
    std::vector<double> log_probs;  // [B]
    std::vector<double> values;     // [B]
  };
  // One forward for the whole batch; rngs supplies one stream per batch row
  // (used only when stochastic).
  ActBatch act_batch(const Tensor& proprio, const Tensor& depth, std::span<Rng> rngs,
                     bool stochastic) const;

  struct Act {
    std::vector<double> action;
    double log_prob = 0.0;
    double value = 0.0;
  };
  Act act(std::span<const double> proprio, std::span<const double> depth, Rng* rng,
          bool stochastic) const;

  struct Eval {
    Tensor log_prob;  // [B]
    Tensor entropy;   // scalar
    Tensor value;     // [B]
  };
  Eval evaluate_batch(const Tensor& proprio, const Tensor& depth, const Tensor& actions) const;

  // Last-layer attention weights for a single observation (loco only).
  Tensor attention(std::span<const double> proprio, std::span<const double> depth) const;

  Tensor obs_proprio_tensor(std::span<const double> proprio) const;
  Tensor obs_depth_tensor(std::span<const double> depth) const;

  VariantNetwork net;
  double action_bound = 0.2;
};

}  // namespace loco
