#include "loco/policy.hpp"

#include <cmath>

namespace loco {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

VariantKind variant_from_string(const std::string& name) {
  if (name == "state_only") return VariantKind::state_only;
  if (name == "depth_only") return VariantKind::depth_only;
  if (name == "concat" || name == "state_depth_concat") return VariantKind::state_depth_concat;
  if (name == "locotransformer" || name == "loco_transformer") return VariantKind::loco_transformer;
  throw ConfigError("unknown network variant '" + name + "'");
}

std::string variant_to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::state_only: return "state_only";
    case VariantKind::depth_only: return "depth_only";
    case VariantKind::state_depth_concat: return "state_depth_concat";
    case VariantKind::loco_transformer: return "loco_transformer";
  }
  return "?";
}

VariantNetwork::VariantNetwork(VariantKind kind, const NetConfig& cfg, std::uint64_t init_seed)
    : kind_(kind), cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix64(init_seed, 0x9e3779b97f4a7c15ull));
  const int fp = cfg_.proprio_feature();
  const int grid = cfg_.grid_size();
  const int flat = cfg_.token_dim * grid * grid;

  if (consumes_proprio()) prop_enc_ = ProprioEncoder(cfg_, rng);
  if (consumes_depth()) depth_enc_ = DepthEncoder(cfg_, rng);

  switch (kind_) {
    case VariantKind::state_only:
      feature_dim_ = fp;
      break;
    case VariantKind::depth_only:
      vis_proj_ = Linear(flat, fp, rng);
      feature_dim_ = fp;
      break;
    case VariantKind::state_depth_concat:
      vis_proj_ = Linear(flat, fp, rng);
      feature_dim_ = 2 * fp;
      break;
    case VariantKind::loco_transformer:
      tokenizer_ = Tokenizer(cfg_, rng);
      stack_ = TransformerStack(cfg_, rng);
      feature_dim_ = 2 * cfg_.token_dim;
      break;
  }

  std::span<const int> head(cfg_.head_hidden.data(), cfg_.head_hidden.size() - 1);
  const int head_out = cfg_.head_hidden.back();
  policy_proj_ = MLP(feature_dim_, head, head_out, rng, /*relu_out=*/true);
  policy_out_ = Linear::zero_init(head_out, cfg_.action_dim);
  value_proj_ = MLP(feature_dim_, head, head_out, rng, /*relu_out=*/true);
  value_out_ = Linear(head_out, 1, rng);
  log_std = Tensor::zeros({cfg_.action_dim}, true);
}

Tensor VariantNetwork::trunk_forward(const Tensor& proprio, const Tensor& depth, bool want_attn,
                                     Tensor* attn_out) const {
  switch (kind_) {
    case VariantKind::state_only:
      return prop_enc_.forward(proprio);
    case VariantKind::depth_only:
      return relu(vis_proj_.forward(
          reshape(depth_enc_.forward(depth), {depth.shape()[0], vis_proj_.in_dim()})));
    case VariantKind::state_depth_concat: {
      Tensor fp = prop_enc_.forward(proprio);
      Tensor fv = relu(vis_proj_.forward(
          reshape(depth_enc_.forward(depth), {depth.shape()[0], vis_proj_.in_dim()})));
      const Tensor parts[] = {fp, fv};
      return concat(parts, 1);
    }
    case VariantKind::loco_transformer: {
      Tensor fp = prop_enc_.forward(proprio);
      Tensor vis = depth_enc_.forward(depth);
      Tensor tokens = tokenizer_.forward(fp, vis);
      auto out = stack_.forward(tokens);
      if (want_attn && attn_out) *attn_out = out.weights;
      return modality_pool(out.tokens);
    }
  }
  throw RuntimeFault("unreachable variant kind");
}

VariantNetwork::Out VariantNetwork::forward(const Tensor& proprio, const Tensor& depth,
                                            bool want_attn) const {
  if (consumes_proprio()) {
    if (!proprio.defined() || proprio.dim() != 2 || proprio.shape()[1] != cfg_.proprio_dim)
      throw ShapeError("variant expects proprio [batch, " + std::to_string(cfg_.proprio_dim) +
                       "], got " + (proprio.defined() ? shape_to_string(proprio.shape()) : "<none>"));
  }
  if (consumes_depth()) {
    if (!depth.defined() || depth.dim() != 4 || depth.shape()[1] != cfg_.depth_stack ||
        depth.shape()[2] != cfg_.depth_size || depth.shape()[3] != cfg_.depth_size)
      throw ShapeError("variant expects depth [batch, " + std::to_string(cfg_.depth_stack) + ", " +
                       std::to_string(cfg_.depth_size) + ", " + std::to_string(cfg_.depth_size) +
                       "], got " + (depth.defined() ? shape_to_string(depth.shape()) : "<none>"));
  }
  Out out;
  Tensor feat = trunk_forward(proprio, depth, want_attn, &out.attn);
  out.mean = policy_out_.forward(policy_proj_.forward(feat));
  out.value = value_out_.forward(value_proj_.forward(feat));
  for (double v : out.mean.values())
    if (!std::isfinite(v)) throw RuntimeFault("policy network produced non-finite action mean");
  for (double v : out.value.values())
    if (!std::isfinite(v)) throw RuntimeFault("value network produced non-finite value");
  return out;
}

NamedParams VariantNetwork::policy_params() const {
  NamedParams p;
  if (consumes_proprio()) prop_enc_.collect("prop_enc", p);
  if (consumes_depth()) depth_enc_.collect("depth_enc", p);
  if (kind_ == VariantKind::depth_only || kind_ == VariantKind::state_depth_concat)
    vis_proj_.collect("vis_proj", p);
  if (kind_ == VariantKind::loco_transformer) {
    tokenizer_.collect("tokenizer", p);
    stack_.collect("transformer", p);
  }
  policy_proj_.collect("policy_proj", p);
  policy_out_.collect("policy_out", p);
  p.emplace_back("log_std", log_std);
  return p;
}

NamedParams VariantNetwork::value_params() const {
  NamedParams p;
  value_proj_.collect("value_proj", p);
  value_out_.collect("value_out", p);
  return p;
}

NamedParams VariantNetwork::named_params() const {
  NamedParams p = policy_params();
  NamedParams v = value_params();
  p.insert(p.end(), v.begin(), v.end());
  return p;
}

std::int64_t VariantNetwork::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_params()) n += t.numel();
  return n;
}

GaussianPolicy::GaussianPolicy(VariantKind kind, const NetConfig& cfg, std::uint64_t init_seed,
                               double bound)
    : net(kind, cfg, init_seed), action_bound(bound) {}

Tensor GaussianPolicy::obs_proprio_tensor(std::span<const double> proprio) const {
  return Tensor::from_data({1, net.config().proprio_dim},
                           std::vector<double>(proprio.begin(), proprio.end()));
}

Tensor GaussianPolicy::obs_depth_tensor(std::span<const double> depth) const {
  const auto& c = net.config();
  if (!net.consumes_depth() || depth.empty()) return Tensor();
  return Tensor::from_data({1, c.depth_stack, c.depth_size, c.depth_size},
                           std::vector<double>(depth.begin(), depth.end()));
}

GaussianPolicy::ActBatch GaussianPolicy::act_batch(const Tensor& proprio, const Tensor& depth,
                                                   std::span<Rng> rngs, bool stochastic) const {
  NoGradGuard ng;
  auto out = net.forward(proprio, depth);
  const int B = out.mean.shape()[0];
  const int A = net.config().action_dim;
  if (stochastic && static_cast<int>(rngs.size()) != B)
    throw ShapeError("act_batch: need one rng per batch row");
  ActBatch res;
  res.actions.resize(static_cast<std::size_t>(B) * A);
  res.log_probs.resize(static_cast<std::size_t>(B));
  res.values.resize(static_cast<std::size_t>(B));
  const auto mean = out.mean.values();
  const auto ls = net.log_std.values();
  for (int b = 0; b < B; ++b) {
    double logp = 0.0;
    for (int j = 0; j < A; ++j) {
      const double mu = mean[static_cast<std::size_t>(b) * A + j];
      const double sigma = std::exp(ls[static_cast<std::size_t>(j)]);
      double a = stochastic ? mu + sigma * rngs[static_cast<std::size_t>(b)].normal() : mu;
      a = std::clamp(a, -action_bound, action_bound);
      res.actions[static_cast<std::size_t>(b) * A + j] = a;
      const double z = (a - mu) / sigma;
      logp += -0.5 * z * z - ls[static_cast<std::size_t>(j)];
    }
    res.log_probs[static_cast<std::size_t>(b)] = logp - 0.5 * A * kLog2Pi;
    res.values[static_cast<std::size_t>(b)] = out.value.values()[static_cast<std::size_t>(b)];
  }
  return res;
}

GaussianPolicy::Act GaussianPolicy::act(std::span<const double> proprio,
                                        std::span<const double> depth, Rng* rng,
                                        bool stochastic) const {
  Tensor p = net.consumes_proprio() ? obs_proprio_tensor(proprio)
                                    : Tensor::zeros({1, net.config().proprio_dim});
  Tensor d = obs_depth_tensor(depth);
  Rng dummy(0);
  std::span<Rng> rngs(stochastic ? rng : &dummy, 1);
  auto batch = act_batch(p, d, rngs, stochastic);
  Act res;
  res.action = std::move(batch.actions);
  res.log_prob = batch.log_probs[0];
  res.value = batch.values[0];
  return res;
}

GaussianPolicy::Eval GaussianPolicy::evaluate_batch(const Tensor& proprio, const Tensor& depth,
                                                    const Tensor& actions) const {
  auto out = net.forward(proprio, depth);
  const int B = out.mean.shape()[0];
  const int A = net.config().action_dim;
  if (actions.shape() != Shape{B, A})
    throw ShapeError("evaluate_batch: actions " + shape_to_string(actions.shape()) +
                     " do not match mean " + shape_to_string(out.mean.shape()));
  Tensor inv_std = exp_op(mul_scalar(net.log_std, -1.0));
  Tensor z = mul(sub(actions, out.mean), inv_std);
  Tensor logp = add_scalar(sub(mul_scalar(sum_over(square(z), 1), -0.5), sum_all(net.log_std)),
                           -0.5 * A * kLog2Pi);
  Tensor entropy = add_scalar(sum_all(net.log_std), 0.5 * A * (1.0 + kLog2Pi));
  return {logp, entropy, reshape(out.value, {B})};
}

Tensor GaussianPolicy::attention(std::span<const double> proprio,
                                 std::span<const double> depth) const {
  if (net.kind() != VariantKind::loco_transformer)
    throw ConfigError("attention maps require the loco_transformer variant, not " +
                      variant_to_string(net.kind()));
  NoGradGuard ng;
  auto out = net.forward(obs_proprio_tensor(proprio), obs_depth_tensor(depth), true);
  return out.attn;
}

}  // namespace loco
