#include "loco/encoders.hpp"

#include <cmath>
#include <cstdio>

namespace loco {

int NetConfig::grid_size() const {
  int s = depth_size;
  for (const auto& c : conv_plan) {
    const int num = s + 2 * c.padding - c.kernel;
    if (num < 0 || num % c.stride != 0)
      throw ConfigError("conv plan does not tile " + std::to_string(s) + " with kernel " +
                        std::to_string(c.kernel) + " stride " + std::to_string(c.stride) +
                        " padding " + std::to_string(c.padding));
    s = num / c.stride + 1;
  }
  return s;
}

void NetConfig::validate() const {
  if (proprio_dim <= 0 || action_dim <= 0 || depth_stack <= 0 || depth_size <= 0)
    throw ConfigError("network dimensions must be positive");
  if (proprio_hidden.empty() || head_hidden.empty())
    throw ConfigError("proprio_hidden and head_hidden must be non-empty");
  if (conv_plan.empty()) throw ConfigError("conv plan must be non-empty");
  if (conv_plan.back().out_ch != token_dim)
    throw ConfigError("final conv channels " + std::to_string(conv_plan.back().out_ch) +
                      " must equal token_dim " + std::to_string(token_dim));
  if (layers < 1) throw ConfigError("transformer layers must be >= 1");
  if (attn_dim <= 0 || mlp_hidden <= 0) throw ConfigError("attn_dim and mlp_hidden must be positive");
  grid_size();  // throws if inconsistent
}

ProprioEncoder::ProprioEncoder(const NetConfig& cfg, Rng& rng) {
  std::span<const int> hidden(cfg.proprio_hidden.data(), cfg.proprio_hidden.size() - 1);
  mlp = MLP(cfg.proprio_dim, hidden, cfg.proprio_hidden.back(), rng, /*relu_out=*/true);
}

Tensor ProprioEncoder::forward(const Tensor& proprio) const {
  if (proprio.dim() != 2 || proprio.shape()[1] != mlp.layers.front().in_dim())
    throw ShapeError("proprio encoder expects [batch, " +
                     std::to_string(mlp.layers.front().in_dim()) + "], got " +
                     shape_to_string(proprio.shape()));
  return mlp.forward(proprio);
}

void ProprioEncoder::collect(const std::string& prefix, NamedParams& out) const {
  mlp.collect(prefix, out);
}

DepthEncoder::DepthEncoder(const NetConfig& cfg, Rng& rng) : plan(cfg.conv_plan) {
  grid = cfg.grid_size();
  int in_ch = cfg.depth_stack;
  for (const auto& c : plan) {
    const double fan_in = static_cast<double>(in_ch) * c.kernel * c.kernel;
    const double bound = 1.0 / std::sqrt(fan_in);
    kernels.push_back(Tensor::uniform({c.out_ch, in_ch, c.kernel, c.kernel}, -bound, bound, rng, true));
    biases.push_back(Tensor::zeros({c.out_ch}, true));
    in_ch = c.out_ch;
  }
}

Tensor DepthEncoder::forward(const Tensor& depth) const {
  if (depth.dim() != 4)
    throw ShapeError("depth encoder expects [batch, stack, S, S], got " +
                     shape_to_string(depth.shape()));
  Tensor x = depth;
  bool out_of_range = false;
  for (double v : x.values()) {
    if (v < 0.0 || v > 1.0) {
      out_of_range = true;
      break;
    }
  }
  if (out_of_range) {
    if (debug_checks_enabled())
      std::fprintf(stderr, "warning: depth input outside [0,1], clamping\n");
    x = clamp_op(x, 0.0, 1.0);
  }
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    x = relu(bias_add_channels(conv2d(x, kernels[i], plan[i].stride, plan[i].padding), biases[i]));
  }
  return x;
}

void DepthEncoder::collect(const std::string& prefix, NamedParams& out) const {
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    out.emplace_back(prefix + ".conv" + std::to_string(i) + ".weight", kernels[i]);
    out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", biases[i]);
  }
}

Tokenizer::Tokenizer(const NetConfig& cfg, Rng& rng)
    : prop_token(cfg.proprio_feature(), cfg.token_dim, rng),
      grid(cfg.grid_size()),
      token_dim(cfg.token_dim) {}

Tensor Tokenizer::forward(const Tensor& prop_feature, const Tensor& visual_map) const {
  const auto& vs = visual_map.shape();
  if (vs.size() != 4 || vs[1] != token_dim || vs[2] != grid || vs[3] != grid)
    throw ShapeError("tokenizer expects visual map [batch, " + std::to_string(token_dim) + ", " +
                     std::to_string(grid) + ", " + std::to_string(grid) + "], got " +
                     shape_to_string(vs));
  const int B = vs[0];
  Tensor t0 = reshape(prop_token.forward(prop_feature), {B, 1, token_dim});
  // [B, C, N, N] -> [B, C, N*N] -> [B, N*N, C]: token 1+i*N+j is column (i,j)
  Tensor vis = transpose_last2(reshape(visual_map, {B, token_dim, grid * grid}));
  const Tensor parts[] = {t0, vis};
  return concat(parts, 1);
}

void Tokenizer::collect(const std::string& prefix, NamedParams& out) const {
  prop_token.collect(prefix + ".prop_token", out);
}

}  // namespace loco
