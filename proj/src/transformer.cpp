#include "loco/transformer.hpp"

#include <cmath>

namespace loco {

TransformerLayer::TransformerLayer(const NetConfig& cfg, Rng& rng)
    : ln1(cfg.token_dim), ln2(cfg.token_dim), fc1(cfg.token_dim, cfg.mlp_hidden, rng),
      fc2(cfg.mlp_hidden, cfg.token_dim, rng) {
  const double bc = 1.0 / std::sqrt(static_cast<double>(cfg.token_dim));
  const double bd = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));
  u_q = Tensor::uniform({cfg.token_dim, cfg.attn_dim}, -bc, bc, rng, true);
  u_k = Tensor::uniform({cfg.token_dim, cfg.attn_dim}, -bc, bc, rng, true);
  u_v = Tensor::uniform({cfg.token_dim, cfg.attn_dim}, -bc, bc, rng, true);
  u_sa = Tensor::uniform({cfg.attn_dim, cfg.token_dim}, -bd, bd, rng, true);
  ln1.eps = cfg.ln_eps;
  ln2.eps = cfg.ln_eps;
}

TransformerLayer::Out TransformerLayer::self_attention(const Tensor& tokens) const {
  const int D = u_q.shape()[1];
  Tensor q = matmul(tokens, u_q);
  Tensor k = matmul(tokens, u_k);
  Tensor v = matmul(tokens, u_v);
  Tensor scores = mul_scalar(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(D)));
  Tensor w = softmax(scores, static_cast<int>(scores.dim()) - 1);
  Tensor sa = matmul(matmul(w, v), u_sa);
  return {sa, w};
}

TransformerLayer::Out TransformerLayer::forward(const Tensor& tokens) const {
  Out att = self_attention(tokens);
  Tensor t1 = ln1.forward(add(att.tokens, tokens));
  Tensor m = fc2.forward(relu(fc1.forward(t1)));
  return {ln2.forward(add(m, t1)), att.weights};
}

void TransformerLayer::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".u_q", u_q);
  out.emplace_back(prefix + ".u_k", u_k);
  out.emplace_back(prefix + ".u_v", u_v);
  out.emplace_back(prefix + ".u_sa", u_sa);
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

TransformerStack::TransformerStack(const NetConfig& cfg, Rng& rng) {
  for (int i = 0; i < cfg.layers; ++i) layers.emplace_back(cfg, rng);
}

TransformerLayer::Out TransformerStack::forward(const Tensor& tokens) const {
  Tensor t = tokens;
  Tensor last_w;
  for (const auto& layer : layers) {
    auto out = layer.forward(t);
    t = out.tokens;
    last_w = out.weights;
  }
  return {t, last_w};
}

void TransformerStack::collect(const std::string& prefix, NamedParams& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".layer" + std::to_string(i), out);
}

Tensor modality_pool(const Tensor& tokens) {
  const auto& s = tokens.shape();
  if (s.size() != 3 || s[1] < 2)
    throw ShapeError("modality_pool expects [batch, n>=2, C], got " + shape_to_string(s));
  const int B = s[0], n = s[1], C = s[2];
  Tensor prop = reshape(slice(tokens, 1, 0, 1), {B, C});
  Tensor vis = mean_over(slice(tokens, 1, 1, n), 1);
  const Tensor parts[] = {prop, vis};
  return concat(parts, 1);
}

std::vector<double> extract_attention_map(const Tensor& weights, int grid, int item) {
  const auto& s = weights.shape();
  int n = 0;
  std::int64_t base = 0;
  if (s.size() == 2) {
    n = s[0];
  } else if (s.size() == 3) {
    n = s[1];
    if (item < 0 || item >= s[0])
      throw ShapeError("attention map item " + std::to_string(item) + " out of range for " +
                       shape_to_string(s));
    base = static_cast<std::int64_t>(item) * n * n;
  } else {
    throw ShapeError("attention weights must be rank 2 or 3, got " + shape_to_string(s));
  }
  if (n != grid * grid + 1)
    throw ShapeError("attention size " + std::to_string(n) + " does not match grid " +
                     std::to_string(grid));
  std::vector<double> map(static_cast<std::size_t>(grid * grid));
  double sum = 0.0;
  for (int j = 0; j < grid * grid; ++j) {
    map[static_cast<std::size_t>(j)] = weights.values()[base + 1 + j];
    sum += map[static_cast<std::size_t>(j)];
  }
  if (sum > 0.0) {
    for (auto& v : map) v /= sum;
  } else {
    for (auto& v : map) v = 1.0 / static_cast<double>(grid * grid);
  }
  return map;
}

}  // namespace loco
