#pragma once

#include <string>
#include <vector>

#include "loco/encoders.hpp"
#include "loco/nn.hpp"
#include "loco/tensor.hpp"

namespace loco {

// Single-head scaled dot-product self-attention plus the two-LN residual
// encoder layer. Token layout: index 0 proprioceptive, 1..N*N visual.
struct TransformerLayer {
  Tensor u_q, u_k, u_v;  // [C, D]
  Tensor u_sa;           // [D, C]
  LayerNorm ln1, ln2;
  Linear fc1, fc2;  // C -> mlp_hidden -> C

  TransformerLayer() = default;
  TransformerLayer(const NetConfig& cfg, Rng& rng);

  struct Out {
    Tensor tokens;   // same shape as input
    Tensor weights;  // [B, n, n], rows sum to 1
  };
  // tokens [B, n, C]
  Out self_attention(const Tensor& tokens) const;
  Out forward(const Tensor& tokens) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct TransformerStack {
  std::vector<TransformerLayer> layers;

  TransformerStack() = default;
  TransformerStack(const NetConfig& cfg, Rng& rng);

  // Returns tokens after L layers and the attention weights of the last layer.
  TransformerLayer::Out forward(const Tensor& tokens) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Mean of token 0 (itself) and mean of tokens 1..n-1, concatenated:
// [B, n, C] -> [B, 2C], proprio half first.
Tensor modality_pool(const Tensor& tokens);

// Head-of-sequence attention over the visual tokens: row 0 of one item's
// weight matrix, entries 1..N*N, renormalized to sum to 1 and reshaped to
// N x N row-major. weights [n, n] or [B, n, n] with item selecting the batch
// row. Visualization only.
std::vector<double> extract_attention_map(const Tensor& weights, int grid, int item = 0);

}  // namespace loco
