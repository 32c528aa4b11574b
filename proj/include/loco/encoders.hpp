#pragma once

#include <string>
#include <vector>

#include "loco/nn.hpp"
#include "loco/tensor.hpp"

namespace loco {

struct ConvSpec {
  int out_ch = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
};

// Network sizes for one variant family. Paper-profile defaults; the mini
// profile overrides these through the config file.
struct NetConfig {
  int proprio_dim = 93;
  int depth_stack = 4;
  int depth_size = 64;
  int action_dim = 12;

  // proprio encoder: hidden dims, ReLU after every layer; last entry is the
  // proprio feature width
  std::vector<int> proprio_hidden = {256, 256};

  // depth encoder plan; final out_ch must equal token_dim
  std::vector<ConvSpec> conv_plan = {
      {32, 8, 4, 2}, {64, 4, 2, 1}, {64, 3, 1, 1}, {128, 2, 2, 0}};

  // transformer
  int token_dim = 128;  // C
  int attn_dim = 128;   // D
  int layers = 2;       // L
  int mlp_hidden = 256;
  double ln_eps = 1e-5;

  // projection heads (hidden dims, ReLU throughout; last entry = feature fed
  // to the final linear output layers)
  std::vector<int> head_hidden = {256, 256};

  int proprio_feature() const { return proprio_hidden.back(); }
  // spatial grid N after the conv plan; throws ConfigError if the plan does
  // not divide evenly
  int grid_size() const;
  void validate() const;
};

// MLP over the 93-dim proprioceptive vector. Input [B, proprio_dim],
// output [B, proprio_feature].
struct ProprioEncoder {
  MLP mlp;

  ProprioEncoder() = default;
  ProprioEncoder(const NetConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& proprio) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Conv stack over the depth image stack. Input [B, depth_stack, S, S] with
// values in [0,1] (out-of-range inputs are clamped, with a warning when debug
// checks are on), output [B, C, N, N].
struct DepthEncoder {
  std::vector<Tensor> kernels;
  std::vector<Tensor> biases;
  std::vector<ConvSpec> plan;
  int grid = 0;

  DepthEncoder() = default;
  DepthEncoder(const NetConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& depth) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Builds T0: one linear proprio token followed by the N*N columns of the
// visual feature map in row-major spatial order. Output [B, N*N+1, C].
struct Tokenizer {
  Linear prop_token;
  int grid = 0;
  int token_dim = 0;

  Tokenizer() = default;
  Tokenizer(const NetConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& prop_feature, const Tensor& visual_map) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

}  // namespace loco
