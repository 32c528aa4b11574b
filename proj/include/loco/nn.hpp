#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loco/tensor.hpp"

namespace loco {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Fully connected layer. Weight is stored [in, out] so forward is a plain
// matmul; init is uniform(-1/sqrt(in), 1/sqrt(in)) for the weight, zero bias.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  static Linear zero_init(int in, int out);

  int in_dim() const { return weight.shape()[0]; }
  int out_dim() const { return weight.shape()[1]; }
  Tensor forward(const Tensor& x) const;  // x [..., in] -> [..., out]
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Stack of Linear layers with ReLU between them; optionally after the last.
struct MLP {
  std::vector<Linear> layers;
  bool relu_output = false;

  MLP() = default;
  MLP(int in, std::span<const int> hidden, int out, Rng& rng, bool relu_out = false);

  Tensor forward(Tensor x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
};

// Convenience for optimizer/checkpoint plumbing.
std::vector<Tensor> param_tensors(const NamedParams& named);
void set_requires_grad(NamedParams& named, bool value);

}  // namespace loco
