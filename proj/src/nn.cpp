#include "loco/nn.hpp"

#include <cmath>

namespace loco {

Linear::Linear(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Tensor::uniform({in, out}, -bound, bound, rng, true);
  bias = Tensor::zeros({out}, true);
}

Linear Linear::zero_init(int in, int out) {
  Linear l;
  l.weight = Tensor::zeros({in, out}, true);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.dim() < 2)
    throw ShapeError("Linear: input must be batched, got " + shape_to_string(x.shape()));
  return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

MLP::MLP(int in, std::span<const int> hidden, int out, Rng& rng, bool relu_out)
    : relu_output(relu_out) {
  int prev = in;
  for (int h : hidden) {
    layers.emplace_back(prev, h, rng);
    prev = h;
  }
  layers.emplace_back(prev, out, rng);
}

Tensor MLP::forward(Tensor x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size() || relu_output) x = relu(x);
  }
  return x;
}

void MLP::collect(const std::string& prefix, NamedParams& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".fc" + std::to_string(i), out);
}

LayerNorm::LayerNorm(int dim) {
  gain = Tensor::full({dim}, 1.0, true);
  bias = Tensor::zeros({dim}, true);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

std::vector<Tensor> param_tensors(const NamedParams& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

void set_requires_grad(NamedParams& named, bool value) {
  for (auto& [name, t] : named) t.set_requires_grad(value);
}

}  // namespace loco
