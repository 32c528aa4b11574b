#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "loco/common.hpp"

namespace loco {

using Shape = std::vector<int>;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
};

void ensure_grad(TensorNode& n);

}  // namespace detail

// Dense n-dimensional f64 array with a gradient slot. Value semantics over a
// shared node: copies alias the same storage, which is what the graph wants.
// Values are immutable after construction except through the optimizer
// (values_mut) — all ops return fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  double item() const;

  std::span<const double> values() const { return node_->value; }
  std::span<double> values_mut() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<double> grad_mut();
  void zero_grad();

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Scoped switch disabling graph recording (rollouts, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- elementwise; rhs broadcasts when it is a scalar or a suffix of lhs ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor square(const Tensor& x);
Tensor clamp_op(const Tensor& x, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- linear algebra ----
// matmul supports [m,k]x[k,n], [batch...,m,k]x[k,n] and [batch...,m,k]x[batch...,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// input [Cin,H,W] or [B,Cin,H,W]; kernels [Cout,Cin,kh,kw]. Cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);
// x [...,C,H,W] + bias [C]
Tensor bias_add_channels(const Tensor& x, const Tensor& bias);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, int begin, int end);
Tensor concat(std::span<const Tensor> parts, int axis);

// ---- normalization / reductions ----
Tensor softmax(const Tensor& x, int axis);
// gain/bias have the size of the last axis; normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_over(const Tensor& x, int axis);
Tensor mean_over(const Tensor& x, int axis);

// ---- autodiff ----
// Reverse-mode pass from a scalar loss. Grad accumulates additively into
// every reachable tensor with requires_grad; the tape is freed afterwards.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| / max(1, |central|).
double grad_check(const std::function<Tensor(std::span<const Tensor>)>& f,
                  std::span<const Tensor> inputs, double h = 1e-4);

// C[m,n] (+)= A[m,k] * B[k,n], all row-major contiguous.
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate);

// C[m,n] (+)= A[m,k] * B[n,k]^T — row-dot-row, no transposed copy.
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate);

// C[m,n] (+)= A[k,m]^T * B[k,n].
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate);

}  // namespace loco
