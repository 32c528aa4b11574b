#include "loco/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace loco {

namespace detail {

void ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

namespace {

thread_local bool t_grad_enabled = true;

std::int64_t product(std::span<const int> shape) {
  std::int64_t p = 1;
  for (int d : shape) p *= d;
  return p;
}

void validate_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor shape must have positive dims, got " + shape_to_string(shape));
  }
}

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return n;
}

void check_finite(const char* op, const TensorNode& n) {
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw RuntimeFault(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

// Builds the result tensor and wires the tape when grad is enabled.
Tensor finish(const char* op, std::shared_ptr<TensorNode> out,
              std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void(TensorNode&)> bw) {
  if (debug_checks_enabled()) check_finite(op, *out);
  bool rg = false;
  for (const auto& p : parents) rg = rg || (p && p->requires_grad);
  if (rg && t_grad_enabled) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(bw);
  }
  return Tensor(out);
}

// rhs broadcasting: identical shape, scalar, or suffix of lhs shape.
void check_broadcast(const char* op, const TensorNode& a, const TensorNode& b) {
  if (b.value.size() == 1) return;
  if (a.shape.size() < b.shape.size())
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(b.shape) +
                     " against " + shape_to_string(a.shape));
  const std::size_t off = a.shape.size() - b.shape.size();
  for (std::size_t i = 0; i < b.shape.size(); ++i) {
    if (a.shape[off + i] != b.shape[i])
      throw ShapeError(std::string(op) + ": shape mismatch between " + shape_to_string(a.shape) +
                       " and " + shape_to_string(b.shape));
  }
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_broadcast(const char* op, const Tensor& ta, const Tensor& tb, Fwd fwd, BwdA bwd_a,
                        BwdB bwd_b) {
  auto a = ta.node();
  auto b = tb.node();
  check_broadcast(op, *a, *b);
  const std::int64_t n = static_cast<std::int64_t>(a->value.size());
  const std::int64_t bn = static_cast<std::int64_t>(b->value.size());
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* av = a->value.data();
  const double* bv = b->value.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fwd(av[i], bv[i % bn]);
  auto node = make_node(a->shape, std::move(out));
  return finish(op, node, {a, b}, [a, b, n, bn, bwd_a, bwd_b](TensorNode& o) {
    const double* av = a->value.data();
    const double* bv = b->value.data();
    const double* g = o.grad.data();
    if (a->requires_grad) {
      ensure_grad(*a);
      double* ga = a->grad.data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += bwd_a(g[i], av[i], bv[i % bn]);
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      double* gb = b->grad.data();
      for (std::int64_t i = 0; i < n; ++i) gb[i % bn] += bwd_b(g[i], av[i], bv[i % bn]);
    }
  });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& tx, Fwd fwd, Bwd bwd) {
  auto x = tx.node();
  const std::int64_t n = static_cast<std::int64_t>(x->value.size());
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* xv = x->value.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fwd(xv[i]);
  auto node = make_node(x->shape, std::move(out));
  return finish(op, node, {x}, [x, n, bwd](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double* xv = x->value.data();
    const double* yv = o.value.data();
    const double* g = o.grad.data();
    double* gx = x->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += bwd(g[i], xv[i], yv[i]);
  });
}

struct AxisSplit {
  std::int64_t outer, axis, inner;
};

AxisSplit split_axis(const char* op, const Shape& shape, int axis) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape));
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

}  // namespace
}  // namespace detail

using detail::ensure_grad;
using detail::TensorNode;

// ---------------------------------------------------------------------------
// construction

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  detail::validate_shape(shape);
  const auto n = static_cast<std::size_t>(detail::product(shape));
  auto node = detail::make_node(std::move(shape), std::vector<double>(n, 0.0));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  detail::validate_shape(shape);
  const auto n = static_cast<std::size_t>(detail::product(shape));
  auto node = detail::make_node(std::move(shape), std::vector<double>(n, v));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  detail::validate_shape(shape);
  if (detail::product(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_data: shape " + shape_to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  auto node = detail::make_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  detail::validate_shape(shape);
  const auto n = static_cast<std::size_t>(detail::product(shape));
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.uniform(lo, hi);
  auto node = detail::make_node(std::move(shape), std::move(vals));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

double Tensor::item() const {
  if (!node_ || node_->value.size() != 1)
    throw ShapeError("item(): tensor is not scalar, shape " +
                     (node_ ? shape_to_string(node_->shape) : std::string("<null>")));
  return node_->value[0];
}

std::span<double> Tensor::grad_mut() {
  ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : prev_(detail::t_grad_enabled) { detail::t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::t_grad_enabled = prev_; }

bool grad_enabled() { return detail::t_grad_enabled; }

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("minimum: shape mismatch between " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  return detail::binary_broadcast(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double g, double x, double y) { return x <= y ? g : 0.0; },
      [](double g, double x, double y) { return x <= y ? 0.0 : g; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary_op(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return detail::unary_op(
      "mul_scalar", a, [c](double x) { return x * c; },
      [c](double g, double, double) { return g * c; });
}

Tensor relu(const Tensor& x) {
  // subgradient at 0 is 0
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double v, double) { return v > 0.0 ? g : 0.0; });
}

Tensor exp_op(const Tensor& x) {
  return detail::unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

Tensor log_op(const Tensor& x) {
  return detail::unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double g, double v, double) { return g / v; });
}

Tensor square(const Tensor& x) {
  return detail::unary_op(
      "square", x, [](double v) { return v * v; },
      [](double g, double v, double) { return 2.0 * g * v; });
}

Tensor clamp_op(const Tensor& x, double lo, double hi) {
  return detail::unary_op(
      "clamp", x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double g, double v, double) { return (v >= lo && v <= hi) ? g : 0.0; });
}

// ---------------------------------------------------------------------------
// gemm

// Each kernel processes four rows per pass so every b-row load feeds four
// accumulator rows; per-element accumulation order stays plain ascending.
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const std::int64_t work = m * n * k;
  auto body = [=](std::int64_t i0, std::int64_t i1) {
    std::int64_t i = i0;
    for (; i + 4 <= i1; i += 4) {
      double* c0 = c + (i + 0) * n;
      double* c1 = c + (i + 1) * n;
      double* c2 = c + (i + 2) * n;
      double* c3 = c + (i + 3) * n;
      if (!accumulate) {
        std::memset(c0, 0, static_cast<std::size_t>(n) * sizeof(double));
        std::memset(c1, 0, static_cast<std::size_t>(n) * sizeof(double));
        std::memset(c2, 0, static_cast<std::size_t>(n) * sizeof(double));
        std::memset(c3, 0, static_cast<std::size_t>(n) * sizeof(double));
      }
      const double* a0 = a + (i + 0) * k;
      const double* a1 = a + (i + 1) * k;
      const double* a2 = a + (i + 2) * k;
      const double* a3 = a + (i + 3) * k;
      for (std::int64_t l = 0; l < k; ++l) {
        const double* brow = b + l * n;
        const double x0 = a0[l], x1 = a1[l], x2 = a2[l], x3 = a3[l];
        for (std::int64_t j = 0; j < n; ++j) {
          const double bj = brow[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    }
    for (; i < i1; ++i) {
      double* crow = c + i * n;
      if (!accumulate) std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
      const double* arow = a + i * k;
      for (std::int64_t l = 0; l < k; ++l) {
        const double al = arow[l];
        const double* brow = b + l * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += al * brow[j];
      }
    }
  };
  if (work >= (1 << 20) && worker_count() > 1) {
    parallel_for(0, m, body, std::max<std::int64_t>(4, m / (4 * worker_count())));
  } else {
    body(0, m);
  }
}

void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  std::int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    double* c2 = c + (i + 2) * n;
    double* c3 = c + (i + 3) * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (std::int64_t l = 0; l < k; ++l) {
        const double bl = brow[l];
        s0 += a0[l] * bl;
        s1 += a1[l] * bl;
        s2 += a2[l] * bl;
        s3 += a3[l] * bl;
      }
      if (accumulate) {
        c0[j] += s0;
        c1[j] += s1;
        c2[j] += s2;
        c3[j] += s3;
      } else {
        c0[j] = s0;
        c1[j] = s1;
        c2[j] = s2;
        c3[j] = s3;
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      if (accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, static_cast<std::size_t>(m * n) * sizeof(double));
  std::int64_t l = 0;
  for (; l + 4 <= k; l += 4) {
    const double* a0 = a + (l + 0) * m;
    const double* a1 = a + (l + 1) * m;
    const double* a2 = a + (l + 2) * m;
    const double* a3 = a + (l + 3) * m;
    const double* b0 = b + (l + 0) * n;
    const double* b1 = b + (l + 1) * n;
    const double* b2 = b + (l + 2) * n;
    const double* b3 = b + (l + 3) * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double x0 = a0[i], x1 = a1[i], x2 = a2[i], x3 = a3[i];
      double* crow = c + i * n;
      // adds stay sequential so results match the unblocked loop bit for bit
      for (std::int64_t j = 0; j < n; ++j)
        crow[j] = (((crow[j] + x0 * b0[j]) + x1 * b1[j]) + x2 * b2[j]) + x3 * b3[j];
    }
  }
  for (; l < k; ++l) {
    const double* arow = a + l * m;
    const double* brow = b + l * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double ai = arow[i];
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += ai * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// matmul / transpose

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  auto a = ta.node();
  auto b = tb.node();
  const auto& sa = a->shape;
  const auto& sb = b->shape;
  if (sa.size() < 2 || sb.size() < 2)
    throw ShapeError("matmul: operands must be at least 2-d, got " + shape_to_string(sa) + " and " +
                     shape_to_string(sb));
  const std::int64_t m = sa[sa.size() - 2];
  const std::int64_t k = sa[sa.size() - 1];
  const std::int64_t kb = sb[sb.size() - 2];
  const std::int64_t n = sb[sb.size() - 1];
  if (k != kb)
    throw ShapeError("matmul: inner dimensions disagree between " + shape_to_string(sa) + " and " +
                     shape_to_string(sb));

  const bool b_batched = sb.size() > 2;
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  if (b_batched) {
    if (sa.size() != sb.size())
      throw ShapeError("matmul: rank mismatch between " + shape_to_string(sa) + " and " +
                       shape_to_string(sb));
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) {
      if (sa[i] != sb[i])
        throw ShapeError("matmul: batch dims disagree between " + shape_to_string(sa) + " and " +
                         shape_to_string(sb));
    }
  }

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(static_cast<int>(n));
  std::vector<double> out(static_cast<std::size_t>(batch * m * n));

  const double* av = a->value.data();
  const double* bv = b->value.data();
  if (!b_batched) {
    // leading dims of a fold into rows
    gemm_nn(batch * m, n, k, av, bv, out.data(), false);
  } else {
    auto body = [&](std::int64_t p0, std::int64_t p1) {
      for (std::int64_t p = p0; p < p1; ++p)
        gemm_nn(m, n, k, av + p * m * k, bv + p * k * n, out.data() + p * m * n, false);
    };
    if (worker_count() > 1 && batch > 1 && batch * m * n * k >= (1 << 20)) {
      parallel_for(0, batch, body);
    } else {
      body(0, batch);
    }
  }

  auto node = detail::make_node(std::move(out_shape), std::move(out));
  return detail::finish("matmul", node, {a, b}, [a, b, m, n, k, batch, b_batched](TensorNode& o) {
    const double* g = o.grad.data();
    const double* av = a->value.data();
    const double* bv = b->value.data();
    if (!b_batched) {
      const std::int64_t rows = batch * m;
      if (a->requires_grad) {
        ensure_grad(*a);
        gemm_nt(rows, k, n, g, bv, a->grad.data(), true);  // g * b^T
      }
      if (b->requires_grad) {
        ensure_grad(*b);
        gemm_tn(k, n, rows, av, g, b->grad.data(), true);  // a^T * g
      }
    } else {
      for (std::int64_t p = 0; p < batch; ++p) {
        const double* gp = g + p * m * n;
        if (a->requires_grad) {
          ensure_grad(*a);
          gemm_nt(m, k, n, gp, bv + p * k * n, a->grad.data() + p * m * k, true);
        }
        if (b->requires_grad) {
          ensure_grad(*b);
          gemm_tn(k, n, m, av + p * m * k, gp, b->grad.data() + p * k * n, true);
        }
      }
    }
  });
}

Tensor transpose_last2(const Tensor& tx) {
  auto x = tx.node();
  const auto& s = x->shape;
  if (s.size() < 2) throw ShapeError("transpose_last2: need rank >= 2, got " + shape_to_string(s));
  const std::int64_t r = s[s.size() - 2];
  const std::int64_t c = s[s.size() - 1];
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < s.size(); ++i) batch *= s[i];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(x->value.size());
  const double* xv = x->value.data();
  for (std::int64_t p = 0; p < batch; ++p) {
    const double* src = xv + p * r * c;
    double* dst = out.data() + p * r * c;
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  auto node = detail::make_node(std::move(out_shape), std::move(out));
  return detail::finish("transpose_last2", node, {x}, [x, batch, r, c](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double* g = o.grad.data();
    double* gx = x->grad.data();
    for (std::int64_t p = 0; p < batch; ++p) {
      const double* src = g + p * r * c;
      double* dst = gx + p * r * c;
      for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t i = 0; i < r; ++i) dst[i * c + j] += src[j * r + i];
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
  std::int64_t batch, cin, h, w, cout, kh, kw, ho, wo;
  bool batched;
};

ConvDims conv_dims(const Shape& in, const Shape& ker, int stride, int padding) {
  if (ker.size() != 4) throw ShapeError("conv2d: kernels must be rank 4, got " + shape_to_string(ker));
  ConvDims d{};
  d.batched = in.size() == 4;
  if (in.size() != 3 && in.size() != 4)
    throw ShapeError("conv2d: input must be rank 3 or 4, got " + shape_to_string(in));
  d.batch = d.batched ? in[0] : 1;
  d.cin = in[in.size() - 3];
  d.h = in[in.size() - 2];
  d.w = in[in.size() - 1];
  d.cout = ker[0];
  d.kh = ker[2];
  d.kw = ker[3];
  if (ker[1] != d.cin)
    throw ShapeError("conv2d: kernel channels " + shape_to_string(ker) + " do not match input " +
                     shape_to_string(in));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  const std::int64_t hnum = d.h + 2 * padding - d.kh;
  const std::int64_t wnum = d.w + 2 * padding - d.kw;
  if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0)
    throw ConfigError("conv2d: non-integral output size for input " + shape_to_string(in) +
                      ", kernel " + shape_to_string(ker) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(padding));
  d.ho = hnum / stride + 1;
  d.wo = wnum / stride + 1;
  return d;
}

// One sample's patches; rows live at row_stride apart so a whole batch can
// share a single [K, batch*ho*wo] matrix (one gemm instead of batch many).
void im2col(const double* x, const ConvDims& d, int stride, int padding, double* cols,
            std::int64_t row_stride) {
  for (std::int64_t ci = 0; ci < d.cin; ++ci) {
    const double* xc = x + ci * d.h * d.w;
    for (std::int64_t u = 0; u < d.kh; ++u) {
      for (std::int64_t v = 0; v < d.kw; ++v) {
        double* row = cols + ((ci * d.kh + u) * d.kw + v) * row_stride;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * stride + u - padding;
          double* dst = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::memset(dst, 0, static_cast<std::size_t>(d.wo) * sizeof(double));
            continue;
          }
          const double* src = xc + iy * d.w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * stride + v - padding;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* cols, const ConvDims& d, int stride, int padding, double* gx,
                std::int64_t row_stride) {
  for (std::int64_t ci = 0; ci < d.cin; ++ci) {
    double* xc = gx + ci * d.h * d.w;
    for (std::int64_t u = 0; u < d.kh; ++u) {
      for (std::int64_t v = 0; v < d.kw; ++v) {
        const double* row = cols + ((ci * d.kh + u) * d.kw + v) * row_stride;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * stride + u - padding;
          if (iy < 0 || iy >= d.h) continue;
          const double* src = row + oy * d.wo;
          double* dst = xc + iy * d.w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * stride + v - padding;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& tin, const Tensor& tker, int stride, int padding) {
  auto x = tin.node();
  auto w = tker.node();
  const ConvDims d = conv_dims(x->shape, w->shape, stride, padding);
  const std::int64_t K = d.cin * d.kh * d.kw;
  const std::int64_t P = d.ho * d.wo;

  Shape out_shape;
  if (d.batched)
    out_shape = {static_cast<int>(d.batch), static_cast<int>(d.cout), static_cast<int>(d.ho),
                 static_cast<int>(d.wo)};
  else
    out_shape = {static_cast<int>(d.cout), static_cast<int>(d.ho), static_cast<int>(d.wo)};

  // Per-sample im2col keeps the gemm operands cache-resident; a fused
  // whole-batch gemm measured slower because its rows outgrow L2.
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.cout * P));
  const double* xv = x->value.data();
  const double* wv = w->value.data();

  {
    std::vector<double> cols(static_cast<std::size_t>(K * P));
    for (std::int64_t b = 0; b < d.batch; ++b) {
      im2col(xv + b * d.cin * d.h * d.w, d, stride, padding, cols.data(), P);
      gemm_nn(d.cout, P, K, wv, cols.data(), out.data() + b * d.cout * P, false);
    }
  }

  auto node = detail::make_node(std::move(out_shape), std::move(out));
  return detail::finish("conv2d", node, {x, w}, [x, w, d, stride, padding, K, P](TensorNode& o) {
    const double* g = o.grad.data();
    const double* xv = x->value.data();
    const double* wv = w->value.data();
    if (x->requires_grad) ensure_grad(*x);
    if (w->requires_grad) ensure_grad(*w);

    std::vector<double> cols(static_cast<std::size_t>(K * P));
    std::vector<double> dcols(static_cast<std::size_t>(K * P));
    for (std::int64_t b = 0; b < d.batch; ++b) {
      const double* gb = g + b * d.cout * P;  // sample slice is already [cout, P]
      if (w->requires_grad) {
        im2col(xv + b * d.cin * d.h * d.w, d, stride, padding, cols.data(), P);
        gemm_nt(d.cout, K, P, gb, cols.data(), w->grad.data(), true);
      }
      if (x->requires_grad) {
        gemm_tn(K, P, d.cout, wv, gb, dcols.data(), false);
        col2im_acc(dcols.data(), d, stride, padding, x->grad.data() + b * d.cin * d.h * d.w, P);
      }
    }
  });
}

Tensor bias_add_channels(const Tensor& tx, const Tensor& tbias) {
  auto x = tx.node();
  auto bias = tbias.node();
  const auto& s = x->shape;
  if (s.size() < 3)
    throw ShapeError("bias_add_channels: need rank >= 3, got " + shape_to_string(s));
  const std::int64_t C = s[s.size() - 3];
  const std::int64_t hw = static_cast<std::int64_t>(s[s.size() - 2]) * s[s.size() - 1];
  if (bias->shape.size() != 1 || bias->shape[0] != C)
    throw ShapeError("bias_add_channels: bias " + shape_to_string(bias->shape) +
                     " does not match channels of " + shape_to_string(s));
  const std::int64_t n = static_cast<std::int64_t>(x->value.size());
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* xv = x->value.data();
  const double* bv = bias->value.data();
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = xv[i] + bv[(i / hw) % C];
  auto node = detail::make_node(s, std::move(out));
  return detail::finish("bias_add_channels", node, {x, bias}, [x, bias, n, hw, C](TensorNode& o) {
    const double* g = o.grad.data();
    if (x->requires_grad) {
      ensure_grad(*x);
      double* gx = x->grad.data();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
    }
    if (bias->requires_grad) {
      ensure_grad(*bias);
      double* gb = bias->grad.data();
      for (std::int64_t i = 0; i < n; ++i) gb[(i / hw) % C] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& tx, Shape shape) {
  auto x = tx.node();
  detail::validate_shape(shape);
  if (detail::product(shape) != static_cast<std::int64_t>(x->value.size()))
    throw ShapeError("reshape: cannot view " + shape_to_string(x->shape) + " as " +
                     shape_to_string(shape));
  auto node = detail::make_node(std::move(shape), x->value);
  return detail::finish("reshape", node, {x}, [x](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double* g = o.grad.data();
    double* gx = x->grad.data();
    for (std::size_t i = 0; i < x->grad.size(); ++i) gx[i] += g[i];
  });
}

Tensor slice(const Tensor& tx, int axis, int begin, int end) {
  auto x = tx.node();
  const auto sp = detail::split_axis("slice", x->shape, axis);
  if (begin < 0 || end > sp.axis || begin >= end)
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " +
                     shape_to_string(x->shape));
  Shape out_shape = x->shape;
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  const std::int64_t len = end - begin;
  std::vector<double> out(static_cast<std::size_t>(sp.outer * len * sp.inner));
  const double* xv = x->value.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    const double* src = xv + (o * sp.axis + begin) * sp.inner;
    double* dst = out.data() + o * len * sp.inner;
    std::memcpy(dst, src, static_cast<std::size_t>(len * sp.inner) * sizeof(double));
  }
  auto node = detail::make_node(std::move(out_shape), std::move(out));
  return detail::finish("slice", node, {x}, [x, sp, begin, len](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double* g = o.grad.data();
    double* gx = x->grad.data();
    for (std::int64_t ot = 0; ot < sp.outer; ++ot) {
      double* dst = gx + (ot * sp.axis + begin) * sp.inner;
      const double* src = g + ot * len * sp.inner;
      for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  auto sp0 = detail::split_axis("concat", s0, axis);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != s0.size())
      throw ShapeError("concat: rank mismatch between " + shape_to_string(s0) + " and " +
                       shape_to_string(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw ShapeError("concat: shape mismatch between " + shape_to_string(s0) + " and " +
                         shape_to_string(s));
    }
    total += s[static_cast<std::size_t>(axis)];
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(total);
  std::vector<double> out(static_cast<std::size_t>(sp0.outer * total * sp0.inner));
  std::int64_t off = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::vector<std::int64_t> offsets;
  std::vector<std::int64_t> lens;
  for (const auto& p : parts) {
    const std::int64_t len = p.shape()[static_cast<std::size_t>(axis)];
    const double* src = p.values().data();
    for (std::int64_t o = 0; o < sp0.outer; ++o) {
      std::memcpy(out.data() + (o * total + off) * sp0.inner, src + o * len * sp0.inner,
                  static_cast<std::size_t>(len * sp0.inner) * sizeof(double));
    }
    parents.push_back(p.node());
    offsets.push_back(off);
    lens.push_back(len);
    off += len;
  }
  auto node = detail::make_node(std::move(out_shape), std::move(out));
  auto parents_copy = parents;
  return detail::finish("concat", node, std::move(parents),
                        [ps = std::move(parents_copy), offsets, lens, sp0, total](TensorNode& o) {
                          const double* g = o.grad.data();
                          for (std::size_t pi = 0; pi < ps.size(); ++pi) {
                            auto& p = ps[pi];
                            if (!p->requires_grad) continue;
                            ensure_grad(*p);
                            double* gp = p->grad.data();
                            for (std::int64_t ot = 0; ot < sp0.outer; ++ot) {
                              const double* src = g + (ot * total + offsets[pi]) * sp0.inner;
                              double* dst = gp + ot * lens[pi] * sp0.inner;
                              for (std::int64_t i = 0; i < lens[pi] * sp0.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / reductions

Tensor softmax(const Tensor& tx, int axis) {
  auto x = tx.node();
  const auto sp = detail::split_axis("softmax", x->shape, axis);
  std::vector<double> out(x->value.size());
  const double* xv = x->value.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.axis * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < sp.axis; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
      double sum = 0.0;
      for (std::int64_t j = 0; j < sp.axis; ++j) {
        const double e = std::exp(xv[base + j * sp.inner] - mx);
        out[static_cast<std::size_t>(base + j * sp.inner)] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::int64_t j = 0; j < sp.axis; ++j) out[static_cast<std::size_t>(base + j * sp.inner)] *= inv;
    }
  }
  auto node = detail::make_node(x->shape, std::move(out));
  return detail::finish("softmax", node, {x}, [x, sp](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double* s = o.value.data();
    const double* g = o.grad.data();
    double* gx = x->grad.data();
    for (std::int64_t ot = 0; ot < sp.outer; ++ot) {
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const std::int64_t base = ot * sp.axis * sp.inner + in;
        double dot = 0.0;
        for (std::int64_t j = 0; j < sp.axis; ++j) {
          const std::int64_t idx = base + j * sp.inner;
          dot += g[idx] * s[idx];
        }
        for (std::int64_t j = 0; j < sp.axis; ++j) {
          const std::int64_t idx = base + j * sp.inner;
          gx[idx] += s[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& tx, const Tensor& tgain, const Tensor& tbias, double eps) {
  auto x = tx.node();
  auto gain = tgain.node();
  auto bias = tbias.node();
  const auto& s = x->shape;
  if (s.empty()) throw ShapeError("layer_norm: scalar input");
  const std::int64_t C = s.back();
  if (gain->shape.size() != 1 || gain->shape[0] != C || bias->shape.size() != 1 ||
      bias->shape[0] != C)
    throw ShapeError("layer_norm: gain/bias " + shape_to_string(gain->shape) + "/" +
                     shape_to_string(bias->shape) + " do not match last axis of " +
                     shape_to_string(s));
  const std::int64_t rows = static_cast<std::int64_t>(x->value.size()) / C;
  std::vector<double> out(x->value.size());
  auto xhat = std::make_shared<std::vector<double>>(x->value.size());
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const double* xv = x->value.data();
  const double* gv = gain->value.data();
  const double* bv = bias->value.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xv + r * C;
    double mean = 0.0;
    for (std::int64_t j = 0; j < C; ++j) mean += row[j];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::int64_t j = 0; j < C; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[static_cast<std::size_t>(r)] = iv;
    for (std::int64_t j = 0; j < C; ++j) {
      const double xh = (row[j] - mean) * iv;
      (*xhat)[static_cast<std::size_t>(r * C + j)] = xh;
      out[static_cast<std::size_t>(r * C + j)] = xh * gv[j] + bv[j];
    }
  }
  auto node = detail::make_node(s, std::move(out));
  return detail::finish("layer_norm", node, {x, gain, bias},
                        [x, gain, bias, xhat, inv, rows, C](TensorNode& o) {
                          const double* g = o.grad.data();
                          const double* gv = gain->value.data();
                          if (gain->requires_grad) ensure_grad(*gain);
                          if (bias->requires_grad) ensure_grad(*bias);
                          if (x->requires_grad) ensure_grad(*x);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const double* grow = g + r * C;
                            const double* xh = xhat->data() + r * C;
                            if (gain->requires_grad) {
                              double* gg = gain->grad.data();
                              for (std::int64_t j = 0; j < C; ++j) gg[j] += grow[j] * xh[j];
                            }
                            if (bias->requires_grad) {
                              double* gb = bias->grad.data();
                              for (std::int64_t j = 0; j < C; ++j) gb[j] += grow[j];
                            }
                            if (x->requires_grad) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::int64_t j = 0; j < C; ++j) {
                                const double dxh = grow[j] * gv[j];
                                m1 += dxh;
                                m2 += dxh * xh[j];
                              }
                              m1 /= static_cast<double>(C);
                              m2 /= static_cast<double>(C);
                              const double iv = (*inv)[static_cast<std::size_t>(r)];
                              double* gx = x->grad.data() + r * C;
                              for (std::int64_t j = 0; j < C; ++j) {
                                const double dxh = grow[j] * gv[j];
                                gx[j] += iv * (dxh - m1 - xh[j] * m2);
                              }
                            }
                          }
                        });
}

Tensor sum_all(const Tensor& tx) {
  auto x = tx.node();
  double s = 0.0;
  for (double v : x->value) s += v;
  auto node = detail::make_node({1}, {s});
  return detail::finish("sum_all", node, {x}, [x](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double g = o.grad[0];
    for (auto& v : x->grad) v += g;
  });
}

Tensor mean_all(const Tensor& tx) {
  auto x = tx.node();
  const double n = static_cast<double>(x->value.size());
  double s = 0.0;
  for (double v : x->value) s += v;
  auto node = detail::make_node({1}, {s / n});
  return detail::finish("mean_all", node, {x}, [x, n](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double g = o.grad[0] / n;
    for (auto& v : x->grad) v += g;
  });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& tx, int axis, bool mean) {
  auto x = tx.node();
  const auto sp = detail::split_axis(op, x->shape, axis);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(x->shape.size()); ++i)
    if (i != axis) out_shape.push_back(x->shape[static_cast<std::size_t>(i)]);
  if (out_shape.empty()) out_shape = {1};
  const double scale = mean ? 1.0 / static_cast<double>(sp.axis) : 1.0;
  std::vector<double> out(static_cast<std::size_t>(sp.outer * sp.inner), 0.0);
  const double* xv = x->value.data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t j = 0; j < sp.axis; ++j) {
      const double* src = xv + (o * sp.axis + j) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::int64_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
    }
  if (mean)
    for (auto& v : out) v *= scale;
  auto node = detail::make_node(std::move(out_shape), std::move(out));
  return detail::finish(op, node, {x}, [x, sp, scale](TensorNode& o) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    const double* g = o.grad.data();
    double* gx = x->grad.data();
    for (std::int64_t ot = 0; ot < sp.outer; ++ot)
      for (std::int64_t j = 0; j < sp.axis; ++j) {
        double* dst = gx + (ot * sp.axis + j) * sp.inner;
        const double* src = g + ot * sp.inner;
        for (std::int64_t in = 0; in < sp.inner; ++in) dst[in] += src[in] * scale;
      }
  });
}

}  // namespace

Tensor sum_over(const Tensor& x, int axis) { return reduce_axis("sum_over", x, axis, false); }
Tensor mean_over(const Tensor& x, int axis) { return reduce_axis("mean_over", x, axis, true); }

// ---------------------------------------------------------------------------
// backward / grad check

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  auto root = loss.node();
  if (!root->requires_grad)
    throw RuntimeFault("backward: loss does not depend on any tensor requiring grad");

  // iterative post-order topological sort
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  ensure_grad(*root);
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) {
      ensure_grad(*n);
      n->backward_fn(*n);
    }
  }
  if (debug_checks_enabled()) {
    for (TensorNode* n : topo) {
      for (double v : n->grad) {
        if (!std::isfinite(v)) throw RuntimeFault("backward: non-finite gradient");
      }
    }
  }
  // free the tape
  for (TensorNode* n : topo) {
    n->backward_fn = nullptr;
    n->parents.clear();
  }
}

double grad_check(const std::function<Tensor(std::span<const Tensor>)>& f,
                  std::span<const Tensor> inputs, double h) {
  std::vector<Tensor> xs(inputs.begin(), inputs.end());
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor y = f(xs);
  backward(y);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(xs.size());
  for (auto& x : xs) {
    if (x.has_grad())
      analytic.emplace_back(x.grad().begin(), x.grad().end());
    else
      analytic.emplace_back(static_cast<std::size_t>(x.numel()), 0.0);
  }

  double max_err = 0.0;
  NoGradGuard ng;
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    auto vals = xs[xi].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = f(xs).item();
      vals[i] = orig - h;
      const double fm = f(xs).item();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[xi][i] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace loco
