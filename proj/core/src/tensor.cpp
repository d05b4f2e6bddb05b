#include "rndiff/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace rndiff {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

void check_shape(const Shape& s, const char* op) {
  if (s.empty()) throw std::invalid_argument(std::string(op) + ": empty shape");
  for (int d : s)
    if (d <= 0)
      throw std::invalid_argument(std::string(op) + ": non-positive dim in " + shape_str(s));
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= static_cast<std::size_t>(s[i]);
  }
  return st;
}

/// Result node of an op; parents/backward are recorded only when some parent
/// needs gradients (otherwise the node is a constant leaf of the next graph).
Tensor make_op(Shape shape, std::vector<double> values, const char* op,
               std::vector<Tensor> parents, std::function<void(TensorNode&)> bwd) {
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  t->requires_grad = needs;
  if (needs) {
    t->parents = std::move(parents);
    t->backward_fn = std::move(bwd);
  }
  return t;
}

struct Bcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // per-out-dim strides, 0 on broadcast dims
};

Bcast make_bcast(const Shape& a, const Shape& b, const char* op) {
  Bcast r;
  const int rank = static_cast<int>(std::max(a.size(), b.size()));
  r.out.resize(rank);
  r.sa.assign(rank, 0);
  r.sb.assign(rank, 0);
  const auto stra = strides_of(a), strb = strides_of(b);
  for (int i = 0; i < rank; ++i) {
    const int ia = static_cast<int>(a.size()) - rank + i;
    const int ib = static_cast<int>(b.size()) - rank + i;
    const int da = ia >= 0 ? a[ia] : 1;
    const int db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    r.out[i] = std::max(da, db);
    if (ia >= 0 && da != 1) r.sa[i] = stra[ia];
    if (ib >= 0 && db != 1) r.sb[i] = strb[ib];
  }
  return r;
}

/// Odometer sweep over `out`, tracking linear offsets into two (possibly
/// broadcast) operands. fn(o, ia, ib) runs once per output element, in order.
template <class Fn>
void for_each_bcast(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, Fn&& fn) {
  const int rank = static_cast<int>(out.size());
  std::vector<int> coord(rank, 0);
  const std::size_t n = numel(out);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++coord[d];
      ia += sa[d];
      ib += sb[d];
      if (coord[d] < out[d]) break;
      ia -= sa[d] * static_cast<std::size_t>(out[d]);
      ib -= sb[d] * static_cast<std::size_t>(out[d]);
      coord[d] = 0;
    }
  }
}

template <class Combine, class BwdA, class BwdB>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* op, Combine&& f,
                          BwdA&& dfa, BwdB&& dfb) {
  Bcast bc = make_bcast(a->shape, b->shape, op);
  std::vector<double> out(numel(bc.out));
  for_each_bcast(bc.out, bc.sa, bc.sb,
                 [&](std::size_t o, std::size_t ia, std::size_t ib) {
                   out[o] = f(a->values[ia], b->values[ib]);
                 });
  return make_op(bc.out, std::move(out), op, {a, b},
                 [bc, dfa, dfb](TensorNode& self) {
                   TensorNode& pa = *self.parents[0];
                   TensorNode& pb = *self.parents[1];
                   for_each_bcast(bc.out, bc.sa, bc.sb,
                                  [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                    const double g = self.grad[o];
                                    if (pa.requires_grad)
                                      pa.grad[ia] += dfa(g, pa.values[ia], pb.values[ib]);
                                    if (pb.requires_grad)
                                      pb.grad[ib] += dfb(g, pa.values[ia], pb.values[ib]);
                                  });
                 });
}

/// outer * L * inner decomposition around `axis`.
void axis_split(const Shape& s, int axis, std::size_t& outer, std::size_t& len,
                std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
  len = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, "make_tensor");
  if (values.size() != numel(shape))
    throw std::invalid_argument("make_tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

Tensor make_tensor(Shape shape, double fill, bool requires_grad) {
  check_shape(shape, "make_tensor");
  std::vector<double> v(numel(shape), fill);
  return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a->values);
  for (double& v : out) v += s;
  return make_op(a->shape, std::move(out), "add_scalar", {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a->values);
  for (double& v : out) v *= s;
  return make_op(a->shape, std::move(out), "mul_scalar", {a}, [s](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += s * self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a->shape;
  const Shape& sb = b->shape;
  std::size_t batch;
  int m, k, n;
  bool b_shared;  // rank-2 right operand under a batched left operand
  if (sa.size() == 2 && sb.size() == 2) {
    batch = 1;
    m = sa[0];
    k = sa[1];
    n = sb[1];
    b_shared = false;
    if (sb[0] != k) shape_error("matmul", sa, sb);
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = static_cast<std::size_t>(sa[0]);
    m = sa[1];
    k = sa[2];
    n = sb[2];
    b_shared = false;
    if (sb[0] != sa[0] || sb[1] != k) shape_error("matmul", sa, sb);
  } else if (sa.size() == 3 && sb.size() == 2) {
    batch = static_cast<std::size_t>(sa[0]);
    m = sa[1];
    k = sa[2];
    n = sb[1];
    b_shared = true;
    if (sb[0] != k) shape_error("matmul", sa, sb);
  } else {
    shape_error("matmul", sa, sb);
  }

  Shape out_shape = sa.size() == 2 ? Shape{m, n} : Shape{static_cast<int>(batch), m, n};
  std::vector<double> out(numel(out_shape));
  const std::size_t a_step = static_cast<std::size_t>(m) * k;
  const std::size_t b_step = b_shared ? 0 : static_cast<std::size_t>(k) * n;
  const std::size_t o_step = static_cast<std::size_t>(m) * n;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    ConstMap A(a->values.data() + bi * a_step, m, k);
    ConstMap B(b->values.data() + bi * b_step, k, n);
    MutMap C(out.data() + bi * o_step, m, n);
    C.noalias() = A * B;
  }

  return make_op(std::move(out_shape), std::move(out), "matmul", {a, b},
                 [batch, m, k, n, a_step, b_step, o_step](TensorNode& self) {
                   TensorNode& pa = *self.parents[0];
                   TensorNode& pb = *self.parents[1];
                   for (std::size_t bi = 0; bi < batch; ++bi) {
                     ConstMap A(pa.values.data() + bi * a_step, m, k);
                     ConstMap B(pb.values.data() + bi * b_step, k, n);
                     ConstMap G(self.grad.data() + bi * o_step, m, n);
                     if (pa.requires_grad) {
                       MutMap dA(pa.grad.data() + bi * a_step, m, k);
                       dA.noalias() += G * B.transpose();
                     }
                     if (pb.requires_grad) {
                       MutMap dB(pb.grad.data() + bi * b_step, k, n);
                       dB.noalias() += A.transpose() * G;
                     }
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  std::size_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: more than one -1 dim");
      infer = static_cast<int>(i);
    } else if (shape[i] <= 0) {
      throw std::invalid_argument("reshape: bad dim in " + shape_str(shape));
    } else {
      known *= static_cast<std::size_t>(shape[i]);
    }
  }
  if (infer >= 0) {
    if (known == 0 || a->size() % known != 0) shape_error("reshape", a->shape, shape);
    shape[infer] = static_cast<int>(a->size() / known);
  } else if (known != a->size()) {
    shape_error("reshape", a->shape, shape);
  }
  return make_op(std::move(shape), a->values, "reshape", {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, std::vector<int> perm) {
  const int rank = static_cast<int>(a->shape.size());
  if (static_cast<int>(perm.size()) != rank)
    throw std::invalid_argument("permute: perm rank mismatch for " + shape_str(a->shape));
  std::vector<bool> seen(rank, false);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw std::invalid_argument("permute: invalid perm");
    seen[p] = true;
  }
  Shape out_shape(rank);
  const auto in_strides = strides_of(a->shape);
  std::vector<std::size_t> map_strides(rank);
  for (int i = 0; i < rank; ++i) {
    out_shape[i] = a->shape[perm[i]];
    map_strides[i] = in_strides[perm[i]];
  }
  std::vector<double> out(a->size());
  const std::vector<std::size_t> zero(rank, 0);
  for_each_bcast(out_shape, map_strides, zero,
                 [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = a->values[ia]; });
  return make_op(std::move(out_shape), std::move(out), "permute", {a},
                 [map_strides, zero](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   for_each_bcast(self.shape, map_strides, zero,
                                  [&](std::size_t o, std::size_t ia, std::size_t) {
                                    p.grad[ia] += self.grad[o];
                                  });
                 });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const int rank = static_cast<int>(a->shape.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("slice: bad axis");
  if (len <= 0 || start < 0 || start + len > a->shape[axis])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside dim " +
                                std::to_string(a->shape[axis]));
  std::size_t outer, L, inner;
  axis_split(a->shape, axis, outer, L, inner);
  Shape out_shape = a->shape;
  out_shape[axis] = len;
  std::vector<double> out(outer * static_cast<std::size_t>(len) * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = a->values.data() + (o * L + start) * inner;
    double* dst = out.data() + o * len * inner;
    std::copy(src, src + static_cast<std::size_t>(len) * inner, dst);
  }
  return make_op(std::move(out_shape), std::move(out), "slice", {a},
                 [outer, L, inner, start, len](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   for (std::size_t o = 0; o < outer; ++o) {
                     const double* g = self.grad.data() + o * len * inner;
                     double* dst = p.grad.data() + (o * L + start) * inner;
                     for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i)
                       dst[i] += g[i];
                   }
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0]->shape;
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
  int total = 0;
  for (const auto& p : parts) {
    if (static_cast<int>(p->shape.size()) != rank) shape_error("concat", s0, p->shape);
    for (int i = 0; i < rank; ++i)
      if (i != axis && p->shape[i] != s0[i]) shape_error("concat", s0, p->shape);
    total += p->shape[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::size_t outer, L, inner;
  axis_split(out_shape, axis, outer, L, inner);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;  // per-part start along the axis
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t plen = static_cast<std::size_t>(p->shape[axis]);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = p->values.data() + o * plen * inner;
      double* dst = out.data() + (o * L + off) * inner;
      std::copy(src, src + plen * inner, dst);
    }
    off += plen;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op(std::move(out_shape), std::move(out), "concat", std::move(parents),
                 [outer, L, inner, offsets](TensorNode& self) {
                   for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                     TensorNode& p = *self.parents[pi];
                     if (!p.requires_grad) continue;
                     std::size_t plen = p.values.size() / (outer * inner);
                     for (std::size_t o = 0; o < outer; ++o) {
                       const double* g = self.grad.data() + (o * L + offsets[pi]) * inner;
                       double* dst = p.grad.data() + o * plen * inner;
                       for (std::size_t i = 0; i < plen * inner; ++i) dst[i] += g[i];
                     }
                   }
                 });
}

Tensor broadcast_to(const Tensor& a, Shape shape) {
  check_shape(shape, "broadcast_to");
  Bcast bc = make_bcast(a->shape, shape, "broadcast_to");
  if (bc.out != shape) shape_error("broadcast_to", a->shape, shape);
  std::vector<double> out(numel(shape));
  for_each_bcast(shape, bc.sa, bc.sb,
                 [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = a->values[ia]; });
  return make_op(std::move(shape), std::move(out), "broadcast_to", {a},
                 [bc](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   for_each_bcast(self.shape, bc.sa, bc.sb,
                                  [&](std::size_t o, std::size_t ia, std::size_t) {
                                    p.grad[ia] += self.grad[o];
                                  });
                 });
}

namespace {

Tensor reduce_axes(const Tensor& a, std::vector<int> axes, bool mean, const char* op) {
  const int rank = static_cast<int>(a->shape.size());
  std::sort(axes.begin(), axes.end());
  if (std::unique(axes.begin(), axes.end()) != axes.end())
    throw std::invalid_argument(std::string(op) + ": repeated axis");
  for (int ax : axes)
    if (ax < 0 || ax >= rank) throw std::invalid_argument(std::string(op) + ": bad axis");

  std::vector<bool> drop(rank, false);
  std::size_t dropped = 1;
  for (int ax : axes) {
    drop[ax] = true;
    dropped *= static_cast<std::size_t>(a->shape[ax]);
  }
  Shape out_shape;
  for (int i = 0; i < rank; ++i)
    if (!drop[i]) out_shape.push_back(a->shape[i]);
  if (out_shape.empty()) out_shape = {1};

  // Sweep the input; dropped dims contribute stride 0 into the output.
  std::vector<std::size_t> out_strides_full(rank, 0);
  {
    const auto ost = strides_of(out_shape);
    int oi = 0;
    for (int i = 0; i < rank; ++i)
      if (!drop[i]) out_strides_full[i] = ost[oi++];
  }
  const double scale = mean ? 1.0 / static_cast<double>(dropped) : 1.0;
  std::vector<double> out(numel(out_shape), 0.0);
  const std::vector<std::size_t> zero(rank, 0);
  for_each_bcast(a->shape, out_strides_full, zero,
                 [&](std::size_t i, std::size_t io, std::size_t) {
                   out[io] += a->values[i] * scale;
                 });
  return make_op(std::move(out_shape), std::move(out), op, {a},
                 [out_strides_full, zero, scale](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   for_each_bcast(p.shape, out_strides_full, zero,
                                  [&](std::size_t i, std::size_t io, std::size_t) {
                                    p.grad[i] += self.grad[io] * scale;
                                  });
                 });
}

}  // namespace

Tensor sum_axes(const Tensor& a, std::vector<int> axes) {
  return reduce_axes(a, std::move(axes), false, "sum_axes");
}

Tensor mean_axes(const Tensor& a, std::vector<int> axes) {
  return reduce_axes(a, std::move(axes), true, "mean_axes");
}

Tensor sum_all(const Tensor& a) {
  std::vector<int> axes(a->shape.size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_axes(a, std::move(axes), false, "sum_all");
}

Tensor mean_all(const Tensor& a) {
  std::vector<int> axes(a->shape.size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_axes(a, std::move(axes), true, "mean_all");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int rank = static_cast<int>(x->shape.size());
  const int D = x->shape[rank - 1];
  if (gamma->shape != Shape{D} || beta->shape != Shape{D})
    throw std::invalid_argument("layer_norm: affine params must have shape {" +
                                std::to_string(D) + "}, got " + shape_str(gamma->shape) +
                                " and " + shape_str(beta->shape));
  const std::size_t rows = x->size() / static_cast<std::size_t>(D);
  auto xhat = std::make_shared<std::vector<double>>(x->size());
  auto inv_sd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x->size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xv = x->values.data() + r * D;
    double mu = 0.0;
    for (int j = 0; j < D; ++j) mu += xv[j];
    mu /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) var += (xv[j] - mu) * (xv[j] - mu);
    var /= D;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = inv;
    for (int j = 0; j < D; ++j) {
      const double xh = (xv[j] - mu) * inv;
      (*xhat)[r * D + j] = xh;
      out[r * D + j] = gamma->values[j] * xh + beta->values[j];
    }
  }
  return make_op(x->shape, std::move(out), "layer_norm", {x, gamma, beta},
                 [xhat, inv_sd, D, rows](TensorNode& self) {
                   TensorNode& px = *self.parents[0];
                   TensorNode& pg = *self.parents[1];
                   TensorNode& pb = *self.parents[2];
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* g = self.grad.data() + r * D;
                     const double* xh = xhat->data() + r * D;
                     if (px.requires_grad) {
                       double m1 = 0.0, m2 = 0.0;
                       for (int j = 0; j < D; ++j) {
                         const double dxh = g[j] * pg.values[j];
                         m1 += dxh;
                         m2 += dxh * xh[j];
                       }
                       m1 /= D;
                       m2 /= D;
                       double* dx = px.grad.data() + r * D;
                       for (int j = 0; j < D; ++j) {
                         const double dxh = g[j] * pg.values[j];
                         dx[j] += (*inv_sd)[r] * (dxh - m1 - xh[j] * m2);
                       }
                     }
                     if (pg.requires_grad)
                       for (int j = 0; j < D; ++j) pg.grad[j] += g[j] * xh[j];
                     if (pb.requires_grad)
                       for (int j = 0; j < D; ++j) pb.grad[j] += g[j];
                   }
                 });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a->values[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return make_op(a->shape, std::move(out), "gelu", {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p.values[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      p.grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a->values[i]);
  return make_op(a->shape, std::move(out), "sigmoid", {a}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.values[i];
      p.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const int rank = static_cast<int>(a->shape.size());
  if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: bad axis");
  std::size_t outer, L, inner;
  axis_split(a->shape, axis, outer, L, inner);
  std::vector<double> out(a->size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * L * inner + in;
      double mx = a->values[base];
      for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, a->values[base + l * inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double e = std::exp(a->values[base + l * inner] - mx);
        out[base + l * inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < L; ++l) out[base + l * inner] /= z;
    }
  return make_op(a->shape, std::move(out), "softmax", {a},
                 [outer, L, inner](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t in = 0; in < inner; ++in) {
                       const std::size_t base = o * L * inner + in;
                       double dot = 0.0;
                       for (std::size_t l = 0; l < L; ++l)
                         dot += self.grad[base + l * inner] * self.values[base + l * inner];
                       for (std::size_t l = 0; l < L; ++l) {
                         const std::size_t i = base + l * inner;
                         p.grad[i] += self.values[i] * (self.grad[i] - dot);
                       }
                     }
                 });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table->shape.size() != 2)
    throw std::invalid_argument("embedding_lookup: table must be rank 2, got " +
                                shape_str(table->shape));
  const int V = table->shape[0], D = table->shape[1];
  for (int id : ids)
    if (id < 0 || id >= V)
      throw std::invalid_argument("embedding_lookup: index " + std::to_string(id) +
                                  " outside table of " + std::to_string(V) + " rows");
  std::vector<double> out(ids.size() * static_cast<std::size_t>(D));
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(table->values.begin() + static_cast<std::size_t>(ids[i]) * D,
              table->values.begin() + static_cast<std::size_t>(ids[i] + 1) * D,
              out.begin() + i * D);
  return make_op({static_cast<int>(ids.size()), D}, std::move(out), "embedding_lookup",
                 {table}, [ids, D](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     const double* g = self.grad.data() + i * D;
                     double* dst = p.grad.data() + static_cast<std::size_t>(ids[i]) * D;
                     for (int j = 0; j < D; ++j) dst[j] += g[j];
                   }
                 });
}

Tensor dropout(const Tensor& a, double p, SplitMix64& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
  if (p == 0.0) return a;  // exact identity, gradients included
  const double scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(a->size());
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = rng.uniform() < p ? 0.0 : scale;
    (*mask)[i] = m;
    out[i] = a->values[i] * m;
  }
  return make_op(a->shape, std::move(out), "dropout", {a}, [mask](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred->shape != target->shape) shape_error("mse_loss", pred->shape, target->shape);
  const double n = static_cast<double>(pred->size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred->size(); ++i) {
    const double d = pred->values[i] - target->values[i];
    acc += d * d;
  }
  return make_op({1}, {acc / n}, "mse_loss", {pred, target}, [n](TensorNode& self) {
    TensorNode& pp = *self.parents[0];
    TensorNode& pt = *self.parents[1];
    const double g = self.grad[0];
    for (std::size_t i = 0; i < pp.values.size(); ++i) {
      const double d = 2.0 * (pp.values[i] - pt.values[i]) / n;
      if (pp.requires_grad) pp.grad[i] += g * d;
      if (pt.requires_grad) pt.grad[i] -= g * d;
    }
  });
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits->shape.size() != 2)
    throw std::invalid_argument("cross_entropy: logits must be rank 2, got " +
                                shape_str(logits->shape));
  const int B = logits->shape[0], C = logits->shape[1];
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(B));
  for (int l : labels)
    if (l < 0 || l >= C) throw std::invalid_argument("cross_entropy: label out of range");

  auto probs = std::make_shared<std::vector<double>>(logits->size());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* x = logits->values.data() + static_cast<std::size_t>(b) * C;
    double mx = x[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(x[c] - mx);
    for (int c = 0; c < C; ++c)
      (*probs)[static_cast<std::size_t>(b) * C + c] = std::exp(x[c] - mx) / z;
    loss += mx + std::log(z) - x[labels[b]];
  }
  loss /= B;
  return make_op({1}, {loss}, "cross_entropy", {logits},
                 [probs, labels, B, C](TensorNode& self) {
                   TensorNode& p = *self.parents[0];
                   const double g = self.grad[0] / B;
                   for (int b = 0; b < B; ++b)
                     for (int c = 0; c < C; ++c) {
                       const std::size_t i = static_cast<std::size_t>(b) * C + c;
                       p.grad[i] += g * ((*probs)[i] - (labels[b] == c ? 1.0 : 0.0));
                     }
                 });
}

Tensor nt_xent_loss(const Tensor& embeddings, double temperature) {
  if (embeddings->shape.size() != 2)
    throw std::invalid_argument("nt_xent: embeddings must be rank 2, got " +
                                shape_str(embeddings->shape));
  const int R = embeddings->shape[0], D = embeddings->shape[1];
  if (R < 2 || R % 2 != 0)
    throw std::invalid_argument("nt_xent: need an even number (>=2) of rows, got " +
                                std::to_string(R));
  if (!(temperature > 0.0)) throw std::invalid_argument("nt_xent: temperature must be > 0");

  auto norms = std::make_shared<std::vector<double>>(R);
  auto zrows = std::make_shared<std::vector<double>>(embeddings->size());
  for (int i = 0; i < R; ++i) {
    const double* x = embeddings->values.data() + static_cast<std::size_t>(i) * D;
    double n2 = 0.0;
    for (int j = 0; j < D; ++j) n2 += x[j] * x[j];
    const double n = std::sqrt(n2);
    if (n == 0.0) throw std::invalid_argument("nt_xent: zero-norm embedding row " +
                                              std::to_string(i));
    (*norms)[i] = n;
    for (int j = 0; j < D; ++j) (*zrows)[static_cast<std::size_t>(i) * D + j] = x[j] / n;
  }
  // Cosine similarity matrix over normalized rows, scaled by temperature.
  auto sim = std::make_shared<std::vector<double>>(static_cast<std::size_t>(R) * R);
  {
    ConstMap Z(zrows->data(), R, D);
    MutMap S(sim->data(), R, R);
    S.noalias() = Z * Z.transpose() / temperature;
  }
  double loss = 0.0;
  for (int i = 0; i < R; ++i) {
    const double* s = sim->data() + static_cast<std::size_t>(i) * R;
    double mx = -1e300;
    for (int j = 0; j < R; ++j)
      if (j != i) mx = std::max(mx, s[j]);
    double z = 0.0;
    for (int j = 0; j < R; ++j)
      if (j != i) z += std::exp(s[j] - mx);
    loss += mx + std::log(z) - s[i ^ 1];
  }
  loss /= R;
  return make_op(
      {1}, {loss}, "nt_xent", {embeddings},
      [norms, zrows, sim, R, D, temperature](TensorNode& self) {
        TensorNode& p = *self.parents[0];
        const double g = self.grad[0] / R;
        // dL/dS: softmax over non-self entries minus the positive-pair onehot.
        std::vector<double> G(static_cast<std::size_t>(R) * R, 0.0);
        for (int i = 0; i < R; ++i) {
          const double* s = sim->data() + static_cast<std::size_t>(i) * R;
          double mx = -1e300;
          for (int j = 0; j < R; ++j)
            if (j != i) mx = std::max(mx, s[j]);
          double z = 0.0;
          for (int j = 0; j < R; ++j)
            if (j != i) z += std::exp(s[j] - mx);
          double* gi = G.data() + static_cast<std::size_t>(i) * R;
          for (int j = 0; j < R; ++j)
            if (j != i) gi[j] = g * std::exp(s[j] - mx) / z;
          gi[i ^ 1] -= g;
        }
        // dL/dZ = (G + G^T) Z / tau, then back through row normalization.
        std::vector<double> dz(static_cast<std::size_t>(R) * D);
        {
          ConstMap Gm(G.data(), R, R);
          ConstMap Z(zrows->data(), R, D);
          MutMap dZ(dz.data(), R, D);
          dZ.noalias() = (Gm + Gm.transpose()) * Z / temperature;
        }
        for (int i = 0; i < R; ++i) {
          const double* zi = zrows->data() + static_cast<std::size_t>(i) * D;
          const double* dzi = dz.data() + static_cast<std::size_t>(i) * D;
          double dot = 0.0;
          for (int j = 0; j < D; ++j) dot += zi[j] * dzi[j];
          double* dst = p.grad.data() + static_cast<std::size_t>(i) * D;
          for (int j = 0; j < D; ++j) dst[j] += (dzi[j] - zi[j] * dot) / (*norms)[i];
        }
      });
}

Tensor bce_with_logits_loss(const Tensor& logits, const std::vector<double>& targets) {
  const std::size_t B = logits->size();
  if (targets.size() != B)
    throw std::invalid_argument("bce_with_logits: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(B) + " logits");
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double x = logits->values[i], y = targets[i];
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<double>(B);
  return make_op({1}, {loss}, "bce_with_logits", {logits}, [targets](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    const double g = self.grad[0] / static_cast<double>(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
      p.grad[i] += g * (stable_sigmoid(p.values[i]) - targets[i]);
  });
}

void backward(const Tensor& loss) {
  if (!loss) throw std::invalid_argument("backward: null tensor");
  if (loss->size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss->shape));
  if (!loss->requires_grad) return;  // nothing in the graph wants gradients

  // Post-order over parents: ancestors land before their consumers, so a
  // reverse sweep visits every node after all of its downstream users. Owning
  // copies are kept here because releasing graph edges during the sweep would
  // otherwise destroy interior nodes still waiting for their turn.
  std::vector<Tensor> topo;
  std::unordered_set<TensorNode*> visited{loss.get()};
  std::vector<std::pair<Tensor, std::size_t>> stack{{loss, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor p = node->parents[next++];
      if (p->requires_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  loss->ensure_grad();
  loss->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* node = it->get();
    if (!node->backward_fn) continue;
    for (auto& p : node->parents)
      if (p->requires_grad) p->ensure_grad();
    node->backward_fn(*node);
    // Single-use tape: release this interior node's share of the graph.
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

void zero_grad(const std::vector<Tensor>& params) {
  for (const auto& p : params) p->grad.assign(p->values.size(), 0.0);
}

}  // namespace rndiff
