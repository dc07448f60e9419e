#include "fp/nd/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <memory>

namespace fp::nd {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;
using MapV = Eigen::Map<Eigen::VectorXd>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// cols [Cin*K, Lout]; cols[(c*K+k), o] = x[c, o*stride + k - pad] (0 outside).
void im2col(const double* x, int cin, int len, int k, int stride, int pad, int lout,
            double* cols) {
  for (int c = 0; c < cin; ++c) {
    const double* xc = x + static_cast<size_t>(c) * len;
    for (int kk = 0; kk < k; ++kk) {
      double* row = cols + (static_cast<size_t>(c) * k + kk) * lout;
      for (int o = 0; o < lout; ++o) {
        const int src = o * stride + kk - pad;
        row[o] = (src >= 0 && src < len) ? xc[src] : 0.0;
      }
    }
  }
}

// Scatter-add transpose of im2col.
void col2im_add(const double* cols, int cin, int len, int k, int stride, int pad, int lout,
                double* gx) {
  for (int c = 0; c < cin; ++c) {
    double* gc = gx + static_cast<size_t>(c) * len;
    for (int kk = 0; kk < k; ++kk) {
      const double* row = cols + (static_cast<size_t>(c) * k + kk) * lout;
      for (int o = 0; o < lout; ++o) {
        const int dst = o * stride + kk - pad;
        if (dst >= 0 && dst < len) gc[dst] += row[o];
      }
    }
  }
}

void split_last2(const Shape& s, const char* op, int64_t& batch, int& rows, int& cols) {
  if (s.size() < 2) throw ShapeError(std::string(op) + ": need rank >= 2, got " + shape_str(s));
  rows = s[s.size() - 2];
  cols = s[s.size() - 1];
  batch = 1;
  for (size_t i = 0; i + 2 < s.size(); ++i) batch *= s[i];
}

}  // namespace

int Tape::push(Array val, bool rg_, BackFn bw) {
  Node n;
  n.val = std::move(val);
  n.requires_grad = rg_;
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Array& Tape::gbuf(int i) {
  Node& n = node(i);
  if (!n.grad_alloc) {
    n.grad = Array(n.val.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

Var Tape::leaf(Array v_, bool requires_grad_) {
  return {push(std::move(v_), requires_grad_, nullptr)};
}

const Array& Tape::grad(Var var) {
  Node& n = node(var.i);
  if (!n.requires_grad) throw Error("grad: node does not require grad");
  if (!n.grad_alloc) {
    n.grad = Array(n.val.shape);  // untouched leaf: zeros
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (v(loss.i).numel() != 1)
    throw Error("backward: loss must be scalar, got " + shape_str(v(loss.i).shape));
  gbuf(loss.i).data[0] += 1.0;
  visits_ = 0;
  for (int i = loss.i; i >= 0; --i) {
    Node& n = node(i);
    if (!n.backward || !n.grad_alloc) continue;  // leaf, no-grad op, or off-path
    ++visits_;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  require_same_shape(v(a.i), v(b.i), "add");
  Array out = v(a.i);
  const Array& bv = v(b.i);
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] += bv.data[k];
  const bool r = rg(a.i) || rg(b.i);
  if (!r) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i, bi = b.i;
  return {push(std::move(out), true, [ai, bi](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            if (t.rg(ai)) axpy(1.0, g, t.gbuf(ai));
            if (t.rg(bi)) axpy(1.0, g, t.gbuf(bi));
          })};
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(v(a.i), v(b.i), "sub");
  Array out = v(a.i);
  const Array& bv = v(b.i);
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] -= bv.data[k];
  const bool r = rg(a.i) || rg(b.i);
  if (!r) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i, bi = b.i;
  return {push(std::move(out), true, [ai, bi](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            if (t.rg(ai)) axpy(1.0, g, t.gbuf(ai));
            if (t.rg(bi)) axpy(-1.0, g, t.gbuf(bi));
          })};
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(v(a.i), v(b.i), "mul");
  Array out = v(a.i);
  const Array& bv = v(b.i);
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] *= bv.data[k];
  const bool r = rg(a.i) || rg(b.i);
  if (!r) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i, bi = b.i;
  return {push(std::move(out), true, [ai, bi](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            if (t.rg(ai)) {
              Array& ga = t.gbuf(ai);
              const Array& vb = t.v(bi);
              for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k] * vb.data[k];
            }
            if (t.rg(bi)) {
              Array& gb = t.gbuf(bi);
              const Array& va = t.v(ai);
              for (size_t k = 0; k < g.data.size(); ++k) gb.data[k] += g.data[k] * va.data[k];
            }
          })};
}

Var Tape::scale(Var a, double s) {
  Array out = v(a.i);
  for (double& x : out.data) x *= s;
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai, s](Tape& t, int self) {
            axpy(s, t.node(self).grad, t.gbuf(ai));
          })};
}

Var Tape::add_scalar(Var a, double s) {
  Array out = v(a.i);
  for (double& x : out.data) x += s;
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai](Tape& t, int self) {
            axpy(1.0, t.node(self).grad, t.gbuf(ai));
          })};
}

// Shared shape for the simple unary ops: forward f(x), backward df given (x, y).
#define FP_UNARY_OP(NAME, FWD_EXPR, BWD_EXPR)                                       \
  Var Tape::NAME(Var a) {                                                           \
    Array out = v(a.i);                                                             \
    for (double& x : out.data) {                                                    \
      const double xv = x;                                                          \
      (void)xv;                                                                     \
      x = (FWD_EXPR);                                                               \
    }                                                                               \
    if (!rg(a.i)) return {push(std::move(out), false, nullptr)};                    \
    ++n_ops_;                                                                       \
    const int ai = a.i;                                                             \
    return {push(std::move(out), true, [ai](Tape& t, int self) {                    \
              const Array& g = t.node(self).grad;                                   \
              const Array& xa = t.v(ai);                                            \
              const Array& ya = t.v(self);                                          \
              (void)ya;                                                             \
              Array& ga = t.gbuf(ai);                                               \
              for (size_t k = 0; k < g.data.size(); ++k) {                          \
                const double xv = xa.data[k];                                       \
                const double yv = ya.data[k];                                       \
                (void)xv;                                                           \
                (void)yv;                                                           \
                ga.data[k] += g.data[k] * (BWD_EXPR);                               \
              }                                                                     \
            })};                                                                    \
  }

FP_UNARY_OP(square, xv * xv, 2.0 * xv)
FP_UNARY_OP(sqrt, std::sqrt(xv), 0.5 / yv)
FP_UNARY_OP(sin, std::sin(xv), std::cos(xv))
FP_UNARY_OP(cos, std::cos(xv), -std::sin(xv))
FP_UNARY_OP(relu, xv > 0.0 ? xv : 0.0, xv > 0.0 ? 1.0 : 0.0)
FP_UNARY_OP(silu, xv * sigmoid(xv), [&] {
  const double s = sigmoid(xv);
  return s * (1.0 + xv * (1.0 - s));
}())
FP_UNARY_OP(gelu, 0.5 * xv * (1.0 + std::erf(xv * kInvSqrt2)), [&] {
  const double cdf = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
  return cdf + xv * pdf;
}())

#undef FP_UNARY_OP

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double x : v(a.i).data) s += x;
  Array out = Array::scalar(s);
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai](Tape& t, int self) {
            const double g = t.node(self).grad.data[0];
            Array& ga = t.gbuf(ai);
            for (double& x : ga.data) x += g;
          })};
}

Var Tape::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(v(a.i).numel());
  double s = 0.0;
  for (double x : v(a.i).data) s += x;
  Array out = Array::scalar(s * inv);
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai, inv](Tape& t, int self) {
            const double g = t.node(self).grad.data[0] * inv;
            Array& ga = t.gbuf(ai);
            for (double& x : ga.data) x += g;
          })};
}

Var Tape::rowsum(Var a) {
  const Array& x = v(a.i);
  if (x.rank() < 1) throw ShapeError("rowsum: need rank >= 1");
  const int d = x.shape.back();
  const int64_t rows = x.numel() / d;
  Shape os = x.shape;
  os.back() = 1;
  Array out(os);
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += x.data[static_cast<size_t>(r) * d + j];
    out.data[static_cast<size_t>(r)] = s;
  }
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai, rows, d](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& ga = t.gbuf(ai);
            for (int64_t r = 0; r < rows; ++r) {
              const double gv = g.data[static_cast<size_t>(r)];
              for (int j = 0; j < d; ++j) ga.data[static_cast<size_t>(r) * d + j] += gv;
            }
          })};
}

// ---------------------------------------------------------------------------
// broadcast helpers
// ---------------------------------------------------------------------------

Var Tape::add_rows(Var x, Var r) {
  const Array& xv = v(x.i);
  const Array& rv = v(r.i);
  if (xv.rank() != 3 || rv.rank() != 2 || xv.shape[0] != rv.shape[0] ||
      xv.shape[2] != rv.shape[1])
    throw ShapeError("add_rows: want x [B,T,D] + r [B,D], got " + shape_str(xv.shape) +
                     " + " + shape_str(rv.shape));
  const int b = xv.shape[0], tt = xv.shape[1], d = xv.shape[2];
  Array out = xv;
  for (int bi = 0; bi < b; ++bi)
    for (int ti = 0; ti < tt; ++ti)
      for (int di = 0; di < d; ++di) out.at(bi, ti, di) += rv.at(bi, di);
  const bool req = rg(x.i) || rg(r.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, ri = r.i;
  return {push(std::move(out), true, [xi, ri, b, tt, d](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            if (t.rg(xi)) axpy(1.0, g, t.gbuf(xi));
            if (t.rg(ri)) {
              Array& gr = t.gbuf(ri);
              for (int bi = 0; bi < b; ++bi)
                for (int ti = 0; ti < tt; ++ti)
                  for (int di = 0; di < d; ++di) gr.at(bi, di) += g.at(bi, ti, di);
            }
          })};
}

Var Tape::add_bc(Var x, Var p) {
  const Array& xv = v(x.i);
  const Array& pv = v(p.i);
  if (xv.rank() != 3 || pv.rank() != 2 || xv.shape[1] != pv.shape[0] ||
      xv.shape[2] != pv.shape[1])
    throw ShapeError("add_bc: want x [B,T,D] + p [T,D], got " + shape_str(xv.shape) + " + " +
                     shape_str(pv.shape));
  const int b = xv.shape[0], tt = xv.shape[1], d = xv.shape[2];
  Array out = xv;
  for (int bi = 0; bi < b; ++bi)
    for (int ti = 0; ti < tt; ++ti)
      for (int di = 0; di < d; ++di) out.at(bi, ti, di) += pv.at(ti, di);
  const bool req = rg(x.i) || rg(p.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, pi = p.i;
  return {push(std::move(out), true, [xi, pi, b, tt, d](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            if (t.rg(xi)) axpy(1.0, g, t.gbuf(xi));
            if (t.rg(pi)) {
              Array& gp = t.gbuf(pi);
              for (int bi = 0; bi < b; ++bi)
                for (int ti = 0; ti < tt; ++ti)
                  for (int di = 0; di < d; ++di) gp.at(ti, di) += g.at(bi, ti, di);
            }
          })};
}

Var Tape::film(Var x, Var s, Var t_) {
  const Array& xv = v(x.i);
  const Array& sv = v(s.i);
  const Array& tv = v(t_.i);
  if (xv.rank() != 3 || sv.rank() != 2 || xv.shape[0] != sv.shape[0] ||
      xv.shape[1] != sv.shape[1])
    throw ShapeError("film: want x [B,C,L], s [B,C], got " + shape_str(xv.shape) + ", " +
                     shape_str(sv.shape));
  require_same_shape(sv, tv, "film");
  const int b = xv.shape[0], c = xv.shape[1], l = xv.shape[2];
  Array out(xv.shape);
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const double sc = 1.0 + sv.at(bi, ci);
      const double sh = tv.at(bi, ci);
      for (int li = 0; li < l; ++li) out.at(bi, ci, li) = xv.at(bi, ci, li) * sc + sh;
    }
  const bool req = rg(x.i) || rg(s.i) || rg(t_.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, si = s.i, ti = t_.i;
  return {push(std::move(out), true, [xi, si, ti, b, c, l](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            const Array& xa = t.v(xi);
            const Array& sa = t.v(si);
            if (t.rg(xi)) {
              Array& gx = t.gbuf(xi);
              for (int bi = 0; bi < b; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                  const double sc = 1.0 + sa.at(bi, ci);
                  for (int li = 0; li < l; ++li) gx.at(bi, ci, li) += g.at(bi, ci, li) * sc;
                }
            }
            if (t.rg(si)) {
              Array& gs = t.gbuf(si);
              for (int bi = 0; bi < b; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                  double acc = 0.0;
                  for (int li = 0; li < l; ++li) acc += g.at(bi, ci, li) * xa.at(bi, ci, li);
                  gs.at(bi, ci) += acc;
                }
            }
            if (t.rg(ti)) {
              Array& gt = t.gbuf(ti);
              for (int bi = 0; bi < b; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                  double acc = 0.0;
                  for (int li = 0; li < l; ++li) acc += g.at(bi, ci, li);
                  gt.at(bi, ci) += acc;
                }
            }
          })};
}

Var Tape::affine_cols(Var x, Array sc, Array off) {
  const Array& xv = v(x.i);
  const int d = xv.shape.back();
  if (sc.numel() != d || off.numel() != d)
    throw ShapeError("affine_cols: coefficient size must match last dim " + std::to_string(d));
  const int64_t rows = xv.numel() / d;
  Array out = xv;
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) {
      double& o = out.data[static_cast<size_t>(r) * d + j];
      o = o * sc.data[static_cast<size_t>(j)] + off.data[static_cast<size_t>(j)];
    }
  if (!rg(x.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i;
  auto scp = std::make_shared<Array>(std::move(sc));
  return {push(std::move(out), true, [xi, scp, rows, d](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& gx = t.gbuf(xi);
            for (int64_t r = 0; r < rows; ++r)
              for (int j = 0; j < d; ++j)
                gx.data[static_cast<size_t>(r) * d + j] +=
                    g.data[static_cast<size_t>(r) * d + j] * scp->data[static_cast<size_t>(j)];
          })};
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Var Tape::reshape(Var a, Shape s) {
  const Array& xv = v(a.i);
  if (numel_of(s) != xv.numel())
    throw ShapeError("reshape: cannot view " + shape_str(xv.shape) + " as " + shape_str(s));
  Array out(std::move(s), xv.data);
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& ga = t.gbuf(ai);
            for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k];
          })};
}

Var Tape::transpose_last2(Var a) {
  const Array& xv = v(a.i);
  int64_t batch;
  int m, n;
  split_last2(xv.shape, "transpose_last2", batch, m, n);
  Shape os = xv.shape;
  os[os.size() - 2] = n;
  os[os.size() - 1] = m;
  Array out(os);
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = xv.data.data() + b * m * n;
    double* dst = out.data.data() + b * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dst[static_cast<size_t>(j) * m + i] = src[static_cast<size_t>(i) * n + j];
  }
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai, batch, m, n](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& ga = t.gbuf(ai);
            for (int64_t b = 0; b < batch; ++b) {
              const double* gs = g.data.data() + b * m * n;
              double* gd = ga.data.data() + b * m * n;
              for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                  gd[static_cast<size_t>(i) * n + j] += gs[static_cast<size_t>(j) * m + i];
            }
          })};
}

Var Tape::perm0213(Var a) {
  const Array& xv = v(a.i);
  if (xv.rank() != 4) throw ShapeError("perm0213: need rank 4, got " + shape_str(xv.shape));
  const int A = xv.shape[0], B = xv.shape[1], C = xv.shape[2], D = xv.shape[3];
  Array out({A, C, B, D});
  for (int ia = 0; ia < A; ++ia)
    for (int ib = 0; ib < B; ++ib)
      for (int ic = 0; ic < C; ++ic) {
        const double* src = xv.data.data() + ((static_cast<size_t>(ia) * B + ib) * C + ic) * D;
        double* dst = out.data.data() + ((static_cast<size_t>(ia) * C + ic) * B + ib) * D;
        std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(D));
      }
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai, A, B, C, D](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& ga = t.gbuf(ai);
            for (int ia = 0; ia < A; ++ia)
              for (int ib = 0; ib < B; ++ib)
                for (int ic = 0; ic < C; ++ic) {
                  const double* gs =
                      g.data.data() + ((static_cast<size_t>(ia) * C + ic) * B + ib) * D;
                  double* gd =
                      ga.data.data() + ((static_cast<size_t>(ia) * B + ib) * C + ic) * D;
                  for (int id = 0; id < D; ++id) gd[id] += gs[id];
                }
          })};
}

namespace {
// Outer/inner block sizes around `axis` for contiguous slice copies.
void axis_blocks(const Shape& s, int axis, int64_t& outer, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace

Var Tape::narrow(Var a, int axis, int start, int len) {
  const Array& xv = v(a.i);
  if (axis < 0 || axis >= xv.rank()) throw ShapeError("narrow: bad axis");
  const int extent = xv.shape[static_cast<size_t>(axis)];
  if (start < 0 || len < 1 || start + len > extent)
    throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside extent " + std::to_string(extent));
  int64_t outer, inner;
  axis_blocks(xv.shape, axis, outer, inner);
  Shape os = xv.shape;
  os[static_cast<size_t>(axis)] = len;
  Array out(os);
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = xv.data.data() + (o * extent + start) * inner;
    double* dst = out.data.data() + o * len * inner;
    std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(len * inner));
  }
  if (!rg(a.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i;
  return {push(std::move(out), true, [ai, outer, inner, extent, start, len](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& ga = t.gbuf(ai);
            for (int64_t o = 0; o < outer; ++o) {
              const double* gs = g.data.data() + o * len * inner;
              double* gd = ga.data.data() + (o * extent + start) * inner;
              for (int64_t k = 0; k < len * inner; ++k) gd[k] += gs[k];
            }
          })};
}

Var Tape::concat(Var a, Var b, int axis) {
  const Array& av = v(a.i);
  const Array& bv = v(b.i);
  if (av.rank() != bv.rank()) throw ShapeError("concat: rank mismatch");
  if (axis < 0 || axis >= av.rank()) throw ShapeError("concat: bad axis");
  for (int i = 0; i < av.rank(); ++i)
    if (i != axis && av.shape[static_cast<size_t>(i)] != bv.shape[static_cast<size_t>(i)])
      throw ShapeError("concat: shape mismatch " + shape_str(av.shape) + " vs " +
                       shape_str(bv.shape));
  const int ea = av.shape[static_cast<size_t>(axis)];
  const int eb = bv.shape[static_cast<size_t>(axis)];
  int64_t outer, inner;
  axis_blocks(av.shape, axis, outer, inner);
  Shape os = av.shape;
  os[static_cast<size_t>(axis)] = ea + eb;
  Array out(os);
  for (int64_t o = 0; o < outer; ++o) {
    double* dst = out.data.data() + o * (ea + eb) * inner;
    std::memcpy(dst, av.data.data() + o * ea * inner, sizeof(double) * static_cast<size_t>(ea * inner));
    std::memcpy(dst + ea * inner, bv.data.data() + o * eb * inner,
                sizeof(double) * static_cast<size_t>(eb * inner));
  }
  const bool req = rg(a.i) || rg(b.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int ai = a.i, bi = b.i;
  return {push(std::move(out), true, [ai, bi, outer, inner, ea, eb](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            for (int64_t o = 0; o < outer; ++o) {
              const double* gs = g.data.data() + o * (ea + eb) * inner;
              if (t.rg(ai)) {
                double* gd = t.gbuf(ai).data.data() + o * ea * inner;
                for (int64_t k = 0; k < ea * inner; ++k) gd[k] += gs[k];
              }
              if (t.rg(bi)) {
                double* gd = t.gbuf(bi).data.data() + o * eb * inner;
                for (int64_t k = 0; k < eb * inner; ++k) gd[k] += gs[ea * inner + k];
              }
            }
          })};
}

Var Tape::upsample2(Var x) {
  const Array& xv = v(x.i);
  if (xv.rank() != 3) throw ShapeError("upsample2: need [B,C,L], got " + shape_str(xv.shape));
  const int b = xv.shape[0], c = xv.shape[1], l = xv.shape[2];
  Array out({b, c, 2 * l});
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci)
      for (int li = 0; li < l; ++li) {
        const double val = xv.at(bi, ci, li);
        out.at(bi, ci, 2 * li) = val;
        out.at(bi, ci, 2 * li + 1) = val;
      }
  if (!rg(x.i)) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i;
  return {push(std::move(out), true, [xi, b, c, l](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            Array& gx = t.gbuf(xi);
            for (int bi = 0; bi < b; ++bi)
              for (int ci = 0; ci < c; ++ci)
                for (int li = 0; li < l; ++li)
                  gx.at(bi, ci, li) += g.at(bi, ci, 2 * li) + g.at(bi, ci, 2 * li + 1);
          })};
}

// ---------------------------------------------------------------------------
// neural kernels
// ---------------------------------------------------------------------------

Var Tape::linear(Var x, Var w, Var b) {
  const Array& xv = v(x.i);
  const Array& wv = v(w.i);
  const Array& bv = v(b.i);
  if (wv.rank() != 2) throw ShapeError("linear: weight must be [Dout,Din]");
  const int dout = wv.shape[0], din = wv.shape[1];
  if (xv.shape.back() != din)
    throw ShapeError("linear: input last dim " + std::to_string(xv.shape.back()) +
                     " != weight Din " + std::to_string(din));
  if (bv.numel() != dout) throw ShapeError("linear: bias size != Dout");
  const int64_t rows = xv.numel() / din;
  Shape os = xv.shape;
  os.back() = dout;
  Array out(os);
  {
    CMapM X(xv.data.data(), rows, din);
    CMapM W(wv.data.data(), dout, din);
    MapM Y(out.data.data(), rows, dout);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += CMapV(bv.data.data(), dout).transpose();
  }
  const bool req = rg(x.i) || rg(w.i) || rg(b.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, wi = w.i, bi = b.i;
  return {push(std::move(out), true, [xi, wi, bi, rows, din, dout](Tape& t, int self) {
            CMapM G(t.node(self).grad.data.data(), rows, dout);
            if (t.rg(xi)) {
              CMapM W(t.v(wi).data.data(), dout, din);
              MapM GX(t.gbuf(xi).data.data(), rows, din);
              GX.noalias() += G * W;
            }
            if (t.rg(wi)) {
              CMapM X(t.v(xi).data.data(), rows, din);
              MapM GW(t.gbuf(wi).data.data(), dout, din);
              GW.noalias() += G.transpose() * X;
            }
            if (t.rg(bi)) {
              // Fixed-order column sums; the Eigen redux is evaluated
              // scalar-or-packet per output coefficient depending on the
              // destination address, which varies with heap layout.
              double* gb = t.gbuf(bi).data.data();
              const double* gr = t.node(self).grad.data.data();
              for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < dout; ++j)
                  gb[j] += gr[static_cast<size_t>(r) * dout + j];
            }
          })};
}

Var Tape::conv1d(Var x, Var w, Var b, int stride, int padding) {
  const Array& wv = v(w.i);
  if (wv.rank() != 3) throw ShapeError("conv1d: weight must be [Cout,Cin,K]");
  const int cout = wv.shape[0], cin = wv.shape[1], k = wv.shape[2];
  if (padding < 0) {
    if (k % 2 == 0) throw ShapeError("conv1d: default padding requires odd K");
    padding = (k - 1) / 2;
  }
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  const Array& xv0 = v(x.i);
  const bool batched = xv0.rank() == 3;
  if (!batched && xv0.rank() != 2)
    throw ShapeError("conv1d: input must be [Cin,L] or [B,Cin,L], got " + shape_str(xv0.shape));
  const int bsz = batched ? xv0.shape[0] : 1;
  const int xc = batched ? xv0.shape[1] : xv0.shape[0];
  const int len = batched ? xv0.shape[2] : xv0.shape[1];
  if (xc != cin)
    throw ShapeError("conv1d: input channels " + std::to_string(xc) + " != weight Cin " +
                     std::to_string(cin));
  if (v(b.i).numel() != cout) throw ShapeError("conv1d: bias size != Cout");
  const int lout = (len + 2 * padding - k) / stride + 1;
  if (lout < 1) throw ShapeError("conv1d: output length < 1");

  Shape os = batched ? Shape{bsz, cout, lout} : Shape{cout, lout};
  Array out(os);
  std::vector<double> cols(static_cast<size_t>(cin) * k * lout);
  {
    CMapM W(wv.data.data(), cout, cin * k);
    const Array& bv = v(b.i);
    for (int bi = 0; bi < bsz; ++bi) {
      im2col(xv0.data.data() + static_cast<size_t>(bi) * cin * len, cin, len, k, stride,
             padding, lout, cols.data());
      CMapM C(cols.data(), cin * k, lout);
      MapM Y(out.data.data() + static_cast<size_t>(bi) * cout * lout, cout, lout);
      Y.noalias() = W * C;
      Y.colwise() += CMapV(bv.data.data(), cout);
    }
  }
  const bool req = rg(x.i) || rg(w.i) || rg(b.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, wi = w.i, bi_ = b.i;
  return {push(std::move(out), true,
               [xi, wi, bi_, bsz, cin, cout, k, len, lout, stride, padding](Tape& t, int self) {
                 const Array& g = t.node(self).grad;
                 const Array& xa = t.v(xi);
                 CMapM W(t.v(wi).data.data(), cout, cin * k);
                 std::vector<double> cols(static_cast<size_t>(cin) * k * lout);
                 std::vector<double> gcols(static_cast<size_t>(cin) * k * lout);
                 for (int bb = 0; bb < bsz; ++bb) {
                   CMapM G(g.data.data() + static_cast<size_t>(bb) * cout * lout, cout, lout);
                   if (t.rg(wi) || t.rg(xi))
                     im2col(xa.data.data() + static_cast<size_t>(bb) * cin * len, cin, len, k,
                            stride, padding, lout, cols.data());
                   if (t.rg(wi)) {
                     CMapM C(cols.data(), cin * k, lout);
                     MapM GW(t.gbuf(wi).data.data(), cout, cin * k);
                     GW.noalias() += G * C.transpose();
                   }
                   if (t.rg(bi_)) {
                     // Fixed-order row sums: Eigen's vectorized redux splits
                     // head/tail by the buffer's address, so its bits change
                     // with heap layout (and resumed runs must reproduce
                     // direct runs exactly).
                     double* gb = t.gbuf(bi_).data.data();
                     const double* gr = g.data.data() + static_cast<size_t>(bb) * cout * lout;
                     for (int c = 0; c < cout; ++c) {
                       double acc = 0.0;
                       for (int l = 0; l < lout; ++l) acc += gr[static_cast<size_t>(c) * lout + l];
                       gb[c] += acc;
                     }
                   }
                   if (t.rg(xi)) {
                     MapM GC(gcols.data(), cin * k, lout);
                     GC.noalias() = W.transpose() * G;
                     col2im_add(gcols.data(), cin, len, k, stride, padding, lout,
                                t.gbuf(xi).data.data() + static_cast<size_t>(bb) * cin * len);
                   }
                 }
               })};
}

Var Tape::group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
  const Array& xv = v(x.i);
  const bool batched = xv.rank() == 3;
  if (!batched && xv.rank() != 2)
    throw ShapeError("group_norm: input must be [C,L] or [B,C,L], got " + shape_str(xv.shape));
  const int bsz = batched ? xv.shape[0] : 1;
  const int c = batched ? xv.shape[1] : xv.shape[0];
  const int l = batched ? xv.shape[2] : xv.shape[1];
  if (groups < 1 || c % groups != 0)
    throw ConfigError("group_norm: channels " + std::to_string(c) + " not divisible by groups " +
                      std::to_string(groups));
  if (v(gamma.i).numel() != c || v(beta.i).numel() != c)
    throw ShapeError("group_norm: gamma/beta must be [C]");
  const int cg = c / groups;
  const int64_t gsz = static_cast<int64_t>(cg) * l;

  Array out(xv.shape);
  // Saved per (batch, group): mean and inv-std, needed by backward.
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(bsz) * groups * 2);
  const Array& gam = v(gamma.i);
  const Array& bet = v(beta.i);
  for (int bb = 0; bb < bsz; ++bb)
    for (int gg = 0; gg < groups; ++gg) {
      const double* xp = xv.data.data() + (static_cast<size_t>(bb) * c + gg * cg) * l;
      double m = 0.0;
      for (int64_t j = 0; j < gsz; ++j) m += xp[j];
      m /= static_cast<double>(gsz);
      double var = 0.0;
      for (int64_t j = 0; j < gsz; ++j) {
        const double d = xp[j] - m;
        var += d * d;
      }
      var /= static_cast<double>(gsz);
      const double is = 1.0 / std::sqrt(var + eps);
      (*stats)[(static_cast<size_t>(bb) * groups + gg) * 2] = m;
      (*stats)[(static_cast<size_t>(bb) * groups + gg) * 2 + 1] = is;
      double* op = out.data.data() + (static_cast<size_t>(bb) * c + gg * cg) * l;
      for (int cc = 0; cc < cg; ++cc) {
        const double ga = gam.data[static_cast<size_t>(gg) * cg + cc];
        const double be = bet.data[static_cast<size_t>(gg) * cg + cc];
        for (int li = 0; li < l; ++li) {
          const int64_t j = static_cast<int64_t>(cc) * l + li;
          op[j] = (xp[j] - m) * is * ga + be;
        }
      }
    }
  const bool req = rg(x.i) || rg(gamma.i) || rg(beta.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, gi = gamma.i, bi = beta.i;
  return {push(std::move(out), true,
               [xi, gi, bi, stats, bsz, groups, cg, l, c, gsz](Tape& t, int self) {
                 const Array& g = t.node(self).grad;
                 const Array& xa = t.v(xi);
                 const Array& gam = t.v(gi);
                 const double inv_n = 1.0 / static_cast<double>(gsz);
                 for (int bb = 0; bb < bsz; ++bb)
                   for (int gg = 0; gg < groups; ++gg) {
                     const double m = (*stats)[(static_cast<size_t>(bb) * groups + gg) * 2];
                     const double is = (*stats)[(static_cast<size_t>(bb) * groups + gg) * 2 + 1];
                     const size_t base = (static_cast<size_t>(bb) * c + gg * cg) * l;
                     const double* xp = xa.data.data() + base;
                     const double* gp = g.data.data() + base;
                     // dxhat plus the two group-mean correction terms.
                     if (t.rg(xi)) {
                       double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                       for (int cc = 0; cc < cg; ++cc) {
                         const double ga = gam.data[static_cast<size_t>(gg) * cg + cc];
                         for (int li = 0; li < l; ++li) {
                           const int64_t j = static_cast<int64_t>(cc) * l + li;
                           const double xh = (xp[j] - m) * is;
                           const double dxh = gp[j] * ga;
                           sum_dxh += dxh;
                           sum_dxh_xh += dxh * xh;
                         }
                       }
                       double* gx = t.gbuf(xi).data.data() + base;
                       for (int cc = 0; cc < cg; ++cc) {
                         const double ga = gam.data[static_cast<size_t>(gg) * cg + cc];
                         for (int li = 0; li < l; ++li) {
                           const int64_t j = static_cast<int64_t>(cc) * l + li;
                           const double xh = (xp[j] - m) * is;
                           const double dxh = gp[j] * ga;
                           gx[j] += is * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh);
                         }
                       }
                     }
                     if (t.rg(gi)) {
                       Array& gga = t.gbuf(gi);
                       for (int cc = 0; cc < cg; ++cc) {
                         double acc = 0.0;
                         for (int li = 0; li < l; ++li) {
                           const int64_t j = static_cast<int64_t>(cc) * l + li;
                           acc += gp[j] * (xp[j] - m) * is;
                         }
                         gga.data[static_cast<size_t>(gg) * cg + cc] += acc;
                       }
                     }
                     if (t.rg(bi)) {
                       Array& gbe = t.gbuf(bi);
                       for (int cc = 0; cc < cg; ++cc) {
                         double acc = 0.0;
                         for (int li = 0; li < l; ++li)
                           acc += gp[static_cast<int64_t>(cc) * l + li];
                         gbe.data[static_cast<size_t>(gg) * cg + cc] += acc;
                       }
                     }
                   }
               })};
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Array& xv = v(x.i);
  const int d = xv.shape.back();
  if (v(gamma.i).numel() != d || v(beta.i).numel() != d)
    throw ShapeError("layer_norm: gamma/beta must match last dim " + std::to_string(d));
  const int64_t rows = xv.numel() / d;
  Array out(xv.shape);
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * 2);
  const Array& gam = v(gamma.i);
  const Array& bet = v(beta.i);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xp = xv.data.data() + r * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xp[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dv = xp[j] - m;
      var += dv * dv;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(r) * 2] = m;
    (*stats)[static_cast<size_t>(r) * 2 + 1] = is;
    double* op = out.data.data() + r * d;
    for (int j = 0; j < d; ++j)
      op[j] = (xp[j] - m) * is * gam.data[static_cast<size_t>(j)] + bet.data[static_cast<size_t>(j)];
  }
  const bool req = rg(x.i) || rg(gamma.i) || rg(beta.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int xi = x.i, gi = gamma.i, bi = beta.i;
  return {push(std::move(out), true, [xi, gi, bi, stats, rows, d](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            const Array& xa = t.v(xi);
            const Array& gam = t.v(gi);
            const double inv_n = 1.0 / d;
            for (int64_t r = 0; r < rows; ++r) {
              const double m = (*stats)[static_cast<size_t>(r) * 2];
              const double is = (*stats)[static_cast<size_t>(r) * 2 + 1];
              const double* xp = xa.data.data() + r * d;
              const double* gp = g.data.data() + r * d;
              if (t.rg(xi)) {
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int j = 0; j < d; ++j) {
                  const double xh = (xp[j] - m) * is;
                  const double dxh = gp[j] * gam.data[static_cast<size_t>(j)];
                  sum_dxh += dxh;
                  sum_dxh_xh += dxh * xh;
                }
                double* gx = t.gbuf(xi).data.data() + r * d;
                for (int j = 0; j < d; ++j) {
                  const double xh = (xp[j] - m) * is;
                  const double dxh = gp[j] * gam.data[static_cast<size_t>(j)];
                  gx[j] += is * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh);
                }
              }
              if (t.rg(gi)) {
                Array& gga = t.gbuf(gi);
                for (int j = 0; j < d; ++j)
                  gga.data[static_cast<size_t>(j)] += gp[j] * (xp[j] - m) * is;
              }
              if (t.rg(bi)) {
                Array& gbe = t.gbuf(bi);
                for (int j = 0; j < d; ++j) gbe.data[static_cast<size_t>(j)] += gp[j];
              }
            }
          })};
}

Var Tape::attention(Var q, Var k, Var v_) {
  const Array& qv = v(q.i);
  require_same_shape(qv, v(k.i), "attention(q,k)");
  require_same_shape(qv, v(v_.i), "attention(q,v)");
  const bool flat = qv.rank() == 2;  // [T,D] => one batch, one head
  if (!flat && qv.rank() != 4)
    throw ShapeError("attention: want [T,D] or [B,H,T,Dh], got " + shape_str(qv.shape));
  const int64_t bh = flat ? 1 : static_cast<int64_t>(qv.shape[0]) * qv.shape[1];
  const int tt = flat ? qv.shape[0] : qv.shape[2];
  const int dh = flat ? qv.shape[1] : qv.shape[3];
  const double isq = 1.0 / std::sqrt(static_cast<double>(dh));

  Array out(qv.shape);
  // Softmax rows saved for backward: [bh, T, T].
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(bh) * tt * tt);
  {
    const Array& kv = v(k.i);
    const Array& vv = v(v_.i);
    MatRM S(tt, tt);
    for (int64_t b = 0; b < bh; ++b) {
      CMapM Q(qv.data.data() + b * tt * dh, tt, dh);
      CMapM K(kv.data.data() + b * tt * dh, tt, dh);
      CMapM V(vv.data.data() + b * tt * dh, tt, dh);
      S.noalias() = Q * K.transpose() * isq;
      MapM P(probs->data() + b * tt * tt, tt, tt);
      for (int i = 0; i < tt; ++i) {
        const double mx = S.row(i).maxCoeff();
        if (!std::isfinite(mx))
          throw NumericError("attention: non-finite logits at row " + std::to_string(i));
        double z = 0.0;
        for (int j = 0; j < tt; ++j) {
          const double e = std::exp(S(i, j) - mx);
          P(i, j) = e;
          z += e;
        }
        P.row(i) /= z;
      }
      MapM O(out.data.data() + b * tt * dh, tt, dh);
      O.noalias() = P * V;
    }
  }
  const bool req = rg(q.i) || rg(k.i) || rg(v_.i);
  if (!req) return {push(std::move(out), false, nullptr)};
  ++n_ops_;
  const int qi = q.i, ki = k.i, vi = v_.i;
  return {push(std::move(out), true, [qi, ki, vi, probs, bh, tt, dh, isq](Tape& t, int self) {
            const Array& g = t.node(self).grad;
            MatRM GP(tt, tt), GS(tt, tt);
            for (int64_t b = 0; b < bh; ++b) {
              CMapM G(g.data.data() + b * tt * dh, tt, dh);
              CMapM P(probs->data() + b * tt * tt, tt, tt);
              CMapM Q(t.v(qi).data.data() + b * tt * dh, tt, dh);
              CMapM K(t.v(ki).data.data() + b * tt * dh, tt, dh);
              CMapM V(t.v(vi).data.data() + b * tt * dh, tt, dh);
              if (t.rg(vi)) {
                MapM GV(t.gbuf(vi).data.data() + b * tt * dh, tt, dh);
                GV.noalias() += P.transpose() * G;
              }
              if (t.rg(qi) || t.rg(ki)) {
                GP.noalias() = G * V.transpose();
                // softmax backward per row: gS = P ∘ (gP - rowsum(gP ∘ P))
                for (int i = 0; i < tt; ++i) {
                  const double dot = GP.row(i).dot(P.row(i));
                  GS.row(i) = P.row(i).cwiseProduct((GP.row(i).array() - dot).matrix());
                }
                if (t.rg(qi)) {
                  MapM GQ(t.gbuf(qi).data.data() + b * tt * dh, tt, dh);
                  GQ.noalias() += GS * K * isq;
                }
                if (t.rg(ki)) {
                  MapM GK(t.gbuf(ki).data.data() + b * tt * dh, tt, dh);
                  GK.noalias() += GS.transpose() * Q * isq;
                }
              }
            }
          })};
}

}  // namespace fp::nd
