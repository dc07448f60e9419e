#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "fp/nd/array.hpp"

namespace fp::nd {

/// Handle to a node on a Tape. Plain index; valid only for the tape that
/// produced it.
struct Var {
  int i = -1;
  bool ok() const { return i >= 0; }
};

/// Records primitive ops in topological order and runs reverse-mode
/// differentiation. One tape per training step / guidance evaluation;
/// parameters live outside the tape and are registered as leaves.
///
/// Ops record a backward closure only when some input requires grad, so
/// inference-mode forwards pay no taping cost beyond value storage.
class Tape {
 public:
  // -- leaves --------------------------------------------------------------
  Var leaf(Array v, bool requires_grad = true);
  Var constant(Array v) { return leaf(std::move(v), false); }

  // -- elementwise ---------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);          // Hadamard
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }
  Var square(Var a);
  Var sqrt(Var a);                // domain: val >= 0; grad unguarded at 0
  Var sin(Var a);
  Var cos(Var a);
  Var relu(Var a);
  Var silu(Var a);
  Var gelu(Var a);                // exact erf form

  // -- reductions ----------------------------------------------------------
  Var sum(Var a);                 // -> [1]
  Var mean(Var a);                // -> [1]
  Var rowsum(Var a);              // [.., D] -> [.., 1] (sum over last axis)

  // -- broadcast helpers (explicit, no general broadcasting) ----------------
  Var add_rows(Var x, Var r);     // x [B,T,D] + r [B,D], broadcast over T
  Var add_bc(Var x, Var p);       // x [B,T,D] + p [T,D], broadcast over B
  Var film(Var x, Var s, Var t);  // x [B,C,L] * (1 + s[B,C]) + t[B,C]
  // Per-column affine with constant coefficients: out[..,d] = x[..,d]*sc[d]+off[d].
  Var affine_cols(Var x, Array sc, Array off);

  // -- shape ---------------------------------------------------------------
  Var reshape(Var a, Shape s);
  Var transpose_last2(Var a);     // [.., M, N] -> [.., N, M]
  Var perm0213(Var a);            // [A,B,C,D] -> [A,C,B,D]
  Var narrow(Var a, int axis, int start, int len);
  Var concat(Var a, Var b, int axis);

  // -- neural kernels --------------------------------------------------------
  // x [N,Din] or [B,T,Din]; w [Dout,Din]; b [Dout].
  Var linear(Var x, Var w, Var b);
  // x [Cin,L] or [B,Cin,L]; w [Cout,Cin,K]; b [Cout]; padding -1 => (K-1)/2.
  Var conv1d(Var x, Var w, Var b, int stride = 1, int padding = -1);
  // x [C,L] or [B,C,L]; gamma/beta [C]. Per-group zero mean / unit variance.
  Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
  // x [..,D]; gamma/beta [D]. Normalizes over the last axis.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  // q,k,v [T,D] or [B,H,T,Dh]; softmax(q kᵀ / sqrt(Dh)) v, full attention.
  Var attention(Var q, Var k, Var v);
  Var upsample2(Var x);           // [B,C,L] -> [B,C,2L], nearest neighbor

  // -- reverse pass ----------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and sweeps recorded ops in reverse topological
  // order. Each contributing op's closure runs exactly once; fan-out
  // accumulates into parent grads by +=.
  void backward(Var loss);

  const Array& val(Var v) const { return node(v.i).val; }
  /// Gradient of the last backward() w.r.t. v. Untouched requires-grad
  /// leaves yield zeros. Error if v never required grad.
  const Array& grad(Var v);
  bool requires_grad(Var v) const { return node(v.i).requires_grad; }

  size_t size() const { return nodes_.size(); }
  size_t n_ops() const { return n_ops_; }
  /// Number of op closures invoked by the last backward().
  int64_t backward_visits() const { return visits_; }

 private:
  friend struct TapeKernels;
  using BackFn = std::function<void(Tape&, int self)>;

  struct Node {
    Array val;
    Array grad;                 // allocated lazily on first accumulation
    bool requires_grad = false;
    bool grad_alloc = false;
    BackFn backward;            // empty for leaves and no-grad ops
  };

  int push(Array val, bool rg, BackFn bw);
  Node& node(int i) { return nodes_[static_cast<size_t>(i)]; }
  const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  const Array& v(int i) const { return nodes_[static_cast<size_t>(i)].val; }
  bool rg(int i) const { return nodes_[static_cast<size_t>(i)].requires_grad; }
  /// Grad buffer for accumulation; allocates zeros on first touch.
  Array& gbuf(int i);

  // Deque so references returned by val()/grad() stay valid while the tape
  // grows (callers interleave reads with new ops).
  std::deque<Node> nodes_;
  size_t n_ops_ = 0;            // non-leaf nodes
  int64_t visits_ = 0;
};

}  // namespace fp::nd
