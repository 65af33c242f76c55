#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
// Ops take the tape explicitly; a tensor participates in backward only
// after Tape::watch() (leaves) or when produced by a recorded op.
// Training runs in float, gradient verification in double.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dhan/error.hpp"

namespace dhan {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> values;
  bool requires_grad = false;
  int node = -1;           // node id on the tape identified by tape_id
  std::uint64_t tape_id = 0;

  TensorT() = default;

  int numel() const {
    int n = 1;
    for (int e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  S& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }

  static TensorT zeros(std::vector<int> shape) {
    TensorT t;
    t.shape = std::move(shape);
    for (int e : t.shape)
      if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(t.shape));
    t.values.assign(static_cast<size_t>(t.numel()), S(0));
    return t;
  }
  static TensorT from(std::vector<int> shape, std::vector<S> v) {
    TensorT t;
    t.shape = std::move(shape);
    if (static_cast<int>(v.size()) != t.numel())
      throw ShapeError("value count " + std::to_string(v.size()) + " does not match shape " +
                       shape_str(t.shape));
    t.values = std::move(v);
    return t;
  }
  static TensorT scalar(S v) { return from({1}, {v}); }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---------------------------------------------------------------------------
// Tape

template <class S>
class TapeT {
 public:
  bool recording = true;

  TapeT() : id_(next_id_.fetch_add(1, std::memory_order_relaxed) + 1) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  std::uint64_t id() const { return id_; }
  bool empty() const { return nodes_.empty(); }
  size_t size() const { return nodes_.size(); }

  // Registers a differentiable leaf (parameter). Grad starts at zero.
  int watch(TensorT<S>& t) {
    t.requires_grad = true;
    t.node = record(t.numel());
    t.tape_id = id_;
    return t.node;
  }

  int record(int numel) {
    nodes_.push_back(Node{std::vector<S>(static_cast<size_t>(numel), S(0)), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }
  void set_backward(int id, std::function<void(TapeT&)> fn) { nodes_[id].back = std::move(fn); }

  std::vector<S>& grad(int id) { return nodes_[id].grad; }
  const std::vector<S>& grad(int id) const { return nodes_[id].grad; }

  const std::vector<S>& grad_of(const TensorT<S>& t) const {
    if (t.node < 0 || t.tape_id != id_)
      throw ContractError("grad_of: tensor is not recorded on this tape");
    return nodes_[t.node].grad;
  }

  // Reverse sweep in exact reverse recording order. Leaves accumulate their
  // gradients; unused watched tensors keep a zero gradient.
  void backward(const TensorT<S>& loss) {
    if (nodes_.empty()) throw ContractError("backward: tape is empty");
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape));
    if (loss.node < 0 || loss.tape_id != id_)
      throw ContractError("backward: loss is not recorded on this tape");
    nodes_[loss.node].grad[0] = S(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this);
  }

 private:
  struct Node {
    std::vector<S> grad;
    std::function<void(TapeT&)> back;
  };
  std::vector<Node> nodes_;
  std::uint64_t id_;
  static inline std::atomic<std::uint64_t> next_id_{0};
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// ---------------------------------------------------------------------------
// Op plumbing

namespace detail {

template <class S>
void check_finite(const TensorT<S>& t, const char* op) {
  for (S v : t.values)
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in result");
}

template <class S>
void require_tracked(const TapeT<S>& tape, const TensorT<S>& t, const char* op) {
  if (t.requires_grad && (t.node < 0 || t.tape_id != tape.id()))
    throw ContractError(std::string(op) +
                        ": input requires grad but is not on the active tape; "
                        "watch() parameters before use");
}

template <class S>
bool should_record(const TapeT<S>& tape, std::initializer_list<const TensorT<S>*> ins,
                   const char* op) {
  bool any = false;
  for (const TensorT<S>* t : ins) any = any || t->requires_grad;
  if (!any || !tape.recording) return false;
  for (const TensorT<S>* t : ins) require_tracked(tape, *t, op);
  return true;
}

// C[m x n] += A[m x k] * B[k x n]
template <class S>
void gemm_nn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const S aip = a[i * k + p];
      if (aip == S(0)) continue;
      const S* brow = b + p * n;
      S* crow = c + i * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
}

// C[m x k] += G[m x n] * B[k x n]^T
template <class S>
void gemm_nt_acc(const S* g, const S* b, S* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) {
      S acc = S(0);
      const S* grow = g + i * n;
      const S* brow = b + j * n;
      for (int p = 0; p < n; ++p) acc += grow[p] * brow[p];
      c[i * k + j] += acc;
    }
}

// C[k x n] += A[m x k]^T * G[m x n]
template <class S>
void gemm_tn_acc(const S* a, const S* g, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) {
      const S aij = a[i * k + j];
      if (aij == S(0)) continue;
      const S* grow = g + i * n;
      S* crow = c + j * n;
      for (int p = 0; p < n; ++p) crow[p] += aij * grow[p];
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

template <class S>
TensorT<S> matmul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  TensorT<S> out = TensorT<S>::zeros({m, n});
  detail::gemm_nn_acc(a.values.data(), b.values.data(), out.values.data(), m, k, n);
  detail::check_finite(out, "matmul");
  out.requires_grad = a.requires_grad || b.requires_grad;
  if (detail::should_record(tape, {&a, &b}, "matmul")) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    const int an = a.requires_grad ? a.node : -1;
    const int bn = b.requires_grad ? b.node : -1;
    tape.set_backward(oid, [oid, an, bn, m, k, n, av = a.values,
                            bv = b.values](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      if (an >= 0) detail::gemm_nt_acc(g.data(), bv.data(), tp.grad(an).data(), m, n, k);
      if (bn >= 0) detail::gemm_tn_acc(av.data(), g.data(), tp.grad(bn).data(), m, k, n);
    });
  }
  return out;
}

namespace detail {

enum class PwKind { add, sub, mul };
enum class Bcast { same, row, scalar };

template <class S>
Bcast broadcast_mode(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (a.shape == b.shape) return Bcast::same;
  if (b.numel() == 1) return Bcast::scalar;
  if (a.shape.size() == 2 && b.numel() == a.shape[1] &&
      (b.shape.size() == 1 || (b.shape.size() == 2 && b.shape[0] == 1)))
    return Bcast::row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " +
                   shape_str(b.shape));
}

template <class S>
TensorT<S> pointwise(TapeT<S>& tape, PwKind kind, const TensorT<S>& a, const TensorT<S>& b) {
  const char* name = kind == PwKind::add ? "add" : kind == PwKind::sub ? "sub" : "mul";
  const Bcast bc = broadcast_mode(a, b, name);
  const int n = a.numel();
  const int c = a.cols();
  TensorT<S> out = a;
  out.node = -1;
  out.tape_id = 0;
  for (int i = 0; i < n; ++i) {
    const S bi = bc == Bcast::same ? b.values[i] : bc == Bcast::scalar ? b.values[0] : b.values[i % c];
    S& o = out.values[i];
    switch (kind) {
      case PwKind::add: o += bi; break;
      case PwKind::sub: o -= bi; break;
      case PwKind::mul: o *= bi; break;
    }
  }
  check_finite(out, name);
  out.requires_grad = a.requires_grad || b.requires_grad;
  if (should_record(tape, {&a, &b}, name)) {
    const int oid = tape.record(n);
    out.node = oid;
    out.tape_id = tape.id();
    const int an = a.requires_grad ? a.node : -1;
    const int bn = b.requires_grad ? b.node : -1;
    // mul needs both operand values; add/sub need none.
    std::vector<S> av = kind == PwKind::mul && bn >= 0 ? a.values : std::vector<S>{};
    std::vector<S> bv = kind == PwKind::mul && an >= 0 ? b.values : std::vector<S>{};
    tape.set_backward(oid, [oid, an, bn, n, c, bc, kind, av = std::move(av),
                            bv = std::move(bv)](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      if (an >= 0) {
        std::vector<S>& da = tp.grad(an);
        for (int i = 0; i < n; ++i) {
          const S gi = kind == PwKind::mul
                           ? g[i] * (bc == Bcast::same ? bv[i]
                                     : bc == Bcast::scalar ? bv[0]
                                                           : bv[i % c])
                           : g[i];
          da[i] += gi;
        }
      }
      if (bn >= 0) {
        std::vector<S>& db = tp.grad(bn);
        const S sign = kind == PwKind::sub ? S(-1) : S(1);
        for (int i = 0; i < n; ++i) {
          const S gi = kind == PwKind::mul ? g[i] * av[i] : sign * g[i];
          const int bi = bc == Bcast::same ? i : bc == Bcast::scalar ? 0 : i % c;
          db[bi] += gi;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

template <class S>
TensorT<S> add(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  return detail::pointwise(tape, detail::PwKind::add, a, b);
}
template <class S>
TensorT<S> sub(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  return detail::pointwise(tape, detail::PwKind::sub, a, b);
}
template <class S>
TensorT<S> mul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  return detail::pointwise(tape, detail::PwKind::mul, a, b);
}
template <class S>
TensorT<S> add(TapeT<S>& tape, const TensorT<S>& a, S c) {
  return add(tape, a, TensorT<S>::scalar(c));
}
template <class S>
TensorT<S> scale(TapeT<S>& tape, const TensorT<S>& a, S c) {
  return mul(tape, a, TensorT<S>::scalar(c));
}

namespace detail {

template <class S, class Fwd, class Bwd>
TensorT<S> unary(TapeT<S>& tape, const TensorT<S>& a, const char* name, Fwd fwd, Bwd make_back) {
  TensorT<S> out = a;
  out.node = -1;
  out.tape_id = 0;
  for (S& v : out.values) v = fwd(v);
  check_finite(out, name);
  out.requires_grad = a.requires_grad;
  if (should_record(tape, {&a}, name)) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, make_back(oid, a.node, a.values, out.values));
  }
  return out;
}

}  // namespace detail

template <class S>
TensorT<S> sigmoid(TapeT<S>& tape, const TensorT<S>& a) {
  return detail::unary(
      tape, a, "sigmoid",
      [](S v) { return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v)); },
      [](int oid, int an, const std::vector<S>&, const std::vector<S>& y) {
        return [oid, an, y](TapeT<S>& tp) {
          const std::vector<S>& g = tp.grad(oid);
          std::vector<S>& da = tp.grad(an);
          for (size_t i = 0; i < y.size(); ++i) da[i] += g[i] * y[i] * (S(1) - y[i]);
        };
      });
}

template <class S>
TensorT<S> tanh_op(TapeT<S>& tape, const TensorT<S>& a) {
  return detail::unary(
      tape, a, "tanh", [](S v) { return std::tanh(v); },
      [](int oid, int an, const std::vector<S>&, const std::vector<S>& y) {
        return [oid, an, y](TapeT<S>& tp) {
          const std::vector<S>& g = tp.grad(oid);
          std::vector<S>& da = tp.grad(an);
          for (size_t i = 0; i < y.size(); ++i) da[i] += g[i] * (S(1) - y[i] * y[i]);
        };
      });
}

template <class S>
TensorT<S> reciprocal(TapeT<S>& tape, const TensorT<S>& a) {
  for (S v : a.values)
    if (v == S(0)) throw NumericError("reciprocal: zero operand");
  return detail::unary(
      tape, a, "reciprocal", [](S v) { return S(1) / v; },
      [](int oid, int an, const std::vector<S>&, const std::vector<S>& y) {
        return [oid, an, y](TapeT<S>& tp) {
          const std::vector<S>& g = tp.grad(oid);
          std::vector<S>& da = tp.grad(an);
          for (size_t i = 0; i < y.size(); ++i) da[i] -= g[i] * y[i] * y[i];
        };
      });
}

// Parametric rectifier with a learned slope per channel (last axis).
template <class S>
TensorT<S> prelu(TapeT<S>& tape, const TensorT<S>& x, const TensorT<S>& slope) {
  const int c = x.cols();
  if (slope.numel() != c)
    throw ShapeError("prelu: slope shape " + shape_str(slope.shape) + " does not match channels of " +
                     shape_str(x.shape));
  TensorT<S> out = x;
  out.node = -1;
  out.tape_id = 0;
  const int n = x.numel();
  for (int i = 0; i < n; ++i)
    if (out.values[i] < S(0)) out.values[i] *= slope.values[i % c];
  detail::check_finite(out, "prelu");
  out.requires_grad = x.requires_grad || slope.requires_grad;
  if (detail::should_record(tape, {&x, &slope}, "prelu")) {
    const int oid = tape.record(n);
    out.node = oid;
    out.tape_id = tape.id();
    const int xn = x.requires_grad ? x.node : -1;
    const int sn = slope.requires_grad ? slope.node : -1;
    tape.set_backward(oid, [oid, xn, sn, n, c, xv = x.values, sv = slope.values](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      if (xn >= 0) {
        std::vector<S>& dx = tp.grad(xn);
        for (int i = 0; i < n; ++i) dx[i] += xv[i] >= S(0) ? g[i] : g[i] * sv[i % c];
      }
      if (sn >= 0) {
        std::vector<S>& ds = tp.grad(sn);
        for (int i = 0; i < n; ++i)
          if (xv[i] < S(0)) ds[i % c] += g[i] * xv[i];
      }
    });
  }
  return out;
}

// Concatenation along the last axis; all parts share leading extents.
template <class S>
TensorT<S> concat_cols(TapeT<S>& tape, const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const int r = parts[0].rows();
  int total = 0;
  for (const TensorT<S>& p : parts) {
    if (p.shape.size() != 2 || p.rows() != r)
      throw ShapeError("concat_cols: incompatible shapes " + shape_str(parts[0].shape) + " and " +
                       shape_str(p.shape));
    total += p.cols();
  }
  TensorT<S> out = TensorT<S>::zeros({r, total});
  int off = 0;
  for (const TensorT<S>& p : parts) {
    const int c = p.cols();
    for (int i = 0; i < r; ++i)
      std::copy_n(p.values.data() + static_cast<size_t>(i) * c, c,
                  out.values.data() + static_cast<size_t>(i) * total + off);
    off += c;
  }
  bool any = false;
  for (const TensorT<S>& p : parts) any = any || p.requires_grad;
  out.requires_grad = any;
  if (any && tape.recording) {
    std::vector<int> ids;
    std::vector<int> widths;
    for (const TensorT<S>& p : parts) {
      detail::require_tracked(tape, p, "concat_cols");
      ids.push_back(p.requires_grad ? p.node : -1);
      widths.push_back(p.cols());
    }
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, ids, widths, r, total](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      int off = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        const int c = widths[k];
        if (ids[k] >= 0) {
          std::vector<S>& d = tp.grad(ids[k]);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              d[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(i) * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

// Same storage, new shape (row-major, numel preserved).
template <class S>
TensorT<S> reshape(TapeT<S>& tape, const TensorT<S>& a, std::vector<int> shape) {
  TensorT<S> out = TensorT<S>::from(std::move(shape), a.values);
  if (out.numel() != a.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(a.shape) + " -> " + shape_str(out.shape));
  out.requires_grad = a.requires_grad;
  if (detail::should_record(tape, {&a}, "reshape")) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, an = a.node](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      std::vector<S>& da = tp.grad(an);
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

// Row lookup (embedding/group slicing); backward scatter-adds.
template <class S>
TensorT<S> gather_rows(TapeT<S>& tape, const TensorT<S>& table, const std::vector<int>& idx) {
  if (table.shape.size() != 2) throw ShapeError("gather_rows: table must be 2-d, got " + shape_str(table.shape));
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  const int c = table.cols();
  for (int i : idx)
    if (i < 0 || i >= table.rows())
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(table.shape));
  TensorT<S> out = TensorT<S>::zeros({static_cast<int>(idx.size()), c});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(table.values.data() + static_cast<size_t>(idx[r]) * c, c,
                out.values.data() + r * c);
  out.requires_grad = table.requires_grad;
  if (detail::should_record(tape, {&table}, "gather_rows")) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, tn = table.node, idx, c](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      std::vector<S>& dt = tp.grad(tn);
      for (size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < c; ++j)
          dt[static_cast<size_t>(idx[r]) * c + j] += g[r * c + j];
    });
  }
  return out;
}

// Repeats a [1 x c] row n times; backward sums over rows.
template <class S>
TensorT<S> repeat_row(TapeT<S>& tape, const TensorT<S>& row, int n) {
  if (row.rows() != 1 || row.shape.size() != 2)
    throw ShapeError("repeat_row: expected [1 x c] row, got " + shape_str(row.shape));
  if (n <= 0) throw ShapeError("repeat_row: count must be positive");
  const int c = row.cols();
  TensorT<S> out = TensorT<S>::zeros({n, c});
  for (int i = 0; i < n; ++i) std::copy_n(row.values.data(), c, out.values.data() + static_cast<size_t>(i) * c);
  out.requires_grad = row.requires_grad;
  if (detail::should_record(tape, {&row}, "repeat_row")) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, rn = row.node, n, c](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      std::vector<S>& dr = tp.grad(rn);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) dr[j] += g[static_cast<size_t>(i) * c + j];
    });
  }
  return out;
}

// Stacks [1 x c] rows into [n x c]; backward scatters per row.
template <class S>
TensorT<S> stack_rows(TapeT<S>& tape, const std::vector<TensorT<S>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no operands");
  const int c = rows[0].numel();
  for (const TensorT<S>& r : rows)
    if (r.numel() != c)
      throw ShapeError("stack_rows: incompatible shapes " + shape_str(rows[0].shape) + " and " +
                       shape_str(r.shape));
  TensorT<S> out = TensorT<S>::zeros({static_cast<int>(rows.size()), c});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(rows[i].values.data(), c, out.values.data() + i * c);
  bool any = false;
  for (const TensorT<S>& r : rows) any = any || r.requires_grad;
  out.requires_grad = any;
  if (any && tape.recording) {
    std::vector<int> ids;
    for (const TensorT<S>& r : rows) {
      detail::require_tracked(tape, r, "stack_rows");
      ids.push_back(r.requires_grad ? r.node : -1);
    }
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, ids, c](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] >= 0) {
          std::vector<S>& d = tp.grad(ids[i]);
          for (int j = 0; j < c; ++j) d[j] += g[i * c + j];
        }
    });
  }
  return out;
}

// Row-wise softmax over unmasked entries, max-subtracted; masked entries are
// exactly zero. An empty mask means all entries live.
template <class S>
TensorT<S> masked_softmax(TapeT<S>& tape, const TensorT<S>& scores,
                          const std::vector<std::uint8_t>& mask = {}) {
  if (scores.shape.size() != 2)
    throw ShapeError("masked_softmax: expected 2-d scores, got " + shape_str(scores.shape));
  if (!mask.empty() && static_cast<int>(mask.size()) != scores.numel())
    throw ShapeError("masked_softmax: mask size " + std::to_string(mask.size()) +
                     " does not match " + shape_str(scores.shape));
  const int r = scores.rows(), c = scores.cols();
  TensorT<S> out = TensorT<S>::zeros({r, c});
  auto live = [&](int i, int j) { return mask.empty() || mask[static_cast<size_t>(i) * c + j] != 0; };
  for (int i = 0; i < r; ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < c; ++j)
      if (live(i, j)) mx = std::max(mx, scores.at(i, j));
    if (mx == -std::numeric_limits<S>::infinity())
      throw NumericError("masked_softmax: fully masked row " + std::to_string(i));
    S denom = S(0);
    for (int j = 0; j < c; ++j)
      if (live(i, j)) denom += std::exp(scores.at(i, j) - mx);
    for (int j = 0; j < c; ++j)
      if (live(i, j)) out.at(i, j) = std::exp(scores.at(i, j) - mx) / denom;
  }
  detail::check_finite(out, "masked_softmax");
  out.requires_grad = scores.requires_grad;
  if (detail::should_record(tape, {&scores}, "masked_softmax")) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, sn = scores.node, r, c, y = out.values](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      std::vector<S>& ds = tp.grad(sn);
      for (int i = 0; i < r; ++i) {
        S dot = S(0);
        for (int j = 0; j < c; ++j) dot += g[static_cast<size_t>(i) * c + j] * y[static_cast<size_t>(i) * c + j];
        for (int j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i) * c + j;
          ds[k] += y[k] * (g[k] - dot);  // zero at masked entries since y == 0
        }
      }
    });
  }
  return out;
}

// Sum of unmasked rows: [t x c], mask[t] -> [1 x c].
template <class S>
TensorT<S> masked_sum_rows(TapeT<S>& tape, const TensorT<S>& x, const std::vector<std::uint8_t>& mask) {
  if (x.shape.size() != 2 || static_cast<int>(mask.size()) != x.rows())
    throw ShapeError("masked_sum_rows: mask length " + std::to_string(mask.size()) +
                     " does not match rows of " + shape_str(x.shape));
  const int t = x.rows(), c = x.cols();
  TensorT<S> out = TensorT<S>::zeros({1, c});
  for (int i = 0; i < t; ++i)
    if (mask[i])
      for (int j = 0; j < c; ++j) out.values[j] += x.at(i, j);
  detail::check_finite(out, "masked_sum_rows");
  out.requires_grad = x.requires_grad;
  if (detail::should_record(tape, {&x}, "masked_sum_rows")) {
    const int oid = tape.record(out.numel());
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, xn = x.node, t, c, mask](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      std::vector<S>& dx = tp.grad(xn);
      for (int i = 0; i < t; ++i)
        if (mask[i])
          for (int j = 0; j < c; ++j) dx[static_cast<size_t>(i) * c + j] += g[j];
    });
  }
  return out;
}

template <class S>
TensorT<S> sum_all(TapeT<S>& tape, const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros({1});
  for (S v : x.values) out.values[0] += v;
  detail::check_finite(out, "sum_all");
  out.requires_grad = x.requires_grad;
  if (detail::should_record(tape, {&x}, "sum_all")) {
    const int oid = tape.record(1);
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, xn = x.node](TapeT<S>& tp) {
      const S g = tp.grad(oid)[0];
      for (S& d : tp.grad(xn)) d += g;
    });
  }
  return out;
}

// Two-class softmax probability of class 1: logits [b x 2] -> p [b].
// p is clamped into [1e-7, 1 - 1e-7] so downstream logs stay finite.
template <class S>
TensorT<S> binary_softmax_prob(TapeT<S>& tape, const TensorT<S>& logits) {
  if (logits.shape.size() != 2 || logits.cols() != 2)
    throw ShapeError("binary_softmax_prob: expected [b x 2] logits, got " + shape_str(logits.shape));
  const int b = logits.rows();
  const S lo = S(1e-7), hi = S(1) - S(1e-7);
  TensorT<S> out = TensorT<S>::zeros({b});
  for (int i = 0; i < b; ++i) {
    const S z = logits.at(i, 1) - logits.at(i, 0);
    const S p = z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
    out.values[i] = std::clamp(p, lo, hi);
  }
  detail::check_finite(out, "binary_softmax_prob");
  out.requires_grad = logits.requires_grad;
  if (detail::should_record(tape, {&logits}, "binary_softmax_prob")) {
    const int oid = tape.record(b);
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, ln = logits.node, b, p = out.values](TapeT<S>& tp) {
      const std::vector<S>& g = tp.grad(oid);
      std::vector<S>& dl = tp.grad(ln);
      for (int i = 0; i < b; ++i) {
        const S d = g[i] * p[i] * (S(1) - p[i]);
        dl[static_cast<size_t>(i) * 2 + 1] += d;
        dl[static_cast<size_t>(i) * 2 + 0] -= d;
      }
    });
  }
  return out;
}

// Mean negative log-likelihood over the batch; p is clamped before the logs.
template <class S>
TensorT<S> nll_loss(TapeT<S>& tape, const TensorT<S>& p, const std::vector<int>& labels) {
  if (p.numel() != static_cast<int>(labels.size()))
    throw ShapeError("nll_loss: batch mismatch, p " + shape_str(p.shape) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const int b = p.numel();
  const S lo = S(1e-7), hi = S(1) - S(1e-7);
  TensorT<S> out = TensorT<S>::zeros({1});
  S acc = S(0);
  for (int i = 0; i < b; ++i) {
    const S pc = std::clamp(p.values[i], lo, hi);
    acc -= labels[i] ? std::log(pc) : std::log(S(1) - pc);
  }
  out.values[0] = acc / S(b);
  detail::check_finite(out, "nll_loss");
  out.requires_grad = p.requires_grad;
  if (detail::should_record(tape, {&p}, "nll_loss")) {
    const int oid = tape.record(1);
    out.node = oid;
    out.tape_id = tape.id();
    tape.set_backward(oid, [oid, pn = p.node, b, labels, pv = p.values, lo, hi](TapeT<S>& tp) {
      const S g = tp.grad(oid)[0];
      std::vector<S>& dp = tp.grad(pn);
      for (int i = 0; i < b; ++i) {
        const S pc = std::clamp(pv[i], lo, hi);
        dp[i] += g * (labels[i] ? -S(1) / pc : S(1) / (S(1) - pc)) / S(b);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization helpers (deterministic given the generator state).

template <class S>
TensorT<S> uniform_init(std::vector<int> shape, S low, S high, std::mt19937& rng) {
  TensorT<S> t = TensorT<S>::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(low, high);
  for (S& v : t.values) v = static_cast<S>(dist(rng));
  return t;
}

// Scaled-uniform by fan-in: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <class S>
TensorT<S> fan_in_init(int fan_in, int fan_out, std::mt19937& rng) {
  const S a = S(1) / std::sqrt(static_cast<S>(fan_in));
  return uniform_init<S>({fan_in, fan_out}, -a, a, rng);
}

}  // namespace dhan
