#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "srdl/common.hpp"

namespace srdl {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tape;

// Dense row-major tensor of 64-bit reals. A tensor produced by an op on a
// live tape carries the node id it came from; such tensors must not outlive
// their tape.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::int64_t node = -1;
  Tape* tape = nullptr;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)) {
    for (std::int64_t d : shape) {
      if (d <= 0) throw shape_error("Tensor: dimensions must be positive, got " + shape_str(shape));
    }
    data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  }

  static Tensor from(Shape s, std::vector<double> values) {
    Tensor t(std::move(s));
    if (static_cast<std::int64_t>(values.size()) != t.numel()) {
      throw shape_error("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                        shape_str(t.shape));
    }
    t.data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t(Shape{1});
    t.data[0] = v;
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape.size()); }

  std::int64_t rows() const {
    if (ndim() != 2) throw shape_error("Tensor::rows: expected 2-d tensor, got " + shape_str(shape));
    return shape[0];
  }
  std::int64_t cols() const {
    if (ndim() != 2) throw shape_error("Tensor::cols: expected 2-d tensor, got " + shape_str(shape));
    return shape[1];
  }

  double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  double at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }

  bool tracked() const { return tape != nullptr && node >= 0; }
  double value() const {
    if (numel() != 1) throw shape_error("Tensor::value: tensor is not scalar: " + shape_str(shape));
    return data[0];
  }
};

// Reverse-mode tape. Rebuilt per forward pass (define-by-run); nodes are
// appended in execution order, which is a topological order by construction.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  struct Node {
    const char* op;
    Shape shape;
    std::vector<std::int64_t> inputs;
    BackwardFn backward;  // empty for leaves
    bool needs_grad = false;
  };

  // Registers a value as a tape leaf and returns the tracked handle.
  Tensor leaf(const Tensor& value, bool requires_grad) {
    Tensor t = value;
    t.requires_grad = requires_grad;
    t.tape = this;
    t.node = emit("leaf", t.shape, {}, BackwardFn{}, requires_grad);
    return t;
  }

  std::int64_t emit(const char* op, const Shape& shape, std::vector<std::int64_t> inputs,
                    BackwardFn backward, bool needs_grad) {
    for (std::int64_t in : inputs) {
      if (in >= static_cast<std::int64_t>(nodes_.size()))
        throw error("Tape::emit: input node does not precede the new node");
    }
    nodes_.push_back(Node{op, shape, std::move(inputs), std::move(backward), needs_grad});
    return static_cast<std::int64_t>(nodes_.size()) - 1;
  }

  bool needs(std::int64_t node) const { return node >= 0 && nodes_[static_cast<std::size_t>(node)].needs_grad; }

  // Reverse-topological accumulation from a scalar loss.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw shape_error("backward: loss must be scalar, got " + shape_str(loss.shape));
    if (!loss.tracked() || loss.tape != this) throw error("backward: loss is not on this tape");
    grads_.assign(nodes_.size(), {});
    grad_buf(loss.node)[0] = 1.0;
    for (std::int64_t i = loss.node; i >= 0; --i) {
      const auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.empty()) continue;
      const auto& fn = nodes_[static_cast<std::size_t>(i)].backward;
      if (fn) fn(*this, g);
    }
    ran_backward_ = true;
  }

  bool has_grad(const Tensor& t) const {
    if (!t.tracked() || t.tape != this || !ran_backward_) return false;
    return !grads_[static_cast<std::size_t>(t.node)].empty();
  }

  // Gradient with the tensor's shape; zeros when the node was unreachable.
  Tensor grad(const Tensor& t) const {
    if (!t.tracked() || t.tape != this) throw error("Tape::grad: tensor is not on this tape");
    if (!ran_backward_) throw error("Tape::grad: backward has not run");
    Tensor g(t.shape);
    const auto& buf = grads_[static_cast<std::size_t>(t.node)];
    if (!buf.empty()) g.data = buf;
    return g;
  }

  std::vector<double>& grad_buf(std::int64_t node) {
    auto& buf = grads_[static_cast<std::size_t>(node)];
    if (buf.empty()) buf.assign(static_cast<std::size_t>(shape_numel(nodes_[static_cast<std::size_t>(node)].shape)), 0.0);
    return buf;
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::int64_t id) const { return nodes_[static_cast<std::size_t>(id)]; }

 public:
  Tape() { nodes_.reserve(1024); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_backward_ = false;
};

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> ins) {
  Tape* tape = nullptr;
  for (const Tensor* t : ins) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape) throw error("operands live on different tapes");
    tape = t->tape;
  }
  return tape;
}

inline void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw numeric_error(std::string(op) + ": non-finite value in output of shape " + shape_str(t.shape));
  }
}

inline bool any_needs(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if (t->tracked() && tape->needs(t->node)) return true;
  }
  return false;
}

// Attaches `out` to the tape shared by the inputs, if any. The factory only
// runs (and only then copies saved activations) when a gradient path exists.
template <typename MakeBackward>
inline void record(Tensor& out, const char* op, std::initializer_list<const Tensor*> ins,
                   MakeBackward&& make_backward) {
  ensure_finite(out, op);
  Tape* tape = common_tape(ins);
  if (!tape) return;
  std::vector<std::int64_t> input_ids;
  for (const Tensor* t : ins)
    if (t->tracked()) input_ids.push_back(t->node);
  const bool needs = any_needs(tape, ins);
  out.tape = tape;
  out.node = tape->emit(op, out.shape, std::move(input_ids), needs ? make_backward() : Tape::BackwardFn{}, needs);
}

// Order-independent sum: accumulates in ascending value order so the result
// does not depend on how rows were permuted.
inline double perm_invariant_sum(std::vector<double>& scratch) {
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double v : scratch) s += v;
  return s;
}

// Mean and variance with permutation-invariant accumulation from a single
// sort: squared deviations of sorted data form two monotone runs around the
// mean crossing, merged ascending with two pointers.
inline void perm_invariant_mean_var(std::vector<double>& scratch, double* mean_out, double* var_out) {
  std::sort(scratch.begin(), scratch.end());
  const std::size_t n = scratch.size();
  double sum = 0.0;
  for (double v : scratch) sum += v;
  const double mean = sum / static_cast<double>(n);
  const std::size_t m =
      static_cast<std::size_t>(std::lower_bound(scratch.begin(), scratch.end(), mean) - scratch.begin());
  std::ptrdiff_t i = static_cast<std::ptrdiff_t>(m) - 1;  // squares grow going left
  std::size_t j = m;                                      // squares grow going right
  double var_sum = 0.0;
  while (i >= 0 && j < n) {
    const double dl = scratch[static_cast<std::size_t>(i)] - mean;
    const double dh = scratch[j] - mean;
    const double ql = dl * dl, qh = dh * dh;
    if (ql <= qh) {
      var_sum += ql;
      --i;
    } else {
      var_sum += qh;
      ++j;
    }
  }
  while (i >= 0) {
    const double d = scratch[static_cast<std::size_t>(i--)] - mean;
    var_sum += d * d;
  }
  while (j < n) {
    const double d = scratch[j++] - mean;
    var_sum += d * d;
  }
  *mean_out = mean;
  *var_out = var_sum / static_cast<double>(n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0]) {
    throw shape_error("matmul: incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
  }
  const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out(Shape{m, n});
  const double* __restrict__ pa = a.data.data();
  const double* __restrict__ pb = b.data.data();
  double* __restrict__ pc = out.data.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* __restrict__ brow = pb + p * n;
      double* __restrict__ crow = pc + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  detail::record(out, "matmul", {&a, &b}, [&]() {
    Tape* tp = a.tracked() ? a.tape : b.tape;
    const bool need_da = a.tracked() && tp->needs(a.node);
    const bool need_db = b.tracked() && tp->needs(b.node);
    std::vector<double> adata = need_db ? a.data : std::vector<double>{};
    std::vector<double> bdata = need_da ? b.data : std::vector<double>{};
    const std::int64_t an = a.node, bn = b.node;
    return [adata = std::move(adata), bdata = std::move(bdata), an, bn, m, k, n](
               Tape& t, const std::vector<double>& g) {
      if (t.needs(an)) {
        auto& da = t.grad_buf(an);
        // dA[i,p] = dot(G row i, B row p); four lanes so the reduction
        // vectorizes without reassociation flags
        for (std::int64_t i = 0; i < m; ++i) {
          const double* __restrict__ grow = g.data() + i * n;
          for (std::int64_t p = 0; p < k; ++p) {
            const double* __restrict__ brow = bdata.data() + p * n;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            std::int64_t j = 0;
            for (; j + 4 <= n; j += 4) {
              a0 += grow[j] * brow[j];
              a1 += grow[j + 1] * brow[j + 1];
              a2 += grow[j + 2] * brow[j + 2];
              a3 += grow[j + 3] * brow[j + 3];
            }
            double acc = (a0 + a1) + (a2 + a3);
            for (; j < n; ++j) acc += grow[j] * brow[j];
            da[static_cast<std::size_t>(i * k + p)] += acc;
          }
        }
      }
      if (t.needs(bn)) {
        auto& db = t.grad_buf(bn);
        for (std::int64_t i = 0; i < m; ++i) {
          const double* __restrict__ grow = g.data() + i * n;
          for (std::int64_t p = 0; p < k; ++p) {
            const double aip = adata[static_cast<std::size_t>(i * k + p)];
            if (aip == 0.0) continue;
            double* __restrict__ dbrow = db.data() + p * n;
            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += aip * grow[j];
          }
        }
      }
    };
  });
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  out.tape = nullptr;
  out.node = -1;
  out.requires_grad = false;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  detail::record(out, "relu", {&x}, [&]() {
    auto xdata = x.data;
    const std::int64_t xn = x.node;
    return [xdata = std::move(xdata), xn](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xdata[i] > 0.0) dx[i] += g[i];  // subgradient at 0 is 0
    };
  });
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape);
  const double hi = std::nextafter(1.0, 0.0);
  const double lo = std::numeric_limits<double>::min();
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double v = x.data[i];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    // keep the open interval (0,1) even under saturation
    out.data[i] = std::min(std::max(s, lo), hi);
  }
  detail::record(out, "sigmoid", {&x}, [&]() {
    auto sdata = out.data;
    const std::int64_t xn = x.node;
    return [sdata = std::move(sdata), xn](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * sdata[i] * (1.0 - sdata[i]);
    };
  });
  return out;
}

// Training-mode batch normalization over the row axis of an N x C matrix.
// Column statistics are accumulated in sorted order, so the forward result
// is invariant under row permutations bit for bit.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  if (x.ndim() != 2) throw shape_error("batch_norm: expected N x C input, got " + shape_str(x.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1];
  if (n < 2) throw shape_error("batch_norm: degenerate batch of " + std::to_string(n) + " rows (need N >= 2)");
  if (gamma.numel() != c || beta.numel() != c) {
    throw shape_error("batch_norm: gamma " + shape_str(gamma.shape) + " / beta " + shape_str(beta.shape) +
                      " do not match C=" + std::to_string(c));
  }
  if (eps <= 0.0) throw error("batch_norm: eps must be positive");

  Tensor out(x.shape);
  std::vector<double> xhat(static_cast<std::size_t>(n * c));
  std::vector<double> invstd(static_cast<std::size_t>(c));
  std::vector<double> mean(static_cast<std::size_t>(c));
  {
    // column-major staging keeps the per-column work on contiguous memory
    std::vector<double> xt(static_cast<std::size_t>(n * c));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        xt[static_cast<std::size_t>(j * n + i)] = x.data[static_cast<std::size_t>(i * c + j)];
    std::vector<double> scratch(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < c; ++j) {
      const double* col = xt.data() + j * n;
      std::copy(col, col + n, scratch.begin());
      double mu = 0.0, var = 0.0;
      detail::perm_invariant_mean_var(scratch, &mu, &var);
      mean[static_cast<std::size_t>(j)] = mu;
      invstd[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(var + eps);
    }
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xrow = x.data.data() + i * c;
    double* hrow = xhat.data() + i * c;
    double* orow = out.data.data() + i * c;
    for (std::int64_t j = 0; j < c; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const double h = (xrow[j] - mean[jj]) * invstd[jj];
      hrow[j] = h;
      orow[j] = gamma.data[jj] * h + beta.data[jj];
    }
  }
  detail::record(out, "batch_norm", {&x, &gamma, &beta}, [&]() {
    auto gdata = gamma.data;
    const std::int64_t xn = x.node, gn = gamma.node, bn = beta.node;
    return [xhat = std::move(xhat), invstd = std::move(invstd), gdata = std::move(gdata), xn, gn, bn, n,
            c](Tape& t, const std::vector<double>& g) {
      std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0);
      std::vector<double> sum_gh(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
          const auto idx = static_cast<std::size_t>(i * c + j);
          sum_g[static_cast<std::size_t>(j)] += g[idx];
          sum_gh[static_cast<std::size_t>(j)] += g[idx] * xhat[idx];
        }
      if (t.needs(bn)) {
        auto& db = t.grad_buf(bn);
        for (std::int64_t j = 0; j < c; ++j) db[static_cast<std::size_t>(j)] += sum_g[static_cast<std::size_t>(j)];
      }
      if (t.needs(gn)) {
        auto& dg = t.grad_buf(gn);
        for (std::int64_t j = 0; j < c; ++j) dg[static_cast<std::size_t>(j)] += sum_gh[static_cast<std::size_t>(j)];
      }
      if (t.needs(xn)) {
        auto& dx = t.grad_buf(xn);
        const double dn = static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const auto idx = static_cast<std::size_t>(i * c + j);
            const auto jj = static_cast<std::size_t>(j);
            dx[idx] += gdata[jj] * invstd[jj] / dn * (dn * g[idx] - sum_g[jj] - xhat[idx] * sum_gh[jj]);
          }
      }
    };
  });
  return out;
}

// Column-wise max over all rows; gradient flows to the first argmax row.
inline Tensor max_pool_points(const Tensor& x) {
  if (x.ndim() != 2) throw shape_error("max_pool_points: expected N x C input, got " + shape_str(x.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1];
  if (n < 1) throw shape_error("max_pool_points: empty input");
  Tensor out(Shape{1, c});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(c), 0);
  for (std::int64_t j = 0; j < c; ++j) {
    double best = x.data[static_cast<std::size_t>(j)];
    std::int64_t bi = 0;
    for (std::int64_t i = 1; i < n; ++i) {
      const double v = x.data[static_cast<std::size_t>(i * c + j)];
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    out.data[static_cast<std::size_t>(j)] = best;
    arg[static_cast<std::size_t>(j)] = bi;
  }
  detail::record(out, "max_pool_points", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [arg = std::move(arg), xn, c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::int64_t j = 0; j < c; ++j)
        dx[static_cast<std::size_t>(arg[static_cast<std::size_t>(j)] * c + j)] += g[static_cast<std::size_t>(j)];
    };
  });
  return out;
}

enum class EwOp { add, sub, mul, mean2 };

inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw shape_error("elementwise: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  Tensor out(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    switch (op) {
      case EwOp::add: out.data[i] = a.data[i] + b.data[i]; break;
      case EwOp::sub: out.data[i] = a.data[i] - b.data[i]; break;
      case EwOp::mul: out.data[i] = a.data[i] * b.data[i]; break;
      case EwOp::mean2: out.data[i] = (a.data[i] + b.data[i]) * 0.5; break;
    }
  }
  const char* name = op == EwOp::add ? "add" : op == EwOp::sub ? "sub" : op == EwOp::mul ? "mul" : "mean2";
  detail::record(out, name, {&a, &b}, [&]() {
    const std::int64_t an = a.node, bn = b.node;
    std::vector<double> adata, bdata;
    if (op == EwOp::mul) {
      adata = a.data;
      bdata = b.data;
    }
    return [op, an, bn, adata = std::move(adata), bdata = std::move(bdata)](Tape& t,
                                                                            const std::vector<double>& g) {
      if (t.needs(an)) {
        auto& da = t.grad_buf(an);
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (op) {
            case EwOp::add: da[i] += g[i]; break;
            case EwOp::sub: da[i] += g[i]; break;
            case EwOp::mul: da[i] += g[i] * bdata[i]; break;
            case EwOp::mean2: da[i] += 0.5 * g[i]; break;
          }
        }
      }
      if (t.needs(bn)) {
        auto& db = t.grad_buf(bn);
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (op) {
            case EwOp::add: db[i] += g[i]; break;
            case EwOp::sub: db[i] -= g[i]; break;
            case EwOp::mul: db[i] += g[i] * adata[i]; break;
            case EwOp::mean2: db[i] += 0.5 * g[i]; break;
          }
        }
      }
    };
  });
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, b); }
inline Tensor mean2(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mean2, a, b); }

inline Tensor concat(const std::vector<Tensor>& ts, std::int64_t axis) {
  if (ts.empty()) throw shape_error("concat: no inputs");
  const Tensor& first = ts.front();
  if (axis < 0 || axis >= first.ndim())
    throw shape_error("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first.shape));
  Shape out_shape = first.shape;
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (ts[i].ndim() != first.ndim())
      throw shape_error("concat: rank mismatch " + shape_str(ts[i].shape) + " vs " + shape_str(first.shape));
    for (std::int64_t d = 0; d < first.ndim(); ++d) {
      if (d == axis) continue;
      if (ts[i].shape[d] != first.shape[d])
        throw shape_error("concat: shape mismatch on non-concat axis: " + shape_str(ts[i].shape) + " vs " +
                          shape_str(first.shape));
    }
    out_shape[axis] += ts[i].shape[axis];
  }

  std::int64_t outer = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first.shape[d];
  std::int64_t tail = 1;
  for (std::int64_t d = axis + 1; d < first.ndim(); ++d) tail *= first.shape[d];

  Tensor out(out_shape);
  std::vector<std::int64_t> blocks;  // per-input contiguous block size
  blocks.reserve(ts.size());
  for (const Tensor& t : ts) blocks.push_back(t.shape[axis] * tail);
  const std::int64_t out_block = out_shape[axis] * tail;

  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double* src = ts[i].data.data() + o * blocks[i];
      std::copy(src, src + blocks[i], out.data.data() + o * out_block + off);
      off += blocks[i];
    }
  }

  std::vector<const Tensor*> ins;
  for (const Tensor& t : ts) ins.push_back(&t);
  Tape* tape = nullptr;
  for (const Tensor* t : ins) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape) throw error("concat: operands live on different tapes");
    tape = t->tape;
  }
  detail::ensure_finite(out, "concat");
  if (!tape) return out;
  bool needs = false;
  std::vector<std::int64_t> node_ids;
  std::vector<std::int64_t> input_ids;
  for (const Tensor* t : ins) {
    node_ids.push_back(t->tracked() ? t->node : -1);
    if (t->tracked()) {
      input_ids.push_back(t->node);
      needs = needs || tape->needs(t->node);
    }
  }
  Tape::BackwardFn fn;
  if (needs) {
    fn = [node_ids, blocks, outer, out_block](Tape& t, const std::vector<double>& g) {
      for (std::int64_t o = 0; o < outer; ++o) {
        std::int64_t off = 0;
        for (std::size_t i = 0; i < node_ids.size(); ++i) {
          if (node_ids[i] >= 0 && t.needs(node_ids[i])) {
            auto& d = t.grad_buf(node_ids[i]);
            for (std::int64_t j = 0; j < blocks[i]; ++j)
              d[static_cast<std::size_t>(o * blocks[i] + j)] += g[static_cast<std::size_t>(o * out_block + off + j)];
          }
          off += blocks[i];
        }
      }
    };
  }
  out.tape = tape;
  out.node = tape->emit("concat", out.shape, std::move(input_ids), std::move(fn), needs);
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise and structural helpers
// ---------------------------------------------------------------------------

// a*x + b, elementwise with scalar coefficients.
inline Tensor affine(const Tensor& x, double a, double b) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x.data[i] + b;
  detail::record(out, "affine", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, a](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += a * g[i];
    };
  });
  return out;
}

inline Tensor log_op(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (x.data[i] <= 0.0) throw numeric_error("log: non-positive input " + fmt_double(x.data[i]));
    out.data[i] = std::log(x.data[i]);
  }
  detail::record(out, "log", {&x}, [&]() {
    auto xdata = x.data;
    const std::int64_t xn = x.node;
    return [xdata = std::move(xdata), xn](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / xdata[i];
    };
  });
  return out;
}

// x^p with constant exponent; requires non-negative base for fractional p.
inline Tensor pow_const(const Tensor& x, double p) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (x.data[i] < 0.0 && p != std::floor(p))
      throw numeric_error("pow_const: negative base " + fmt_double(x.data[i]) + " for exponent " + fmt_double(p));
    out.data[i] = p == 0.0 ? 1.0 : std::pow(x.data[i], p);
  }
  detail::record(out, "pow_const", {&x}, [&]() {
    auto xdata = x.data;
    const std::int64_t xn = x.node;
    return [xdata = std::move(xdata), xn, p](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn) || p == 0.0) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xdata[i] == 0.0 && p < 1.0) continue;  // subgradient 0 at the kink
        dx[i] += g[i] * p * std::pow(xdata[i], p - 1.0);
      }
    };
  });
  return out;
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw error("clamp: lo must be < hi");
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(std::max(x.data[i], lo), hi);
  detail::record(out, "clamp", {&x}, [&]() {
    auto xdata = x.data;
    const std::int64_t xn = x.node;
    return [xdata = std::move(xdata), xn, lo, hi](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xdata[i] > lo && xdata[i] < hi) dx[i] += g[i];
    };
  });
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::scalar(std::accumulate(x.data.begin(), x.data.end(), 0.0));
  detail::record(out, "sum_all", {&x}, [&]() {
    const std::int64_t xn = x.node;
    const std::size_t n = x.data.size();
    return [xn, n](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < n; ++i) dx[i] += g[0];
    };
  });
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(std::accumulate(x.data.begin(), x.data.end(), 0.0) / n);
  detail::record(out, "mean_all", {&x}, [&]() {
    const std::int64_t xn = x.node;
    const std::size_t cnt = x.data.size();
    return [xn, cnt, n](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < cnt; ++i) dx[i] += g[0] / n;
    };
  });
  return out;
}

// Adds a length-C row vector to every row of an N x C matrix.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 2 || b.numel() != x.shape[1])
    throw shape_error("add_rowvec: " + shape_str(x.shape) + " with bias " + shape_str(b.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1];
  Tensor out(x.shape);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out.data[static_cast<std::size_t>(i * c + j)] =
          x.data[static_cast<std::size_t>(i * c + j)] + b.data[static_cast<std::size_t>(j)];
  detail::record(out, "add_rowvec", {&x, &b}, [&]() {
    const std::int64_t xn = x.node, bn = b.node;
    return [xn, bn, n, c](Tape& t, const std::vector<double>& g) {
      if (t.needs(xn)) {
        auto& dx = t.grad_buf(xn);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      }
      if (t.needs(bn)) {
        auto& db = t.grad_buf(bn);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < c; ++j) db[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * c + j)];
      }
    };
  });
  return out;
}

inline Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& idx) {
  if (x.ndim() != 2) throw shape_error("gather_rows: expected 2-d input, got " + shape_str(x.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1];
  for (std::int64_t i : idx)
    if (i < 0 || i >= n) throw shape_error("gather_rows: index " + std::to_string(i) + " out of [0," + std::to_string(n) + ")");
  Tensor out(Shape{static_cast<std::int64_t>(idx.size()), c});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double* src = x.data.data() + idx[r] * c;
    std::copy(src, src + c, out.data.data() + static_cast<std::int64_t>(r) * c);
  }
  detail::record(out, "gather_rows", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, idx, c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t j = 0; j < c; ++j)
          dx[static_cast<std::size_t>(idx[r] * c + j)] += g[static_cast<std::size_t>(static_cast<std::int64_t>(r) * c + j)];
    };
  });
  return out;
}

// Column-wise max over consecutive groups of `k` rows; input rows = G*k.
inline Tensor group_max_rows(const Tensor& x, std::int64_t k) {
  if (x.ndim() != 2 || k < 1 || x.shape[0] % k != 0)
    throw shape_error("group_max_rows: rows " + shape_str(x.shape) + " not divisible into groups of " +
                      std::to_string(k));
  const std::int64_t groups = x.shape[0] / k, c = x.shape[1];
  Tensor out(Shape{groups, c});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(groups * c));
  for (std::int64_t gi = 0; gi < groups; ++gi)
    for (std::int64_t j = 0; j < c; ++j) {
      double best = x.data[static_cast<std::size_t>((gi * k) * c + j)];
      std::int64_t bi = gi * k;
      for (std::int64_t r = 1; r < k; ++r) {
        const double v = x.data[static_cast<std::size_t>((gi * k + r) * c + j)];
        if (v > best) {
          best = v;
          bi = gi * k + r;
        }
      }
      out.data[static_cast<std::size_t>(gi * c + j)] = best;
      arg[static_cast<std::size_t>(gi * c + j)] = bi;
    }
  detail::record(out, "group_max_rows", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, arg = std::move(arg), c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::int64_t j = static_cast<std::int64_t>(i) % c;
        dx[static_cast<std::size_t>(arg[i] * c + j)] += g[i];
      }
    };
  });
  return out;
}

// Column-wise max over index-adjacent row pairs; a trailing odd row passes
// through. N rows -> ceil(N/2) rows.
inline Tensor pair_max_rows(const Tensor& x) {
  if (x.ndim() != 2 || x.shape[0] < 1) throw shape_error("pair_max_rows: bad input " + shape_str(x.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1];
  const std::int64_t m = (n + 1) / 2;
  Tensor out(Shape{m, c});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(m * c));
  for (std::int64_t p = 0; p < m; ++p)
    for (std::int64_t j = 0; j < c; ++j) {
      const std::int64_t r0 = 2 * p, r1 = 2 * p + 1;
      double best = x.data[static_cast<std::size_t>(r0 * c + j)];
      std::int64_t bi = r0;
      if (r1 < n) {
        const double v = x.data[static_cast<std::size_t>(r1 * c + j)];
        if (v > best) {
          best = v;
          bi = r1;
        }
      }
      out.data[static_cast<std::size_t>(p * c + j)] = best;
      arg[static_cast<std::size_t>(p * c + j)] = bi;
    }
  detail::record(out, "pair_max_rows", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, arg = std::move(arg), c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::int64_t j = static_cast<std::int64_t>(i) % c;
        dx[static_cast<std::size_t>(arg[i] * c + j)] += g[i];
      }
    };
  });
  return out;
}

// Inverse of pair_max_rows's shrink: row p maps back to rows 2p and 2p+1.
inline Tensor repeat_pairs_rows(const Tensor& x, std::int64_t n_out) {
  if (x.ndim() != 2) throw shape_error("repeat_pairs_rows: expected 2-d input");
  const std::int64_t m = x.shape[0], c = x.shape[1];
  if (n_out < m || (n_out + 1) / 2 != m)
    throw shape_error("repeat_pairs_rows: cannot expand " + std::to_string(m) + " rows to " + std::to_string(n_out));
  Tensor out(Shape{n_out, c});
  for (std::int64_t i = 0; i < n_out; ++i) {
    const double* src = x.data.data() + (i / 2) * c;
    std::copy(src, src + c, out.data.data() + i * c);
  }
  detail::record(out, "repeat_pairs_rows", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, n_out, c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::int64_t i = 0; i < n_out; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          dx[static_cast<std::size_t>((i / 2) * c + j)] += g[static_cast<std::size_t>(i * c + j)];
    };
  });
  return out;
}

inline Tensor tile_rows(const Tensor& x, std::int64_t n) {
  if (x.ndim() != 2 || x.shape[0] != 1) throw shape_error("tile_rows: expected 1 x C input, got " + shape_str(x.shape));
  const std::int64_t c = x.shape[1];
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n; ++i) std::copy(x.data.begin(), x.data.end(), out.data.begin() + i * c);
  detail::record(out, "tile_rows", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, n, c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) dx[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * c + j)];
    };
  });
  return out;
}

inline Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1) {
  if (x.ndim() != 2 || c0 < 0 || c1 > x.shape[1] || c0 >= c1)
    throw shape_error("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + shape_str(x.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1], w = c1 - c0;
  Tensor out(Shape{n, w});
  for (std::int64_t i = 0; i < n; ++i)
    std::copy(x.data.begin() + i * c + c0, x.data.begin() + i * c + c1, out.data.begin() + i * w);
  detail::record(out, "slice_cols", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, n, c, c0, w](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          dx[static_cast<std::size_t>(i * c + c0 + j)] += g[static_cast<std::size_t>(i * w + j)];
    };
  });
  return out;
}

inline Tensor reshape(const Tensor& x, Shape s) {
  if (shape_numel(s) != x.numel())
    throw shape_error("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
  Tensor out = x;
  out.shape = std::move(s);
  out.tape = nullptr;
  out.node = -1;
  out.requires_grad = false;
  detail::record(out, "reshape", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    };
  });
  return out;
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw shape_error("transpose2d: expected 2-d input, got " + shape_str(x.shape));
  const std::int64_t n = x.shape[0], c = x.shape[1];
  Tensor out(Shape{c, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out.data[static_cast<std::size_t>(j * n + i)] = x.data[static_cast<std::size_t>(i * c + j)];
  detail::record(out, "transpose2d", {&x}, [&]() {
    const std::int64_t xn = x.node;
    return [xn, n, c](Tape& t, const std::vector<double>& g) {
      if (!t.needs(xn)) return;
      auto& dx = t.grad_buf(xn);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j)
          dx[static_cast<std::size_t>(i * c + j)] += g[static_cast<std::size_t>(j * n + i)];
    };
  });
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

inline void sgd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size()) throw shape_error("sgd_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape != grads[i].shape)
      throw shape_error("sgd_step: parameter " + shape_str(params[i]->shape) + " vs gradient " +
                        shape_str(grads[i].shape));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    const auto& g = grads[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

}  // namespace srdl
