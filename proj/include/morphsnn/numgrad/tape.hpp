#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "morphsnn/numgrad/matrix.hpp"

namespace morphsnn {

/// A trainable array plus its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] const Matrix& grad() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-owner recording of one differentiable computation.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// backward() simply walks them in reverse. Each backward() call computes a
/// fresh set of adjoints from the loss and adds them into every node's
/// accumulated gradient (and into linked Parameter::grad), so repeated calls
/// accumulate additively.
class Tape {
 public:
  /// Receives the adjoint of the node's output; pushes contributions into
  /// the inputs via adjoint().
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr, nullptr); }
  Var leaf(Matrix value) { return push(std::move(value), true, nullptr, nullptr); }

  /// Leaf bound to a Parameter. Repeated calls on the same tape return the
  /// same node so the parameter's gradient is collected once per pass.
  /// Parameters must outlive the tape.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      if (!nodes_[it->second].value.same_shape(p.value)) {
        throw ContractError("tape: parameter '" + p.name + "' changed shape since it was recorded");
      }
      return Var(this, it->second);
    }
    Var v = push(p.value, true, nullptr, &p);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Records an op result. The node tracks gradients iff any input does.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
  }
  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn backward) {
    if (!all_finite(value)) throw ContractError("tape: non-finite value produced");
    bool any = false;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ContractError("tape: input recorded on a different tape");
      any = any || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), any, any ? std::move(backward) : nullptr, nullptr);
  }

  [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] const Matrix& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Adjoint buffer of `v` for the running pass, or nullptr if `v` does not
  /// track gradients.
  Matrix* adjoint(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.adjoint.empty()) n.adjoint = Matrix(n.value.rows(), n.value.cols());
    return &n.adjoint;
  }

  void backward(const Var& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be scalar, got " + lv.shape());
    }
    for (Node& n : nodes_) n.adjoint = Matrix();
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].adjoint = Matrix::scalar(1.0);

    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.adjoint.empty() || !n.backward) continue;
      n.backward(*this, n.adjoint);
    }
    for (Node& n : nodes_) {
      if (n.adjoint.empty()) continue;
      if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
      n.grad += n.adjoint;
      if (n.param != nullptr) {
        if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
        n.param->grad += n.adjoint;
      }
      n.adjoint = Matrix();
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Matrix adjoint;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn backward, Parameter* p) {
    nodes_.push_back(Node{std::move(value), Matrix(), Matrix(), std::move(backward), requires_grad, p});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Differentiable ops. Each records its value and an explicit adjoint rule.
// ---------------------------------------------------------------------------

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": " + a.value().shape() + " vs " + b.value().shape());
  }
}
}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a)) *ga += g;
    if (Matrix* gb = tp.adjoint(b)) *gb += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a)) *ga += g;
    if (Matrix* gb = tp.adjoint(b)) *gb -= g;
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b.value()[i];
    if (Matrix* gb = tp.adjoint(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

inline Var scale(const Var& a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
  });
}

inline Var add_scalar(const Var& a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v += s;
  return a.tape()->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a)) *ga += g;
  });
}

/// s * a where s is a 1x1 node.
inline Var scale_by(const Var& s, const Var& a) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("scale_by: factor must be 1x1, got " + s.value().shape());
  const double sv = s.value()[0];
  return a.tape()->record(a.value() * sv, {s, a}, [s, a](Tape& tp, const Matrix& g) {
    if (Matrix* gs = tp.adjoint(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.value()[i];
      (*gs)[0] += acc;
    }
    if (Matrix* ga = tp.adjoint(a)) {
      const double f = s.value()[0];
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += f * g[i];
    }
  });
}

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a)) *ga += matmul(g, transpose(b.value()));
    if (Matrix* gb = tp.adjoint(b)) *gb += matmul(transpose(a.value()), g);
  });
}

inline Var transpose(const Var& a) {
  return a.tape()->record(transpose(a.value()), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a)) *ga += transpose(g);
  });
}

inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  return a.tape()->record(a.value().reshaped(rows, cols), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

inline Var sum(const Var& a) {
  return a.tape()->record(Matrix::scalar(sum(a.value())), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (double& v : ga->values()) v += g[0];
  });
}

inline Var mean(const Var& a) {
  if (a.value().empty()) throw DimensionError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var relu(const Var& a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape()->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.value()[i] > 0.0) (*ga)[i] += g[i];
  });
}

inline Var leaky_relu(const Var& a, double slope = 0.01) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
  return a.tape()->record(std::move(out), {a}, [a, slope](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += (a.value()[i] > 0.0 ? 1.0 : slope) * g[i];
  });
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Var sigmoid(const Var& a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = sigmoid(v);
  Matrix saved = out;
  return a.tape()->record(std::move(out), {a}, [a, saved = std::move(saved)](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * saved[i] * (1.0 - saved[i]);
  });
}

/// Row-wise softmax of a / tau.
inline Var softmax_rows(const Var& a, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax_rows: tau must be positive");
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mx = in.empty() ? 0.0 : in[0];
    for (double v : in) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - mx) / tau);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  Matrix probs = out;
  return a.tape()->record(std::move(out), {a}, [a, probs = std::move(probs), tau](Tape& tp, const Matrix& g) {
    Matrix* ga = tp.adjoint(a);
    if (!ga) return;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      auto p = probs.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * gr[j];
      auto dst = ga->row(r);
      for (std::size_t j = 0; j < p.size(); ++j) dst[j] += p[j] * (gr[j] - dot) / tau;
    }
  });
}

/// Sub-block [r0, r0+nr) x [c0, c0+nc).
inline Var slice(const Var& a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  const Matrix& x = a.value();
  if (r0 + nr > x.rows() || c0 + nc > x.cols()) {
    throw DimensionError("slice: block out of range for " + x.shape());
  }
  Matrix out(nr, nc);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t c = 0; c < nc; ++c) out(r, c) = x(r0 + r, c0 + c);
  return a.tape()->record(std::move(out), {a}, [a, r0, nr, c0, nc](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t c = 0; c < nc; ++c) (*ga)(r0 + r, c0 + c) += g(r, c);
  });
}

inline Var row(const Var& a, std::size_t r) { return slice(a, r, 1, 0, a.cols()); }

/// Stack blocks with equal column counts on top of each other.
inline Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("vstack: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("vstack: column mismatch " + p.value().shape());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts, cols](Tape& tp, const Matrix& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      if (Matrix* gp = tp.adjoint(p))
        for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += g[offset * cols + i];
      offset += p.rows();
    }
  });
}

/// out_ij = f_i + g_j for column vectors f (N x 1) and g (M x 1).
inline Var outer_sum(const Var& f, const Var& g) {
  if (f.cols() != 1 || g.cols() != 1) throw DimensionError("outer_sum: expects column vectors");
  const std::size_t n = f.rows();
  const std::size_t m = g.rows();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = f.value()[i] + g.value()[j];
  return f.tape()->record(std::move(out), {f, g}, [f, g, n, m](Tape& tp, const Matrix& gr) {
    if (Matrix* gf = tp.adjoint(f))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gf)[i] += gr(i, j);
    if (Matrix* gg = tp.adjoint(g))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gg)[j] += gr(i, j);
  });
}

/// a ⊙ mask for a constant mask: gradient flows only where mask != 0.
inline Var apply_mask(const Var& a, Matrix mask) {
  if (!a.value().same_shape(mask)) throw DimensionError("apply_mask: " + a.value().shape() + " vs " + mask.shape());
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return a.tape()->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& tp, const Matrix& g) {
    if (Matrix* ga = tp.adjoint(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += mask[i] * g[i];
  });
}

/// Mean softmax cross-entropy of logits (B x K) against integer labels.
inline Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const Matrix& z = logits.value();
  if (z.rows() != labels.size()) throw DimensionError("cross_entropy: label count mismatch");
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (labels[r] >= z.cols()) throw DimensionError("cross_entropy: label out of range");
    auto in = z.row(r);
    double mx = in[0];
    for (double v : in) mx = std::max(mx, v);
    double zsum = 0.0;
    for (double v : in) zsum += std::exp(v - mx);
    const double lse = mx + std::log(zsum);
    loss += lse - in[labels[r]];
    for (std::size_t j = 0; j < z.cols(); ++j) probs(r, j) = std::exp(in[j] - lse);
  }
  const double inv_b = 1.0 / static_cast<double>(z.rows());
  return logits.tape()->record(Matrix::scalar(loss * inv_b), {logits},
                               [logits, labels, probs = std::move(probs), inv_b](Tape& tp, const Matrix& g) {
                                 Matrix* gl = tp.adjoint(logits);
                                 if (!gl) return;
                                 for (std::size_t r = 0; r < probs.rows(); ++r)
                                   for (std::size_t j = 0; j < probs.cols(); ++j) {
                                     const double y = j == labels[r] ? 1.0 : 0.0;
                                     (*gl)(r, j) += g[0] * inv_b * (probs(r, j) - y);
                                   }
                               });
}

/// Affine map x W^T + b for rows of x; W is (out x in), b is (1 x out).
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  if (xv.cols() != wv.cols()) throw DimensionError("linear: input " + xv.shape() + " vs weight " + wv.shape());
  if (b.rows() != 1 || b.cols() != wv.rows()) throw DimensionError("linear: bias " + b.value().shape());
  Matrix out(xv.rows(), wv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t o = 0; o < wv.rows(); ++o) {
      double acc = b.value()[o];
      for (std::size_t i = 0; i < xv.cols(); ++i) acc += xv(r, i) * wv(o, i);
      out(r, o) = acc;
    }
  return x.tape()->record(std::move(out), {x, w, b}, [x, w, b](Tape& tp, const Matrix& g) {
    if (Matrix* gx = tp.adjoint(x)) *gx += matmul(g, w.value());
    if (Matrix* gw = tp.adjoint(w)) *gw += matmul(transpose(g), x.value());
    if (Matrix* gb = tp.adjoint(b))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t o = 0; o < g.cols(); ++o) (*gb)[o] += g(r, o);
  });
}

}  // namespace morphsnn
