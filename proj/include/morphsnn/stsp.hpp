#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "morphsnn/neuron.hpp"
#include "morphsnn/numgrad/matrix.hpp"
#include "morphsnn/numgrad/rng.hpp"
#include "morphsnn/numgrad/tape.hpp"

namespace morphsnn {

/// Structural-plasticity hyperparameters for one layer.
struct StspConfig {
  std::size_t nodes = 4;
  std::size_t topk = 3;
  double beta = 0.2;          // momentum of the synaptic matrix
  double trace_lambda = 0.6;  // retention of the synaptic trace
  double tau_softmax = 0.01;
  double dropout = 0.2;
  double leaky_slope = 0.01;

  void validate() const {
    if (nodes < 1) throw ParameterError("stsp: need at least one node");
    if (topk < 1 || topk > nodes) {
      throw ParameterError("stsp: k=" + std::to_string(topk) + " outside [1, " + std::to_string(nodes) + "]");
    }
    if (beta < 0.0 || beta > 1.0) throw ParameterError("stsp: beta outside [0,1]");
    if (trace_lambda < 0.0 || trace_lambda > 1.0) throw ParameterError("stsp: lambda outside [0,1]");
    if (!(tau_softmax > 0.0)) throw ParameterError("stsp: softmax temperature must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ParameterError("stsp: dropout outside [0,1)");
  }
};

/// Learnable projection and multi-head attention weights. No bias terms, so
/// an all-zero hybrid state maps to an all-zero embedding.
struct AttentionParams {
  std::size_t in_channels = 0;
  std::size_t d_proj = 0;
  std::size_t heads = 1;
  std::size_t d_head = 0;
  Parameter w_proj;  // d_proj x C
  Parameter w_head;  // (heads * d_head) x d_proj
  Parameter attn;    // heads x (2 * d_head); row m is a_m = [left | right]

  AttentionParams() = default;
  AttentionParams(const std::string& name, std::size_t channels, std::size_t head_count, Rng& rng)
      : in_channels(channels), d_proj(channels), heads(head_count) {
    if (head_count == 0 || channels % head_count != 0) {
      throw ParameterError("attention: d_proj=" + std::to_string(channels) + " not divisible by " +
                           std::to_string(head_count) + " heads");
    }
    d_head = d_proj / heads;
    auto init = [&rng](std::size_t r, std::size_t c, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Matrix m(r, c);
      for (double& v : m.values()) v = rng.uniform(-bound, bound);
      return m;
    };
    w_proj = Parameter(name + ".stsp.w_proj", init(d_proj, channels, channels));
    w_head = Parameter(name + ".stsp.w_head", init(heads * d_head, d_proj, d_proj));
    attn = Parameter(name + ".stsp.attn", init(heads, 2 * d_head, 2 * d_head));
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    fn(w_proj);
    fn(w_head);
    fn(attn);
  }
};

/// Per-sample synaptic matrix S (N x N) and its pruned form.
struct AdjacencyState {
  Var S;
  Var S_pruned;
  Matrix prune_mask;

  static AdjacencyState initial(Tape& tape, std::size_t n) {
    AdjacencyState s;
    s.S = tape.constant(Matrix(n, n, 1.0));
    return s;
  }
};

/// Per-sample synaptic traces, one row per node (N x d_proj).
struct TraceBank {
  Var traces;
  double lambda = 0.6;

  static TraceBank initial(Tape& tape, std::size_t n, std::size_t d, double lambda) {
    return TraceBank{tape.constant(Matrix(n, d, 0.0)), lambda};
  }
};

/// Index 0 carries the current source output, indices 1..N-1 the previous
/// outputs of the other nodes (zeros when `prev_outs` is empty, i.e. t = 1).
inline std::vector<Var> hybrid_state(Tape& tape, const Var& source_out, const std::vector<Var>& prev_outs,
                                     std::size_t n) {
  std::vector<Var> out;
  out.reserve(n);
  out.push_back(source_out);
  if (prev_outs.empty()) {
    for (std::size_t i = 1; i < n; ++i) out.push_back(tape.constant(Matrix(1, source_out.cols(), 0.0)));
    return out;
  }
  if (prev_outs.size() != n - 1) {
    throw DimensionError("hybrid_state: expected " + std::to_string(n - 1) + " previous outputs, got " +
                         std::to_string(prev_outs.size()));
  }
  out.insert(out.end(), prev_outs.begin(), prev_outs.end());
  return out;
}

/// h_i = ReLU(W_proj GAP(state_i)) for every state, stacked into N x d_proj.
inline Var project_features(const std::vector<Var>& states, const MapShape& shape, AttentionParams& params) {
  Tape& tape = *states.front().tape();
  std::vector<Var> pooled;
  pooled.reserve(states.size());
  for (const Var& s : states) pooled.push_back(global_avg_pool(s, shape));
  Var g = vstack(pooled);
  return relu(matmul(g, transpose(tape.param(params.w_proj))));
}

/// Tr <- lambda Tr + (1 - lambda) h, applied to every node row.
inline Var update_trace(TraceBank& bank, const Var& h) {
  if (!bank.traces.value().same_shape(h.value())) {
    throw DimensionError("update_trace: trace " + bank.traces.value().shape() + " vs features " + h.value().shape());
  }
  bank.traces = add(scale(bank.traces, bank.lambda), scale(h, 1.0 - bank.lambda));
  return bank.traces;
}

/// Dense bidirectional scores e_{ij,m} = LeakyReLU(a_m^T [h_{i,m} || h_{j,m}]),
/// one N x N matrix per head.
inline std::vector<Var> attention_scores(const Var& traces, AttentionParams& params, double leaky_slope = 0.01) {
  Tape& tape = *traces.tape();
  Var projected = matmul(traces, transpose(tape.param(params.w_head)));  // N x (heads * d_head)
  Var attn = tape.param(params.attn);
  std::vector<Var> scores;
  scores.reserve(params.heads);
  const std::size_t n = traces.rows();
  for (std::size_t m = 0; m < params.heads; ++m) {
    Var hm = slice(projected, 0, n, m * params.d_head, params.d_head);
    Var left = transpose(slice(attn, m, 1, 0, params.d_head));
    Var right = transpose(slice(attn, m, 1, params.d_head, params.d_head));
    scores.push_back(leaky_relu(outer_sum(matmul(hm, left), matmul(hm, right)), leaky_slope));
  }
  return scores;
}

/// ebar = mean over heads of (e_m + e_m^T) / 2; exactly symmetric.
inline Var symmetrize_scores(const std::vector<Var>& scores) {
  if (scores.empty()) throw DimensionError("symmetrize_scores: no heads");
  Var acc;
  for (const Var& e : scores) {
    Var sym = add(e, transpose(e));
    acc = acc.valid() ? add(acc, sym) : sym;
  }
  return scale(acc, 0.5 / static_cast<double>(scores.size()));
}

/// Row-wise temperature softmax; in train mode followed by inverted dropout.
inline Var instantaneous_adjacency(const Var& ebar, double tau, double dropout, Mode mode, Rng& rng) {
  Var a = softmax_rows(ebar, tau);
  if (mode == Mode::Eval || dropout == 0.0) return a;
  Matrix mask(a.rows(), a.cols());
  const double keep_scale = 1.0 / (1.0 - dropout);
  for (double& v : mask.values()) v = rng.bernoulli(dropout) ? 0.0 : keep_scale;
  return apply_mask(a, std::move(mask));
}

/// S_t = beta S_{t-1} + (1 - beta) A_t.
inline Var momentum_update(AdjacencyState& state, const Var& a_hat, double beta) {
  if (!state.S.value().same_shape(a_hat.value())) {
    throw DimensionError("momentum_update: S " + state.S.value().shape() + " vs A " + a_hat.value().shape());
  }
  if (beta == 1.0) return state.S;  // static graph: S stays bitwise unchanged
  state.S = add(scale(state.S, beta), scale(a_hat, 1.0 - beta));
  return state.S;
}

/// 0/1 mask keeping the k largest entries of every row; ties go to the
/// lowest column index.
inline Matrix topk_mask(const Matrix& s, std::size_t k) {
  if (k < 1 || k > s.cols()) {
    throw ParameterError("topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(s.cols()) + "]");
  }
  Matrix mask(s.rows(), s.cols(), 0.0);
  std::vector<std::size_t> idx(s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s(r, a) > s(r, b); });
    for (std::size_t j = 0; j < k; ++j) mask(r, idx[j]) = 1.0;
  }
  return mask;
}

/// Top-k pruning; the backward pass is masked so pruned entries receive
/// exactly zero gradient.
inline Var topk_prune(AdjacencyState& state, std::size_t k) {
  state.prune_mask = topk_mask(state.S.value(), k);
  state.S_pruned = apply_mask(state.S, state.prune_mask);
  return state.S_pruned;
}

/// Intermediate values of one STSP step, kept for inspection and tests.
struct StspStep {
  Var features;  // h, N x d_proj
  Var traces;    // Tr, N x d_proj
  Var ebar;      // symmetric scores
  Var a_hat;     // instantaneous adjacency
  Var S;         // post-momentum synaptic matrix
  Var S_pruned;  // Top-k pruned
};

/// hybrid_state -> project_features -> update_trace -> attention_scores ->
/// symmetrize_scores -> instantaneous_adjacency -> momentum_update -> topk_prune.
inline StspStep stsp_step(AdjacencyState& state, TraceBank& bank, AttentionParams& params, const StspConfig& cfg,
                          const Var& source_out, const std::vector<Var>& prev_outs, const MapShape& shape,
                          Mode mode, Rng& rng) {
  Tape& tape = *source_out.tape();
  if (state.S.rows() != cfg.nodes || bank.traces.rows() != cfg.nodes) {
    throw DimensionError("stsp_step: state sized for " + std::to_string(state.S.rows()) + " nodes, config has " +
                         std::to_string(cfg.nodes));
  }
  StspStep step;
  const auto states = hybrid_state(tape, source_out, prev_outs, cfg.nodes);
  step.features = project_features(states, shape, params);
  step.traces = update_trace(bank, step.features);
  step.ebar = symmetrize_scores(attention_scores(step.traces, params, cfg.leaky_slope));
  step.a_hat = instantaneous_adjacency(step.ebar, cfg.tau_softmax, cfg.dropout, mode, rng);
  step.S = momentum_update(state, step.a_hat, cfg.beta);
  step.S_pruned = topk_prune(state, cfg.topk);
  return step;
}

}  // namespace morphsnn
