#pragma once

// Shared helpers for the unit tests and the acceptance runner: a central
// finite-difference harness, the per-op gradient catalogue and the
// surrogate-smoothed end-to-end network used for gradient checks.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "morphsnn/morphsnn.hpp"

namespace morphsnn::check {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

/// sum(out ⊙ W) for a fixed random W, so every output entry gets a distinct
/// upstream adjoint.
inline Var probe_loss(const Var& out, std::uint64_t seed = 7) {
  Rng rng(seed);
  Tape& tape = *out.tape();
  return sum(mul(out, tape.constant(random_matrix(out.rows(), out.cols(), rng))));
}

struct FdResult {
  double rel_err = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t entries = 0;
};

/// ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||) over every
/// entry of every parameter, with central differences of step h.
inline FdResult finite_difference(const std::vector<Parameter*>& params, const std::function<Var(Tape&)>& loss_fn,
                                  double h = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).value()[0];
  };
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  FdResult r;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double fp = eval();
      p->value[i] = keep - h;
      const double fm = eval();
      p->value[i] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = p->grad[i];
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
      ++r.entries;
    }
  }
  r.analytic_norm = std::sqrt(a2);
  r.numeric_norm = std::sqrt(n2);
  const double scale = std::max(r.analytic_norm, r.numeric_norm);
  r.rel_err = scale < 1e-12 ? std::sqrt(diff2) : std::sqrt(diff2) / scale;
  return r;
}

struct OpCheck {
  std::string module;
  std::string name;
  FdResult result;
};

namespace detail {

struct ParamSet {
  std::vector<Parameter> owned;
  explicit ParamSet(std::size_t n) { owned.reserve(n); }
  Parameter& add(const std::string& name, Matrix m) {
    owned.emplace_back(name, std::move(m));
    return owned.back();
  }
  std::vector<Parameter*> ptrs() {
    std::vector<Parameter*> out;
    for (auto& p : owned) out.push_back(&p);
    return out;
  }
};

}  // namespace detail

/// Every differentiable op with random inputs in [-1, 1] (shapes <= 8x8),
/// checked against central differences. `module` filters the catalogue
/// ("" runs everything).
inline std::vector<OpCheck> op_gradient_checks(const std::string& module = "") {
  std::vector<OpCheck> out;
  Rng rng(2020);
  auto want = [&](const char* m) { return module.empty() || module == m; };
  auto run = [&](const char* m, const char* name, detail::ParamSet& ps, const std::function<Var(Tape&)>& f) {
    out.push_back({m, name, finite_difference(ps.ptrs(), f)});
  };

  if (want("numgrad")) {
    {
      detail::ParamSet ps(2);
      auto& a = ps.add("a", random_matrix(3, 4, rng));
      auto& b = ps.add("b", random_matrix(3, 4, rng));
      run("numgrad", "add", ps, [&](Tape& t) { return probe_loss(add(t.param(a), t.param(b))); });
      run("numgrad", "sub", ps, [&](Tape& t) { return probe_loss(sub(t.param(a), t.param(b))); });
      run("numgrad", "mul", ps, [&](Tape& t) { return probe_loss(mul(t.param(a), t.param(b))); });
    }
    {
      detail::ParamSet ps(1);
      auto& a = ps.add("a", random_matrix(4, 5, rng));
      run("numgrad", "scale", ps, [&](Tape& t) { return probe_loss(scale(t.param(a), -1.7)); });
      run("numgrad", "add_scalar", ps, [&](Tape& t) { return probe_loss(add_scalar(t.param(a), 0.3)); });
      run("numgrad", "transpose", ps, [&](Tape& t) { return probe_loss(transpose(t.param(a))); });
      run("numgrad", "reshape", ps, [&](Tape& t) { return probe_loss(reshape(t.param(a), 2, 10)); });
      run("numgrad", "sum", ps, [&](Tape& t) { return scale(sum(mul(t.param(a), t.param(a))), 0.5); });
      run("numgrad", "mean", ps, [&](Tape& t) { return mean(mul(t.param(a), t.param(a))); });
      run("numgrad", "relu", ps, [&](Tape& t) { return probe_loss(relu(t.param(a))); });
      run("numgrad", "leaky_relu", ps, [&](Tape& t) { return probe_loss(leaky_relu(t.param(a), 0.01)); });
      run("numgrad", "sigmoid", ps, [&](Tape& t) { return probe_loss(sigmoid(t.param(a))); });
      run("numgrad", "softmax_rows(tau=0.5)", ps, [&](Tape& t) { return probe_loss(softmax_rows(t.param(a), 0.5)); });
      run("numgrad", "slice", ps, [&](Tape& t) { return probe_loss(slice(t.param(a), 1, 2, 1, 3)); });
      run("numgrad", "row", ps, [&](Tape& t) { return probe_loss(row(t.param(a), 2)); });
      Matrix mask(4, 5);
      for (double& v : mask.values()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
      run("numgrad", "apply_mask", ps, [&, mask](Tape& t) { return probe_loss(apply_mask(t.param(a), mask)); });
    }
    {
      detail::ParamSet ps(1);
      auto& a = ps.add("a", random_matrix(3, 4, rng, -0.01, 0.01));
      run("numgrad", "softmax_rows(tau=0.01)", ps, [&](Tape& t) { return probe_loss(softmax_rows(t.param(a), 0.01)); });
    }
    {
      detail::ParamSet ps(2);
      auto& a = ps.add("a", random_matrix(3, 4, rng));
      auto& b = ps.add("b", random_matrix(4, 2, rng));
      run("numgrad", "matmul", ps, [&](Tape& t) { return probe_loss(matmul(t.param(a), t.param(b))); });
    }
    {
      detail::ParamSet ps(2);
      auto& s = ps.add("s", random_matrix(1, 1, rng));
      auto& a = ps.add("a", random_matrix(3, 3, rng));
      run("numgrad", "scale_by", ps, [&](Tape& t) { return probe_loss(scale_by(t.param(s), t.param(a))); });
    }
    {
      detail::ParamSet ps(3);
      auto& a = ps.add("a", random_matrix(2, 3, rng));
      auto& b = ps.add("b", random_matrix(1, 3, rng));
      auto& c = ps.add("c", random_matrix(3, 3, rng));
      run("numgrad", "vstack", ps, [&](Tape& t) { return probe_loss(vstack({t.param(a), t.param(b), t.param(c)})); });
    }
    {
      detail::ParamSet ps(2);
      auto& f = ps.add("f", random_matrix(4, 1, rng));
      auto& g = ps.add("g", random_matrix(3, 1, rng));
      run("numgrad", "outer_sum", ps, [&](Tape& t) { return probe_loss(outer_sum(t.param(f), t.param(g))); });
    }
    {
      detail::ParamSet ps(1);
      auto& z = ps.add("z", random_matrix(4, 3, rng, -2.0, 2.0));
      const std::vector<std::size_t> labels{0, 2, 1, 2};
      run("numgrad", "cross_entropy", ps, [&](Tape& t) { return cross_entropy(t.param(z), labels); });
    }
    {
      detail::ParamSet ps(3);
      auto& x = ps.add("x", random_matrix(3, 5, rng));
      auto& w = ps.add("w", random_matrix(4, 5, rng));
      auto& b = ps.add("b", random_matrix(1, 4, rng));
      run("numgrad", "linear", ps, [&](Tape& t) { return probe_loss(linear(t.param(x), t.param(w), t.param(b))); });
    }
  }

  if (want("neuron")) {
    {
      detail::ParamSet ps(1);
      auto& x = ps.add("x", random_matrix(3, 4, rng));
      run("neuron", "spike(sigmoid clone)", ps,
          [&](Tape& t) { return probe_loss(spike(t.param(x), SpikeFn::Sigmoid, 2.0)); });
    }
    {
      detail::ParamSet ps(3);
      auto& c1 = ps.add("c1", random_matrix(2, 4, rng, 0.0, 2.0));
      auto& c2 = ps.add("c2", random_matrix(2, 4, rng, 0.0, 2.0));
      auto& c3 = ps.add("c3", random_matrix(2, 4, rng, 0.0, 2.0));
      LifParams lp;
      lp.spike_fn = SpikeFn::Sigmoid;
      run("neuron", "lif_step x3 (sigmoid clone)", ps, [&, lp](Tape& t) {
        LifState st;
        Var acc = lif_step(lp, st, t.param(c1));
        acc = add(acc, lif_step(lp, st, t.param(c2)));
        acc = add(acc, lif_step(lp, st, t.param(c3)));
        return probe_loss(add(acc, st.membrane));
      });
    }
    {
      const MapShape in{2, 4, 4};
      detail::ParamSet ps(3);
      auto& x = ps.add("x", random_matrix(2, in.flat(), rng));
      auto& w = ps.add("w", random_matrix(3, 18, rng));
      auto& b = ps.add("b", random_matrix(1, 3, rng));
      run("neuron", "conv3x3", ps, [&, in](Tape& t) { return probe_loss(conv3x3(t.param(x), t.param(w), t.param(b), in)); });
    }
    {
      const MapShape shape{2, 2, 2};
      detail::ParamSet ps(3);
      auto& x = ps.add("x", random_matrix(3, shape.flat(), rng));
      auto& g = ps.add("gamma", random_matrix(1, 2, rng, 0.5, 1.5));
      auto& b = ps.add("beta", random_matrix(1, 2, rng));
      run("neuron", "batch_norm(train)", ps, [&, shape](Tape& t) {
        BatchNormBuffers bufs{Matrix(1, 2, 0.0), Matrix(1, 2, 1.0)};
        return probe_loss(batch_norm(t.param(x), t.param(g), t.param(b), shape, bufs, Mode::Train));
      });
      run("neuron", "batch_norm(eval)", ps, [&, shape](Tape& t) {
        BatchNormBuffers bufs{Matrix{{0.1, -0.2}}, Matrix{{0.5, 2.0}}};
        return probe_loss(batch_norm(t.param(x), t.param(g), t.param(b), shape, bufs, Mode::Eval));
      });
    }
    {
      const MapShape in{2, 4, 4};
      detail::ParamSet ps(1);
      auto& x = ps.add("x", random_matrix(2, in.flat(), rng));
      run("neuron", "avg_pool2x2", ps, [&, in](Tape& t) { return probe_loss(avg_pool2x2(t.param(x), in)); });
      run("neuron", "global_avg_pool", ps, [&, in](Tape& t) { return probe_loss(global_avg_pool(t.param(x), in)); });
    }
  }

  if (want("stsp")) {
    const MapShape shape{4, 2, 2};
    {
      Rng prng(11);
      AttentionParams ap("p", 4, 2, prng);
      detail::ParamSet ps(3);
      auto& s0 = ps.add("s0", random_matrix(1, shape.flat(), rng, 0.0, 1.0));
      auto& s1 = ps.add("s1", random_matrix(1, shape.flat(), rng, 0.0, 1.0));
      auto& s2 = ps.add("s2", random_matrix(1, shape.flat(), rng, 0.0, 1.0));
      auto ptrs = ps.ptrs();
      ptrs.push_back(&ap.w_proj);
      out.push_back({"stsp", "project_features", finite_difference(ptrs, [&, shape](Tape& t) {
                       return probe_loss(project_features({t.param(s0), t.param(s1), t.param(s2)}, shape, ap));
                     })});
    }
    {
      detail::ParamSet ps(2);
      auto& tr = ps.add("tr", random_matrix(3, 4, rng));
      auto& h = ps.add("h", random_matrix(3, 4, rng));
      run("stsp", "update_trace", ps, [&](Tape& t) {
        TraceBank bank{t.param(tr), 0.6};
        return probe_loss(update_trace(bank, t.param(h)));
      });
    }
    {
      Rng prng(12);
      AttentionParams ap("p", 4, 2, prng);
      Parameter tr("tr", random_matrix(3, 4, rng));
      std::vector<Parameter*> ptrs{&tr, &ap.w_head, &ap.attn};
      out.push_back({"stsp", "attention_scores", finite_difference(ptrs, [&](Tape& t) {
                       auto e = attention_scores(t.param(tr), ap, 0.01);
                       return add(probe_loss(e[0], 1), probe_loss(e[1], 2));
                     })});
    }
    {
      detail::ParamSet ps(2);
      auto& e0 = ps.add("e0", random_matrix(3, 3, rng));
      auto& e1 = ps.add("e1", random_matrix(3, 3, rng));
      run("stsp", "symmetrize_scores", ps,
          [&](Tape& t) { return probe_loss(symmetrize_scores({t.param(e0), t.param(e1)})); });
    }
    {
      detail::ParamSet ps(1);
      auto& e = ps.add("e", random_matrix(4, 4, rng, -0.01, 0.01));
      run("stsp", "instantaneous_adjacency(train, dropout)", ps, [&](Tape& t) {
        Rng drop(99);
        return probe_loss(instantaneous_adjacency(t.param(e), 0.01, 0.2, Mode::Train, drop));
      });
    }
    {
      detail::ParamSet ps(2);
      auto& s = ps.add("s", random_matrix(3, 3, rng, 0.0, 1.0));
      auto& a = ps.add("a", random_matrix(3, 3, rng, 0.0, 1.0));
      run("stsp", "momentum_update", ps, [&](Tape& t) {
        AdjacencyState st;
        st.S = t.param(s);
        return probe_loss(momentum_update(st, t.param(a), 0.2));
      });
    }
    {
      detail::ParamSet ps(1);
      auto& s = ps.add("s", random_matrix(4, 4, rng, 0.0, 1.0));
      run("stsp", "topk_prune", ps, [&](Tape& t) {
        AdjacencyState st;
        st.S = t.param(s);
        return probe_loss(topk_prune(st, 2));
      });
    }
  }

  if (want("diffusion")) {
    {
      detail::ParamSet ps(1);
      auto& s = ps.add("s", random_matrix(4, 4, rng, 0.05, 1.0));
      run("diffusion", "diffusion_operator", ps, [&](Tape& t) { return probe_loss(diffusion_operator(t.param(s))); });
    }
    {
      detail::ParamSet ps(1);
      Matrix pruned = random_matrix(4, 4, rng, 0.05, 1.0);
      const Matrix m = topk_mask(pruned, 2);
      for (std::size_t i = 0; i < pruned.size(); ++i) pruned[i] *= m[i];
      auto& s = ps.add("s", pruned);
      run("diffusion", "diffusion_operator(pruned)", ps, [&, m](Tape& t) {
        return probe_loss(diffusion_operator(apply_mask(t.param(s), m)));
      });
    }
    {
      detail::ParamSet ps(2);
      auto& p = ps.add("p", random_matrix(3, 3, rng));
      auto& x = ps.add("x", random_matrix(3, 5, rng));
      run("diffusion", "diffuse(M=2)", ps, [&](Tape& t) { return probe_loss(diffuse(t.param(p), t.param(x), 2)); });
    }
    {
      detail::ParamSet ps(1);
      auto& src = ps.add("src", random_matrix(1, 6, rng));
      run("diffusion", "init_signal", ps, [&](Tape& t) { return probe_loss(init_signal(t.param(src), 3)); });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end clone
// ---------------------------------------------------------------------------

/// Gradient-check network: N = 3 nodes, T = 2, 8x8 input, with every spike
/// function replaced by the sigmoid clone.
inline NetworkConfig clone_config() {
  NetworkConfig c;
  c.input_channels = 2;
  c.height = 8;
  c.width = 8;
  c.channels = 4;
  c.layers = 2;
  c.nodes = 3;
  c.classes = 3;
  c.timesteps = 2;
  c.diffusion_steps = 2;
  c.topk = 2;
  c.heads = 2;
  c.lif.spike_fn = SpikeFn::Sigmoid;
  return c;
}

inline std::vector<SpikeTensor> clone_inputs(const NetworkConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SpikeTensor> xs;
  for (int b = 0; b < 2; ++b) {
    SpikeTensor s(c.timesteps, c.input_channels, c.height, c.width);
    for (auto& v : s.raw()) v = rng.bernoulli(0.3) ? 1 : 0;
    xs.push_back(std::move(s));
  }
  return xs;
}

struct CloneCheck {
  FdResult all;
  FdResult readout;
};

/// Train-mode forward (batch statistics, dropout from a re-seeded stream) and
/// cross-entropy of the smoothed network, checked against central differences
/// for every parameter, plus the readout weights alone.
inline CloneCheck end_to_end_clone_check(std::uint64_t seed = 2020) {
  NetworkConfig cfg = clone_config();
  cfg.seed = seed;
  MorphNet net(cfg);
  // Non-zero readout weights so every gate has a distinct value.
  Rng init(seed + 1);
  for (auto& layer : net.layers)
    for (double& v : layer.readout.value.values()) v = init.uniform(-1.0, 1.0);
  const auto xs = clone_inputs(cfg, seed + 2);
  const std::vector<std::size_t> labels{0, 2};
  auto loss_fn = [&](Tape& tape) {
    Rng rng(seed + 3);
    std::vector<const SpikeTensor*> batch{&xs[0], &xs[1]};
    ForwardResult r = network_forward(tape, net, batch, Mode::Train, rng);
    return cross_entropy(r.logits, labels);
  };
  CloneCheck out;
  out.all = finite_difference(parameters_of(net), loss_fn);
  std::vector<Parameter*> readouts;
  for (auto& layer : net.layers) readouts.push_back(&layer.readout);
  out.readout = finite_difference(readouts, loss_fn);
  return out;
}

}  // namespace morphsnn::check
