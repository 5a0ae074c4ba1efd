#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "morphsnn/numgrad/matrix.hpp"
#include "morphsnn/numgrad/rng.hpp"
#include "morphsnn/numgrad/tape.hpp"

namespace morphsnn {

enum class Mode { Train, Eval };

/// Channel-major feature-map layout (C, H, W); one map per matrix row.
struct MapShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  [[nodiscard]] std::size_t flat() const noexcept { return channels * height * width; }
  [[nodiscard]] std::size_t plane() const noexcept { return height * width; }
  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(channels) + "," + std::to_string(height) + "," + std::to_string(width) + ")";
  }
  friend bool operator==(const MapShape&, const MapShape&) = default;
};

/// 2x2 average pooling output shape; a 1x1 map passes through unchanged.
inline MapShape pooled_shape(const MapShape& s) {
  if (s.height == 1 && s.width == 1) return s;
  if (s.height % 2 != 0 || s.width % 2 != 0) {
    throw DimensionError("avg_pool2x2: odd spatial dims " + s.str());
  }
  return {s.channels, s.height / 2, s.width / 2};
}

// ---------------------------------------------------------------------------
// Spiking nonlinearity
// ---------------------------------------------------------------------------

/// Heaviside forward with arctan surrogate backward (training), or a smooth
/// sigmoid of matching slope in both directions (gradient-check clone).
enum class SpikeFn { Heaviside, Sigmoid };

/// d(spike)/du used in backward passes: alpha / (2 (1 + (pi/2 alpha x)^2)).
inline double surrogate_grad(double x, double alpha = 2.0) {
  const double z = 0.5 * std::numbers::pi * alpha * x;
  return alpha / (2.0 * (1.0 + z * z));
}

/// s = Theta(x) with Theta(0) = 1, x = u - v_th.
inline Var spike(const Var& x, SpikeFn fn, double alpha) {
  Matrix out = x.value();
  if (fn == SpikeFn::Heaviside) {
    for (double& v : out.values()) v = v >= 0.0 ? 1.0 : 0.0;
    return x.tape()->record(std::move(out), {x}, [x, alpha](Tape& tp, const Matrix& g) {
      if (Matrix* gx = tp.adjoint(x))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * surrogate_grad(x.value()[i], alpha);
    });
  }
  // Slope at 0 of sigmoid(k x) is k/4; match the surrogate peak alpha/2.
  const double k = 2.0 * alpha;
  for (double& v : out.values()) v = sigmoid(k * v);
  Matrix saved = out;
  return x.tape()->record(std::move(out), {x}, [x, k, saved = std::move(saved)](Tape& tp, const Matrix& g) {
    if (Matrix* gx = tp.adjoint(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * k * saved[i] * (1.0 - saved[i]);
  });
}

// ---------------------------------------------------------------------------
// LIF dynamics
// ---------------------------------------------------------------------------

struct LifParams {
  double tau_decay = 0.5;
  double v_th = 1.0;
  double surrogate_alpha = 2.0;
  SpikeFn spike_fn = SpikeFn::Heaviside;
};

/// Membrane potential and last emitted spikes; invalid Vars mean "at rest".
struct LifState {
  Var membrane;
  Var spikes;

  [[nodiscard]] bool at_rest() const noexcept { return !membrane.valid(); }
  void reset() { *this = LifState{}; }
};

/// u_t = tau u_{t-1} + C_t - v_th s_{t-1};  s_t = Theta(u_t - v_th).
/// Updates `state` and returns the new spikes.
inline Var lif_step(const LifParams& p, LifState& state, const Var& current) {
  Var u;
  if (state.at_rest()) {
    u = current;
  } else {
    if (!state.membrane.value().same_shape(current.value())) {
      throw DimensionError("lif_step: current " + current.value().shape() + " vs state " +
                           state.membrane.value().shape());
    }
    u = sub(add(scale(state.membrane, p.tau_decay), current), scale(state.spikes, p.v_th));
  }
  Var s = spike(add_scalar(u, -p.v_th), p.spike_fn, p.surrogate_alpha);
  state.membrane = u;
  state.spikes = s;
  return s;
}

// ---------------------------------------------------------------------------
// Convolution, normalisation, pooling
// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 1, zero padding 1. x: B x (Cin*H*W),
/// weight: Cout x (Cin*9), bias: 1 x Cout.
inline Var conv3x3(const Var& x, const Var& weight, const Var& bias, const MapShape& in) {
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  if (xv.cols() != in.flat()) throw DimensionError("conv3x3: input " + xv.shape() + " vs map " + in.str());
  if (wv.cols() != in.channels * 9) {
    throw DimensionError("conv3x3: channel mismatch, weight " + wv.shape() + " for " +
                         std::to_string(in.channels) + " input channels");
  }
  const std::size_t cout = wv.rows();
  if (bias.rows() != 1 || bias.cols() != cout) throw DimensionError("conv3x3: bias " + bias.value().shape());
  const std::size_t H = in.height, W = in.width, plane = in.plane(), cin = in.channels, B = xv.rows();

  auto kernel_pass = [=](auto&& visit) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      const std::size_t y0 = ky == 0 ? 1 : 0;
      const std::size_t y1 = ky == 2 ? H - 1 : H;
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::size_t x0 = kx == 0 ? 1 : 0;
        const std::size_t x1 = kx == 2 ? W - 1 : W;
        visit(ky, kx, y0, y1, x0, x1);
      }
    }
  };

  Matrix out(B, cout * plane);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xin = xv.row(b).data();
    double* o = out.row(b).data();
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t p = 0; p < plane; ++p) o[co * plane + p] = bias.value()[co];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* src = xin + ci * plane;
      bool any = false;
      for (std::size_t p = 0; p < plane && !any; ++p) any = src[p] != 0.0;
      if (!any) continue;
      for (std::size_t co = 0; co < cout; ++co) {
        double* dst = o + co * plane;
        const double* wk = wv.row(co).data() + ci * 9;
        kernel_pass([&](std::size_t ky, std::size_t kx, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
          const double w = wk[ky * 3 + kx];
          if (w == 0.0) return;
          for (std::size_t y = y0; y < y1; ++y) {
            const double* s = src + (y + ky - 1) * W + (kx - 1);
            double* d = dst + y * W;
            for (std::size_t xx = x0; xx < x1; ++xx) d[xx] += w * s[xx];
          }
        });
      }
    }
  }

  return x.tape()->record(std::move(out), {x, weight, bias}, [=](Tape& tp, const Matrix& g) {
    Matrix* gx = tp.adjoint(x);
    Matrix* gw = tp.adjoint(weight);
    Matrix* gb = tp.adjoint(bias);
    const Matrix& xval = x.value();
    const Matrix& wval = weight.value();
    for (std::size_t b = 0; b < B; ++b) {
      const double* grow = g.row(b).data();
      const double* xin = xval.row(b).data();
      if (gb)
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) acc += grow[co * plane + p];
          (*gb)[co] += acc;
        }
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* src = xin + ci * plane;
        double* gsrc = gx ? gx->row(b).data() + ci * plane : nullptr;
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gd = grow + co * plane;
          const double* wk = wval.row(co).data() + ci * 9;
          double* gwk = gw ? gw->row(co).data() + ci * 9 : nullptr;
          kernel_pass([&](std::size_t ky, std::size_t kx, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
            const double w = wk[ky * 3 + kx];
            double acc = 0.0;
            for (std::size_t y = y0; y < y1; ++y) {
              const std::size_t off = (y + ky - 1) * W + (kx - 1);
              const double* gline = gd + y * W;
              if (gwk) {
                const double* s = src + off;
                for (std::size_t xx = x0; xx < x1; ++xx) acc += gline[xx] * s[xx];
              }
              if (gsrc) {
                double* gs = gsrc + off;
                for (std::size_t xx = x0; xx < x1; ++xx) gs[xx] += w * gline[xx];
              }
            }
            if (gwk) gwk[ky * 3 + kx] += acc;
          });
        }
      }
    }
  });
}

/// Per-channel batch normalisation state (running statistics are buffers,
/// not trainable).
struct BatchNormBuffers {
  Matrix running_mean;
  Matrix running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Train mode normalises with batch statistics over (B, H, W) and updates the
/// running buffers; eval mode uses the running buffers.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const MapShape& shape,
                      BatchNormBuffers& bufs, Mode mode) {
  const Matrix& xv = x.value();
  if (xv.cols() != shape.flat()) throw DimensionError("batch_norm: input " + xv.shape() + " vs map " + shape.str());
  const std::size_t C = shape.channels, plane = shape.plane(), B = xv.rows();
  const double n = static_cast<double>(B * plane);

  std::vector<double> mu(C), inv_std(C);
  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < plane; ++p) s += xv(b, c * plane + p);
      const double m = s / n;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = xv(b, c * plane + p) - m;
          v += d * d;
        }
      v /= n;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + bufs.eps);
      const double unbiased = n > 1.0 ? v * n / (n - 1.0) : v;
      bufs.running_mean[c] = (1.0 - bufs.momentum) * bufs.running_mean[c] + bufs.momentum * m;
      bufs.running_var[c] = (1.0 - bufs.momentum) * bufs.running_var[c] + bufs.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = bufs.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(bufs.running_var[c] + bufs.eps);
    }
  }

  Matrix xhat(B, xv.cols());
  Matrix out(B, xv.cols());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = c * plane + p;
        xhat(b, i) = (xv(b, i) - mu[c]) * inv_std[c];
        out(b, i) = gamma.value()[c] * xhat(b, i) + beta.value()[c];
      }

  const bool train = mode == Mode::Train;
  return x.tape()->record(std::move(out), {x, gamma, beta},
                          [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Matrix& g) {
    Matrix* gx = tp.adjoint(x);
    Matrix* gg = tp.adjoint(gamma);
    Matrix* gbt = tp.adjoint(beta);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = c * plane + p;
          sum_g += g(b, i);
          sum_gx += g(b, i) * xhat(b, i);
        }
      if (gg) (*gg)[c] += sum_gx;
      if (gbt) (*gbt)[c] += sum_g;
      if (!gx) continue;
      const double gam = gamma.value()[c];
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = c * plane + p;
          if (train) {
            (*gx)(b, i) += gam * inv_std[c] * (g(b, i) - sum_g / n - xhat(b, i) * sum_gx / n);
          } else {
            (*gx)(b, i) += gam * inv_std[c] * g(b, i);
          }
        }
    }
  });
}

/// 2x2 average pooling with stride 2; identity on 1x1 maps.
inline Var avg_pool2x2(const Var& x, const MapShape& in) {
  const MapShape out_shape = pooled_shape(in);
  if (x.cols() != in.flat()) throw DimensionError("avg_pool2x2: input " + x.value().shape() + " vs map " + in.str());
  if (out_shape == in) return x;
  const std::size_t B = x.rows(), C = in.channels, W = in.width;
  const std::size_t Ho = out_shape.height, Wo = out_shape.width;
  Matrix out(B, out_shape.flat());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          const std::size_t base = c * in.plane() + 2 * y * W + 2 * xx;
          const auto& v = x.value();
          out(b, c * Ho * Wo + y * Wo + xx) =
              0.25 * (v(b, base) + v(b, base + 1) + v(b, base + W) + v(b, base + W + 1));
        }
  return x.tape()->record(std::move(out), {x}, [=](Tape& tp, const Matrix& g) {
    Matrix* gx = tp.adjoint(x);
    if (!gx) return;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t xx = 0; xx < Wo; ++xx) {
            const double gv = 0.25 * g(b, c * Ho * Wo + y * Wo + xx);
            const std::size_t base = c * in.plane() + 2 * y * W + 2 * xx;
            (*gx)(b, base) += gv;
            (*gx)(b, base + 1) += gv;
            (*gx)(b, base + W) += gv;
            (*gx)(b, base + W + 1) += gv;
          }
  });
}

/// Global average pooling: B x (C*H*W) -> B x C spatial means.
inline Var global_avg_pool(const Var& x, const MapShape& in) {
  if (x.cols() != in.flat()) throw DimensionError("global_avg_pool: input " + x.value().shape() + " vs map " + in.str());
  const std::size_t B = x.rows(), C = in.channels, plane = in.plane();
  Matrix out(B, C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += x.value()(b, c * plane + p);
      out(b, c) = s / static_cast<double>(plane);
    }
  return x.tape()->record(std::move(out), {x}, [=](Tape& tp, const Matrix& g) {
    Matrix* gx = tp.adjoint(x);
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < plane; ++p) (*gx)(b, c * plane + p) += g(b, c) * inv;
  });
}

// ---------------------------------------------------------------------------
// ConvBNSN node
// ---------------------------------------------------------------------------

/// Convolution -> batch normalisation -> LIF neuron. Holds parameters only;
/// membrane state lives in a caller-owned LifState.
struct ConvBnSnNode {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Parameter weight;  // out x (in*9)
  Parameter bias;    // 1 x out
  Parameter bn_gamma;
  Parameter bn_beta;
  BatchNormBuffers bn;
  LifParams lif;

  ConvBnSnNode() = default;
  ConvBnSnNode(std::string name, std::size_t in, std::size_t out, const LifParams& lif_params, Rng& rng)
      : in_channels(in), out_channels(out), lif(lif_params) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * 9));
    Matrix w(out, in * 9), b(1, out);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    for (double& v : b.values()) v = rng.uniform(-bound, bound);
    weight = Parameter(name + ".conv.weight", std::move(w));
    bias = Parameter(name + ".conv.bias", std::move(b));
    bn_gamma = Parameter(name + ".bn.weight", Matrix(1, out, 1.0));
    bn_beta = Parameter(name + ".bn.bias", Matrix(1, out, 0.0));
    bn.running_mean = Matrix(1, out, 0.0);
    bn.running_var = Matrix(1, out, 1.0);
  }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    fn(weight);
    fn(bias);
    fn(bn_gamma);
    fn(bn_beta);
  }

  [[nodiscard]] MapShape output_shape(const MapShape& in) const { return {out_channels, in.height, in.width}; }
};

/// Spike map (B x Cout*H*W) of one ConvBNSN step.
inline Var conv_bn_sn_forward(Tape& tape, ConvBnSnNode& node, LifState& state, const Var& input,
                              const MapShape& in_shape, Mode mode) {
  if (in_shape.channels != node.in_channels) {
    throw DimensionError("conv_bn_sn_forward: node expects " + std::to_string(node.in_channels) +
                         " channels, input has " + std::to_string(in_shape.channels));
  }
  const MapShape out_shape = node.output_shape(in_shape);
  Var c = conv3x3(input, tape.param(node.weight), tape.param(node.bias), in_shape);
  Var n = batch_norm(c, tape.param(node.bn_gamma), tape.param(node.bn_beta), out_shape, node.bn, mode);
  return lif_step(node.lif, state, n);
}

/// Source-node step: ConvBNSN followed by 2x2 average pooling.
inline Var source_forward(Tape& tape, ConvBnSnNode& node, LifState& state, const Var& input,
                          const MapShape& in_shape, Mode mode, Var* spikes_out = nullptr) {
  pooled_shape(in_shape);  // validates spatial dims before any work
  Var s = conv_bn_sn_forward(tape, node, state, input, in_shape, mode);
  if (spikes_out) *spikes_out = s;
  return avg_pool2x2(s, node.output_shape(in_shape));
}

}  // namespace morphsnn
