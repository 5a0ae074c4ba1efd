#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <string>
#include <vector>

#include "morphsnn/errors.hpp"
#include "morphsnn/numgrad/rng.hpp"
#include "morphsnn/spike_tensor.hpp"

namespace morphsnn {

enum class StreamKind { MovingBar, FlickerPattern };

inline std::string to_string(StreamKind k) { return k == StreamKind::MovingBar ? "moving-bar" : "flicker-pattern"; }

inline StreamKind parse_stream_kind(const std::string& s) {
  if (s == "moving-bar") return StreamKind::MovingBar;
  if (s == "flicker-pattern") return StreamKind::FlickerPattern;
  throw ParameterError("unknown stream kind '" + s + "' (expected moving-bar or flicker-pattern)");
}

struct SynthStream {
  SpikeTensor frames;
  std::size_t label = 0;
  StreamKind kind = StreamKind::MovingBar;
};

struct StreamDims {
  std::size_t timesteps = 5;
  std::size_t channels = 2;
  std::size_t height = 16;
  std::size_t width = 16;
};

struct GeneratorOptions {
  double noise = 0.02;              // background event probability (moving-bar)
  double flicker_intensity = 0.5;   // per-frame firing probability inside the mask
  double flicker_density = 0.3;     // fraction of pixels in a class mask
};

namespace detail {

/// Direction of travel for moving-bar class `label`: 0 left->right,
/// 1 right->left, 2 top->bottom, 3 bottom->top, 4..7 the diagonals.
struct BarDirection {
  int dx = 0;
  int dy = 0;
};

inline BarDirection bar_direction(std::size_t label) {
  static constexpr BarDirection dirs[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
  return dirs[label % 8];
}

inline SpikeTensor moving_bar(std::size_t label, const StreamDims& d, const GeneratorOptions& opt, Rng& rng) {
  SpikeTensor s(d.timesteps, d.channels, d.height, d.width);
  const BarDirection dir = bar_direction(label);
  const long H = static_cast<long>(d.height), W = static_cast<long>(d.width);
  const long T = static_cast<long>(d.timesteps);

  // Position along the travel axis advances by `speed` each frame; the start
  // is drawn so the whole sweep stays inside the frame.
  const long extent = dir.dx != 0 && dir.dy != 0 ? std::min(H, W) : (dir.dx != 0 ? W : H);
  const long max_speed = std::max<long>(1, (extent - 1) / std::max<long>(1, T - 1));
  const long speed = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(std::min<long>(max_speed, 3))));
  const long span = speed * (T - 1);
  const long start = static_cast<long>(rng.below(static_cast<std::uint64_t>(std::max<long>(1, extent - span))));
  // Bar length across the travel axis and its offset.
  const long across = dir.dx != 0 && dir.dy != 0 ? std::min(H, W) : (dir.dx != 0 ? H : W);
  const long len = across / 2 + static_cast<long>(rng.below(static_cast<std::uint64_t>(across - across / 2 + 1)));
  const long off = static_cast<long>(rng.below(static_cast<std::uint64_t>(across - len + 1)));

  auto coord = [extent](int sign, long pos) { return sign > 0 ? pos : extent - 1 - pos; };
  auto bar_pixels = [&](long pos) {
    std::vector<std::pair<long, long>> px;  // (y, x)
    for (long a = off; a < off + len; ++a) {
      if (dir.dx != 0 && dir.dy != 0) {
        // Band perpendicular to the diagonal of travel.
        const long k = a - across / 2;
        const long x = coord(dir.dx, pos) - k * dir.dy;
        const long y = coord(dir.dy, pos) + k * dir.dx;
        if (y >= 0 && y < H && x >= 0 && x < W) px.emplace_back(y, x);
      } else if (dir.dx != 0) {
        px.emplace_back(a, coord(dir.dx, pos));
      } else {
        px.emplace_back(coord(dir.dy, pos), a);
      }
    }
    return px;
  };

  std::vector<std::pair<long, long>> prev;
  for (long t = 0; t < T; ++t) {
    const auto cur = bar_pixels(start + speed * t);
    for (auto [y, x] : cur) s.set(t, 0, y, x, true);
    if (d.channels >= 2) {
      for (auto [y, x] : prev) {
        bool still = false;
        for (auto [cy, cx] : cur) still = still || (cy == y && cx == x);
        if (!still) s.set(t, 1, y, x, true);
      }
    }
    prev = cur;
  }
  for (auto& v : s.raw())
    if (rng.bernoulli(opt.noise)) v = 1;
  return s;
}

inline std::vector<SpikeTensor> flicker_masks(std::size_t classes, const StreamDims& d, const GeneratorOptions& opt,
                                              Rng& rng) {
  std::vector<SpikeTensor> masks;
  masks.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    SpikeTensor m(1, d.channels, d.height, d.width);
    for (auto& v : m.raw()) v = rng.bernoulli(opt.flicker_density) ? 1 : 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

inline SpikeTensor flicker(const SpikeTensor& mask, const StreamDims& d, const GeneratorOptions& opt, Rng& rng) {
  SpikeTensor s(d.timesteps, d.channels, d.height, d.width);
  const auto m = mask.frame(0);
  for (std::size_t t = 0; t < d.timesteps; ++t) {
    auto f = s.frame(t);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = (m[i] && rng.bernoulli(opt.flicker_intensity)) ? 1 : 0;
  }
  return s;
}

}  // namespace detail

/// Synthetic event streams, `samples_per_class` per class, class-interleaved.
/// Deterministic given the seed.
inline std::vector<SynthStream> generate_dataset(StreamKind kind, std::size_t classes, std::size_t samples_per_class,
                                                 const StreamDims& dims, std::uint64_t seed,
                                                 const GeneratorOptions& opt = {}) {
  if (dims.height < 8 || dims.width < 8) throw ParameterError("generate_dataset: frames must be at least 8x8");
  if (dims.timesteps < 4) throw ParameterError("generate_dataset: need at least 4 timesteps");
  if (dims.channels < 1) throw ParameterError("generate_dataset: need at least one channel");
  if (classes < 1) throw ParameterError("generate_dataset: need at least one class");
  if (kind == StreamKind::MovingBar && classes > 8) throw ParameterError("generate_dataset: moving-bar has 8 directions");
  Rng rng(seed);
  std::vector<SpikeTensor> masks;
  if (kind == StreamKind::FlickerPattern) masks = detail::flicker_masks(classes, dims, opt, rng);
  std::vector<SynthStream> out;
  out.reserve(classes * samples_per_class);
  for (std::size_t i = 0; i < samples_per_class; ++i)
    for (std::size_t c = 0; c < classes; ++c) {
      SynthStream s;
      s.label = c;
      s.kind = kind;
      s.frames = kind == StreamKind::MovingBar ? detail::moving_bar(c, dims, opt, rng)
                                               : detail::flicker(masks[c], dims, opt, rng);
      out.push_back(std::move(s));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

enum class PerturbKind { SaltPepper, Poisson, FrameLoss };

inline std::string to_string(PerturbKind k) {
  switch (k) {
    case PerturbKind::SaltPepper: return "salt-pepper";
    case PerturbKind::Poisson: return "poisson";
    case PerturbKind::FrameLoss: return "frame-loss";
  }
  return "?";
}

inline PerturbKind parse_perturb_kind(const std::string& s) {
  if (s == "salt-pepper") return PerturbKind::SaltPepper;
  if (s == "poisson") return PerturbKind::Poisson;
  if (s == "frame-loss") return PerturbKind::FrameLoss;
  throw ParameterError("unknown perturbation '" + s + "' (expected salt-pepper, poisson or frame-loss)");
}

inline constexpr double kSaltPepperStep = 0.02;
inline constexpr double kPoissonBaseRate = 0.01;
inline constexpr double kFrameLossStep = 0.05;

struct PerturbSpec {
  PerturbKind kind = PerturbKind::SaltPepper;
  int rho = 0;

  void validate() const {
    if (rho < 0 || rho > 9) throw ParameterError("perturb: rho=" + std::to_string(rho) + " outside 0..9");
  }
};

/// Selected elements (salt-pepper), injected elements (poisson) or dropped
/// frames (frame-loss), out of `total` candidates.
struct PerturbStats {
  std::size_t affected = 0;
  std::size_t total = 0;
};

inline SynthStream perturb(const SynthStream& in, const PerturbSpec& spec, Rng& rng, PerturbStats* stats = nullptr) {
  spec.validate();
  SynthStream out = in;
  PerturbStats st;
  auto raw = out.frames.raw();
  switch (spec.kind) {
    case PerturbKind::SaltPepper: {
      st.total = raw.size();
      if (spec.rho == 0) break;
      const double p = spec.rho * kSaltPepperStep;
      for (auto& v : raw)
        if (rng.bernoulli(p)) {
          ++st.affected;
          v = rng.bernoulli(0.5) ? 1 : 0;
        }
      break;
    }
    case PerturbKind::Poisson: {
      st.total = raw.size();
      if (spec.rho == 0) break;
      const double rate = spec.rho * kPoissonBaseRate;
      for (auto& v : raw)
        if (rng.poisson(rate) > 0) {
          ++st.affected;
          v = 1;
        }
      break;
    }
    case PerturbKind::FrameLoss: {
      st.total = out.frames.timesteps();
      if (spec.rho == 0) break;
      const double p = spec.rho * kFrameLossStep;
      for (std::size_t t = 0; t < out.frames.timesteps(); ++t)
        if (rng.bernoulli(p)) {
          ++st.affected;
          for (auto& v : out.frames.frame(t)) v = 0;
        }
      break;
    }
  }
  if (stats) *stats = st;
  return out;
}

}  // namespace morphsnn
