#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "morphsnn/network.hpp"

namespace morphsnn {

/// 45 nm CMOS per-operation energies, picojoules.
struct EnergyConstants {
  static constexpr double e_mac = 4.6;
  static constexpr double e_ac = 0.9;
  static constexpr double e_mul = e_mac - e_ac;
};

struct OpCountReport {
  std::string component;
  std::uint64_t muls = 0;
  std::uint64_t acs = 0;
  std::uint64_t macs = 0;
  double energy_pj = 0.0;
  std::vector<double> firing_rates;

  [[nodiscard]] double energy_mj() const { return energy_pj * 1e-9; }
  void price() {
    energy_pj = static_cast<double>(muls) * EnergyConstants::e_mul + static_cast<double>(acs) * EnergyConstants::e_ac +
                static_cast<double>(macs) * EnergyConstants::e_mac;
  }
};

/// Dense diffusion: MULs = T M N^2 CHW, ACs = T M N(N-1) CHW.
inline OpCountReport count_gd_ops(std::uint64_t T, std::uint64_t M, std::uint64_t N, std::uint64_t C, std::uint64_t H,
                                  std::uint64_t W) {
  OpCountReport r;
  r.component = "gd";
  const std::uint64_t chw = C * H * W;
  r.muls = T * M * N * N * chw;
  r.acs = T * M * N * (N == 0 ? 0 : N - 1) * chw;
  r.price();
  return r;
}

/// STSP: ACs = T [CHW + 2NC(C-1) + N^2(C-1)],
/// MACs = T [N C^2 + 2NC + (2NC^2 + N^2 C) + 2N^2].
inline OpCountReport count_stsp_ops(std::uint64_t T, std::uint64_t N, std::uint64_t C, std::uint64_t H,
                                    std::uint64_t W) {
  OpCountReport r;
  r.component = "stsp";
  const std::uint64_t c1 = C == 0 ? 0 : C - 1;
  r.acs = T * (C * H * W + 2 * N * C * c1 + N * N * c1);
  r.macs = T * (N * C * C + 2 * N * C + (2 * N * C * C + N * N * C) + 2 * N * N);
  r.price();
  return r;
}

/// Number of synapses a spike at (y, x) reaches through a 3x3, padding-1
/// convolution with `out_channels` output maps: out_channels times the number
/// of output positions whose window covers (y, x).
inline std::uint64_t conv3x3_fanout(std::size_t y, std::size_t x, std::size_t H, std::size_t W,
                                    std::size_t out_channels) {
  const std::size_t ry = std::min(y + 1, H - 1) - (y == 0 ? 0 : y - 1) + 1;
  const std::size_t rx = std::min(x + 1, W - 1) - (x == 0 ? 0 : x - 1) + 1;
  return static_cast<std::uint64_t>(out_channels) * ry * rx;
}

/// Sum over spikes of their fan-out. `spikes[k]` and `fanouts[k]` describe
/// one spike map and the fan-out of each of its positions.
inline std::uint64_t count_spike_acs(const std::vector<Matrix>& spikes, const std::vector<std::vector<std::uint64_t>>& fanouts) {
  if (spikes.size() != fanouts.size()) throw DimensionError("count_spike_acs: spike maps and fan-out tables differ");
  std::uint64_t acs = 0;
  for (std::size_t k = 0; k < spikes.size(); ++k) {
    if (spikes[k].size() != fanouts[k].size()) {
      throw DimensionError("count_spike_acs: map " + std::to_string(k) + " has " + std::to_string(spikes[k].size()) +
                           " positions, fan-out table " + std::to_string(fanouts[k].size()));
    }
    for (std::size_t i = 0; i < spikes[k].size(); ++i)
      if (spikes[k][i] != 0.0) acs += fanouts[k][i];
  }
  return acs;
}

namespace detail {

/// Fan-out of each position of a (C, H, W) spike map that is 2x2-pooled (or
/// passed through at 1x1) and then read by a 3x3 convolution.
inline std::vector<std::uint64_t> pooled_conv_fanouts(const MapShape& spikes, std::size_t consumer_out) {
  const MapShape pooled = pooled_shape(spikes);
  const bool identity = pooled == spikes;
  std::vector<std::uint64_t> f(spikes.flat());
  for (std::size_t c = 0; c < spikes.channels; ++c)
    for (std::size_t y = 0; y < spikes.height; ++y)
      for (std::size_t x = 0; x < spikes.width; ++x) {
        const std::size_t py = identity ? y : y / 2, px = identity ? x : x / 2;
        f[c * spikes.plane() + y * spikes.width + x] = conv3x3_fanout(py, px, pooled.height, pooled.width, consumer_out);
      }
  return f;
}

inline std::size_t offdiag_nnz_row0(const Matrix& s_pruned) {
  std::size_t n = 0;
  for (std::size_t j = 1; j < s_pruned.cols(); ++j)
    if (s_pruned(0, j) != 0.0 || s_pruned(j, 0) != 0.0) ++n;
  return n;
}

}  // namespace detail

/// Event-driven and dense-bound synaptic ACs of one recorded forward pass.
struct SpikeAcCount {
  std::uint64_t event_driven = 0;
  std::uint64_t dense_bound = 0;
};

/// Spike consumers: encoder spikes feed layer 1's source conv (after pooling);
/// every node's spikes feed the readout, whose pooled sum feeds the next
/// layer's source conv (or the classifier after the last layer); source
/// spikes additionally reach every diffusion neighbour in the current S_sym.
/// BN, pooling and the readout weighting are free.
inline SpikeAcCount count_network_spike_acs(const MorphNet& net, const std::vector<Matrix>& encoder_spikes,
                                            const std::vector<LayerTrace>& traces) {
  SpikeAcCount out;
  const std::size_t L = net.layers.size();
  if (traces.size() != L) throw DimensionError("count_network_spike_acs: trace has wrong layer count");
  auto accumulate = [&](const Matrix& spikes, const std::vector<std::uint64_t>& fan, std::uint64_t extra) {
    for (std::size_t i = 0; i < spikes.size(); ++i) {
      const std::uint64_t f = fan[i] + extra;
      out.dense_bound += f;
      if (spikes[i] != 0.0) out.event_driven += f;
    }
  };

  const MapShape enc_shape = net.encoder.output_shape(net.input_shape());
  const auto enc_fan = detail::pooled_conv_fanouts(enc_shape, net.layers.front().nodes.front().out_channels);
  for (const Matrix& s : encoder_spikes) accumulate(s, enc_fan, 0);

  for (std::size_t l = 0; l < L; ++l) {
    const DgdLayer& layer = net.layers[l];
    const LayerTrace& lt = traces[l];
    std::vector<std::uint64_t> readout_fan;
    if (l + 1 < L) {
      readout_fan = detail::pooled_conv_fanouts(layer.node_shape(), net.layers[l + 1].nodes.front().out_channels);
    } else {
      // Each pooled feature reaches every class logit.
      readout_fan.assign(layer.node_shape().flat(), static_cast<std::uint64_t>(net.config.classes));
    }
    // Source spikes are pooled before the readout and the diffusion.
    const MapShape src = layer.source_spike_shape();
    std::vector<std::uint64_t> src_fan(src.flat());
    {
      const MapShape pooled = layer.node_shape();
      const bool identity = pooled == src;
      for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
          for (std::size_t x = 0; x < src.width; ++x) {
            const std::size_t py = identity ? y : y / 2, px = identity ? x : x / 2;
            src_fan[c * src.plane() + y * src.width + x] = readout_fan[c * pooled.plane() + py * pooled.width + px];
          }
    }
    for (const TraceRecord& r : lt.records) {
      if (r.node_spikes.size() != layer.node_count()) {
        throw ContractError("count_network_spike_acs: trace lacks spike maps (record spikes when running inference)");
      }
      accumulate(r.node_spikes[0], src_fan, detail::offdiag_nnz_row0(r.S_pruned));
      for (std::size_t i = 1; i < layer.node_count(); ++i) accumulate(r.node_spikes[i], readout_fan, 0);
    }
  }
  return out;
}

/// Mean of binary spikes over (T, C, H, W) for each node, per layer.
inline std::vector<std::vector<double>> firing_rate_report(const std::vector<LayerTrace>& traces) {
  std::vector<std::vector<double>> out;
  for (const LayerTrace& lt : traces) {
    if (lt.records.empty()) throw ContractError("firing_rate_report: empty layer trace");
    std::vector<double> rates(lt.records.front().firing_rates.size(), 0.0);
    for (const TraceRecord& r : lt.records)
      for (std::size_t i = 0; i < rates.size(); ++i) rates[i] += r.firing_rates[i];
    for (double& v : rates) v /= static_cast<double>(lt.records.size());
    out.push_back(std::move(rates));
  }
  return out;
}

/// Mean of a sequence of binary spike maps.
inline double firing_rate(const std::vector<Matrix>& spikes) {
  double s = 0.0;
  std::size_t n = 0;
  for (const Matrix& m : spikes) {
    for (double v : m.values()) s += v;
    n += m.size();
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

/// Per-sample network energy: dense GD and STSP formula counts summed over
/// layers plus the measured spike-driven ACs averaged over samples.
struct NetworkEnergyReport {
  OpCountReport gd;
  OpCountReport stsp;
  OpCountReport spikes;        // event-driven ACs, mean per sample
  OpCountReport spikes_dense;  // every neuron spiking every step
  std::vector<std::vector<double>> firing_rates;  // [layer][node], mean over samples
  std::size_t samples = 0;
};

inline NetworkEnergyReport network_energy_report(const MorphNet& net,
                                                 const std::vector<std::vector<Matrix>>& encoder_spikes,
                                                 const std::vector<std::vector<LayerTrace>>& traces) {
  if (encoder_spikes.size() != traces.size()) throw DimensionError("network_energy_report: sample counts differ");
  NetworkEnergyReport rep;
  rep.gd.component = "gd";
  rep.stsp.component = "stsp";
  const std::uint64_t T = net.config.timesteps;
  for (const DgdLayer& layer : net.layers) {
    const MapShape s = layer.node_shape();
    const auto g = count_gd_ops(T, layer.diffusion_steps, layer.node_count(), s.channels, s.height, s.width);
    const auto st = count_stsp_ops(T, layer.node_count(), s.channels, s.height, s.width);
    rep.gd.muls += g.muls;
    rep.gd.acs += g.acs;
    rep.stsp.acs += st.acs;
    rep.stsp.macs += st.macs;
  }
  rep.gd.price();
  rep.stsp.price();

  rep.samples = traces.size();
  std::uint64_t ev = 0, dense = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const SpikeAcCount c = count_network_spike_acs(net, encoder_spikes[i], traces[i]);
    ev += c.event_driven;
    dense += c.dense_bound;
    const auto rates = firing_rate_report(traces[i]);
    if (rep.firing_rates.empty()) {
      rep.firing_rates = rates;
    } else {
      for (std::size_t l = 0; l < rates.size(); ++l)
        for (std::size_t k = 0; k < rates[l].size(); ++k) rep.firing_rates[l][k] += rates[l][k];
    }
  }
  const std::uint64_t n = std::max<std::uint64_t>(1, traces.size());
  for (auto& layer : rep.firing_rates)
    for (double& v : layer) v /= static_cast<double>(n);
  rep.spikes.component = "spikes";
  rep.spikes.acs = ev / n;
  rep.spikes.energy_pj = static_cast<double>(ev) * EnergyConstants::e_ac / static_cast<double>(n);
  rep.spikes_dense.component = "spikes_dense";
  rep.spikes_dense.acs = dense / n;
  rep.spikes_dense.energy_pj = static_cast<double>(dense) * EnergyConstants::e_ac / static_cast<double>(n);
  for (const auto& layer : rep.firing_rates) rep.spikes.firing_rates.insert(rep.spikes.firing_rates.end(), layer.begin(), layer.end());
  return rep;
}

}  // namespace morphsnn
