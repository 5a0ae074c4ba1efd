#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "morphsnn/diffusion.hpp"
#include "morphsnn/neuron.hpp"
#include "morphsnn/numgrad/rng.hpp"
#include "morphsnn/numgrad/tape.hpp"
#include "morphsnn/spike_tensor.hpp"
#include "morphsnn/stsp.hpp"

namespace morphsnn {

/// Architecture and per-layer dynamics. Defaults are the desk-scale
/// configuration (3 stages of 4 nodes, 16 channels, 16x16 input, T = 5).
struct NetworkConfig {
  std::size_t input_channels = 2;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 16;
  std::size_t layers = 3;
  std::size_t nodes = 4;
  std::size_t classes = 4;
  std::size_t timesteps = 5;
  std::size_t diffusion_steps = 2;
  std::size_t topk = 3;
  std::size_t heads = 4;
  double beta = 0.2;
  double trace_lambda = 0.6;
  double tau_softmax = 0.01;
  double dropout = 0.2;
  LifParams lif;
  std::uint64_t seed = Rng::kDefaultSeed;

  [[nodiscard]] StspConfig stsp() const {
    return StspConfig{nodes, topk, beta, trace_lambda, tau_softmax, dropout, 0.01};
  }

  void validate() const {
    if (nodes < 2) throw ParameterError("network: a DGD layer needs at least 2 nodes");
    if (layers < 1) throw ParameterError("network: need at least one layer");
    if (timesteps < 1) throw ParameterError("network: need at least one timestep");
    if (classes < 1) throw ParameterError("network: need at least one class");
    if (input_channels < 1 || channels < 1) throw ParameterError("network: channel counts must be positive");
    if (height < 3 || width < 3) throw ParameterError("network: input spatial dims must be >= 3");
    stsp().validate();
  }
};

/// One timestep of one DGD layer for one sample.
struct TraceRecord {
  Matrix S;         // post-momentum, pre-pruning
  Matrix S_pruned;  // Top-k pruned
  std::vector<double> firing_rates;  // per node
  double dirichlet_energy = 0.0;     // of the diffused signal Y
  std::vector<Matrix> node_spikes;   // per node, 1 x flat binary map (optional)
};

/// Per-layer record of a whole stream; one record per timestep.
struct LayerTrace {
  std::vector<MapShape> node_shapes;  // spike-map shape of each node
  std::vector<TraceRecord> records;
};

/// N ConvBNSN nodes (index 0 is the source), STSP attention, readout weights.
struct DgdLayer {
  MapShape in_shape;
  StspConfig stsp;
  std::size_t diffusion_steps = 2;
  std::vector<ConvBnSnNode> nodes;
  AttentionParams attention;
  Parameter readout;  // 1 x N, sigmoid-gated

  DgdLayer() = default;
  DgdLayer(const std::string& name, const MapShape& input, std::size_t channels, const NetworkConfig& cfg, Rng& rng)
      : in_shape(input), stsp(cfg.stsp()), diffusion_steps(cfg.diffusion_steps) {
    nodes.reserve(cfg.nodes);
    nodes.emplace_back(name + ".node0", input.channels, channels, cfg.lif, rng);
    for (std::size_t i = 1; i < cfg.nodes; ++i) {
      nodes.emplace_back(name + ".node" + std::to_string(i), channels, channels, cfg.lif, rng);
    }
    attention = AttentionParams(name, channels, cfg.heads, rng);
    readout = Parameter(name + ".readout", Matrix(1, cfg.nodes, 0.0));
  }

  [[nodiscard]] std::size_t node_count() const noexcept { return nodes.size(); }
  [[nodiscard]] MapShape source_spike_shape() const { return nodes[0].output_shape(in_shape); }
  [[nodiscard]] MapShape node_shape() const { return pooled_shape(source_spike_shape()); }
  [[nodiscard]] MapShape output_shape() const { return pooled_shape(node_shape()); }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    for (auto& n : nodes) n.visit_parameters(fn);
    attention.visit_parameters(fn);
    fn(readout);
  }
};

/// Dynamic state of one layer across the timesteps of a batch.
struct LayerState {
  std::vector<LifState> lif;              // per node, B rows each
  std::vector<AdjacencyState> adjacency;  // per sample
  std::vector<TraceBank> traces;          // per sample
  std::vector<Var> prev_outputs;          // O_i^{(t-1)}, i >= 1, B rows each
};

/// Per-call context: membranes at rest, S all-ones, traces zero.
struct NetworkState {
  Tape* tape = nullptr;
  std::size_t batch = 0;
  LifState encoder;
  std::vector<LayerState> layers;
};

/// Readout of one layer step plus per-sample trace records.
struct LayerStep {
  Var output;        // B x flat(output_shape)
  Var source_out;    // pooled O_0
  std::vector<Var> node_outputs;  // O_i for i >= 1
  std::vector<Var> node_inputs;   // I_i for i >= 1
  std::vector<StspStep> stsp;     // per sample
  std::vector<Var> operators;     // P per sample
  std::vector<TraceRecord> records;  // per sample
};

struct LayerOptions {
  bool record_spikes = false;
};

inline Matrix row_copy(const Matrix& m, std::size_t r) {
  const auto v = m.row(r);
  return Matrix::row_vector(std::vector<double>(v.begin(), v.end()));
}

inline double mean_of_row(const Matrix& m, std::size_t r) {
  double s = 0.0;
  for (double v : m.row(r)) s += v;
  return m.cols() == 0 ? 0.0 : s / static_cast<double>(m.cols());
}

/// Algorithm phases for timestep t: source node, STSP, diffusion, node
/// features and weighted readout.
inline LayerStep layer_forward(Tape& tape, DgdLayer& layer, LayerState& state, const Var& input, Mode mode, Rng& rng,
                               const LayerOptions& opts = {}) {
  const std::size_t n = layer.node_count();
  const std::size_t batch = input.rows();
  if (input.cols() != layer.in_shape.flat()) {
    throw DimensionError("layer_forward[source]: input " + input.value().shape() + " vs layer input " +
                         layer.in_shape.str());
  }
  if (state.adjacency.size() != batch || state.traces.size() != batch || state.lif.size() != n) {
    throw DimensionError("layer_forward[stsp]: state sized for batch " + std::to_string(state.adjacency.size()) +
                         ", input batch " + std::to_string(batch));
  }
  LayerStep step;
  const MapShape node_shape = layer.node_shape();

  // Phase 1: source node.
  Var source_spikes;
  step.source_out = source_forward(tape, layer.nodes[0], state.lif[0], input, layer.in_shape, mode, &source_spikes);

  // Phase 2: STSP per sample.
  step.stsp.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Var> prev;
    if (!state.prev_outputs.empty()) {
      prev.reserve(n - 1);
      for (const Var& o : state.prev_outputs) prev.push_back(row(o, b));
    }
    step.stsp.push_back(stsp_step(state.adjacency[b], state.traces[b], layer.attention, layer.stsp,
                                  row(step.source_out, b), prev, node_shape, mode, rng));
  }

  // Phase 3: graph diffusion per sample.
  std::vector<Var> diffused;
  diffused.reserve(batch);
  step.records.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Var p = diffusion_operator(step.stsp[b].S_pruned);
    Var y = diffuse(p, init_signal(row(step.source_out, b), n), layer.diffusion_steps);
    step.operators.push_back(p);
    diffused.push_back(y);
    TraceRecord& rec = step.records[b];
    rec.S = step.stsp[b].S.value();
    rec.S_pruned = step.stsp[b].S_pruned.value();
    rec.dirichlet_energy = dirichlet_energy(y.value(), detail::symmetrized(rec.S_pruned));
    rec.firing_rates.assign(n, 0.0);
    rec.firing_rates[0] = mean_of_row(source_spikes.value(), b);
    if (opts.record_spikes) {
      rec.node_spikes.resize(n);
      rec.node_spikes[0] = row_copy(source_spikes.value(), b);
    }
  }

  // Phase 4: remaining nodes and the weighted readout.
  step.node_outputs.reserve(n - 1);
  for (std::size_t i = 1; i < n; ++i) {
    std::vector<Var> rows;
    rows.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) rows.push_back(row(diffused[b], i));
    Var in = batch == 1 ? rows.front() : vstack(rows);
    step.node_inputs.push_back(in);
    Var o = conv_bn_sn_forward(tape, layer.nodes[i], state.lif[i], in, node_shape, mode);
    step.node_outputs.push_back(o);
    for (std::size_t b = 0; b < batch; ++b) {
      step.records[b].firing_rates[i] = mean_of_row(o.value(), b);
      if (opts.record_spikes) {
        step.records[b].node_spikes[i] = row_copy(o.value(), b);
      }
    }
  }

  Var gates = sigmoid(tape.param(layer.readout));
  Var total = scale_by(slice(gates, 0, 1, 0, 1), step.source_out);
  for (std::size_t i = 1; i < n; ++i) total = add(total, scale_by(slice(gates, 0, 1, i, 1), step.node_outputs[i - 1]));
  step.output = avg_pool2x2(total, node_shape);

  state.prev_outputs = step.node_outputs;
  return step;
}

/// Direct-encoding stage, L DGD layers, linear classifier.
struct MorphNet {
  NetworkConfig config;
  ConvBnSnNode encoder;
  std::vector<DgdLayer> layers;
  Parameter classifier_weight;  // classes x features
  Parameter classifier_bias;    // 1 x classes

  MorphNet() = default;
  explicit MorphNet(const NetworkConfig& cfg) : config(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const MapShape input{cfg.input_channels, cfg.height, cfg.width};
    encoder = ConvBnSnNode("encoder", cfg.input_channels, cfg.channels, cfg.lif, rng);
    MapShape shape = pooled_shape(encoder.output_shape(input));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      layers.emplace_back("layer" + std::to_string(l), shape, cfg.channels, cfg, rng);
      shape = layers.back().output_shape();
    }
    const std::size_t features = shape.flat();
    const double bound = 1.0 / std::sqrt(static_cast<double>(features));
    Matrix w(cfg.classes, features), b(1, cfg.classes);
    for (double& v : w.values()) v = rng.uniform(-bound, bound);
    for (double& v : b.values()) v = rng.uniform(-bound, bound);
    classifier_weight = Parameter("classifier.weight", std::move(w));
    classifier_bias = Parameter("classifier.bias", std::move(b));
  }

  [[nodiscard]] MapShape input_shape() const { return {config.input_channels, config.height, config.width}; }
  [[nodiscard]] MapShape feature_shape() const { return layers.back().output_shape(); }

  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    encoder.visit_parameters(fn);
    for (auto& l : layers) l.visit_parameters(fn);
    fn(classifier_weight);
    fn(classifier_bias);
  }

  /// Every ConvBNSN node, encoder first (for BN buffer access).
  template <typename Fn>
  void visit_nodes(Fn&& fn) {
    fn(encoder);
    for (auto& l : layers)
      for (auto& n : l.nodes) fn(n);
  }
};

/// Fresh per-call state: membranes 0, spikes 0, S all-ones, traces 0.
inline NetworkState reset_state(const MorphNet& net, Tape& tape, std::size_t batch) {
  NetworkState st;
  st.tape = &tape;
  st.batch = batch;
  st.layers.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DgdLayer& layer = net.layers[l];
    LayerState& ls = st.layers[l];
    ls.lif.assign(layer.node_count(), LifState{});
    for (std::size_t b = 0; b < batch; ++b) {
      ls.adjacency.push_back(AdjacencyState::initial(tape, layer.node_count()));
      ls.traces.push_back(TraceBank::initial(tape, layer.node_count(), layer.attention.d_proj, layer.stsp.trace_lambda));
    }
  }
  return st;
}

struct ForwardOptions {
  bool record_spikes = false;
};

/// Logits and traces of a batch of streams.
struct ForwardResult {
  Var logits;    // B x classes, mean over timesteps
  Var features;  // B x F, mean over timesteps of the classifier input
  std::vector<std::vector<LayerTrace>> traces;  // [sample][layer]
  std::vector<std::vector<double>> encoder_rates;  // [sample][t]
  std::vector<std::vector<Matrix>> encoder_spikes;  // [sample][t], only with record_spikes
};

/// Runs T timesteps over a batch; frame t of every stream passes encoder ->
/// layer 1 -> ... -> layer L -> classifier. Logits are averaged over T.
inline ForwardResult network_forward(Tape& tape, MorphNet& net, const std::vector<const SpikeTensor*>& batch, Mode mode,
                                     Rng& rng, const ForwardOptions& opts = {}) {
  const NetworkConfig& cfg = net.config;
  const MapShape in_shape = net.input_shape();
  for (const SpikeTensor* s : batch) {
    if (s->timesteps() != cfg.timesteps) {
      throw DimensionError("network_forward: stream has " + std::to_string(s->timesteps()) + " frames, network expects " +
                           std::to_string(cfg.timesteps));
    }
    if (s->frame_shape() != in_shape) {
      throw DimensionError("network_forward: frame " + s->frame_shape().str() + " vs input " + in_shape.str());
    }
  }
  const std::size_t B = batch.size();
  if (B == 0) throw DimensionError("network_forward: empty batch");
  NetworkState state = reset_state(net, tape, B);

  ForwardResult res;
  res.traces.assign(B, std::vector<LayerTrace>(net.layers.size()));
  res.encoder_rates.assign(B, {});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& lt = res.traces[b][l];
      lt.node_shapes.push_back(net.layers[l].source_spike_shape());
      for (std::size_t i = 1; i < net.layers[l].node_count(); ++i) lt.node_shapes.push_back(net.layers[l].node_shape());
    }

  Var w = tape.param(net.classifier_weight);
  Var bias = tape.param(net.classifier_bias);
  Var logit_sum, feature_sum;
  const LayerOptions lopts{opts.record_spikes};
  for (std::size_t t = 0; t < cfg.timesteps; ++t) {
    Matrix frame(B, in_shape.flat());
    for (std::size_t b = 0; b < B; ++b) batch[b]->copy_frame(t, frame.row(b));
    Var enc_spikes;
    Var x = source_forward(tape, net.encoder, state.encoder, tape.constant(std::move(frame)), in_shape, mode, &enc_spikes);
    for (std::size_t b = 0; b < B; ++b) res.encoder_rates[b].push_back(mean_of_row(enc_spikes.value(), b));
    if (opts.record_spikes) {
      res.encoder_spikes.resize(B);
      for (std::size_t b = 0; b < B; ++b) res.encoder_spikes[b].push_back(row_copy(enc_spikes.value(), b));
    }
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      LayerStep step = layer_forward(tape, net.layers[l], state.layers[l], x, mode, rng, lopts);
      for (std::size_t b = 0; b < B; ++b) res.traces[b][l].records.push_back(std::move(step.records[b]));
      x = step.output;
    }
    Var logits = linear(x, w, bias);
    logit_sum = logit_sum.valid() ? add(logit_sum, logits) : logits;
    feature_sum = feature_sum.valid() ? add(feature_sum, x) : x;
  }
  const double inv_t = 1.0 / static_cast<double>(cfg.timesteps);
  res.logits = scale(logit_sum, inv_t);
  res.features = scale(feature_sum, inv_t);
  return res;
}

/// Single-stream convenience wrapper.
inline ForwardResult network_forward(Tape& tape, MorphNet& net, const SpikeTensor& stream, Mode mode, Rng& rng,
                                     const ForwardOptions& opts = {}) {
  return network_forward(tape, net, std::vector<const SpikeTensor*>{&stream}, mode, rng, opts);
}

}  // namespace morphsnn
