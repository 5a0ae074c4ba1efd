#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "morphsnn/data.hpp"
#include "morphsnn/network.hpp"

namespace morphsnn {

enum class Schedule { Cosine, Step };

inline std::string to_string(Schedule s) { return s == Schedule::Cosine ? "cosine" : "step"; }

inline Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "step") return Schedule::Step;
  throw ParameterError("unknown schedule '" + s + "' (expected cosine or step)");
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double lr = 0.1;
  Schedule schedule = Schedule::Cosine;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t step_size = 30;  // epochs between decays (step schedule)
  double step_gamma = 0.1;
  double target_train_acc = 0.0;  // stop once an epoch reaches it; 0 disables
  bool static_graph = false;      // beta = 1
  NetworkConfig network;

  /// Network configuration with the data's frame layout and class count.
  [[nodiscard]] NetworkConfig network_for(const StreamDims& dims, std::size_t classes) const {
    NetworkConfig n = network;
    n.input_channels = dims.channels;
    n.height = dims.height;
    n.width = dims.width;
    n.timesteps = dims.timesteps;
    n.classes = classes;
    if (static_graph) n.beta = 1.0;
    return n;
  }

  void validate() const {
    if (epochs < 1) throw ParameterError("train: epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("train: batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("train: lr must be finite and >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("train: momentum outside [0,1)");
    if (weight_decay < 0.0) throw ParameterError("train: weight_decay must be >= 0");
    if (step_size < 1) throw ParameterError("train: step_size must be >= 1");
    if (step_gamma <= 0.0 || step_gamma > 1.0) throw ParameterError("train: step_gamma outside (0,1]");
    if (target_train_acc < 0.0 || target_train_acc > 1.0) throw ParameterError("train: target_train_acc outside [0,1]");
    network.validate();
  }
};

inline double scheduled_lr(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.schedule == Schedule::Cosine) {
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(cfg.epochs)));
  }
  return cfg.lr * std::pow(cfg.step_gamma, static_cast<double>(epoch / cfg.step_size));
}

/// SGD with heavy-ball momentum: v <- mu v + g + wd p;  p <- p - lr v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<Parameter*>& params, double lr) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (Parameter* p : params) velocity_.emplace_back(p->value.rows(), p->value.cols());
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Matrix& v = velocity_[k];
      if (!p.grad.same_shape(p.value)) p.zero_grad();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum_ * v[i] + p.grad[i] + weight_decay_ * p.value[i];
        p.value[i] -= lr * v[i];
      }
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> velocity_;
};

inline std::vector<Parameter*> parameters_of(MorphNet& net) {
  std::vector<Parameter*> out;
  net.visit_parameters([&](Parameter& p) { out.push_back(&p); });
  return out;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double mean_dirichlet_energy = 0.0;
  double mean_firing_rate = 0.0;
};

/// Mean Dirichlet energy and mean node firing rate over a batch of traces.
struct TraceSummary {
  double energy_sum = 0.0;
  double rate_sum = 0.0;
  std::size_t records = 0;
  std::size_t rates = 0;

  void add(const std::vector<LayerTrace>& sample) {
    for (const LayerTrace& lt : sample)
      for (const TraceRecord& r : lt.records) {
        energy_sum += r.dirichlet_energy;
        ++records;
        for (double f : r.firing_rates) {
          rate_sum += f;
          ++rates;
        }
      }
  }
  [[nodiscard]] double mean_energy() const { return records ? energy_sum / static_cast<double>(records) : 0.0; }
  [[nodiscard]] double mean_rate() const { return rates ? rate_sum / static_cast<double>(rates) : 0.0; }
};

inline std::size_t argmax_row(const Matrix& m, std::size_t r) {
  const auto v = m.row(r);
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Everything downstream consumers need from one eval-mode forward pass.
struct InferenceRecord {
  std::size_t label = 0;
  std::size_t predicted = 0;
  std::vector<double> logits;
  std::vector<double> features;  // time-averaged classifier input
  std::vector<LayerTrace> traces;
  std::vector<Matrix> encoder_spikes;  // per timestep, only with record_spikes
};

struct InferOptions {
  std::size_t batch = 32;
  bool record_spikes = false;
};

/// Eval-mode forward over `streams` in chunks. Samples are independent in
/// eval mode, so chunking does not change any value.
inline std::vector<InferenceRecord> infer(MorphNet& net, const std::vector<SynthStream>& streams,
                                          const InferOptions& opts = {}) {
  std::vector<InferenceRecord> out;
  out.reserve(streams.size());
  Rng unused(net.config.seed);
  const std::size_t chunk = std::max<std::size_t>(1, opts.batch);
  for (std::size_t start = 0; start < streams.size(); start += chunk) {
    const std::size_t end = std::min(streams.size(), start + chunk);
    std::vector<const SpikeTensor*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&streams[i].frames);
    Tape tape;
    ForwardResult r = network_forward(tape, net, batch, Mode::Eval, unused, ForwardOptions{opts.record_spikes});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      InferenceRecord rec;
      rec.label = streams[start + b].label;
      const auto lg = r.logits.value().row(b);
      const auto ft = r.features.value().row(b);
      rec.logits.assign(lg.begin(), lg.end());
      rec.features.assign(ft.begin(), ft.end());
      rec.predicted = argmax_row(r.logits.value(), b);
      rec.traces = std::move(r.traces[b]);
      if (opts.record_spikes) rec.encoder_spikes = std::move(r.encoder_spikes[b]);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::vector<std::vector<double>> mean_firing_rates;  // [layer][node]
  std::vector<std::size_t> predictions;
};

inline EvalResult summarize(const std::vector<InferenceRecord>& recs, std::size_t classes) {
  EvalResult res;
  res.per_class_accuracy.assign(classes, 0.0);
  res.per_class_count.assign(classes, 0);
  std::vector<std::size_t> hits(classes, 0);
  std::size_t correct = 0;
  std::size_t rate_records = 0;
  for (const InferenceRecord& r : recs) {
    res.predictions.push_back(r.predicted);
    if (r.label < classes) {
      ++res.per_class_count[r.label];
      if (r.predicted == r.label) ++hits[r.label];
    }
    if (r.predicted == r.label) ++correct;
    if (res.mean_firing_rates.empty()) {
      for (const LayerTrace& lt : r.traces)
        res.mean_firing_rates.emplace_back(lt.records.empty() ? 0 : lt.records.front().firing_rates.size(), 0.0);
    }
    for (std::size_t l = 0; l < r.traces.size(); ++l)
      for (const TraceRecord& tr : r.traces[l].records)
        for (std::size_t i = 0; i < tr.firing_rates.size(); ++i) res.mean_firing_rates[l][i] += tr.firing_rates[i];
    if (!r.traces.empty()) rate_records += r.traces.front().records.size();
  }
  for (auto& layer : res.mean_firing_rates)
    for (double& v : layer) v = rate_records ? v / static_cast<double>(rate_records) : 0.0;
  for (std::size_t c = 0; c < classes; ++c)
    res.per_class_accuracy[c] =
        res.per_class_count[c] ? static_cast<double>(hits[c]) / static_cast<double>(res.per_class_count[c]) : 0.0;
  res.accuracy = recs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(recs.size());
  return res;
}

/// Eval-mode accuracy, optionally after perturbing every stream with a
/// generator seeded by `seed`.
inline EvalResult evaluate(MorphNet& net, const std::vector<SynthStream>& data,
                           const std::optional<PerturbSpec>& spec = std::nullopt,
                           std::uint64_t seed = Rng::kDefaultSeed) {
  if (!spec || spec->rho == 0) {
    if (spec) spec->validate();
    return summarize(infer(net, data), net.config.classes);
  }
  Rng rng(seed);
  std::vector<SynthStream> noisy;
  noisy.reserve(data.size());
  for (const SynthStream& s : data) noisy.push_back(perturb(s, *spec, rng));
  return summarize(infer(net, noisy), net.config.classes);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Full-BPTT surrogate-gradient training with cross-entropy on the
/// mean-over-T logits.
inline TrainResult train(MorphNet& net, const std::vector<SynthStream>& data, const TrainConfig& cfg,
                         const std::vector<SynthStream>* test = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("train: empty training set");
  for (const SynthStream& s : data)
    if (s.label >= net.config.classes) {
      throw DataError("train: label " + std::to_string(s.label) + " >= class count " +
                      std::to_string(net.config.classes));
    }
  Rng rng(cfg.network.seed);
  Sgd opt(cfg.momentum, cfg.weight_decay);
  auto params = parameters_of(net);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = scheduled_lr(cfg, epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    TraceSummary summary;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const SpikeTensor*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&data[order[i]].frames);
        labels.push_back(data[order[i]].label);
      }
      for (Parameter* p : params) p->zero_grad();
      double loss_value = 0.0;
      try {
        Tape tape;
        ForwardResult r = network_forward(tape, net, batch, Mode::Train, rng);
        Var loss = cross_entropy(r.logits, labels);
        loss_value = loss.value()[0];
        tape.backward(loss);
        for (std::size_t b = 0; b < batch.size(); ++b) {
          if (argmax_row(r.logits.value(), b) == labels[b]) ++correct;
          summary.add(r.traces[b]);
        }
      } catch (const ContractError& e) {
        throw DivergenceError("train: diverged in epoch " + std::to_string(epoch + 1) + " (" + e.what() + ")");
      }
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      opt.step(params, m.lr);
      for (Parameter* p : params)
        if (!all_finite(p->value)) {
          throw DivergenceError("train: parameter " + p->name + " became non-finite in epoch " +
                                std::to_string(epoch + 1));
        }
      loss_sum += loss_value * static_cast<double>(batch.size());
    }
    const double n = static_cast<double>(data.size());
    m.loss = loss_sum / n;
    m.train_acc = static_cast<double>(correct) / n;
    m.mean_dirichlet_energy = summary.mean_energy();
    m.mean_firing_rate = summary.mean_rate();
    if (test != nullptr && !test->empty()) m.test_acc = evaluate(net, *test).accuracy;
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (cfg.target_train_acc > 0.0 && m.train_acc >= cfg.target_train_acc) {
      result.stopped_early = epoch + 1 < cfg.epochs;
      break;
    }
  }
  return result;
}

}  // namespace morphsnn
