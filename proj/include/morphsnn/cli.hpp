#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "morphsnn/diffusion.hpp"
#include "morphsnn/energy.hpp"
#include "morphsnn/io.hpp"
#include "morphsnn/numgrad/spectral.hpp"
#include "morphsnn/ood.hpp"
#include "morphsnn/stsp.hpp"
#include "morphsnn/training.hpp"

namespace morphsnn::cli {

/// Runs `body`, reporting any exception on `err` with a nonzero status.
template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::string kind = "moving-bar";
  std::size_t classes = 4;
  std::size_t per_class = 24;
  StreamDims dims;
  std::uint64_t seed = Rng::kDefaultSeed;
  std::string out;
};

inline int cmd_generate(const GenerateOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    EventFrameFile f;
    f.dims = o.dims;
    f.classes = static_cast<std::uint32_t>(o.classes);
    f.samples = generate_dataset(parse_stream_kind(o.kind), o.classes, o.per_class, o.dims, o.seed);
    write_event_frames(o.out, f);
    out << "wrote " << f.samples.size() << " " << o.kind << " streams to " << o.out << "\n";
    return 0;
  });
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string data;
  std::string test;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : read_train_config(o.config);
    if (o.seed) cfg.network.seed = *o.seed;
    const EventFrameFile train_file = read_event_frames(o.data);
    std::optional<EventFrameFile> test_file;
    if (!o.test.empty()) {
      test_file = read_event_frames(o.test);
      if (test_file->dims.timesteps != train_file.dims.timesteps || test_file->dims.channels != train_file.dims.channels ||
          test_file->dims.height != train_file.dims.height || test_file->dims.width != train_file.dims.width) {
        throw DimensionError("test data dims differ from training data dims");
      }
    }
    std::filesystem::create_directories(o.out_dir);
    MorphNet net(cfg.network_for(train_file.dims, train_file.classes));

    CsvTable metrics({"epoch", "loss", "train_acc", "test_acc", "mean_dirichlet_energy", "mean_firing_rate"});
    CsvTable trend({"epoch", "energy"});
    train(net, train_file.samples, cfg, test_file ? &test_file->samples : nullptr, [&](const EpochMetrics& m) {
      const std::string test_acc = std::isnan(m.test_acc) ? "" : fmt(m.test_acc);
      metrics.add({std::to_string(m.epoch), fmt(m.loss), fmt(m.train_acc), test_acc, fmt(m.mean_dirichlet_energy),
                   fmt(m.mean_firing_rate)});
      trend.add({std::to_string(m.epoch), fmt(m.mean_dirichlet_energy)});
      out << "epoch " << m.epoch << " loss " << fmt(m.loss) << " train_acc " << fmt(m.train_acc);
      if (!test_acc.empty()) out << " test_acc " << test_acc;
      out << " energy " << fmt(m.mean_dirichlet_energy) << "\n";
    });
    const std::filesystem::path dir(o.out_dir);
    save_checkpoint((dir / "checkpoint.json").string(), net);
    metrics.write((dir / "metrics.csv").string());
    trend.write((dir / "energy_trend.csv").string());
    out << "wrote " << (dir / "checkpoint.json").string() << "\n";
    return 0;
  });
}

// ---------------------------------------------------------------------------
// diffusion-analyze
// ---------------------------------------------------------------------------

struct DiffusionOptions {
  std::size_t nodes = 8;
  std::size_t steps = 10;
  std::string graph = "random";
  std::string signal = "random";
  std::size_t channels = 1;
  std::size_t topk = 3;
  std::uint64_t seed = Rng::kDefaultSeed;
  std::string out;  // empty: CSV to stdout
};

struct DiffusionAnalysis {
  Matrix S;
  DiffusionOperator op;
  Matrix Y0;
  std::vector<double> energies;
  SpectralRange range;
  double residual = 0.0;
  bool symmetric = false;
  bool bounded = false;
  bool monotone = false;
  bool flow = false;
};

inline Matrix analysis_graph(const DiffusionOptions& o, Rng& rng) {
  const std::size_t n = o.nodes;
  if (n == 1) return Matrix(1, 1, 1.0);
  Matrix s(n, n, 0.0);
  if (o.graph == "random") {
    for (double& v : s.values()) v = rng.uniform();
    const Matrix mask = topk_mask(s, std::min(o.topk, n));
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= mask[i];
    return s;
  }
  if (o.graph == "path") {
    for (std::size_t i = 0; i + 1 < n; ++i) s(i, i + 1) = s(i + 1, i) = 1.0;
    return s;
  }
  if (o.graph == "complete") {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s(i, j) = i == j ? 0.0 : 1.0;
    return s;
  }
  throw ParameterError("unknown graph '" + o.graph + "' (expected random, path or complete)");
}

inline DiffusionAnalysis analyze_diffusion(const DiffusionOptions& o) {
  if (o.nodes < 1) throw ParameterError("diffusion-analyze: need at least one node");
  if (o.channels < 1) throw ParameterError("diffusion-analyze: need at least one channel");
  Rng rng(o.seed);
  DiffusionAnalysis a;
  a.S = analysis_graph(o, rng);
  a.op = build_operator(a.S, o.steps);
  a.Y0 = Matrix(o.nodes, o.channels);
  if (o.signal == "random") {
    for (double& v : a.Y0.values()) v = rng.uniform(-1.0, 1.0);
  } else if (o.signal == "antisymmetric") {
    for (std::size_t i = 0; i < o.nodes; ++i)
      for (std::size_t c = 0; c < o.channels; ++c) a.Y0(i, c) = i % 2 == 0 ? 1.0 : -1.0;
  } else {
    throw ParameterError("unknown signal '" + o.signal + "' (expected random or antisymmetric)");
  }
  if (o.nodes == 1 || o.steps == 0) {
    a.energies = {dirichlet_energy(a.op, a.Y0)};
  } else {
    a.energies = energy_decay_profile(a.op, a.Y0, o.steps);
  }
  a.range = spectral_range(a.op.laplacian());
  a.residual = verify_gradient_flow(a.op, a.Y0);
  a.symmetric = max_asymmetry(a.op.P) < 1e-12;
  a.bounded = a.range.lambda_min >= -1e-8 && a.range.lambda_max <= 2.0 + 1e-8;
  a.monotone = true;
  for (std::size_t k = 1; k < a.energies.size(); ++k) a.monotone = a.monotone && a.energies[k] <= a.energies[k - 1] + 1e-9;
  a.flow = a.residual < 1e-12;
  return a;
}

inline int cmd_diffusion_analyze(const DiffusionOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const DiffusionAnalysis a = analyze_diffusion(o);
    CsvTable csv({"step", "dirichlet_energy", "lambda_min", "lambda_max"});
    for (std::size_t k = 0; k < a.energies.size(); ++k) {
      csv.add({std::to_string(k), fmt(a.energies[k]), fmt(a.range.lambda_min), fmt(a.range.lambda_max)});
    }
    if (o.out.empty()) {
      out << csv.str();
    } else {
      csv.write(o.out);
    }
    const bool ok = a.symmetric && a.bounded && a.monotone && a.flow;
    out << "# verdict: " << (ok ? "PASS" : "FAIL") << " symmetric=" << a.symmetric << " spectrum_in_[0,2]=" << a.bounded
        << " energy_non_increasing=" << a.monotone << " gradient_flow_residual=" << fmt(a.residual) << "\n";
    return ok ? 0 : 3;
  });
}

// ---------------------------------------------------------------------------
// ood
// ---------------------------------------------------------------------------

struct OodOptions {
  std::string id;
  std::string ood;
  std::string id_train;  // prototypes / kNN bank; defaults to --id
  std::string checkpoint;
  std::string method = "dgp";
  std::string scores_out;
  std::string metrics_out;
  bool pruned_signature = false;
};

inline std::vector<OodSample> ood_samples(MorphNet& net, const std::vector<SynthStream>& data, bool pruned) {
  std::vector<OodSample> out;
  const auto recs = infer(net, data);
  out.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    OodSample s;
    s.logits = recs[i].logits;
    s.features = recs[i].features;
    s.signature = topology_signature(recs[i].traces, i, pruned);
    s.label = recs[i].label;
    out.push_back(std::move(s));
  }
  return out;
}

struct OodRun {
  OodDetector detector;
  OodScoreSet scores;
  OodMetrics metrics;
  std::vector<OodSample> id;
  std::vector<OodSample> ood;
};

inline OodRun run_ood(MorphNet& net, OodMethod method, const std::vector<SynthStream>& id_train,
                      const std::vector<SynthStream>& id, const std::vector<SynthStream>& ood, bool pruned = false) {
  OodRun r;
  const auto train = ood_samples(net, id_train, pruned);
  r.detector = fit_detector(method, train);
  r.id = ood_samples(net, id, pruned);
  r.ood = ood_samples(net, ood, pruned);
  r.scores.method = to_string(method);
  for (const auto& s : r.id) r.scores.id_scores.push_back(r.detector.score(s));
  for (const auto& s : r.ood) r.scores.ood_scores.push_back(r.detector.score(s));
  r.metrics = metrics(r.scores);
  return r;
}

inline int cmd_ood(const OodOptions& o, std::ostream& out, std::ostream& err) {
  const auto& names = ood_method_names();
  if (std::find(names.begin(), names.end(), o.method) == names.end()) {
    err << "error: unknown method '" << o.method << "'; valid methods:";
    for (const auto& n : names) err << " " << n;
    err << "\n";
    return 2;
  }
  return guarded(err, [&] {
    const OodMethod method = parse_ood_method(o.method);
    MorphNet net = load_checkpoint(o.checkpoint);
    if (method == OodMethod::Dgp && net.config.beta == 1.0) {
      err << "warning: checkpoint uses beta=1 (static graph); ID topology signatures are degenerate\n";
    }
    const auto id = read_event_frames(o.id);
    const auto ood = read_event_frames(o.ood);
    const auto id_train = o.id_train.empty() ? id : read_event_frames(o.id_train);
    const OodRun r = run_ood(net, method, id_train.samples, id.samples, ood.samples, o.pruned_signature);

    out << "method " << o.method << " auroc " << fmt(r.metrics.auroc) << " aupr_out " << fmt(r.metrics.aupr_out)
        << " fpr95 " << fmt(r.metrics.fpr95) << "\n";
    CsvTable csv({"sample_id", "split", "label", "method", "score", "flagged"});
    auto emit = [&](const std::vector<OodSample>& set, const std::vector<double>& scores, const char* split) {
      for (std::size_t i = 0; i < set.size(); ++i) {
        csv.add({std::to_string(i), split, std::to_string(set[i].label), o.method, fmt(scores[i]),
                 r.detector.flagged(scores[i]) ? "1" : "0"});
      }
    };
    emit(r.id, r.scores.id_scores, "id");
    emit(r.ood, r.scores.ood_scores, "ood");
    const std::string scores_path = o.scores_out.empty() ? "ood_" + o.method + "_scores.csv" : o.scores_out;
    const std::string metrics_path = o.metrics_out.empty() ? "ood_" + o.method + "_metrics.json" : o.metrics_out;
    csv.write(scores_path);
    const json m{{"method", o.method},
                 {"auroc", r.metrics.auroc},
                 {"aupr_out", r.metrics.aupr_out},
                 {"fpr95", r.metrics.fpr95},
                 {"threshold", r.detector.threshold},
                 {"id_samples", r.id.size()},
                 {"ood_samples", r.ood.size()}};
    detail::write_file(metrics_path, m.dump(2) + "\n");
    return 0;
  });
}

// ---------------------------------------------------------------------------
// perturb-eval
// ---------------------------------------------------------------------------

struct PerturbEvalOptions {
  std::string checkpoint;
  std::string compare;
  std::string data;
  std::string kind = "salt-pepper";
  std::string rho_range = "0..9";
  std::uint64_t seed = Rng::kDefaultSeed;
  std::string out;
};

inline std::pair<int, int> parse_rho_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) {
      const int v = std::stoi(s);
      return {v, v};
    }
    const int lo = std::stoi(s.substr(0, dots));
    const int hi = std::stoi(s.substr(dots + 2));
    if (lo > hi) throw ParameterError("rho range '" + s + "' is empty");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ParameterError("bad rho range '" + s + "' (expected a..b)");
  }
}

inline int cmd_perturb_eval(const PerturbEvalOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const PerturbKind kind = parse_perturb_kind(o.kind);
    const auto [lo, hi] = parse_rho_range(o.rho_range);
    PerturbSpec{kind, lo}.validate();
    PerturbSpec{kind, hi}.validate();
    MorphNet net = load_checkpoint(o.checkpoint);
    std::optional<MorphNet> other;
    if (!o.compare.empty()) other = load_checkpoint(o.compare);
    const auto data = read_event_frames(o.data);
    std::vector<std::string> header{"rho", "accuracy"};
    if (other) header.push_back("accuracy_compare");
    CsvTable csv(header);
    for (int rho = lo; rho <= hi; ++rho) {
      const PerturbSpec spec{kind, rho};
      std::vector<std::string> row{std::to_string(rho), fmt(evaluate(net, data.samples, spec, o.seed).accuracy)};
      if (other) row.push_back(fmt(evaluate(*other, data.samples, spec, o.seed).accuracy));
      csv.add(std::move(row));
    }
    if (o.out.empty()) {
      out << csv.str();
    } else {
      csv.write(o.out);
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// energy-report
// ---------------------------------------------------------------------------

struct EnergyOptions {
  std::string checkpoint;
  std::string data;
  std::string out;        // JSON; empty: stdout
  std::string rates_out;  // optional firing-rate CSV
};

inline json to_json(const OpCountReport& r) {
  return json{{"component", r.component}, {"muls", r.muls},         {"acs", r.acs},
              {"macs", r.macs},           {"energy_pj", r.energy_pj}, {"energy_mj", r.energy_mj()}};
}

inline int cmd_energy_report(const EnergyOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    MorphNet net = load_checkpoint(o.checkpoint);
    const auto data = read_event_frames(o.data);
    const auto recs = infer(net, data.samples, InferOptions{32, true});
    std::vector<std::vector<Matrix>> enc;
    std::vector<std::vector<LayerTrace>> traces;
    for (const auto& r : recs) {
      enc.push_back(r.encoder_spikes);
      traces.push_back(r.traces);
    }
    const NetworkEnergyReport rep = network_energy_report(net, enc, traces);
    const json j{{"samples", rep.samples},
                 {"per_sample", json::array({to_json(rep.gd), to_json(rep.stsp), to_json(rep.spikes),
                                             to_json(rep.spikes_dense)})},
                 {"firing_rates", rep.firing_rates}};
    if (o.out.empty()) {
      out << j.dump(2) << "\n";
    } else {
      detail::write_file(o.out, j.dump(2) + "\n");
    }
    if (!o.rates_out.empty()) {
      CsvTable csv({"layer", "node", "mean_rate"});
      for (std::size_t l = 0; l < rep.firing_rates.size(); ++l)
        for (std::size_t i = 0; i < rep.firing_rates[l].size(); ++i)
          csv.add({std::to_string(l), std::to_string(i), fmt(rep.firing_rates[l][i])});
      csv.write(o.rates_out);
    }
    return 0;
  });
}

}  // namespace morphsnn::cli
