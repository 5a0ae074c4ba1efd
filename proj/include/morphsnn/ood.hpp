#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "morphsnn/errors.hpp"
#include "morphsnn/network.hpp"
#include "morphsnn/numgrad/softmax.hpp"

namespace morphsnn {

enum class OodMethod { Dgp, Msp, Energy, Knn, Scp };

inline const std::vector<std::string>& ood_method_names() {
  static const std::vector<std::string> names{"dgp", "msp", "energy", "knn", "scp"};
  return names;
}

inline std::string to_string(OodMethod m) { return ood_method_names()[static_cast<std::size_t>(m)]; }

inline OodMethod parse_ood_method(const std::string& s) {
  const auto& names = ood_method_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<OodMethod>(i);
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
  throw ParameterError("unknown OOD method '" + s + "'; valid methods: " + valid);
}

// ---------------------------------------------------------------------------
// Signatures and prototypes
// ---------------------------------------------------------------------------

struct TopologySignature {
  std::vector<double> z;
  std::size_t sample_id = 0;
};

/// Flattened S^(t) (post-momentum, pre-pruning) in timestep order, layers
/// concatenated. `pruned` switches to the Top-k pruned matrices.
inline TopologySignature topology_signature(const std::vector<LayerTrace>& traces, std::size_t sample_id = 0,
                                            bool pruned = false) {
  TopologySignature sig;
  sig.sample_id = sample_id;
  if (traces.empty()) throw ContractError("topology_signature: no layer traces");
  for (std::size_t l = 0; l < traces.size(); ++l) {
    if (traces[l].records.empty()) {
      throw ContractError("topology_signature: layer " + std::to_string(l) + " has no adjacency records");
    }
    for (const TraceRecord& r : traces[l].records) {
      const Matrix& s = pruned ? r.S_pruned : r.S;
      if (s.empty()) throw ContractError("topology_signature: missing adjacency in layer " + std::to_string(l));
      sig.z.insert(sig.z.end(), s.values().begin(), s.values().end());
    }
  }
  return sig;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("distance: vectors of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Nearest-rank percentile: the ceil(q/100 * n)-th smallest value (q integer).
inline double nearest_rank_percentile(std::vector<double> values, unsigned q) {
  if (values.empty()) throw DataError("percentile: empty score set");
  if (q == 0 || q > 100) throw ParameterError("percentile: q outside (0,100]");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const std::size_t rank = (q * n + 99) / 100;  // ceil(q n / 100) in integers
  return values[std::max<std::size_t>(rank, 1) - 1];
}

struct PrototypeBank {
  std::vector<std::size_t> classes;        // class label of each centroid
  std::vector<std::vector<double>> centroids;
  double kappa = 0.0;

  [[nodiscard]] std::size_t dims() const { return centroids.empty() ? 0 : centroids.front().size(); }
};

/// min_c || z - mu_c ||.
inline double prototype_distance(const std::vector<double>& z, const PrototypeBank& bank) {
  if (bank.centroids.empty()) throw DataError("prototype_distance: empty prototype bank");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& mu : bank.centroids) best = std::min(best, euclidean(z, mu));
  return best;
}

/// Class means of the labelled vectors; kappa = 95th nearest-rank percentile
/// of the training vectors' own scores.
inline PrototypeBank compute_prototypes(const std::vector<std::vector<double>>& vectors,
                                        const std::vector<std::size_t>& labels, std::size_t num_classes = 0) {
  if (vectors.size() != labels.size()) throw DimensionError("compute_prototypes: vectors and labels differ in count");
  if (vectors.empty()) throw DataError("compute_prototypes: no training vectors");
  std::map<std::size_t, std::pair<std::vector<double>, std::size_t>> acc;
  const std::size_t d = vectors.front().size();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != d) throw DimensionError("compute_prototypes: inconsistent vector length");
    auto& [sum, count] = acc[labels[i]];
    if (sum.empty()) sum.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) sum[k] += vectors[i][k];
    ++count;
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (!acc.count(c)) throw DataError("compute_prototypes: class " + std::to_string(c) + " has no samples");
  PrototypeBank bank;
  for (auto& [label, entry] : acc) {
    auto& [sum, count] = entry;
    for (double& v : sum) v /= static_cast<double>(count);
    bank.classes.push_back(label);
    bank.centroids.push_back(std::move(sum));
  }
  std::vector<double> scores;
  scores.reserve(vectors.size());
  for (const auto& v : vectors) scores.push_back(prototype_distance(v, bank));
  bank.kappa = nearest_rank_percentile(std::move(scores), 95);
  return bank;
}

inline PrototypeBank compute_prototypes(const std::vector<TopologySignature>& sigs,
                                        const std::vector<std::size_t>& labels, std::size_t num_classes = 0) {
  std::vector<std::vector<double>> v;
  v.reserve(sigs.size());
  for (const auto& s : sigs) v.push_back(s.z);
  return compute_prototypes(v, labels, num_classes);
}

// ---------------------------------------------------------------------------
// Scores (higher = more anomalous for every method)
// ---------------------------------------------------------------------------

inline double dgp_score(const TopologySignature& z, const PrototypeBank& bank) { return prototype_distance(z.z, bank); }

inline double msp_score(const std::vector<double>& logits) {
  const auto p = softmax_temperature(logits, 1.0);
  return 1.0 - *std::max_element(p.begin(), p.end());
}

inline double energy_score(const std::vector<double>& logits) { return -logsumexp(logits); }

/// Distance to the k-th nearest training feature (k is 1-based).
inline double knn_score(const std::vector<double>& feature, const std::vector<std::vector<double>>& train, std::size_t k) {
  if (k < 1 || k > train.size()) {
    throw ParameterError("knn_score: k=" + std::to_string(k) + " outside [1, " + std::to_string(train.size()) + "]");
  }
  std::vector<double> d;
  d.reserve(train.size());
  for (const auto& t : train) d.push_back(euclidean(feature, t));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
  return d[k - 1];
}

/// k = 10, or |train| / 10 when that is smaller (at least 1).
inline std::size_t default_knn_k(std::size_t train_size) {
  return std::max<std::size_t>(1, std::min<std::size_t>(10, train_size / 10));
}

inline double scp_score(const std::vector<double>& firing, const PrototypeBank& bank) {
  return prototype_distance(firing, bank);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct OodScoreSet {
  std::string method;
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

struct OodMetrics {
  double auroc = 0.0;
  double aupr_out = 0.0;
  double fpr95 = 0.0;
};

namespace detail {
inline void require_scores(const OodScoreSet& s) {
  if (s.id_scores.empty() || s.ood_scores.empty()) throw DataError("ood metrics: empty score vector");
}
}  // namespace detail

/// P(ood > id) + 1/2 P(ood == id) via midranks.
inline double auroc(const OodScoreSet& s) {
  detail::require_scores(s);
  struct Item {
    double v;
    bool ood;
  };
  std::vector<Item> all;
  for (double v : s.id_scores) all.push_back({v, false});
  for (double v : s.ood_scores) all.push_back({v, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });
  double rank_sum = 0.0;  // sum of OOD midranks (1-based)
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t ood_in_tie = 0;
    while (j < all.size() && all[j].v == all[i].v) ood_in_tie += all[j++].ood ? 1 : 0;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(ood_in_tie);
    i = j;
  }
  const double n_ood = static_cast<double>(s.ood_scores.size());
  const double n_id = static_cast<double>(s.id_scores.size());
  return (rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_id);
}

/// Average precision with OOD as the positive class: sum over distinct
/// thresholds (descending) of (R_k - R_{k-1}) P_k.
inline double aupr_out(const OodScoreSet& s) {
  detail::require_scores(s);
  std::vector<std::pair<double, bool>> all;
  for (double v : s.id_scores) all.emplace_back(v, false);
  for (double v : s.ood_scores) all.emplace_back(v, true);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double pos = static_cast<double>(s.ood_scores.size());
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Fraction of ID scores >= the threshold at which 95% of OOD scores are
/// flagged (threshold = the ceil(0.95 n_ood)-th largest OOD score).
inline double fpr_at_95(const OodScoreSet& s) {
  detail::require_scores(s);
  std::vector<double> ood = s.ood_scores;
  std::sort(ood.begin(), ood.end(), std::greater<>());
  const std::size_t k = (95 * ood.size() + 99) / 100;
  const double thr = ood[k - 1];
  std::size_t fp = 0;
  for (double v : s.id_scores) fp += v >= thr ? 1 : 0;
  return static_cast<double>(fp) / static_cast<double>(s.id_scores.size());
}

inline OodMetrics metrics(const OodScoreSet& s) { return {auroc(s), aupr_out(s), fpr_at_95(s)}; }

// ---------------------------------------------------------------------------
// Detector over inference records
// ---------------------------------------------------------------------------

/// The inputs each method needs from one forward pass.
struct OodSample {
  std::vector<double> logits;
  std::vector<double> features;
  TopologySignature signature;
  std::size_t label = 0;
};

/// Fitted state for one method; score() is pure.
struct OodDetector {
  OodMethod method = OodMethod::Dgp;
  PrototypeBank bank;                        // dgp, scp
  std::vector<std::vector<double>> train;    // knn
  std::size_t k = 1;
  double threshold = 0.0;                    // flag iff score > threshold

  [[nodiscard]] double score(const OodSample& s) const {
    switch (method) {
      case OodMethod::Dgp: return dgp_score(s.signature, bank);
      case OodMethod::Msp: return msp_score(s.logits);
      case OodMethod::Energy: return energy_score(s.logits);
      case OodMethod::Knn: return knn_score(s.features, train, k);
      case OodMethod::Scp: return scp_score(s.features, bank);
    }
    return 0.0;
  }
  [[nodiscard]] bool flagged(double score) const { return score > threshold; }
};

/// Fits `method` on ID training samples. The threshold of every method is
/// the 95th nearest-rank percentile of its ID training scores (kappa for dgp).
inline OodDetector fit_detector(OodMethod method, const std::vector<OodSample>& id_train, std::size_t num_classes = 0) {
  if (id_train.empty()) throw DataError("fit_detector: empty ID training set");
  OodDetector det;
  det.method = method;
  std::vector<std::size_t> labels;
  for (const auto& s : id_train) labels.push_back(s.label);
  if (method == OodMethod::Dgp) {
    std::vector<std::vector<double>> v;
    for (const auto& s : id_train) v.push_back(s.signature.z);
    det.bank = compute_prototypes(v, labels, num_classes);
    det.threshold = det.bank.kappa;
    return det;
  }
  if (method == OodMethod::Scp) {
    std::vector<std::vector<double>> v;
    for (const auto& s : id_train) v.push_back(s.features);
    det.bank = compute_prototypes(v, labels, num_classes);
    det.threshold = det.bank.kappa;
    return det;
  }
  std::vector<double> scores;
  if (method == OodMethod::Knn) {
    for (const auto& s : id_train) det.train.push_back(s.features);
    det.k = default_knn_k(det.train.size());
    // Leave-one-out on the training set: the query itself sits at distance 0.
    const std::size_t k_self = std::min(det.k + 1, det.train.size());
    for (const auto& s : id_train) scores.push_back(knn_score(s.features, det.train, k_self));
  } else {
    for (const auto& s : id_train) scores.push_back(det.score(s));
  }
  det.threshold = nearest_rank_percentile(std::move(scores), 95);
  return det;
}

}  // namespace morphsnn
