#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bsm/cka.hpp"
#include "bsm/dist_metrics.hpp"
#include "bsm/error.hpp"
#include "bsm/types.hpp"

namespace bsm {

// One signature component: a similarity in [0, 1] or a recorded absence.
struct Component {
  std::optional<double> value;
  std::string absence_reason;

  static Component present(double v) { return {v, {}}; }
  static Component absent(std::string reason) { return {std::nullopt, std::move(reason)}; }
};

inline constexpr std::array<const char*, 6> kSignatureComponents = {
    "acc_sim", "bias_sim", "hist_sim", "cosine_sim", "behavior_sim", "repr_sim"};

// Six-component pairwise bias-similarity vector, symmetric in the pair.
struct BiasSignature {
  std::string model_i;
  std::string model_j;
  std::vector<Dimension> dims;

  Component acc_sim;       // 1 - |acc_i - acc_j|, disambiguated accuracy
  Component bias_sim;      // 1 - |s_amb_i - s_amb_j| / 200
  Component hist_sim;      // 1 - TV distance of ambiguous-context histograms
  Component cosine_sim;    // 1 - cosine distance of forced-choice count vectors
  Component behavior_sim;  // 1 - |abstention_i - abstention_j|
  Component repr_sim;      // diag CKA at matched depth, else full CKA

  const Component& component(std::size_t idx) const {
    switch (idx) {
      case 0: return acc_sim;
      case 1: return bias_sim;
      case 2: return hist_sim;
      case 3: return cosine_sim;
      case 4: return behavior_sim;
      default: return repr_sim;
    }
  }
  Component& component(std::size_t idx) {
    return const_cast<Component&>(static_cast<const BiasSignature&>(*this).component(idx));
  }

  bool any_present() const {
    for (std::size_t i = 0; i < kSignatureComponents.size(); ++i)
      if (component(i).value) return true;
    return false;
  }
};

// Everything one model contributes to pairwise comparison on one dimension.
struct DimensionMetrics {
  std::optional<double> acc_dis;
  std::optional<double> s_amb;
  std::optional<double> abstention;
  std::optional<CountVector> ambiguous_hist;
  std::optional<CountVector> forced_choice_hist;
  std::optional<ActivationSet> activations;  // rows filtered to this dimension
};

struct ModelResults {
  ModelDescriptor model;
  std::map<Dimension, DimensionMetrics> dims;
};

namespace detail {

struct ComponentAccumulator {
  double sum = 0;
  int n = 0;
  std::string reason;

  void add(std::optional<double> v, const std::string& absence_reason) {
    if (v) {
      sum += *v;
      ++n;
    } else if (reason.empty()) {
      reason = absence_reason;
    }
  }

  Component finish() const {
    if (n == 0) return Component::absent(reason.empty() ? "no data" : reason);
    return Component::present(std::clamp(sum / n, 0.0, 1.0));
  }
};

inline std::optional<double> abs_diff_sim(std::optional<double> a, std::optional<double> b,
                                          double range) {
  if (!a || !b) return std::nullopt;
  return 1.0 - std::abs(*a - *b) / range;
}

}  // namespace detail

// Assembles the six-component signature for a model pair, averaging each
// component unweighted over the requested dimensions. Components missing on
// every dimension are absent with a recorded reason, never defaulted.
inline BiasSignature pair_signature(const ModelResults& a, const ModelResults& b,
                                    const std::vector<Dimension>& dims) {
  if (dims.empty()) throw DataError("pair_signature: empty dimension set");

  BiasSignature sig;
  sig.model_i = a.model.id;
  sig.model_j = b.model.id;
  sig.dims = dims;

  detail::ComponentAccumulator acc, bias, hist, cosine, behavior, repr;
  const DimensionMetrics empty;

  for (const auto& d : dims) {
    auto ita = a.dims.find(d);
    auto itb = b.dims.find(d);
    const DimensionMetrics& ma = ita == a.dims.end() ? empty : ita->second;
    const DimensionMetrics& mb = itb == b.dims.end() ? empty : itb->second;

    acc.add(detail::abs_diff_sim(ma.acc_dis, mb.acc_dis, 1.0), "no disambiguated accuracy");
    bias.add(detail::abs_diff_sim(ma.s_amb, mb.s_amb, 200.0), "no ambiguous bias score");
    behavior.add(detail::abs_diff_sim(ma.abstention, mb.abstention, 1.0),
                 "no abstention rate");

    if (ma.ambiguous_hist && mb.ambiguous_hist &&
        ma.ambiguous_hist->total() > 0 && mb.ambiguous_hist->total() > 0)
      hist.add(1.0 - tv_distance(*ma.ambiguous_hist, *mb.ambiguous_hist), {});
    else
      hist.add(std::nullopt, "no ambiguous histogram");

    if (ma.forced_choice_hist && mb.forced_choice_hist &&
        ma.forced_choice_hist->total() > 0 && mb.forced_choice_hist->total() > 0)
      cosine.add(1.0 - cosine_distance(*ma.forced_choice_hist, *mb.forced_choice_hist), {});
    else
      cosine.add(std::nullopt, "no forced-choice counts");

    if (ma.activations && mb.activations) {
      if (ma.activations->layers.size() == mb.activations->layers.size())
        repr.add(diag_cka(*ma.activations, *mb.activations), "degenerate activations");
      else
        repr.add(full_cka(*ma.activations, *mb.activations), "degenerate activations");
    } else {
      repr.add(std::nullopt, "no activations");
    }
  }

  sig.acc_sim = acc.finish();
  sig.bias_sim = bias.finish();
  sig.hist_sim = hist.finish();
  sig.cosine_sim = cosine.finish();
  sig.behavior_sim = behavior.finish();
  sig.repr_sim = repr.finish();

  if (!sig.any_present())
    throw DataError("pair_signature: all components absent for (" + sig.model_i + ", " +
                    sig.model_j + ")");
  return sig;
}

// Mean absolute componentwise difference over jointly-present components.
inline double signature_distance(const BiasSignature& a, const BiasSignature& b) {
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < kSignatureComponents.size(); ++i) {
    const auto& ca = a.component(i).value;
    const auto& cb = b.component(i).value;
    if (ca && cb) {
      sum += std::abs(*ca - *cb);
      ++n;
    }
  }
  if (n == 0)
    throw DataError("signature_distance: no jointly-present components for (" + a.model_i +
                    ", " + a.model_j + ") vs (" + b.model_i + ", " + b.model_j + ")");
  return sum / n;
}

// Symmetric model-set matrix for one signature component, with unit diagonal
// where self-comparison is defined and an absence mask elsewhere.
struct SimilarityMatrix {
  std::vector<std::string> model_ids;  // manifest order
  std::string metric;
  std::vector<std::vector<std::optional<double>>> values;
  std::vector<std::vector<std::string>> absence_reasons;

  std::optional<double> at(std::size_t i, std::size_t j) const { return values[i][j]; }
};

// Builds the matrix from a pairwise signature grid. `signatures[i][j]` must
// hold the signature for (models[i], models[j]) with i < j; the matrix is
// mirrored from the upper triangle.
inline SimilarityMatrix similarity_matrix(
    const std::vector<std::string>& model_ids, const std::string& metric,
    const std::map<std::pair<std::size_t, std::size_t>, BiasSignature>& signatures) {
  if (model_ids.size() < 2) throw DataError("similarity_matrix: need at least 2 models");

  std::size_t metric_idx = kSignatureComponents.size();
  for (std::size_t i = 0; i < kSignatureComponents.size(); ++i)
    if (metric == kSignatureComponents[i]) metric_idx = i;
  if (metric_idx == kSignatureComponents.size())
    throw ConfigError("unknown signature component '" + metric + "'");

  const std::size_t n = model_ids.size();
  SimilarityMatrix m;
  m.model_ids = model_ids;
  m.metric = metric;
  m.values.assign(n, std::vector<std::optional<double>>(n));
  m.absence_reasons.assign(n, std::vector<std::string>(n));

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      auto it = signatures.find({i, j});
      if (it == signatures.end())
        throw DataError("similarity_matrix: missing signature for pair (" + model_ids[i] +
                        ", " + model_ids[j] + ")");
      const Component& c = it->second.component(metric_idx);
      m.values[i][j] = c.value;
      m.values[j][i] = c.value;
      m.absence_reasons[i][j] = c.absence_reason;
      m.absence_reasons[j][i] = c.absence_reason;
    }
  }
  return m;
}

}  // namespace bsm
