#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsm/cka.hpp"
#include "bsm/error.hpp"
#include "bsm/normalize.hpp"
#include "bsm/types.hpp"

namespace bsm {

// Counter-based generator: draw i of a stream seeded with s is the
// SplitMix64 finalizer applied to s + (i+1) * golden-gamma. Stateless, so
// parallel generation partitions the counter space deterministically and
// identical (seed, counter) pairs agree across platforms and languages.
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t counter) const {
    std::uint64_t z = seed_ + (counter + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) from the top 53 bits.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; draw i consumes uniform counters
  // 2i and 2i+1.
  double normal(std::uint64_t counter) const {
    const double u1 = uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t seed_;
};

// A synthetic responder with planted bias parameters. Expected readings:
// s_dis -> 100 * (2 * p_stereo - 1), abstention -> p_abstain.
struct SynthModelSpec {
  std::string id;
  double p_stereo = 0.5;
  double p_abstain = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (p_stereo < 0 || p_stereo > 1) throw ConfigError("p_stereo out of [0,1] for '" + id + "'");
    if (p_abstain < 0 || p_abstain > 1)
      throw ConfigError("p_abstain out of [0,1] for '" + id + "'");
  }
};

// Raw text emitted for an abstention on forced-choice prompts, where no
// unknown candidate exists; the refusal lexicon maps it to U.
inline constexpr const char* kSynthRefusalText = "I cannot determine the answer.";

// Responds to each prompt: abstain with p_abstain, otherwise stereotypical
// with p_stereo. Prompt i consumes uniform counters 2i and 2i+1. Raw text is
// the chosen candidate's text; labels are recomputed through the normalizer.
inline std::vector<ResponseRecord> generate_responses(const SynthModelSpec& spec,
                                                      std::span<const PromptRecord> prompts,
                                                      const RefusalLexicon& lexicon) {
  spec.validate();
  const CounterRng rng(spec.seed);
  std::vector<ResponseRecord> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const PromptRecord& p = prompts[i];
    const double u_abstain = rng.uniform(2 * i);
    const double u_stereo = rng.uniform(2 * i + 1);

    std::string raw;
    if (u_abstain < spec.p_abstain) {
      if (const Candidate* c = p.candidate_for(Role::unknown))
        raw = c->text;
      else
        raw = kSynthRefusalText;
    } else {
      const Role r = u_stereo < spec.p_stereo ? Role::stereotype : Role::anti_stereotype;
      const Candidate* c = p.candidate_for(r);
      if (!c)
        throw DataError("prompt '" + p.prompt_id + "' lacks a '" +
                        std::string(to_string(r)) + "' candidate");
      raw = c->text;
    }
    const NormResult n = normalize_response(raw, p.candidates, lexicon);
    out.push_back({spec.id, p.prompt_id, std::move(raw), n.label, n.method});
  }
  return out;
}

// Synthetic BBQ-style prompts: three candidates (S/A/U), the first
// n_ambiguous ambiguous, the rest disambiguated with gold roles alternating
// between anti-stereotype and stereotype.
inline std::vector<PromptRecord> generate_bbq_prompts(const Dimension& dimension,
                                                      std::size_t n_ambiguous,
                                                      std::size_t n_disambiguated) {
  std::vector<PromptRecord> out;
  out.reserve(n_ambiguous + n_disambiguated);
  for (std::size_t i = 0; i < n_ambiguous + n_disambiguated; ++i) {
    PromptRecord p;
    char id[64];
    std::snprintf(id, sizeof(id), "syn-%s-%05zu", dimension.name().c_str(), i);
    p.prompt_id = id;
    p.dataset = Dataset::bbq;
    p.dimension = dimension;
    p.context_kind = i < n_ambiguous ? ContextKind::ambiguous : ContextKind::disambiguated;
    p.candidates = {{"option alpha " + std::to_string(i), Role::stereotype},
                    {"option beta " + std::to_string(i), Role::anti_stereotype},
                    {"Unknown", Role::unknown}};
    if (p.context_kind == ContextKind::disambiguated)
      p.gold_role = (i % 2 == 0) ? Role::anti_stereotype : Role::stereotype;
    out.push_back(std::move(p));
  }
  return out;
}

// Synthetic forced-choice prompts: two candidates, no abstention option.
inline std::vector<PromptRecord> generate_forced_choice_prompts(const Dimension& dimension,
                                                                std::size_t n) {
  std::vector<PromptRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PromptRecord p;
    char id[64];
    std::snprintf(id, sizeof(id), "syn-fc-%s-%05zu", dimension.name().c_str(), i);
    p.prompt_id = id;
    p.dataset = Dataset::unqover;
    p.dimension = dimension;
    p.context_kind = ContextKind::forced_choice;
    p.candidates = {{"option alpha " + std::to_string(i), Role::stereotype},
                    {"option beta " + std::to_string(i), Role::anti_stereotype}};
    out.push_back(std::move(p));
  }
  return out;
}

// Gaussian activations for a fresh synthetic model. Layer l, row r, col c
// draws normal counter ((l * rows + r) * cols + c).
inline ActivationSet generate_base_activations(const std::string& model_id,
                                               std::vector<std::string> prompt_ids,
                                               std::size_t n_layers, std::size_t cols,
                                               std::uint64_t seed) {
  if (prompt_ids.size() < 2) throw ConfigError("activations need at least 2 prompts");
  const CounterRng rng(seed);
  const auto rows = static_cast<Eigen::Index>(prompt_ids.size());
  ActivationSet set;
  set.model_id = model_id;
  set.prompt_ids = std::move(prompt_ids);
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd M(rows, static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c) {
        const std::uint64_t counter =
            (static_cast<std::uint64_t>(l) * static_cast<std::uint64_t>(rows) +
             static_cast<std::uint64_t>(r)) *
                static_cast<std::uint64_t>(cols) +
            static_cast<std::uint64_t>(c);
        M(r, c) = rng.normal(counter);
      }
    set.layers.push_back(std::move(M));
  }
  set.validate();
  return set;
}

// Planted representational drift: per layer, base * Q * c + sigma * noise
// with a planted orthogonal Q. sigma = 0 leaves CKA at 1 by invariance.
struct ActivationDriftSpec {
  double scale = 1.0;
  std::vector<double> layer_sigma;  // one entry per base layer
  std::uint64_t seed = 0;
};

namespace detail {

// Deterministic random orthogonal matrix: QR of a Gaussian square matrix,
// with column signs fixed so R's diagonal is positive.
inline Eigen::MatrixXd random_orthogonal(Eigen::Index d, const CounterRng& rng,
                                         std::uint64_t counter_base) {
  Eigen::MatrixXd G(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c)
      G(r, c) = rng.normal(counter_base + static_cast<std::uint64_t>(r * d + c));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < d; ++c)
    if (R(c, c) < 0) Q.col(c) = -Q.col(c);
  return Q;
}

}  // namespace detail

inline ActivationSet generate_drifted_activations(const ActivationSet& base,
                                                  const ActivationDriftSpec& drift,
                                                  const std::string& new_model_id) {
  base.validate();
  if (drift.layer_sigma.size() != base.layers.size())
    throw ConfigError("drift spec has " + std::to_string(drift.layer_sigma.size()) +
                      " sigma entries for " + std::to_string(base.layers.size()) + " layers");
  if (drift.scale <= 0) throw ConfigError("drift scale must be positive");

  const CounterRng rng(drift.seed);
  ActivationSet out;
  out.model_id = new_model_id;
  out.prompt_ids = base.prompt_ids;
  // Counter layout per layer: [0, d^2) for Q, then one normal per cell.
  std::uint64_t counter = 0;
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    const Eigen::MatrixXd& B = base.layers[l];
    const Eigen::MatrixXd Q = detail::random_orthogonal(B.cols(), rng, counter);
    counter += static_cast<std::uint64_t>(B.cols() * B.cols());
    Eigen::MatrixXd M = drift.scale * (B * Q);
    const double sigma = drift.layer_sigma[l];
    if (sigma > 0) {
      for (Eigen::Index r = 0; r < M.rows(); ++r)
        for (Eigen::Index c = 0; c < M.cols(); ++c)
          M(r, c) += sigma * rng.normal(counter + static_cast<std::uint64_t>(r * M.cols() + c));
    }
    counter += static_cast<std::uint64_t>(M.rows() * M.cols());
    out.layers.push_back(std::move(M));
  }
  out.validate();
  return out;
}

}  // namespace bsm
