#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsm/activation_io.hpp"
#include "bsm/error.hpp"
#include "bsm/loaders.hpp"
#include "bsm/run.hpp"
#include "bsm/synth.hpp"

namespace bsm {

// Synth spec file: responds to an existing prompt file or generates a fresh
// synthetic prompt set, then emits one response stream per model plus a
// models.json manifest (and optional activation sets).
//
// {
//   "prompts": "path.jsonl"                      // or "generate": {...}
//   "generate": { "dataset": "bbq" | "unqover",
//                 "dimensions": ["gender", ...],
//                 "n_ambiguous": N, "n_disambiguated": M,   // bbq
//                 "n_forced": K },                          // unqover
//   "models": [ { "id", "p_stereo", "p_abstain", "seed",
//                 "family"?, "version"?, "tuned"?,
//                 "activations"?: { "layers", "cols", "seed" }
//                                | { "drift_of", "scale", "sigma",
//                                    "sigma_last"?, "seed" } } ]
// }
struct SynthRunSpec {
  std::optional<std::filesystem::path> prompts_path;
  std::vector<PromptRecord> generated;

  struct ModelEntry {
    SynthModelSpec spec;
    ModelDescriptor descriptor;
    nlohmann::json activations;  // empty when none
  };
  std::vector<ModelEntry> models;
};

inline SynthRunSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synth spec '" + path.string() + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": invalid JSON");

  SynthRunSpec out;
  const std::filesystem::path base = path.parent_path();
  if (auto it = j.find("prompts"); it != j.end()) {
    std::filesystem::path p(it->get<std::string>());
    out.prompts_path = p.is_absolute() ? p : base / p;
  } else if (auto gt = j.find("generate"); gt != j.end()) {
    const auto dataset = parse_dataset(gt->at("dataset").get<std::string>());
    std::vector<Dimension> dims;
    for (const auto& d : gt->at("dimensions")) dims.push_back(Dimension::parse(d.get<std::string>()));
    if (dims.empty()) throw ConfigError("synth generate: no dimensions");
    for (const auto& d : dims) {
      if (dataset == Dataset::bbq) {
        const auto n_amb = gt->value("n_ambiguous", 0);
        const auto n_dis = gt->value("n_disambiguated", 0);
        auto ps = generate_bbq_prompts(d, static_cast<std::size_t>(n_amb),
                                       static_cast<std::size_t>(n_dis));
        out.generated.insert(out.generated.end(), ps.begin(), ps.end());
      } else if (dataset == Dataset::unqover) {
        const auto n = gt->value("n_forced", 0);
        auto ps = generate_forced_choice_prompts(d, static_cast<std::size_t>(n));
        out.generated.insert(out.generated.end(), ps.begin(), ps.end());
      } else {
        throw ConfigError("synth generate: dataset must be bbq or unqover");
      }
    }
    if (out.generated.empty()) throw ConfigError("synth generate: prompt counts are all zero");
  } else {
    throw ConfigError("synth spec: needs 'prompts' or 'generate'");
  }

  auto mt = j.find("models");
  if (mt == j.end() || !mt->is_array() || mt->empty())
    throw ConfigError("synth spec: 'models' array is required");
  for (const auto& mj : *mt) {
    SynthRunSpec::ModelEntry e;
    e.spec.id = mj.at("id").get<std::string>();
    e.spec.p_stereo = mj.value("p_stereo", 0.5);
    e.spec.p_abstain = mj.value("p_abstain", 0.0);
    e.spec.seed = mj.value("seed", 0ULL);
    e.spec.validate();
    e.descriptor.id = e.spec.id;
    e.descriptor.family = mj.value("family", std::string("synthetic"));
    e.descriptor.version = mj.value("version", std::string("1"));
    e.descriptor.tuned = mj.value("tuned", false);
    e.descriptor.provenance = Provenance::open;
    if (auto at = mj.find("activations"); at != mj.end()) e.activations = *at;
    out.models.push_back(std::move(e));
  }
  return out;
}

// Emits prompts.jsonl (generated sets only), responses.jsonl, models.json
// and activations/<model>/ under out_dir. Identical specs produce identical
// bytes.
inline void run_synth(const SynthRunSpec& spec, const std::filesystem::path& out_dir) {
  const RefusalLexicon lexicon = RefusalLexicon::defaults();

  std::vector<PromptRecord> prompts;
  if (spec.prompts_path)
    prompts = load_prompts(*spec.prompts_path);
  else
    prompts = spec.generated;

  detail::StagedDir staged(out_dir);
  if (!spec.prompts_path) write_prompts(staged.path() / "prompts.jsonl", prompts);

  {
    auto out = detail::open_out(staged.path() / "responses.jsonl");
    for (const auto& entry : spec.models) {
      const auto responses = generate_responses(entry.spec, prompts, lexicon);
      for (const auto& r : responses) {
        nlohmann::json rj;
        rj["model_id"] = r.model_id;
        rj["prompt_id"] = r.prompt_id;
        rj["raw_text"] = r.raw_text;
        out << rj.dump() << "\n";
      }
    }
  }

  std::vector<ModelDescriptor> descriptors;
  for (const auto& entry : spec.models) descriptors.push_back(entry.descriptor);
  write_models_manifest(staged.path() / "models.json", descriptors);

  // Activations: plain Gaussian sets and planted drifts of earlier models.
  std::map<std::string, ActivationSet> sets;
  std::vector<std::string> amb_prompt_ids;
  for (const auto& p : prompts)
    if (p.context_kind == ContextKind::ambiguous) amb_prompt_ids.push_back(p.prompt_id);

  for (const auto& entry : spec.models) {
    if (entry.activations.is_null() || entry.activations.empty()) continue;
    const auto& aj = entry.activations;
    ActivationSet set;
    if (auto d = aj.find("drift_of"); d != aj.end()) {
      const std::string base_id = d->get<std::string>();
      auto it = sets.find(base_id);
      if (it == sets.end())
        throw ConfigError("synth: drift_of '" + base_id + "' has no activations yet");
      ActivationDriftSpec drift;
      drift.scale = aj.value("scale", 1.0);
      drift.seed = aj.value("seed", 0ULL);
      const double sigma = aj.value("sigma", 0.0);
      drift.layer_sigma.assign(it->second.layers.size(), sigma);
      if (auto sl = aj.find("sigma_last"); sl != aj.end() && !drift.layer_sigma.empty())
        drift.layer_sigma.back() = sl->get<double>();
      set = generate_drifted_activations(it->second, drift, entry.spec.id);
    } else {
      const auto layers = aj.value("layers", 4);
      const auto cols = aj.value("cols", 16);
      const auto seed = aj.value("seed", 0ULL);
      if (amb_prompt_ids.size() < 2)
        throw ConfigError("synth: activations need at least 2 ambiguous prompts");
      set = generate_base_activations(entry.spec.id, amb_prompt_ids,
                                      static_cast<std::size_t>(layers),
                                      static_cast<std::size_t>(cols), seed);
    }
    save_activations(staged.path() / "activations" / entry.spec.id, set);
    sets.emplace(entry.spec.id, std::move(set));
  }

  staged.promote();
}

}  // namespace bsm
