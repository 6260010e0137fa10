#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bsm/activation_io.hpp"
#include "bsm/audit.hpp"
#include "bsm/cka.hpp"
#include "bsm/dist_metrics.hpp"
#include "bsm/error.hpp"
#include "bsm/format.hpp"
#include "bsm/lexicon.hpp"
#include "bsm/loaders.hpp"
#include "bsm/parallel.hpp"
#include "bsm/scalar_metrics.hpp"
#include "bsm/signature.hpp"
#include "bsm/tally.hpp"
#include "bsm/types.hpp"

namespace bsm {

namespace fs = std::filesystem;

// Wraps a pipeline stage so failures name the stage that produced them.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError("[stage " + stage + "] " + e.what());
  } catch (const DataError& e) {
    throw DataError("[stage " + stage + "] " + e.what());
  }
}

struct MetricToggles {
  bool acc = true;
  bool bias = true;
  bool hist = true;
  bool cosine = true;
  bool behavior = true;
  bool repr = true;
};

struct RunConfig {
  fs::path manifest;
  std::map<Dataset, fs::path> datasets;
  std::vector<fs::path> responses;
  std::optional<fs::path> activations_dir;
  std::optional<fs::path> lexicon_path;
  std::vector<Dimension> dims;  // empty: the four shared dimensions
  fs::path out = "out";
  MetricToggles metrics;
  unsigned jobs = 1;
  std::uint64_t seed = 0;

  std::vector<Dimension> effective_dims() const {
    return dims.empty() ? shared_dimensions() : dims;
  }

  void validate() const {
    if (manifest.empty()) throw ConfigError("config: 'manifest' is required");
    const auto must_exist = [](const fs::path& p, const char* what) {
      if (!fs::exists(p))
        throw ConfigError(std::string("config: ") + what + " '" + p.string() + "' does not exist");
    };
    must_exist(manifest, "manifest");
    for (const auto& [ds, p] : datasets) must_exist(p, "dataset file");
    for (const auto& p : responses) must_exist(p, "response file");
    if (activations_dir) must_exist(*activations_dir, "activations directory");
    if (lexicon_path) must_exist(*lexicon_path, "lexicon");
  }
};

inline RunConfig load_run_config(const fs::path& config_path) {
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config '" + config_path.string() + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(config_path.string() + ": invalid JSON");

  const fs::path base = config_path.parent_path();
  const auto resolve = [&](const std::string& p) -> fs::path {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  RunConfig cfg;
  if (auto it = j.find("manifest"); it != j.end()) cfg.manifest = resolve(it->get<std::string>());
  if (auto it = j.find("datasets"); it != j.end()) {
    for (const auto& [key, val] : it->items())
      cfg.datasets[parse_dataset(key)] = resolve(val.get<std::string>());
  }
  if (auto it = j.find("responses"); it != j.end()) {
    for (const auto& r : *it) cfg.responses.push_back(resolve(r.get<std::string>()));
  }
  if (auto it = j.find("activations"); it != j.end() && !it->is_null())
    cfg.activations_dir = resolve(it->get<std::string>());
  if (auto it = j.find("lexicon"); it != j.end() && !it->is_null())
    cfg.lexicon_path = resolve(it->get<std::string>());
  if (auto it = j.find("dims"); it != j.end())
    for (const auto& d : *it) cfg.dims.push_back(Dimension::parse(d.get<std::string>()));
  if (auto it = j.find("out"); it != j.end()) cfg.out = resolve(it->get<std::string>());
  if (auto it = j.find("jobs"); it != j.end()) cfg.jobs = it->get<unsigned>();
  if (auto it = j.find("seed"); it != j.end()) cfg.seed = it->get<std::uint64_t>();
  if (auto it = j.find("metrics"); it != j.end()) {
    const auto flag = [&](const char* name, bool& slot) {
      if (auto f = it->find(name); f != it->end()) slot = f->get<bool>();
    };
    flag("acc", cfg.metrics.acc);
    flag("bias", cfg.metrics.bias);
    flag("hist", cfg.metrics.hist);
    flag("cosine", cfg.metrics.cosine);
    flag("behavior", cfg.metrics.behavior);
    flag("repr", cfg.metrics.repr);
  }
  return cfg;
}

// One row of the per-slice score table.
struct ScoreRow {
  SliceKey slice;
  std::optional<double> acc;
  std::optional<double> s_dis;
  std::optional<double> s_amb;
  std::optional<double> abstention;
  std::int64_t n_invalid = 0;
};

struct ScoreResult {
  std::vector<ModelDescriptor> models;                   // manifest order
  std::vector<Dimension> dims;                           // evaluated dimensions
  std::vector<ScoreRow> rows;                            // sorted by slice key
  std::vector<FlipTable> flips;                          // declared pairs x dims
  std::map<std::string, ModelResults> results_by_model;  // signature inputs
  std::map<SliceKey, HistogramResult> histograms;
};

namespace detail {

inline std::map<SliceKey, std::vector<ResponseRecord>> group_by_slice(
    const std::vector<ResponseRecord>& responses, const PromptIndex& prompts) {
  std::map<SliceKey, std::vector<ResponseRecord>> out;
  for (const auto& r : responses) {
    const PromptRecord& p = prompts.at(r.prompt_id);
    out[{r.model_id, p.dataset, p.dimension, p.context_kind}].push_back(r);
  }
  return out;
}

inline std::optional<ActivationSet> dimension_activation_view(const ActivationSet& full,
                                                              const PromptIndex& prompts,
                                                              const Dimension& dim) {
  std::vector<std::string> keep;
  for (const auto& pid : full.prompt_ids) {
    const PromptRecord* p = prompts.find(pid);
    if (!p)
      throw DataError("activation prompt '" + pid + "' for model '" + full.model_id +
                      "' is not in the prompt set");
    if (p->dimension == dim) keep.push_back(pid);
  }
  if (keep.size() < 2) return std::nullopt;
  return full.filter_rows(keep);
}

}  // namespace detail

// Loads every input named by the config, normalizes responses, and computes
// the per-slice scalar and distributional metrics plus flip tables for
// declared base->tuned pairs.
inline ScoreResult compute_scores(const RunConfig& cfg) {
  run_stage("validate_config", [&] { cfg.validate(); return 0; });

  ScoreResult res;
  res.models = run_stage("load_manifest", [&] { return load_models_manifest(cfg.manifest); });
  res.dims = cfg.effective_dims();

  const RefusalLexicon lexicon = cfg.lexicon_path
                                     ? run_stage("load_lexicon",
                                                 [&] { return RefusalLexicon::load(*cfg.lexicon_path); })
                                     : RefusalLexicon::defaults();

  std::vector<PromptRecord> prompts;
  for (const auto& [ds, path] : cfg.datasets) {
    auto loaded = run_stage("load_prompts:" + std::string(to_string(ds)), [&] {
      switch (ds) {
        case Dataset::bbq: return load_bbq(path);
        case Dataset::unqover: return load_unqover(path);
        default: throw ConfigError("dataset kind not loadable here");
      }
    });
    for (auto& p : loaded) prompts.push_back(std::move(p));
  }
  const PromptIndex index(prompts);

  std::vector<ResponseRecord> responses;
  for (const auto& path : cfg.responses) {
    auto raw = run_stage("load_responses", [&] { return load_responses(path); });
    auto normalized =
        run_stage("normalize", [&] { return normalize_responses(raw, index, lexicon); });
    for (auto& r : normalized) responses.push_back(std::move(r));
  }

  const std::set<std::string> known_models = [&] {
    std::set<std::string> ids;
    for (const auto& m : res.models) ids.insert(m.id);
    return ids;
  }();
  for (const auto& r : responses)
    if (!known_models.count(r.model_id))
      throw DataError("[stage normalize] response model '" + r.model_id +
                      "' is not in the manifest");

  const auto slices = detail::group_by_slice(responses, index);
  const AnswerGrouping grouping = AnswerGrouping::by_role();

  run_stage("score", [&] {
    for (const auto& [key, slice_responses] : slices) {
      const LabelCounts counts = tally(slice_responses, key);
      ScoreRow row;
      row.slice = key;
      row.n_invalid = counts.n_invalid;
      row.s_dis = bias_score_dis(counts);
      row.abstention = abstention_rate(counts);
      if (key.context_kind == ContextKind::disambiguated)
        row.acc = accuracy(slice_responses, index);
      else if (key.context_kind == ContextKind::ambiguous) {
        row.acc = accuracy_ambiguous(counts);
        row.s_amb = bias_score_amb(row.acc, row.s_dis);
      }
      res.rows.push_back(std::move(row));

      res.histograms.emplace(key, histogram(slice_responses, grouping));
    }
    return 0;
  });

  // Signature inputs per model and dimension.
  std::map<std::string, ActivationSet> activations;
  if (cfg.activations_dir) {
    run_stage("load_activations", [&] {
      for (const auto& m : res.models) {
        const fs::path dir = *cfg.activations_dir / m.id;
        if (fs::exists(dir / "manifest.json")) activations.emplace(m.id, load_activations(dir));
      }
      return 0;
    });
  }

  run_stage("assemble_results", [&] {
    for (const auto& m : res.models) {
      ModelResults mr;
      mr.model = m;
      for (const auto& d : res.dims) {
        DimensionMetrics dm;
        const SliceKey amb{m.id, Dataset::bbq, d, ContextKind::ambiguous};
        const SliceKey dis{m.id, Dataset::bbq, d, ContextKind::disambiguated};
        const SliceKey fc{m.id, Dataset::unqover, d, ContextKind::forced_choice};

        if (auto it = slices.find(dis); it != slices.end())
          dm.acc_dis = accuracy(it->second, index);
        if (auto it = slices.find(amb); it != slices.end()) {
          const LabelCounts counts = tally(it->second, amb);
          dm.abstention = abstention_rate(counts);
          dm.s_amb = bias_score_amb(accuracy_ambiguous(counts), bias_score_dis(counts));
          dm.ambiguous_hist = histogram(it->second, grouping).counts;
        }
        if (auto it = slices.find(fc); it != slices.end())
          dm.forced_choice_hist = histogram(it->second, grouping).counts;
        if (auto it = activations.find(m.id); it != activations.end())
          dm.activations = detail::dimension_activation_view(it->second, index, d);

        mr.dims.emplace(d, std::move(dm));
      }
      res.results_by_model.emplace(m.id, std::move(mr));
    }
    return 0;
  });

  run_stage("flips", [&] {
    for (std::size_t i = 0; i < res.models.size(); ++i) {
      for (std::size_t j = 0; j < res.models.size(); ++j) {
        if (i == j) continue;
        const auto& base = res.models[i];
        const auto& tuned = res.models[j];
        if (base.tuned || !tuned.tuned) continue;
        if (!is_declared_base_tuned_pair(base, tuned)) continue;
        for (const auto& d : res.dims) {
          const SliceKey kb{base.id, Dataset::bbq, d, ContextKind::ambiguous};
          const SliceKey kt{tuned.id, Dataset::bbq, d, ContextKind::ambiguous};
          auto ib = slices.find(kb);
          auto it = slices.find(kt);
          if (ib == slices.end() || it == slices.end()) continue;
          res.flips.push_back(flip_table(ib->second, it->second, index, d));
        }
      }
    }
    return 0;
  });

  return res;
}

// ---------------------------------------------------------------------------
// Output writers. Every writer produces byte-stable output for identical
// inputs: map iteration gives sorted order and floats use fixed formats.

namespace detail {

class StagedDir {
public:
  explicit StagedDir(const fs::path& final_dir)
      : final_(final_dir), staging_(final_dir.string() + ".staging") {
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }

  const fs::path& path() const { return staging_; }

  // Promotes the staged tree into place, replacing prior contents.
  void promote() {
    fs::remove_all(final_);
    fs::create_directories(final_.parent_path().empty() ? "." : final_.parent_path());
    fs::rename(staging_, final_);
  }

  ~StagedDir() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }

private:
  fs::path final_;
  fs::path staging_;
};

inline std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  return out;
}

}  // namespace detail

inline void write_scores_csv(const fs::path& path, const ScoreResult& res) {
  auto out = detail::open_out(path);
  out << "model_id,dataset,dimension,context_kind,acc,s_dis,s_amb,abstention_rate,n_invalid\n";
  for (const auto& r : res.rows) {
    out << r.slice.model_id << ',' << to_string(r.slice.dataset) << ','
        << r.slice.dimension.name() << ',' << to_string(r.slice.context_kind) << ','
        << format_opt_fixed(r.acc, 4) << ',' << format_opt_fixed(r.s_dis, 2) << ','
        << format_opt_fixed(r.s_amb, 2) << ',' << format_opt_fixed(r.abstention, 4) << ','
        << r.n_invalid << "\n";
  }
}

inline void write_flips_csv(const fs::path& path, const ScoreResult& res) {
  auto out = detail::open_out(path);
  out << "base_model,tuned_model,dimension,total,a_to_s,s_to_a,a_to_u,s_to_u,"
         "ret_a,ret_s,unk_flip,n_dropped\n";
  for (const auto& t : res.flips) {
    out << t.base_model << ',' << t.tuned_model << ',' << t.dimension.name() << ',' << t.total
        << ',' << t.a_to_s << ',' << t.s_to_a << ',' << t.a_to_u << ',' << t.s_to_u << ','
        << format_opt_fixed(t.ret_a(), 1) << ',' << format_opt_fixed(t.ret_s(), 1) << ','
        << format_opt_fixed(t.unk_flip(), 1) << ',' << t.n_dropped << "\n";
  }
}

inline void write_histograms(const fs::path& csv_path, const fs::path& json_path,
                             const ScoreResult& res) {
  auto out = detail::open_out(csv_path);
  out << "model_id,dataset,dimension,context_kind,category,count\n";
  nlohmann::json j;
  for (const auto& [key, hist] : res.histograms) {
    nlohmann::json cats;
    for (std::size_t i = 0; i < hist.counts.keys.size(); ++i) {
      out << key.model_id << ',' << to_string(key.dataset) << ',' << key.dimension.name() << ','
          << to_string(key.context_kind) << ',' << hist.counts.keys[i] << ','
          << hist.counts.counts[i] << "\n";
      cats[hist.counts.keys[i]] = hist.counts.counts[i];
    }
    cats["__invalid__"] = hist.n_invalid;
    j[key.model_id][std::string(to_string(key.dataset))][key.dimension.name()]
     [std::string(to_string(key.context_kind))] = std::move(cats);
  }
  auto jout = detail::open_out(json_path);
  jout << j.dump(2) << "\n";
}

// Per-model averages over the evaluated dimensions (unweighted; absent
// dimensions are skipped). These are the regression-check inputs.
inline std::map<std::string, ReleaseMetrics> summarize_models(const ScoreResult& res) {
  struct Acc {
    double sum = 0;
    int n = 0;
    void add(std::optional<double> v) {
      if (v) {
        sum += *v;
        ++n;
      }
    }
    std::optional<double> mean() const {
      if (n == 0) return std::nullopt;
      return sum / n;
    }
  };
  std::map<std::string, ReleaseMetrics> out;
  for (const auto& [model_id, mr] : res.results_by_model) {
    Acc acc, s_amb, abst;
    for (const auto& [dim, dm] : mr.dims) {
      acc.add(dm.acc_dis);
      s_amb.add(dm.s_amb);
      abst.add(dm.abstention);
    }
    Acc s_dis;
    for (const auto& row : res.rows) {
      if (row.slice.model_id != model_id) continue;
      if (row.slice.context_kind != ContextKind::disambiguated) continue;
      s_dis.add(row.s_dis);
    }
    ReleaseMetrics rm;
    rm.model_id = model_id;
    rm.values["acc"] = acc.mean();
    rm.values["s_dis"] = s_dis.mean();
    rm.values["s_amb"] = s_amb.mean();
    rm.values["abstention"] = abst.mean();
    out.emplace(model_id, std::move(rm));
  }
  return out;
}

inline void write_metrics_json(const fs::path& path, const ScoreResult& res) {
  nlohmann::json j;
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : res.dims) dims.push_back(d.name());
  j["dims"] = std::move(dims);

  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };

  nlohmann::json models;
  const auto summaries = summarize_models(res);
  for (const auto& [model_id, mr] : res.results_by_model) {
    nlohmann::json per_dim;
    for (const auto& [dim, dm] : mr.dims) {
      nlohmann::json dj;
      dj["acc_dis"] = opt(dm.acc_dis);
      dj["s_amb"] = opt(dm.s_amb);
      dj["abstention"] = opt(dm.abstention);
      per_dim[dim.name()] = std::move(dj);
    }
    nlohmann::json summary;
    for (const auto& [metric, value] : summaries.at(model_id).values)
      summary[metric] = opt(value);
    models[model_id] = {{"per_dimension", std::move(per_dim)}, {"summary", std::move(summary)}};
  }
  j["models"] = std::move(models);
  auto out = detail::open_out(path);
  out << j.dump(2) << "\n";
}

// score: per-model metric files under out/score. Each command owns one
// subdirectory of out/ and promotes it atomically from a staging area.
inline ScoreResult run_score(const RunConfig& cfg) {
  ScoreResult res = compute_scores(cfg);
  detail::StagedDir staged(cfg.out / "score");
  write_scores_csv(staged.path() / "scores.csv", res);
  write_flips_csv(staged.path() / "flips.csv", res);
  write_histograms(staged.path() / "histograms.csv", staged.path() / "histograms.json", res);
  write_metrics_json(staged.path() / "metrics.json", res);
  staged.promote();
  return res;
}

// Restricts a score result to a subset of models (used by `compare --pair`).
inline ScoreResult filter_models(const ScoreResult& res, const std::set<std::string>& keep) {
  ScoreResult out;
  out.dims = res.dims;
  for (const auto& m : res.models)
    if (keep.count(m.id)) out.models.push_back(m);
  if (out.models.size() != keep.size())
    throw ConfigError("compare: a requested model is not in the manifest");
  for (const auto& r : res.rows)
    if (keep.count(r.slice.model_id)) out.rows.push_back(r);
  for (const auto& f : res.flips)
    if (keep.count(f.base_model) && keep.count(f.tuned_model)) out.flips.push_back(f);
  for (const auto& [id, mr] : res.results_by_model)
    if (keep.count(id)) out.results_by_model.emplace(id, mr);
  for (const auto& [key, h] : res.histograms)
    if (keep.count(key.model_id)) out.histograms.emplace(key, h);
  return out;
}

// ---------------------------------------------------------------------------
// compare

struct CompareResult {
  std::vector<std::string> model_ids;
  // All unordered pairs including self-pairs, keyed by manifest indices.
  std::map<std::pair<std::size_t, std::size_t>, BiasSignature> signatures;
};

inline void apply_toggles(BiasSignature& sig, const MetricToggles& t) {
  const auto off = [](Component& c) { c = Component::absent("disabled"); };
  if (!t.acc) off(sig.acc_sim);
  if (!t.bias) off(sig.bias_sim);
  if (!t.hist) off(sig.hist_sim);
  if (!t.cosine) off(sig.cosine_sim);
  if (!t.behavior) off(sig.behavior_sim);
  if (!t.repr) off(sig.repr_sim);
}

inline CompareResult compute_signatures(const ScoreResult& res, const RunConfig& cfg) {
  CompareResult out;
  for (const auto& m : res.models) out.model_ids.push_back(m.id);
  if (out.model_ids.size() < 2)
    throw DataError("[stage compare] need at least 2 models, got " +
                    std::to_string(out.model_ids.size()));

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < out.model_ids.size(); ++i)
    for (std::size_t j = i; j < out.model_ids.size(); ++j) pairs.emplace_back(i, j);

  std::vector<BiasSignature> computed(pairs.size());
  run_stage("compare", [&] {
    parallel_for(pairs.size(), cfg.jobs, [&](std::size_t k) {
      const auto [i, j] = pairs[k];
      const ModelResults& a = res.results_by_model.at(out.model_ids[i]);
      const ModelResults& b = res.results_by_model.at(out.model_ids[j]);
      BiasSignature sig = pair_signature(a, b, res.dims);
      apply_toggles(sig, cfg.metrics);
      computed[k] = std::move(sig);
    });
    return 0;
  });
  for (std::size_t k = 0; k < pairs.size(); ++k)
    out.signatures.emplace(pairs[k], std::move(computed[k]));
  return out;
}

inline nlohmann::json signature_to_json(const BiasSignature& sig) {
  nlohmann::json j;
  j["pair"] = {sig.model_i, sig.model_j};
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : sig.dims) dims.push_back(d.name());
  j["dims"] = std::move(dims);
  nlohmann::json comps;
  nlohmann::json reasons;
  for (std::size_t i = 0; i < kSignatureComponents.size(); ++i) {
    const Component& c = sig.component(i);
    comps[kSignatureComponents[i]] = c.value ? nlohmann::json(*c.value) : nlohmann::json(nullptr);
    if (!c.value) reasons[kSignatureComponents[i]] = c.absence_reason;
  }
  j["components"] = std::move(comps);
  j["absence_reasons"] = std::move(reasons);
  return j;
}

inline void write_matrix_csv(const fs::path& path, const SimilarityMatrix& m) {
  auto out = detail::open_out(path);
  out << "model_id";
  for (const auto& id : m.model_ids) out << ',' << id;
  out << "\n";
  for (std::size_t i = 0; i < m.model_ids.size(); ++i) {
    out << m.model_ids[i];
    for (std::size_t j = 0; j < m.model_ids.size(); ++j)
      out << ',' << format_opt_exact(m.values[i][j]);
    out << "\n";
  }
}

inline void write_matrix_absences(const fs::path& path, const SimilarityMatrix& m) {
  nlohmann::json j;
  j["metric"] = m.metric;
  j["model_ids"] = m.model_ids;
  nlohmann::json absences = nlohmann::json::array();
  for (std::size_t i = 0; i < m.model_ids.size(); ++i)
    for (std::size_t j2 = i; j2 < m.model_ids.size(); ++j2)
      if (!m.values[i][j2])
        absences.push_back({{"model_a", m.model_ids[i]},
                            {"model_b", m.model_ids[j2]},
                            {"reason", m.absence_reasons[i][j2]}});
  j["absences"] = std::move(absences);
  auto out = detail::open_out(path);
  out << j.dump(2) << "\n";
}

inline CompareResult run_compare(const ScoreResult& res, const RunConfig& cfg) {
  CompareResult cmp = compute_signatures(res, cfg);
  detail::StagedDir staged(cfg.out / "compare");
  for (const auto& [key, sig] : cmp.signatures) {
    if (key.first == key.second) continue;
    const fs::path p = staged.path() / "signatures" / (sig.model_i + "__" + sig.model_j + ".json");
    auto out = detail::open_out(p);
    out << signature_to_json(sig).dump(2) << "\n";
  }
  for (const char* metric : kSignatureComponents) {
    const SimilarityMatrix m = similarity_matrix(cmp.model_ids, metric, cmp.signatures);
    write_matrix_csv(staged.path() / "matrices" / (std::string(metric) + ".csv"), m);
    write_matrix_absences(
        staged.path() / "matrices" / (std::string(metric) + "_absences.json"), m);
  }
  staged.promote();
  return cmp;
}

// ---------------------------------------------------------------------------
// audit

// Reads procurement candidates either from a hand-written candidates file
// ({"candidates": [...]}) or from a score run's metrics.json ("models").
inline std::vector<CandidateMetrics> load_candidates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open candidates file '" + path.string() + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.filename().string() + ": invalid JSON");

  std::vector<CandidateMetrics> out;
  if (auto it = j.find("candidates"); it != j.end()) {
    for (const auto& cj : *it) {
      CandidateMetrics c;
      c.model_id = cj.at("model_id").get<std::string>();
      c.acc = cj.at("acc").get<double>();
      c.s_amb = cj.at("s_amb").get<double>();
      c.abstention = cj.at("abstention").get<double>();
      out.push_back(std::move(c));
    }
  } else if (auto mt = j.find("models"); mt != j.end()) {
    for (const auto& [id, mj] : mt->items()) {
      const auto& s = mj.at("summary");
      const auto get = [&](const char* k) -> std::optional<double> {
        auto f = s.find(k);
        if (f == s.end() || f->is_null()) return std::nullopt;
        return f->get<double>();
      };
      const auto acc = get("acc");
      const auto s_amb = get("s_amb");
      const auto abst = get("abstention");
      if (!acc || !s_amb || !abst)
        throw DataError("candidate '" + id + "' is missing acc, s_amb, or abstention");
      out.push_back({id, *acc, *s_amb, *abst});
    }
  } else {
    throw DataError(path.filename().string() + ": expected 'candidates' or 'models'");
  }
  if (out.empty()) throw DataError(path.filename().string() + ": no candidates");
  return out;
}

inline ReleaseMetrics load_release_metrics(const fs::path& path,
                                           const std::string& model_selector) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file '" + path.string() + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.filename().string() + ": invalid JSON");
  const auto& models = j.at("models");
  std::string id = model_selector;
  if (id.empty()) {
    if (models.size() != 1)
      throw ConfigError(path.filename().string() + ": has " + std::to_string(models.size()) +
                        " models; pass an explicit model id");
    id = models.items().begin().key();
  }
  if (!models.contains(id))
    throw DataError(path.filename().string() + ": no model '" + id + "'");
  ReleaseMetrics rm;
  rm.model_id = id;
  for (const auto& [metric, value] : models.at(id).at("summary").items())
    rm.values[metric] = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
  return rm;
}

inline void write_procurement(const fs::path& dir, std::span<const RankedCandidate> ranked,
                              const ProcurementPolicy& policy) {
  {
    auto out = detail::open_out(dir / "procurement.csv");
    out << "rank,model_id,acc,s_amb,abstention,included,violated\n";
    for (const auto& r : ranked) {
      std::string violated;
      for (const auto& v : r.violated) violated += (violated.empty() ? "" : ";") + v;
      out << (r.included ? std::to_string(r.rank) : std::string()) << ',' << r.metrics.model_id
          << ',' << format_fixed(r.metrics.acc, 4) << ',' << format_fixed(r.metrics.s_amb, 2)
          << ',' << format_fixed(r.metrics.abstention, 4) << ','
          << (r.included ? "true" : "false") << ',' << violated << "\n";
    }
  }
  nlohmann::json j;
  j["policy"] = {{"max_abstention", policy.max_abstention},
                 {"max_abs_bias", policy.max_abs_bias},
                 {"min_accuracy", policy.min_accuracy},
                 {"ranking", policy.ranking}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : ranked) {
    rows.push_back({{"rank", r.included ? nlohmann::json(r.rank) : nlohmann::json(nullptr)},
                    {"model_id", r.metrics.model_id},
                    {"acc", r.metrics.acc},
                    {"s_amb", r.metrics.s_amb},
                    {"abstention", r.metrics.abstention},
                    {"included", r.included},
                    {"violated", r.violated}});
  }
  j["candidates"] = std::move(rows);
  auto out = detail::open_out(dir / "procurement.json");
  out << j.dump(2) << "\n";
}

inline void write_regression(const fs::path& dir, const DriftReport& report) {
  {
    auto out = detail::open_out(dir / "regression.csv");
    out << "metric,old,new,delta,tolerance,verdict,note\n";
    for (const auto& d : report.metrics) {
      out << d.metric << ',' << format_opt_fixed(d.old_value, 6) << ','
          << format_opt_fixed(d.new_value, 6) << ',' << format_opt_fixed(d.delta, 6) << ','
          << format_fixed(d.tolerance, 6) << ',' << to_string(d.verdict) << ',' << d.note
          << "\n";
    }
    out << "overall,,,,," << to_string(report.overall) << ",\n";
  }
  nlohmann::json j;
  j["old_model"] = report.old_model;
  j["new_model"] = report.new_model;
  j["overall"] = to_string(report.overall);
  nlohmann::json rows = nlohmann::json::array();
  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  for (const auto& d : report.metrics) {
    rows.push_back({{"metric", d.metric},
                    {"old", opt(d.old_value)},
                    {"new", opt(d.new_value)},
                    {"delta", opt(d.delta)},
                    {"tolerance", d.tolerance},
                    {"verdict", to_string(d.verdict)},
                    {"note", d.note}});
  }
  j["metrics"] = std::move(rows);
  auto out = detail::open_out(dir / "regression.json");
  out << j.dump(2) << "\n";
}

inline void write_lineage(const fs::path& dir, std::span<const LineageFlag> flags,
                          double threshold) {
  {
    auto out = detail::open_out(dir / "lineage.csv");
    out << "model_a,model_b,distance\n";
    for (const auto& f : flags)
      out << f.model_a << ',' << f.model_b << ',' << format_exact(f.distance) << "\n";
  }
  nlohmann::json j;
  j["threshold"] = threshold;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& f : flags)
    rows.push_back(
        {{"model_a", f.model_a}, {"model_b", f.model_b}, {"distance", f.distance}});
  j["flags"] = std::move(rows);
  auto out = detail::open_out(dir / "lineage.json");
  out << j.dump(2) << "\n";
}

inline void run_audit_procure(const fs::path& candidates_path, const ProcurementPolicy& policy,
                              const fs::path& out_dir) {
  const auto candidates =
      run_stage("audit:load_candidates", [&] { return load_candidates(candidates_path); });
  const auto ranked =
      run_stage("audit:procure", [&] { return procurement_rank(candidates, policy); });
  detail::StagedDir staged(out_dir / "audit" / "procure");
  write_procurement(staged.path(), ranked, policy);
  staged.promote();
}

// Returns the report; callers map overall == fail to the audit exit code.
// When both releases carry activations, drift of diag CKA from its unit
// baseline participates as the "diag_cka" metric.
inline DriftReport run_audit_regress(const ReleaseMetrics& old_release,
                                     const ReleaseMetrics& new_release,
                                     const Tolerances& tolerances,
                                     const std::optional<ActivationSet>& old_acts,
                                     const std::optional<ActivationSet>& new_acts,
                                     const fs::path& out_dir) {
  ReleaseMetrics old_full = old_release;
  ReleaseMetrics new_full = new_release;
  if (old_acts && new_acts) {
    const auto cka = run_stage("audit:regress_cka", [&] {
      if (old_acts->layers.size() == new_acts->layers.size())
        return diag_cka(*old_acts, *new_acts);
      return full_cka(*old_acts, *new_acts);
    });
    old_full.values["diag_cka"] = 1.0;  // self-similarity baseline
    new_full.values["diag_cka"] = cka;
  }
  const DriftReport report = run_stage(
      "audit:regress", [&] { return regression_check(old_full, new_full, tolerances); });
  detail::StagedDir staged(out_dir / "audit" / "regress");
  write_regression(staged.path(), report);
  staged.promote();
  return report;
}

inline std::vector<LineageFlag> run_audit_lineage(const ScoreResult& res, const RunConfig& cfg,
                                                  double threshold) {
  const CompareResult cmp = compute_signatures(res, cfg);
  std::vector<BiasSignature> sigs;
  for (const auto& [key, sig] : cmp.signatures)
    if (key.first != key.second) sigs.push_back(sig);
  const auto flags = run_stage(
      "audit:lineage", [&] { return lineage_screen(sigs, threshold, res.models); });
  detail::StagedDir staged(cfg.out / "audit" / "lineage");
  write_lineage(staged.path(), flags, threshold);
  staged.promote();
  return flags;
}

}  // namespace bsm
