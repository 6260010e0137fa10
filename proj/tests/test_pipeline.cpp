#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "bsm/run.hpp"
#include "bsm/synth.hpp"
#include "bsm/synth_run.hpp"

using namespace bsm;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

const fs::path kData = BSM_DATA_DIR;

struct TempRun {
  fs::path dir;
  TempRun() {
    dir = fs::temp_directory_path() /
          ("bsm_run_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~TempRun() { fs::remove_all(dir); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Builds a two-model run over the bundled fixtures: responses generated
// with planted parameters, plus drifted activations for the repr component.
RunConfig make_fixture_run(const TempRun& t, unsigned jobs = 1) {
  const auto prompts_bbq = load_bbq(kData / "fixtures/bbq_100.jsonl");
  const auto prompts_unq = load_unqover(kData / "fixtures/unqover_50.jsonl");
  const auto lex = RefusalLexicon::defaults();

  std::vector<PromptRecord> all = prompts_bbq;
  all.insert(all.end(), prompts_unq.begin(), prompts_unq.end());

  const SynthModelSpec base{"synth-base", 0.8, 0.05, 101};
  const SynthModelSpec tuned{"synth-tuned", 0.6, 0.5, 202};
  {
    std::ofstream out(t.dir / "responses.jsonl");
    for (const auto& spec : {base, tuned}) {
      for (const auto& r : generate_responses(spec, all, lex)) {
        nlohmann::json j;
        j["model_id"] = r.model_id;
        j["prompt_id"] = r.prompt_id;
        j["raw_text"] = r.raw_text;
        out << j.dump() << "\n";
      }
    }
  }
  {
    std::vector<ModelDescriptor> models;
    models.push_back({"synth-base", "synthetic", "1", std::nullopt, false, Provenance::open});
    models.push_back({"synth-tuned", "synthetic", "1", std::nullopt, true, Provenance::open});
    write_models_manifest(t.dir / "models.json", models);
  }
  {
    std::vector<std::string> amb_ids;
    for (const auto& p : prompts_bbq)
      if (p.context_kind == ContextKind::ambiguous) amb_ids.push_back(p.prompt_id);
    const auto acts_base = generate_base_activations("synth-base", amb_ids, 3, 8, 7);
    ActivationDriftSpec drift;
    drift.scale = 1.3;
    drift.layer_sigma = {0.05, 0.05, 0.4};
    drift.seed = 17;
    const auto acts_tuned = generate_drifted_activations(acts_base, drift, "synth-tuned");
    save_activations(t.dir / "activations" / "synth-base", acts_base);
    save_activations(t.dir / "activations" / "synth-tuned", acts_tuned);
  }

  RunConfig cfg;
  cfg.manifest = t.dir / "models.json";
  cfg.datasets[Dataset::bbq] = kData / "fixtures/bbq_100.jsonl";
  cfg.datasets[Dataset::unqover] = kData / "fixtures/unqover_50.jsonl";
  cfg.responses = {t.dir / "responses.jsonl"};
  cfg.activations_dir = t.dir / "activations";
  cfg.out = t.dir / "out";
  cfg.jobs = jobs;
  return cfg;
}

}  // namespace

TEST_CASE("config loading resolves paths and flags", "[pipeline]") {
  TempRun t;
  {
    std::ofstream out(t.dir / "cfg.json");
    out << R"({"manifest":"models.json","datasets":{"bbq":"prompts.jsonl"},
              "responses":["r.jsonl"],"dims":["gender"],"out":"o",
              "metrics":{"repr":false},"jobs":3})";
  }
  const RunConfig cfg = load_run_config(t.dir / "cfg.json");
  CHECK(cfg.manifest == t.dir / "models.json");
  CHECK(cfg.datasets.at(Dataset::bbq) == t.dir / "prompts.jsonl");
  CHECK(cfg.jobs == 3);
  CHECK_FALSE(cfg.metrics.repr);
  CHECK(cfg.dims.size() == 1);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // referenced paths do not exist
}

TEST_CASE("score over the bundled fixtures produces sane slices", "[pipeline]") {
  TempRun t;
  const RunConfig cfg = make_fixture_run(t);
  const ScoreResult res = compute_scores(cfg);

  CHECK(res.models.size() == 2);
  // 2 models x 4 dims x (bbq ambiguous + bbq disambiguated + unqover forced) = 24
  CHECK(res.rows.size() == 24);
  CHECK(res.flips.size() == 4);  // declared pair, one per dimension

  for (const auto& row : res.rows) {
    if (row.s_dis) {
      CHECK(*row.s_dis >= -100.0);
      CHECK(*row.s_dis <= 100.0);
    }
    if (row.slice.context_kind == ContextKind::forced_choice) CHECK(!row.s_amb.has_value());
  }

  // planted behavior shows up: tuned abstains far more than base
  const auto& base = res.results_by_model.at("synth-base");
  const auto& tuned = res.results_by_model.at("synth-tuned");
  double abst_base = 0, abst_tuned = 0;
  for (const auto& d : res.dims) {
    abst_base += *base.dims.at(d).abstention;
    abst_tuned += *tuned.dims.at(d).abstention;
  }
  CHECK(abst_tuned > abst_base + 0.5);
}

TEST_CASE("signatures over the fixture run", "[pipeline]") {
  TempRun t;
  const RunConfig cfg = make_fixture_run(t);
  const ScoreResult res = compute_scores(cfg);
  const CompareResult cmp = compute_signatures(res, cfg);

  REQUIRE(cmp.signatures.size() == 3);  // (0,0), (0,1), (1,1)
  const BiasSignature& self = cmp.signatures.at({0, 0});
  for (std::size_t i = 0; i < kSignatureComponents.size(); ++i) {
    REQUIRE(self.component(i).value.has_value());
    CHECK(*self.component(i).value == Approx(1.0).margin(1e-9));
  }
  const BiasSignature& pair = cmp.signatures.at({0, 1});
  REQUIRE(pair.repr_sim.value.has_value());
  CHECK(*pair.repr_sim.value > 0.2);
  CHECK(*pair.repr_sim.value < 1.0);
  REQUIRE(pair.behavior_sim.value.has_value());
  CHECK(*pair.behavior_sim.value < 0.8);  // planted abstention gap
}

TEST_CASE("parallel schedule does not change results", "[pipeline]") {
  TempRun t1, t2;
  const RunConfig cfg1 = make_fixture_run(t1, 1);
  const RunConfig cfg4 = make_fixture_run(t2, 4);
  const CompareResult a = compute_signatures(compute_scores(cfg1), cfg1);
  const CompareResult b = compute_signatures(compute_scores(cfg4), cfg4);
  REQUIRE(a.signatures.size() == b.signatures.size());
  for (const auto& [key, sig] : a.signatures) {
    const BiasSignature& other = b.signatures.at(key);
    for (std::size_t i = 0; i < kSignatureComponents.size(); ++i) {
      REQUIRE(sig.component(i).value.has_value() == other.component(i).value.has_value());
      if (sig.component(i).value)
        CHECK(*sig.component(i).value == *other.component(i).value);  // bitwise equal
    }
  }
}

TEST_CASE("toggled-off metrics become recorded absences", "[pipeline]") {
  TempRun t;
  RunConfig cfg = make_fixture_run(t);
  cfg.metrics.repr = false;
  cfg.metrics.cosine = false;
  const CompareResult cmp = compute_signatures(compute_scores(cfg), cfg);
  const BiasSignature& pair = cmp.signatures.at({0, 1});
  CHECK_FALSE(pair.repr_sim.value.has_value());
  CHECK(pair.repr_sim.absence_reason == "disabled");
  CHECK_FALSE(pair.cosine_sim.value.has_value());
  CHECK(pair.cosine_sim.absence_reason == "disabled");
  CHECK(pair.acc_sim.value.has_value());
}

TEST_CASE("score and compare writers are byte-stable", "[pipeline]") {
  TempRun t;
  const RunConfig cfg = make_fixture_run(t);
  const ScoreResult res = compute_scores(cfg);
  run_score(cfg);
  const std::string scores1 = slurp(cfg.out / "score" / "scores.csv");
  const std::string hist1 = slurp(cfg.out / "score" / "histograms.json");
  run_score(cfg);
  CHECK(slurp(cfg.out / "score" / "scores.csv") == scores1);
  CHECK(slurp(cfg.out / "score" / "histograms.json") == hist1);

  run_compare(res, cfg);
  const auto sig_path = cfg.out / "compare" / "signatures" / "synth-base__synth-tuned.json";
  const std::string sig1 = slurp(sig_path);
  run_compare(res, cfg);
  CHECK(slurp(sig_path) == sig1);

  SECTION("matrix csv carries a full symmetric grid") {
    const std::string m = slurp(cfg.out / "compare" / "matrices" / "acc_sim.csv");
    CHECK(m.find("model_id,synth-base,synth-tuned") == 0);
  }
}

TEST_CASE("errors name their stage", "[pipeline]") {
  TempRun t;
  RunConfig cfg = make_fixture_run(t);
  cfg.manifest = t.dir / "missing.json";
  try {
    compute_scores(cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("[stage validate_config]") != std::string::npos);
  }

  SECTION("unknown response model names the normalize stage") {
    RunConfig cfg2 = make_fixture_run(t);
    {
      std::ofstream out(t.dir / "responses.jsonl", std::ios::app);
      out << R"({"model_id":"ghost","prompt_id":"bbq-gender-0000","raw_text":"x"})" << "\n";
    }
    try {
      compute_scores(cfg2);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("[stage normalize]") != std::string::npos);
      CHECK(std::string(e.what()).find("ghost") != std::string::npos);
    }
  }
}

TEST_CASE("synth run writes a reusable dataset", "[pipeline]") {
  TempRun t;
  {
    std::ofstream out(t.dir / "spec.json");
    out << R"({"generate":{"dataset":"bbq","dimensions":["gender","religion"],
                "n_ambiguous":30,"n_disambiguated":10},
               "models":[{"id":"m1","p_stereo":0.9,"p_abstain":0.1,"seed":1},
                         {"id":"m2","p_stereo":0.4,"p_abstain":0.6,"seed":2,
                          "family":"synthetic","tuned":true}]})";
  }
  const auto spec = load_synth_spec(t.dir / "spec.json");
  run_synth(spec, t.dir / "synth_out");
  const std::string first = slurp(t.dir / "synth_out" / "responses.jsonl");
  run_synth(spec, t.dir / "synth_out");
  CHECK(slurp(t.dir / "synth_out" / "responses.jsonl") == first);  // seed repeat: same bytes

  // the emitted dataset feeds straight back into score
  RunConfig cfg;
  cfg.manifest = t.dir / "synth_out" / "models.json";
  cfg.datasets[Dataset::bbq] = t.dir / "synth_out" / "prompts.jsonl";
  cfg.responses = {t.dir / "synth_out" / "responses.jsonl"};
  cfg.dims = {Dimension::parse("gender"), Dimension::parse("religion")};
  cfg.out = t.dir / "out2";
  const ScoreResult res = compute_scores(cfg);
  CHECK(res.rows.size() == 8);  // 2 models x 2 dims x 2 context kinds
  for (const auto& row : res.rows) CHECK(row.n_invalid == 0);
}

TEST_CASE("p_abstain=1 spec yields an all-U response file", "[pipeline]") {
  TempRun t;
  {
    std::ofstream out(t.dir / "spec.json");
    out << R"({"generate":{"dataset":"bbq","dimensions":["gender"],"n_ambiguous":20},
               "models":[{"id":"m","p_stereo":0.5,"p_abstain":1.0,"seed":9}]})";
  }
  run_synth(load_synth_spec(t.dir / "spec.json"), t.dir / "synth_out");
  const auto prompts = load_prompts(t.dir / "synth_out" / "prompts.jsonl");
  const PromptIndex index(prompts);
  const auto raw = load_responses(t.dir / "synth_out" / "responses.jsonl");
  const auto rs = normalize_responses(raw, index, RefusalLexicon::defaults());
  for (const auto& r : rs) CHECK(r.label == Label::U);
}
