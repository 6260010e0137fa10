// bsm: bias-similarity measurement toolkit over recorded model responses.
//
// Subcommands:
//   validate  load and check every input named by the config
//   score     per-slice metrics, flip tables, histograms
//   compare   pairwise signatures and similarity matrices
//   audit     procure | regress | lineage workflows
//   synth     synthetic datasets with planted bias parameters
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 audit fail verdict.

#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsm/run.hpp"
#include "bsm/synth_run.hpp"
#include "bsm/version.hpp"

namespace {

struct GlobalOpts {
  std::string config;
  std::string out;
  std::vector<std::string> dims;
  unsigned jobs = 0;
  std::optional<std::uint64_t> seed;
};

bsm::RunConfig load_config(const GlobalOpts& g) {
  if (g.config.empty()) throw bsm::ConfigError("--config is required");
  bsm::RunConfig cfg = bsm::load_run_config(g.config);
  if (!g.out.empty()) cfg.out = g.out;
  if (!g.dims.empty()) {
    cfg.dims.clear();
    for (const auto& d : g.dims) cfg.dims.push_back(bsm::Dimension::parse(d));
  }
  if (g.jobs > 0) cfg.jobs = g.jobs;
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

void add_global_opts(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config, "Run config JSON");
  cmd->add_option("--out", g.out, "Output directory (overrides config)");
  cmd->add_option("--dims", g.dims, "Dimensions to evaluate")->delimiter(',');
  cmd->add_option("--jobs", g.jobs, "Worker count for pairwise grids");
  cmd->add_option("--seed", g.seed, "Run seed (recorded, used by synth-backed runs)");
}

int cmd_validate(const GlobalOpts& g) {
  const bsm::RunConfig cfg = load_config(g);
  const bsm::ScoreResult res = bsm::compute_scores(cfg);
  std::size_t n_responses = 0;
  for (const auto& row : res.rows)
    n_responses += static_cast<std::size_t>(row.n_invalid);
  std::printf("models: %zu\n", res.models.size());
  std::printf("dimensions: %zu\n", res.dims.size());
  std::printf("score slices: %zu\n", res.rows.size());
  std::printf("flip tables: %zu\n", res.flips.size());
  std::printf("invalid responses: %zu\n", n_responses);
  std::printf("ok\n");
  return 0;
}

int cmd_score(const GlobalOpts& g) {
  const bsm::RunConfig cfg = load_config(g);
  bsm::run_score(cfg);
  std::printf("score outputs written to %s\n", (cfg.out / "score").string().c_str());
  return 0;
}

int cmd_compare(const GlobalOpts& g, const std::string& pair) {
  const bsm::RunConfig cfg = load_config(g);
  bsm::ScoreResult res = bsm::compute_scores(cfg);
  if (!pair.empty() && pair != "@all") {
    const auto comma = pair.find(',');
    if (comma == std::string::npos)
      throw bsm::ConfigError("--pair expects 'model_a,model_b' or '@all'");
    res = bsm::filter_models(res, {pair.substr(0, comma), pair.substr(comma + 1)});
  }
  bsm::run_compare(res, cfg);
  std::printf("compare outputs written to %s\n", (cfg.out / "compare").string().c_str());
  return 0;
}

int cmd_audit_procure(const GlobalOpts& g, const std::string& candidates,
                      const std::string& policy_path) {
  if (candidates.empty()) throw bsm::ConfigError("audit procure: --candidates is required");
  bsm::ProcurementPolicy policy;
  if (!policy_path.empty()) policy = bsm::ProcurementPolicy::load(policy_path);
  const std::filesystem::path out = g.out.empty() ? "out" : g.out;
  bsm::run_audit_procure(candidates, policy, out);
  std::printf("procurement report written to %s\n", (out / "audit" / "procure").string().c_str());
  return 0;
}

int cmd_audit_regress(const GlobalOpts& g, const std::string& old_path,
                      const std::string& new_path, const std::string& old_model,
                      const std::string& new_model, const std::string& tolerances_path,
                      const std::string& old_acts, const std::string& new_acts) {
  if (old_path.empty() || new_path.empty())
    throw bsm::ConfigError("audit regress: --old and --new metric files are required");
  if (tolerances_path.empty())
    throw bsm::ConfigError("audit regress: --tolerances is required");
  const auto old_release = bsm::load_release_metrics(old_path, old_model);
  const auto new_release = bsm::load_release_metrics(new_path, new_model);
  const auto tolerances = bsm::Tolerances::load(tolerances_path);
  std::optional<bsm::ActivationSet> oa, na;
  if (!old_acts.empty()) oa = bsm::load_activations(old_acts);
  if (!new_acts.empty()) na = bsm::load_activations(new_acts);

  const std::filesystem::path out = g.out.empty() ? "out" : g.out;
  const bsm::DriftReport report =
      bsm::run_audit_regress(old_release, new_release, tolerances, oa, na, out);
  std::printf("regression report written to %s (overall: %s)\n",
              (out / "audit" / "regress").string().c_str(),
              std::string(bsm::to_string(report.overall)).c_str());
  return report.overall == bsm::Verdict::fail ? 3 : 0;
}

int cmd_audit_lineage(const GlobalOpts& g, double threshold) {
  const bsm::RunConfig cfg = load_config(g);
  const bsm::ScoreResult res = bsm::compute_scores(cfg);
  const auto flags = bsm::run_audit_lineage(res, cfg, threshold);
  std::printf("lineage report written to %s (%zu flagged)\n",
              (cfg.out / "audit" / "lineage").string().c_str(), flags.size());
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  if (spec_path.empty()) throw bsm::ConfigError("synth: --spec is required");
  if (out_dir.empty()) throw bsm::ConfigError("synth: --out is required");
  const bsm::SynthRunSpec spec = bsm::load_synth_spec(spec_path);
  bsm::run_synth(spec, out_dir);
  std::printf("synthetic dataset written to %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bias similarity measurement toolkit"};
  app.set_version_flag("--version", std::string(bsm::kVersion));
  app.require_subcommand(1);

  GlobalOpts g;

  auto* validate = app.add_subcommand("validate", "Load and check all configured inputs");
  add_global_opts(validate, g);

  auto* score = app.add_subcommand("score", "Per-model scalar and distributional metrics");
  add_global_opts(score, g);

  auto* compare = app.add_subcommand("compare", "Pairwise signatures and matrices");
  add_global_opts(compare, g);
  std::string pair = "@all";
  compare->add_option("--pair", pair, "Model pair 'a,b' or '@all'");

  auto* audit = app.add_subcommand("audit", "Auditing workflows");
  audit->require_subcommand(1);

  auto* procure = audit->add_subcommand("procure", "Rank candidates under a policy");
  add_global_opts(procure, g);
  std::string candidates, policy_path;
  procure->add_option("--candidates", candidates, "Candidates JSON (or a score metrics.json)");
  procure->add_option("--policy", policy_path, "Policy key=value file");

  auto* regress = audit->add_subcommand("regress", "Check release drift against tolerances");
  add_global_opts(regress, g);
  std::string old_path, new_path, old_model, new_model, tolerances_path, old_acts, new_acts;
  regress->add_option("--old", old_path, "Old release metrics.json");
  regress->add_option("--new", new_path, "New release metrics.json");
  regress->add_option("--old-model", old_model, "Model id in the old file");
  regress->add_option("--new-model", new_model, "Model id in the new file");
  regress->add_option("--tolerances", tolerances_path, "Tolerance key=value file");
  regress->add_option("--old-activations", old_acts, "Old release activation directory");
  regress->add_option("--new-activations", new_acts, "New release activation directory");

  auto* lineage = audit->add_subcommand("lineage", "Flag suspiciously close signatures");
  add_global_opts(lineage, g);
  double threshold = 0.05;
  lineage->add_option("--threshold", threshold, "Signature distance threshold (0,1)");

  auto* synth = app.add_subcommand("synth", "Generate synthetic datasets");
  std::string spec_path, synth_out;
  synth->add_option("--spec", spec_path, "Synth spec JSON");
  synth->add_option("--out", synth_out, "Output directory");

  try {
    app.parse(argc, argv);
    if (*validate) return cmd_validate(g);
    if (*score) return cmd_score(g);
    if (*compare) return cmd_compare(g, pair);
    if (*procure) return cmd_audit_procure(g, candidates, policy_path);
    if (*regress)
      return cmd_audit_regress(g, old_path, new_path, old_model, new_model, tolerances_path,
                               old_acts, new_acts);
    if (*lineage) return cmd_audit_lineage(g, threshold);
    if (*synth) return cmd_synth(spec_path, synth_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const bsm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const bsm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
