#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bsm/error.hpp"
#include "bsm/signature.hpp"
#include "bsm/strings.hpp"
#include "bsm/types.hpp"

namespace bsm {

namespace detail {

// Shared key = value file format for policies and tolerance sets.
inline std::map<std::string, std::string> load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(path.filename().string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    out[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("value '" + s + "' for '" + key + "' is not a number");
  }
}

}  // namespace detail

// Fairness-utility constraints for down-selecting candidate models.
// Thresholds are inclusive on the compliant side.
struct ProcurementPolicy {
  double max_abstention = 1.0;
  double max_abs_bias = 100.0;  // on |s_amb|, score scale
  double min_accuracy = 0.0;
  std::vector<std::string> ranking = {"accuracy", "bias", "abstention"};

  void validate() const {
    if (max_abstention < 0 || max_abstention > 1)
      throw ConfigError("max_abstention out of [0,1]");
    if (max_abs_bias < 0 || max_abs_bias > 100) throw ConfigError("max_abs_bias out of [0,100]");
    if (min_accuracy < 0 || min_accuracy > 1) throw ConfigError("min_accuracy out of [0,1]");
    if (ranking.empty()) throw ConfigError("ranking key must be non-empty");
    for (const auto& k : ranking)
      if (k != "accuracy" && k != "bias" && k != "abstention")
        throw ConfigError("unknown ranking criterion '" + k + "'");
  }

  static ProcurementPolicy load(const std::filesystem::path& path) {
    ProcurementPolicy p;
    for (const auto& [k, v] : detail::load_key_values(path)) {
      if (k == "max_abstention") p.max_abstention = detail::parse_double(v, k);
      else if (k == "max_abs_bias") p.max_abs_bias = detail::parse_double(v, k);
      else if (k == "min_accuracy") p.min_accuracy = detail::parse_double(v, k);
      else if (k == "ranking") {
        p.ranking.clear();
        std::string cur;
        for (char c : v + ",") {
          if (c == ',') {
            auto t = trim(cur);
            if (!t.empty()) p.ranking.emplace_back(t);
            cur.clear();
          } else {
            cur.push_back(c);
          }
        }
      } else {
        throw ConfigError("unknown policy key '" + k + "'");
      }
    }
    p.validate();
    return p;
  }
};

struct CandidateMetrics {
  std::string model_id;
  double acc = 0;
  double s_amb = 0;
  double abstention = 0;
};

struct RankedCandidate {
  CandidateMetrics metrics;
  bool included = false;
  std::vector<std::string> violated;  // constraint names, empty when included
  int rank = 0;                       // 1-based among included, 0 otherwise
};

// Applies the policy: threshold violations exclude a candidate with the
// violated constraints named; survivors sort by the ranking key with a
// lexicographic model_id tie-break.
inline std::vector<RankedCandidate> procurement_rank(std::span<const CandidateMetrics> candidates,
                                                     const ProcurementPolicy& policy) {
  policy.validate();
  std::vector<RankedCandidate> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    RankedCandidate r;
    r.metrics = c;
    if (c.abstention > policy.max_abstention) r.violated.push_back("abstention");
    if (std::abs(c.s_amb) > policy.max_abs_bias) r.violated.push_back("bias");
    if (c.acc < policy.min_accuracy) r.violated.push_back("accuracy");
    r.included = r.violated.empty();
    out.push_back(std::move(r));
  }

  const auto less = [&](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.included != b.included) return a.included;
    for (const auto& key : policy.ranking) {
      double va = 0, vb = 0;
      if (key == "accuracy") {  // higher is better
        va = -a.metrics.acc;
        vb = -b.metrics.acc;
      } else if (key == "bias") {  // lower |s_amb| is better
        va = std::abs(a.metrics.s_amb);
        vb = std::abs(b.metrics.s_amb);
      } else {  // abstention, lower is better
        va = a.metrics.abstention;
        vb = b.metrics.abstention;
      }
      if (va != vb) return va < vb;
    }
    return a.metrics.model_id < b.metrics.model_id;
  };
  std::sort(out.begin(), out.end(), less);

  int rank = 0;
  for (auto& r : out)
    if (r.included) r.rank = ++rank;
  return out;
}

enum class Verdict { pass, warn, fail };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::warn: return "warn";
    case Verdict::fail: return "fail";
  }
  return "?";
}

// Per-metric drift tolerances for release regression checks.
struct Tolerances {
  std::map<std::string, double> by_metric;

  static Tolerances load(const std::filesystem::path& path) {
    Tolerances t;
    for (const auto& [k, v] : detail::load_key_values(path))
      t.by_metric[k] = detail::parse_double(v, k);
    for (const auto& [k, v] : t.by_metric)
      if (v < 0) throw ConfigError("tolerance for '" + k + "' must be non-negative");
    return t;
  }
};

// Metric values a release carries into a regression check; absent entries
// mean the metric was not evaluated for that release.
struct ReleaseMetrics {
  std::string model_id;
  std::map<std::string, std::optional<double>> values;
};

struct MetricDelta {
  std::string metric;
  std::optional<double> old_value;
  std::optional<double> new_value;
  std::optional<double> delta;  // new - old
  double tolerance = 0;
  Verdict verdict = Verdict::pass;
  std::string note;
};

struct DriftReport {
  std::string old_model;
  std::string new_model;
  std::vector<MetricDelta> metrics;
  Verdict overall = Verdict::pass;
};

inline constexpr std::array<const char*, 5> kRegressionMetrics = {"acc", "s_dis", "s_amb",
                                                                  "abstention", "diag_cka"};

// |delta| <= tol: pass; <= 2*tol: warn; else fail (closed intervals).
// Overall is the worst metric verdict. A metric present in only one release
// cannot be compared and is reported as warn.
inline DriftReport regression_check(const ReleaseMetrics& old_release,
                                    const ReleaseMetrics& new_release,
                                    const Tolerances& tolerances) {
  DriftReport report;
  report.old_model = old_release.model_id;
  report.new_model = new_release.model_id;

  const auto lookup = [](const ReleaseMetrics& r, const std::string& m) -> std::optional<double> {
    auto it = r.values.find(m);
    if (it == r.values.end()) return std::nullopt;
    return it->second;
  };

  for (const char* name : kRegressionMetrics) {
    const auto old_v = lookup(old_release, name);
    const auto new_v = lookup(new_release, name);
    if (!old_v && !new_v) continue;  // metric not evaluated at all

    auto tol_it = tolerances.by_metric.find(name);
    if (tol_it == tolerances.by_metric.end())
      throw ConfigError("no tolerance registered for metric '" + std::string(name) + "'");

    MetricDelta d;
    d.metric = name;
    d.old_value = old_v;
    d.new_value = new_v;
    d.tolerance = tol_it->second;
    if (old_v && new_v) {
      d.delta = *new_v - *old_v;
      const double mag = std::abs(*d.delta);
      if (mag <= d.tolerance) d.verdict = Verdict::pass;
      else if (mag <= 2 * d.tolerance) d.verdict = Verdict::warn;
      else d.verdict = Verdict::fail;
    } else {
      d.verdict = Verdict::warn;
      d.note = "metric coverage changed between releases";
    }
    report.metrics.push_back(std::move(d));
  }

  report.overall = Verdict::pass;
  for (const auto& d : report.metrics)
    if (static_cast<int>(d.verdict) > static_cast<int>(report.overall))
      report.overall = d.verdict;
  return report;
}

struct LineageFlag {
  std::string model_a;
  std::string model_b;
  double distance = 0;
};

// Flags unordered pairs whose signatures sit closer than `threshold`,
// skipping declared same-family base<->tuned pairs (expected to be close).
// Pair distance is the signature's distance to the ideal self-signature,
// i.e. signature_distance(sig, unit signature) == mean (1 - component).
inline std::vector<LineageFlag> lineage_screen(
    const std::vector<BiasSignature>& signatures, double threshold,
    std::span<const ModelDescriptor> models) {
  if (threshold <= 0 || threshold >= 1) throw ConfigError("lineage threshold must be in (0,1)");

  std::map<std::string, const ModelDescriptor*> by_id;
  for (const auto& m : models) by_id[m.id] = &m;

  std::vector<LineageFlag> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& sig : signatures) {
    if (sig.model_i == sig.model_j) continue;
    auto key = std::minmax(sig.model_i, sig.model_j);
    if (!seen.insert({key.first, key.second}).second) continue;

    auto a = by_id.find(sig.model_i);
    auto b = by_id.find(sig.model_j);
    if (a != by_id.end() && b != by_id.end() &&
        is_declared_base_tuned_pair(*a->second, *b->second))
      continue;

    double sum = 0;
    int n = 0;
    for (std::size_t i = 0; i < kSignatureComponents.size(); ++i) {
      if (sig.component(i).value) {
        sum += 1.0 - *sig.component(i).value;
        ++n;
      }
    }
    if (n == 0) continue;
    const double dist = sum / n;
    if (dist < threshold) out.push_back({key.first, key.second, dist});
  }

  std::sort(out.begin(), out.end(), [](const LineageFlag& a, const LineageFlag& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.model_a != b.model_a) return a.model_a < b.model_a;
    return a.model_b < b.model_b;
  });
  return out;
}

}  // namespace bsm
