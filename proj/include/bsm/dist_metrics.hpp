#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bsm/error.hpp"
#include "bsm/types.hpp"

namespace bsm {

// Ordered per-category tallies. Keys are kept sorted lexicographically so
// two models' vectors align positionally.
struct CountVector {
  std::vector<std::string> keys;
  std::vector<std::int64_t> counts;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  static CountVector from_map(const std::map<std::string, std::int64_t>& m) {
    CountVector v;
    for (const auto& [k, c] : m) {
      v.keys.push_back(k);
      v.counts.push_back(c);
    }
    return v;
  }
};

// Maps answers to histogram categories. Exact candidate text wins over the
// role bucket; every response must resolve to some category.
struct AnswerGrouping {
  std::map<std::string, std::string> by_text;
  std::map<Label, std::string> by_label;

  static AnswerGrouping by_role() {
    AnswerGrouping g;
    g.by_label = {{Label::S, "stereotype"},
                  {Label::A, "anti_stereotype"},
                  {Label::U, "unknown"}};
    return g;
  }

  std::optional<std::string> category(const std::string& raw_text, Label label) const {
    if (auto it = by_text.find(raw_text); it != by_text.end()) return it->second;
    if (auto it = by_label.find(label); it != by_label.end()) return it->second;
    return std::nullopt;
  }
};

struct HistogramResult {
  CountVector counts;
  std::int64_t n_invalid = 0;  // excluded from the vector, tallied separately
};

inline HistogramResult histogram(std::span<const ResponseRecord> responses,
                                 const AnswerGrouping& grouping) {
  std::map<std::string, std::int64_t> acc;
  std::int64_t invalid = 0;
  for (const auto& r : responses) {
    if (r.label == Label::INVALID) {
      ++invalid;
      continue;
    }
    auto cat = grouping.category(r.raw_text, r.label);
    if (!cat) throw DataError("histogram: no category for label '" +
                              std::string(to_string(r.label)) + "'");
    ++acc[*cat];
  }
  return {CountVector::from_map(acc), invalid};
}

namespace detail {

// Zero-fills both vectors onto the union of their keys, preserving the
// canonical (lexicographic) order.
inline std::pair<std::vector<double>, std::vector<double>> aligned_values(const CountVector& u,
                                                                          const CountVector& v) {
  std::map<std::string, std::pair<double, double>> merged;
  for (std::size_t i = 0; i < u.keys.size(); ++i) merged[u.keys[i]].first = double(u.counts[i]);
  for (std::size_t i = 0; i < v.keys.size(); ++i) merged[v.keys[i]].second = double(v.counts[i]);
  std::vector<double> a, b;
  a.reserve(merged.size());
  b.reserve(merged.size());
  for (const auto& [_, p] : merged) {
    a.push_back(p.first);
    b.push_back(p.second);
  }
  return {std::move(a), std::move(b)};
}

inline std::vector<double> normalized(const std::vector<double>& x, const char* op) {
  double total = 0;
  for (double v : x) total += v;
  if (total <= 0) throw DataError(std::string(op) + ": zero-total vector is not comparable");
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) p[i] = x[i] / total;
  return p;
}

}  // namespace detail

// 1 - u.v / (|u||v|), computed on raw counts. Scale-invariant, in [0, 1]
// for non-negative vectors.
inline double cosine_distance(const CountVector& u, const CountVector& v) {
  auto [a, b] = detail::aligned_values(u, v);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) throw DataError("cosine_distance: zero vector is not comparable");
  double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 1.0);
}

// Jensen-Shannon divergence in log base 2, so the bound is exactly 1.
// Inputs are normalized here; 0 * log(0/.) terms are 0 by convention.
inline double jsd(const CountVector& u, const CountVector& v) {
  auto [a, b] = detail::aligned_values(u, v);
  const auto p = detail::normalized(a, "jsd");
  const auto q = detail::normalized(b, "jsd");
  const auto kl_to_mid = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] <= 0) continue;
      const double m = 0.5 * (x[i] + y[i]);
      s += x[i] * std::log2(x[i] / m);
    }
    return s;
  };
  double d = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
  return std::clamp(d, 0.0, 1.0);
}

// Total variation distance: 0.5 * sum |p_i - q_i| over normalized inputs.
inline double tv_distance(const CountVector& u, const CountVector& v) {
  auto [a, b] = detail::aligned_values(u, v);
  const auto p = detail::normalized(a, "tv_distance");
  const auto q = detail::normalized(b, "tv_distance");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return std::clamp(0.5 * s, 0.0, 1.0);
}

}  // namespace bsm
