#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bsm/error.hpp"

namespace bsm {

enum class Dataset { bbq, unqover, openended };
enum class ContextKind { ambiguous, disambiguated, forced_choice, generation };
enum class Role { stereotype, anti_stereotype, unknown };
enum class Label { S, A, U, INVALID };
enum class NormMethod { exact, case_fold, containment, refusal_lexicon, invalid };
enum class Provenance { open, proprietary };

inline std::string_view to_string(Dataset d) {
  switch (d) {
    case Dataset::bbq: return "bbq";
    case Dataset::unqover: return "unqover";
    case Dataset::openended: return "openended";
  }
  return "?";
}

inline std::string_view to_string(ContextKind k) {
  switch (k) {
    case ContextKind::ambiguous: return "ambiguous";
    case ContextKind::disambiguated: return "disambiguated";
    case ContextKind::forced_choice: return "forced_choice";
    case ContextKind::generation: return "generation";
  }
  return "?";
}

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::stereotype: return "stereotype";
    case Role::anti_stereotype: return "anti_stereotype";
    case Role::unknown: return "unknown";
  }
  return "?";
}

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::S: return "S";
    case Label::A: return "A";
    case Label::U: return "U";
    case Label::INVALID: return "INVALID";
  }
  return "?";
}

inline std::string_view to_string(NormMethod m) {
  switch (m) {
    case NormMethod::exact: return "exact";
    case NormMethod::case_fold: return "case_fold";
    case NormMethod::containment: return "containment";
    case NormMethod::refusal_lexicon: return "refusal_lexicon";
    case NormMethod::invalid: return "invalid";
  }
  return "?";
}

inline std::string_view to_string(Provenance p) {
  return p == Provenance::open ? "open" : "proprietary";
}

inline Dataset parse_dataset(std::string_view s) {
  if (s == "bbq") return Dataset::bbq;
  if (s == "unqover") return Dataset::unqover;
  if (s == "openended") return Dataset::openended;
  throw DataError("unknown dataset '" + std::string(s) + "'");
}

inline ContextKind parse_context_kind(std::string_view s) {
  if (s == "ambiguous") return ContextKind::ambiguous;
  if (s == "disambiguated") return ContextKind::disambiguated;
  if (s == "forced_choice") return ContextKind::forced_choice;
  if (s == "generation") return ContextKind::generation;
  throw DataError("unknown context_kind '" + std::string(s) + "'");
}

inline Role parse_role(std::string_view s) {
  if (s == "stereotype") return Role::stereotype;
  if (s == "anti_stereotype") return Role::anti_stereotype;
  if (s == "unknown") return Role::unknown;
  throw DataError("unknown role '" + std::string(s) + "'");
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "open") return Provenance::open;
  if (s == "proprietary") return Provenance::proprietary;
  throw DataError("unknown provenance '" + std::string(s) + "'");
}

inline Label role_label(Role r) {
  switch (r) {
    case Role::stereotype: return Label::S;
    case Role::anti_stereotype: return Label::A;
    case Role::unknown: return Label::U;
  }
  return Label::INVALID;
}

// Demographic dimension. Nine named BBQ axes plus a free-form "other" tag;
// value identity is the name string, so "other" tags compare like any name.
class Dimension {
public:
  Dimension() = default;

  static Dimension parse(std::string_view name) {
    if (name.empty()) throw DataError("empty dimension name");
    return Dimension(std::string(name));
  }

  const std::string& name() const { return name_; }

  bool is_known() const {
    for (auto k : known_names())
      if (name_ == k) return true;
    return false;
  }

  static constexpr std::array<std::string_view, 9> known_names() {
    return {"gender",     "nationality", "ethnicity", "religion", "age",
            "disability", "physical",    "sexual_orientation", "ses"};
  }

  auto operator<=>(const Dimension&) const = default;

private:
  explicit Dimension(std::string n) : name_(std::move(n)) {}
  std::string name_;
};

// The four dimensions shared by the BBQ-style and forced-choice datasets;
// cross-dataset analyses default to these.
inline std::vector<Dimension> shared_dimensions() {
  return {Dimension::parse("gender"), Dimension::parse("nationality"),
          Dimension::parse("ethnicity"), Dimension::parse("religion")};
}

struct ModelDescriptor {
  std::string id;
  std::string family;
  std::string version;
  std::optional<std::uint64_t> size_params;
  bool tuned = false;
  Provenance provenance = Provenance::open;
};

// Declared lineage: same family/version/size with only the tuned flag
// differing. Used by flip tables and the lineage screen's exclusion rule.
inline bool is_declared_base_tuned_pair(const ModelDescriptor& a, const ModelDescriptor& b) {
  return a.family == b.family && a.version == b.version && a.size_params == b.size_params &&
         a.tuned != b.tuned;
}

struct Candidate {
  std::string text;
  Role role = Role::unknown;
};

struct PromptRecord {
  std::string prompt_id;
  Dataset dataset = Dataset::bbq;
  Dimension dimension;
  ContextKind context_kind = ContextKind::ambiguous;
  std::vector<Candidate> candidates;
  std::optional<Role> gold_role;

  const Candidate* candidate_for(Role r) const {
    for (const auto& c : candidates)
      if (c.role == r) return &c;
    return nullptr;
  }
};

struct ResponseRecord {
  std::string model_id;
  std::string prompt_id;
  std::string raw_text;
  Label label = Label::INVALID;
  NormMethod norm_method = NormMethod::invalid;
};

struct SliceKey {
  std::string model_id;
  Dataset dataset = Dataset::bbq;
  Dimension dimension;
  ContextKind context_kind = ContextKind::ambiguous;

  auto operator<=>(const SliceKey&) const = default;
};

// Per-slice label tallies. INVALID responses are tracked but excluded from
// every metric denominator.
struct LabelCounts {
  SliceKey slice;
  std::int64_t n_s = 0;
  std::int64_t n_a = 0;
  std::int64_t n_u = 0;
  std::int64_t n_invalid = 0;

  std::int64_t n_non_unknown() const { return n_s + n_a; }
  std::int64_t n_valid() const { return n_s + n_a + n_u; }
  std::int64_t total() const { return n_valid() + n_invalid; }
};

}  // namespace bsm
