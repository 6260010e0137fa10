#pragma once

#include <span>
#include <string_view>

#include "bsm/lexicon.hpp"
#include "bsm/strings.hpp"
#include "bsm/types.hpp"

namespace bsm {

struct NormResult {
  Label label = Label::INVALID;
  NormMethod method = NormMethod::invalid;
};

// Maps a raw completion onto a categorical label. Precedence:
//   exact candidate match
//   -> case-folded / whitespace-trimmed match
//   -> containment of exactly one candidate text (multiple hits: INVALID)
//   -> refusal-lexicon hit, mapped to U
//   -> INVALID
// Pure function; candidates must be non-empty with distinct roles.
inline NormResult normalize_response(std::string_view raw_text,
                                     std::span<const Candidate> candidates,
                                     const RefusalLexicon& lexicon) {
  for (const auto& c : candidates) {
    if (raw_text == c.text) return {role_label(c.role), NormMethod::exact};
  }

  const std::string folded_raw = fold(raw_text);
  for (const auto& c : candidates) {
    if (folded_raw == fold(c.text)) return {role_label(c.role), NormMethod::case_fold};
  }

  const Candidate* hit = nullptr;
  int hits = 0;
  for (const auto& c : candidates) {
    const std::string folded_cand = fold(c.text);
    if (folded_cand.empty()) continue;
    if (folded_raw.find(folded_cand) != std::string::npos) {
      ++hits;
      hit = &c;
    }
  }
  if (hits == 1) return {role_label(hit->role), NormMethod::containment};
  if (hits > 1) return {Label::INVALID, NormMethod::invalid};

  if (lexicon.matches(raw_text)) return {Label::U, NormMethod::refusal_lexicon};

  return {Label::INVALID, NormMethod::invalid};
}

}  // namespace bsm
