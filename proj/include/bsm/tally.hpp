#pragma once

#include <map>
#include <span>

#include "bsm/loaders.hpp"
#include "bsm/types.hpp"

namespace bsm {

// Counts labels for responses that all share `key`. Conservation holds by
// construction: n_s + n_a + n_u + n_invalid == responses.size().
inline LabelCounts tally(std::span<const ResponseRecord> responses, SliceKey key) {
  LabelCounts c;
  c.slice = std::move(key);
  for (const auto& r : responses) {
    if (r.model_id != c.slice.model_id)
      throw DataError("tally: response model '" + r.model_id + "' does not match slice model '" +
                      c.slice.model_id + "'");
    switch (r.label) {
      case Label::S: ++c.n_s; break;
      case Label::A: ++c.n_a; break;
      case Label::U: ++c.n_u; break;
      case Label::INVALID: ++c.n_invalid; break;
    }
  }
  return c;
}

// Groups responses into slices keyed by (model, dataset, dimension,
// context_kind), resolving the prompt side through the index.
inline std::map<SliceKey, LabelCounts> tally_by_slice(std::span<const ResponseRecord> responses,
                                                      const PromptIndex& prompts) {
  std::map<SliceKey, LabelCounts> out;
  for (const auto& r : responses) {
    const PromptRecord& p = prompts.at(r.prompt_id);
    SliceKey key{r.model_id, p.dataset, p.dimension, p.context_kind};
    auto [it, inserted] = out.try_emplace(key);
    if (inserted) it->second.slice = key;
    switch (r.label) {
      case Label::S: ++it->second.n_s; break;
      case Label::A: ++it->second.n_a; break;
      case Label::U: ++it->second.n_u; break;
      case Label::INVALID: ++it->second.n_invalid; break;
    }
  }
  return out;
}

}  // namespace bsm
