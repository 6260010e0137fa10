#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bsm/error.hpp"
#include "bsm/strings.hpp"

namespace bsm {

// Refusal phrase list. Matching is case-insensitive substring containment
// against the folded phrase. User-overridable via a plain-text file, one
// phrase per line, '#' comments.
class RefusalLexicon {
public:
  RefusalLexicon() = default;

  static RefusalLexicon defaults() {
    RefusalLexicon lex;
    for (const char* p : {
             "i'm not sure",
             "cannot determine",
             "can't determine",
             "it's impossible to fill in",
             "important to be cautious",
             "i am unable to",
             "unable to provide an answer",
             "i cannot answer",
             "not enough information",
         }) {
      lex.add(p);
    }
    return lex;
  }

  static RefusalLexicon load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open refusal lexicon '" + path.string() + "'");
    RefusalLexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      lex.add(std::string(t));
    }
    return lex;
  }

  void add(std::string_view phrase) {
    auto f = fold(phrase);
    if (f.empty()) return;
    for (const auto& p : phrases_)
      if (p == f) return;
    phrases_.push_back(std::move(f));
  }

  // Folded phrase of the first hit in insertion order, if any.
  std::optional<std::string> first_hit(std::string_view text) const {
    const std::string folded = to_lower_ascii(text);
    for (const auto& p : phrases_)
      if (folded.find(p) != std::string::npos) return p;
    return std::nullopt;
  }

  bool matches(std::string_view text) const { return first_hit(text).has_value(); }

  std::size_t size() const { return phrases_.size(); }
  const std::vector<std::string>& phrases() const { return phrases_; }

private:
  std::vector<std::string> phrases_;
};

}  // namespace bsm
