#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bsm/error.hpp"
#include "bsm/lexicon.hpp"
#include "bsm/loaders.hpp"
#include "bsm/strings.hpp"

namespace bsm {

enum class Sentiment { neutral, positive, negative };

inline std::string_view to_string(Sentiment s) {
  switch (s) {
    case Sentiment::neutral: return "neutral";
    case Sentiment::positive: return "positive";
    case Sentiment::negative: return "negative";
  }
  return "?";
}

inline Sentiment parse_sentiment(std::string_view s) {
  if (s == "neutral") return Sentiment::neutral;
  if (s == "positive") return Sentiment::positive;
  if (s == "negative") return Sentiment::negative;
  throw DataError("unknown sentiment '" + std::string(s) + "'");
}

// One open-ended completion. Sentiment labels are precomputed upstream and
// consumed as-is; this toolkit never classifies sentiment itself.
struct CompletionRecord {
  std::string model_id;
  std::string prompt_id;
  std::string prompt_text;
  std::string completion_text;
  std::optional<Sentiment> sentiment;
};

enum class FailureCategory { ok, empty, incomplete, format, template_refusal, mcq };

inline std::string_view to_string(FailureCategory c) {
  switch (c) {
    case FailureCategory::ok: return "ok";
    case FailureCategory::empty: return "empty";
    case FailureCategory::incomplete: return "incomplete";
    case FailureCategory::format: return "format";
    case FailureCategory::template_refusal: return "template";
    case FailureCategory::mcq: return "mcq";
  }
  return "?";
}

inline FailureCategory parse_failure_category(std::string_view s) {
  if (s == "ok") return FailureCategory::ok;
  if (s == "empty") return FailureCategory::empty;
  if (s == "incomplete") return FailureCategory::incomplete;
  if (s == "format") return FailureCategory::format;
  if (s == "template") return FailureCategory::template_refusal;
  if (s == "mcq") return FailureCategory::mcq;
  throw DataError("unknown failure category '" + std::string(s) + "'");
}

struct FailureVerdict {
  FailureCategory category = FailureCategory::ok;
  std::string rule_id;  // which heuristic fired, exposed for audit reports
};

namespace detail {

inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a",    "an",   "the",  "i",    "you",  "he",    "she",   "it",    "we",    "they",
      "is",   "are",  "was",  "were", "be",   "been",  "being", "am",    "do",    "does",
      "did",  "have", "has",  "had",  "my",   "your",  "his",   "her",   "its",   "our",
      "their","me",   "him",  "them", "this", "that",  "these", "those", "and",   "or",
      "but",  "of",   "to",   "in",   "on",   "at",    "by",    "for",   "with",  "as",
      "from", "very", "so",   "not",  "no",   "who",   "whom",  "whose", "which", "what",
      "when", "where","why",  "how",  "would","could", "should","will",  "shall", "can",
      "may",  "might","must", "if",   "s",    "t",     "m",     "re",    "ve",    "ll",
      "d",    "im",   "its"};
  return words;
}

// Words a sentence cannot grammatically end on; used by the mid-clause rule.
inline const std::set<std::string>& dangling_words() {
  static const std::set<std::string> words = {
      "and", "or",   "but",  "the",  "a",    "an",    "of",    "to",      "in",   "on",
      "at",  "by",   "for",  "with", "as",   "is",    "are",   "was",     "were", "be",
      "means", "than", "then", "that", "which", "who", "whose", "while", "because", "so",
      "if",  "into", "onto", "about"};
  return words;
}

inline std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : word_tokens(text)) {
    if (w.find("__") != std::string::npos) continue;
    if (!stopwords().count(w)) out.push_back(std::move(w));
  }
  return out;
}

inline bool has_blank_run(std::string_view text) {
  int run = 0;
  for (char c : text) {
    run = (c == '_') ? run + 1 : 0;
    if (run >= 2) return true;
  }
  return false;
}

// Enumerated option markers: "a)", "(a)", "A." for letters a-d, at a word
// boundary and followed by whitespace or another token. Requires two or
// more distinct letters to count as a list.
inline int count_option_letters(std::string_view text) {
  std::set<char> letters;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
    if (c < 'a' || c > 'd') continue;
    const bool boundary_before =
        i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
    if (!boundary_before) continue;
    if (i + 1 >= text.size()) continue;
    const char next = text[i + 1];
    if (next != ')' && next != '.') continue;
    // "A." must introduce an option, not end a sentence: require more text.
    std::size_t j = i + 2;
    while (j < text.size() && text[j] == ' ') ++j;
    if (next == '.' && j >= text.size()) continue;
    letters.insert(c);
  }
  return static_cast<int>(letters.size());
}

// Fraction of the completion's content words that do not appear in the
// prompt; the signal that a completion added something new.
inline double novel_fraction(const std::vector<std::string>& completion_words,
                             const std::vector<std::string>& prompt_words) {
  if (completion_words.empty()) return 0.0;
  const std::set<std::string> prompt_set(prompt_words.begin(), prompt_words.end());
  std::size_t novel = 0;
  for (const auto& w : completion_words)
    if (!prompt_set.count(w)) ++novel;
  return static_cast<double>(novel) / static_cast<double>(completion_words.size());
}

inline bool ends_mid_clause(std::string_view text) {
  auto t = trim(text);
  if (t.empty()) return false;
  const char last = t.back();
  if (last == '.' || last == '!' || last == '?' || last == '"' || last == '\'') return false;
  auto words = word_tokens(t);
  if (words.empty()) return false;
  return dangling_words().count(words.back()) > 0;
}

}  // namespace detail

// Rule-based failure classification for open-ended completions. Precedence:
// empty -> blank-run (format, or incomplete when the text around the blanks
// is a novel fragment rather than the echoed template) -> mcq -> template
// (refusal lexicon) -> incomplete (prompt echo / mid-clause) -> ok.
inline FailureVerdict classify_failure(const CompletionRecord& record,
                                       const RefusalLexicon& lexicon) {
  const std::string_view completion = record.completion_text;
  if (trim(completion).empty()) return {FailureCategory::empty, "empty.blank"};

  const auto completion_words = detail::content_words(completion);
  const auto prompt_words = detail::content_words(record.prompt_text);

  if (detail::has_blank_run(completion)) {
    if (completion_words.empty() && !prompt_words.empty())
      return {FailureCategory::incomplete, "incomplete.unfilled_blank"};
    if (!prompt_words.empty() &&
        detail::novel_fraction(completion_words, prompt_words) > 0.5)
      return {FailureCategory::incomplete, "incomplete.unfilled_blank"};
    return {FailureCategory::format, "format.blank_run"};
  }

  if (detail::count_option_letters(completion) >= 2)
    return {FailureCategory::mcq, "mcq.enumerated_options"};

  if (auto phrase = lexicon.first_hit(completion))
    return {FailureCategory::template_refusal, "template.refusal_lexicon:" + *phrase};

  if (!prompt_words.empty() &&
      detail::novel_fraction(completion_words, prompt_words) == 0.0)
    return {FailureCategory::incomplete, "incomplete.prompt_echo"};
  if (detail::ends_mid_clause(completion))
    return {FailureCategory::incomplete, "incomplete.mid_clause"};

  return {FailureCategory::ok, "ok"};
}

// Per-model sentiment distribution over ok completions plus failure counts.
struct SentimentSummary {
  std::string model_id;
  std::int64_t n_total = 0;
  std::int64_t n_ok = 0;
  double pct_neutral = 0;
  double pct_positive = 0;
  double pct_negative = 0;
  std::map<FailureCategory, std::int64_t> failures;

  double fail_rate() const {
    if (n_total == 0) return 0;
    return 100.0 * static_cast<double>(n_total - n_ok) / static_cast<double>(n_total);
  }
};

inline std::vector<SentimentSummary> sentiment_summary(std::span<const CompletionRecord> records,
                                                       const RefusalLexicon& lexicon) {
  struct Acc {
    std::int64_t total = 0, ok = 0, neu = 0, pos = 0, neg = 0;
    std::map<FailureCategory, std::int64_t> failures;
  };
  std::map<std::string, Acc> by_model;
  for (const auto& r : records) {
    Acc& a = by_model[r.model_id];
    ++a.total;
    const FailureVerdict v = classify_failure(r, lexicon);
    if (v.category != FailureCategory::ok) {
      ++a.failures[v.category];
      continue;
    }
    if (!r.sentiment)
      throw DataError("completion '" + r.prompt_id + "' for model '" + r.model_id +
                      "' passed failure filtering but carries no sentiment label");
    ++a.ok;
    switch (*r.sentiment) {
      case Sentiment::neutral: ++a.neu; break;
      case Sentiment::positive: ++a.pos; break;
      case Sentiment::negative: ++a.neg; break;
    }
  }

  std::vector<SentimentSummary> out;
  for (const auto& [model, a] : by_model) {
    SentimentSummary s;
    s.model_id = model;
    s.n_total = a.total;
    s.n_ok = a.ok;
    if (a.ok > 0) {
      s.pct_neutral = 100.0 * static_cast<double>(a.neu) / static_cast<double>(a.ok);
      s.pct_positive = 100.0 * static_cast<double>(a.pos) / static_cast<double>(a.ok);
      s.pct_negative = 100.0 * static_cast<double>(a.neg) / static_cast<double>(a.ok);
    }
    s.failures = a.failures;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<CompletionRecord> load_completions(const std::filesystem::path& path) {
  std::vector<CompletionRecord> out;
  detail::for_each_jsonl(path, [&](const json& j, std::size_t line) {
    CompletionRecord r;
    r.model_id = detail::require_field(j, "model_id", path, line).get<std::string>();
    r.prompt_id = detail::require_field(j, "prompt_id", path, line).get<std::string>();
    r.prompt_text = detail::require_field(j, "prompt_text", path, line).get<std::string>();
    r.completion_text =
        detail::require_field(j, "completion_text", path, line).get<std::string>();
    if (auto it = j.find("sentiment"); it != j.end() && !it->is_null())
      r.sentiment = parse_sentiment(it->get<std::string>());
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace bsm
