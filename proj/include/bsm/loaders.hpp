#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bsm/error.hpp"
#include "bsm/lexicon.hpp"
#include "bsm/normalize.hpp"
#include "bsm/types.hpp"

namespace bsm {

using json = nlohmann::json;

namespace detail {

inline DataError at_line(const std::filesystem::path& path, std::size_t line,
                         const std::string& what) {
  return DataError(path.filename().string() + ":" + std::to_string(line) + ": " + what);
}

inline const json& require_field(const json& j, const char* field,
                                 const std::filesystem::path& path, std::size_t line) {
  auto it = j.find(field);
  if (it == j.end()) throw at_line(path, line, std::string("missing field '") + field + "'");
  return *it;
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty()) continue;
    json j = json::parse(t, nullptr, false);
    if (j.is_discarded()) throw at_line(path, lineno, "invalid JSON");
    fn(j, lineno);
  }
}

}  // namespace detail

inline PromptRecord parse_prompt_record(const json& j, const std::filesystem::path& path,
                                        std::size_t line) {
  PromptRecord r;
  r.prompt_id = detail::require_field(j, "prompt_id", path, line).get<std::string>();
  r.dataset = parse_dataset(detail::require_field(j, "dataset", path, line).get<std::string>());
  r.dimension =
      Dimension::parse(detail::require_field(j, "dimension", path, line).get<std::string>());
  r.context_kind =
      parse_context_kind(detail::require_field(j, "context_kind", path, line).get<std::string>());

  const json& cands = detail::require_field(j, "candidates", path, line);
  if (!cands.is_array() || cands.empty())
    throw detail::at_line(path, line, "field 'candidates' must be a non-empty array");
  std::set<Role> roles;
  for (const auto& cj : cands) {
    Candidate c;
    c.text = detail::require_field(cj, "text", path, line).get<std::string>();
    c.role = parse_role(detail::require_field(cj, "role", path, line).get<std::string>());
    if (!roles.insert(c.role).second)
      throw detail::at_line(path, line, "duplicate candidate role '" +
                                            std::string(to_string(c.role)) + "'");
    r.candidates.push_back(std::move(c));
  }

  if (auto it = j.find("gold_role"); it != j.end() && !it->is_null())
    r.gold_role = parse_role(it->get<std::string>());

  if (r.context_kind == ContextKind::disambiguated && !r.gold_role)
    throw detail::at_line(path, line, "missing field 'gold_role' on disambiguated record");
  if (r.context_kind == ContextKind::ambiguous && r.gold_role)
    throw detail::at_line(path, line, "field 'gold_role' not allowed on ambiguous record");
  return r;
}

namespace detail {

inline void check_bbq_shape(const PromptRecord& r, const std::filesystem::path& path,
                            std::size_t line) {
  if (r.dataset != Dataset::bbq) throw at_line(path, line, "record is not dataset 'bbq'");
  if (r.context_kind != ContextKind::ambiguous && r.context_kind != ContextKind::disambiguated)
    throw at_line(path, line, "field 'context_kind' must be ambiguous or disambiguated");
  if (r.candidates.size() != 3)
    throw at_line(path, line, "field 'candidates' must have exactly 3 entries, got " +
                                  std::to_string(r.candidates.size()));
  // distinct roles already enforced; 3 distinct roles == {S, A, U}
}

inline void check_unqover_shape(const PromptRecord& r, const std::filesystem::path& path,
                                std::size_t line) {
  if (r.dataset != Dataset::unqover) throw at_line(path, line, "record is not dataset 'unqover'");
  if (r.context_kind != ContextKind::forced_choice)
    throw at_line(path, line, "field 'context_kind' must be forced_choice");
  if (r.candidates.size() != 2)
    throw at_line(path, line, "field 'candidates' must have exactly 2 entries, got " +
                                  std::to_string(r.candidates.size()));
  for (const auto& c : r.candidates)
    if (c.role == Role::unknown)
      throw at_line(path, line, "field 'candidates' must not contain an unknown-role candidate");
  if (r.gold_role) throw at_line(path, line, "field 'gold_role' not allowed on forced_choice record");
}

template <typename ShapeCheck>
std::vector<PromptRecord> load_prompt_file(const std::filesystem::path& path, ShapeCheck&& check) {
  std::vector<PromptRecord> out;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    PromptRecord r = parse_prompt_record(j, path, line);
    check(r, path, line);
    if (!seen.insert(r.prompt_id).second)
      throw at_line(path, line, "duplicate prompt_id '" + r.prompt_id + "'");
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace detail

inline std::vector<PromptRecord> load_bbq(const std::filesystem::path& path) {
  return detail::load_prompt_file(path, detail::check_bbq_shape);
}

inline std::vector<PromptRecord> load_unqover(const std::filesystem::path& path) {
  return detail::load_prompt_file(path, detail::check_unqover_shape);
}

// Dispatches per record on the 'dataset' field and applies that dataset's
// shape checks.
inline std::vector<PromptRecord> load_prompts(const std::filesystem::path& path) {
  return detail::load_prompt_file(path, [](const PromptRecord& r,
                                           const std::filesystem::path& p, std::size_t line) {
    switch (r.dataset) {
      case Dataset::bbq: detail::check_bbq_shape(r, p, line); break;
      case Dataset::unqover: detail::check_unqover_shape(r, p, line); break;
      case Dataset::openended:
        throw detail::at_line(p, line, "openended records belong in a completions file");
    }
  });
}

inline json prompt_to_json(const PromptRecord& r) {
  json j;
  j["prompt_id"] = r.prompt_id;
  j["dataset"] = to_string(r.dataset);
  j["dimension"] = r.dimension.name();
  j["context_kind"] = to_string(r.context_kind);
  json cands = json::array();
  for (const auto& c : r.candidates)
    cands.push_back(json{{"text", c.text}, {"role", to_string(c.role)}});
  j["candidates"] = std::move(cands);
  if (r.gold_role) j["gold_role"] = to_string(*r.gold_role);
  return j;
}

inline void write_prompts(const std::filesystem::path& path,
                          std::span<const PromptRecord> records) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  for (const auto& r : records) out << prompt_to_json(r).dump() << "\n";
}

// Raw response line; labels are always recomputed downstream, never trusted
// from input.
struct RawResponse {
  std::string model_id;
  std::string prompt_id;
  std::string raw_text;
};

inline std::vector<RawResponse> load_responses(const std::filesystem::path& path) {
  std::vector<RawResponse> out;
  std::set<std::pair<std::string, std::string>> seen;
  detail::for_each_jsonl(path, [&](const json& j, std::size_t line) {
    RawResponse r;
    r.model_id = detail::require_field(j, "model_id", path, line).get<std::string>();
    r.prompt_id = detail::require_field(j, "prompt_id", path, line).get<std::string>();
    r.raw_text = detail::require_field(j, "raw_text", path, line).get<std::string>();
    if (!seen.insert({r.model_id, r.prompt_id}).second)
      throw detail::at_line(path, line, "duplicate response for model '" + r.model_id +
                                            "', prompt '" + r.prompt_id + "'");
    out.push_back(std::move(r));
  });
  return out;
}

// Prompt lookup by id, non-owning.
class PromptIndex {
public:
  PromptIndex() = default;
  explicit PromptIndex(std::span<const PromptRecord> prompts) {
    for (const auto& p : prompts) by_id_.emplace(p.prompt_id, &p);
  }

  const PromptRecord* find(const std::string& prompt_id) const {
    auto it = by_id_.find(prompt_id);
    return it == by_id_.end() ? nullptr : it->second;
  }

  const PromptRecord& at(const std::string& prompt_id) const {
    const PromptRecord* p = find(prompt_id);
    if (!p) throw DataError("unknown prompt_id '" + prompt_id + "'");
    return *p;
  }

  std::size_t size() const { return by_id_.size(); }

private:
  std::map<std::string, const PromptRecord*> by_id_;
};

inline std::vector<ResponseRecord> normalize_responses(std::span<const RawResponse> raw,
                                                       const PromptIndex& prompts,
                                                       const RefusalLexicon& lexicon) {
  std::vector<ResponseRecord> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    const PromptRecord& p = prompts.at(r.prompt_id);
    const NormResult n = normalize_response(r.raw_text, p.candidates, lexicon);
    out.push_back({r.model_id, r.prompt_id, r.raw_text, n.label, n.method});
  }
  return out;
}

inline std::vector<ModelDescriptor> load_models_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open models manifest '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.filename().string() + ": invalid JSON");
  auto it = j.find("models");
  if (it == j.end() || !it->is_array())
    throw DataError(path.filename().string() + ": missing 'models' array");
  std::vector<ModelDescriptor> out;
  std::set<std::string> ids;
  for (const auto& mj : *it) {
    ModelDescriptor m;
    if (auto f = mj.find("id"); f != mj.end()) m.id = f->get<std::string>();
    if (m.id.empty()) throw DataError(path.filename().string() + ": model entry missing 'id'");
    if (!ids.insert(m.id).second)
      throw DataError(path.filename().string() + ": duplicate model id '" + m.id + "'");
    if (auto f = mj.find("family"); f != mj.end()) m.family = f->get<std::string>();
    if (auto f = mj.find("version"); f != mj.end()) m.version = f->get<std::string>();
    if (auto f = mj.find("size_params"); f != mj.end() && !f->is_null()) {
      auto v = f->get<std::int64_t>();
      if (v <= 0)
        throw DataError(path.filename().string() + ": size_params must be positive for '" +
                        m.id + "'");
      m.size_params = static_cast<std::uint64_t>(v);
    }
    if (auto f = mj.find("tuned"); f != mj.end()) m.tuned = f->get<bool>();
    if (auto f = mj.find("provenance"); f != mj.end())
      m.provenance = parse_provenance(f->get<std::string>());
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_models_manifest(const std::filesystem::path& path,
                                  std::span<const ModelDescriptor> models) {
  json arr = json::array();
  for (const auto& m : models) {
    json mj;
    mj["id"] = m.id;
    mj["family"] = m.family;
    mj["version"] = m.version;
    if (m.size_params) mj["size_params"] = *m.size_params;
    mj["tuned"] = m.tuned;
    mj["provenance"] = to_string(m.provenance);
    arr.push_back(std::move(mj));
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << json{{"models", std::move(arr)}}.dump(2) << "\n";
}

}  // namespace bsm
