#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "damt/error.hpp"
#include "damt/jsonl.hpp"
#include "damt/sha256.hpp"
#include "damt/text.hpp"

namespace damt {

// The seven prompt templates. Retrieval and generation variants of a
// strategy share one template; only the provided information differs.
enum class TemplateId {
  zero_shot,
  mt_with_demos,
  mt_with_terms,
  mt_with_style,
  demo_gen,
  term_gen,
  term_extract,
};

inline constexpr TemplateId kAllTemplates[] = {
    TemplateId::zero_shot,   TemplateId::mt_with_demos, TemplateId::mt_with_terms,
    TemplateId::mt_with_style, TemplateId::demo_gen,    TemplateId::term_gen,
    TemplateId::term_extract,
};

inline std::string to_string(TemplateId id) {
  switch (id) {
    case TemplateId::zero_shot: return "zero_shot";
    case TemplateId::mt_with_demos: return "mt_with_demos";
    case TemplateId::mt_with_terms: return "mt_with_terms";
    case TemplateId::mt_with_style: return "mt_with_style";
    case TemplateId::demo_gen: return "demo_gen";
    case TemplateId::term_gen: return "term_gen";
    case TemplateId::term_extract: return "term_extract";
  }
  return "zero_shot";
}

inline TemplateId template_id_from_string(std::string_view s) {
  for (TemplateId id : kAllTemplates)
    if (to_string(id) == s) return id;
  throw ConfigError("unknown template id '" + std::string(s) + "'");
}

// One experimental configuration of knowledge source and strategy.
enum class Setting {
  zero_shot,
  retrieved_terms,
  retrieved_demos,
  generated_terms,
  generated_demos,
  local_terms,
  style_demos,
};

inline constexpr Setting kAllSettings[] = {
    Setting::zero_shot,       Setting::retrieved_terms, Setting::retrieved_demos,
    Setting::generated_terms, Setting::generated_demos, Setting::local_terms,
    Setting::style_demos,
};

inline std::string to_string(Setting s) {
  switch (s) {
    case Setting::zero_shot: return "zero_shot";
    case Setting::retrieved_terms: return "retrieved_terms";
    case Setting::retrieved_demos: return "retrieved_demos";
    case Setting::generated_terms: return "generated_terms";
    case Setting::generated_demos: return "generated_demos";
    case Setting::local_terms: return "local_terms";
    case Setting::style_demos: return "style_demos";
  }
  return "zero_shot";
}

inline Setting setting_from_string(std::string_view s) {
  for (Setting v : kAllSettings)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown setting '" + std::string(s) + "'");
}

// Every setting maps to exactly one translation template; the terms settings
// (retrieved, generated, local) share mt_with_terms and the demo settings
// share mt_with_demos.
inline TemplateId template_for(Setting s) {
  switch (s) {
    case Setting::zero_shot: return TemplateId::zero_shot;
    case Setting::retrieved_terms:
    case Setting::generated_terms:
    case Setting::local_terms: return TemplateId::mt_with_terms;
    case Setting::retrieved_demos:
    case Setting::generated_demos: return TemplateId::mt_with_demos;
    case Setting::style_demos: return TemplateId::mt_with_style;
  }
  return TemplateId::zero_shot;
}

struct PromptTemplate {
  TemplateId id = TemplateId::zero_shot;
  std::string body;
  std::vector<std::string> required_slots;
};

inline std::vector<std::string> required_slots_for(TemplateId id) {
  switch (id) {
    case TemplateId::zero_shot:
      return {"src_full", "tgt_full", "source_language_name", "source_text",
              "target_language_name"};
    case TemplateId::mt_with_demos:
      return {"source_language_name", "target_language_name", "demo_examples",
              "source_text"};
    case TemplateId::mt_with_terms:
      return {"source_language_name", "target_language_name", "examples",
              "terminology", "source_text"};
    case TemplateId::mt_with_style:
      return {"source_language_name", "target_language_name",
              "few_shot_examples", "source_text"};
    case TemplateId::demo_gen:
      return {"source_language_name", "target_language_name", "demo_examples",
              "source_text"};
    case TemplateId::term_gen:
      return {"source_language_name", "target_language_name", "term_examples",
              "source_text"};
    case TemplateId::term_extract:
      return {"source_examples", "source_texts", "target_examples",
              "target_texts", "term_examples"};
  }
  return {};
}

// A fully instantiated prompt. `text` is the deterministic instantiation of
// the template body; `content_hash` addresses it in the completion cache.
struct RenderedPrompt {
  TemplateId template_id = TemplateId::zero_shot;
  std::map<std::string, std::string> bound;
  std::string text;
  std::string content_hash;
};

namespace detail {

inline bool is_slot_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

// Scans a body line for {name} / [name] markers, substituting bound slots.
// Slot values are inserted verbatim and never rescanned. Returns false when
// the line consisted of a single slot marker whose value is empty (the line
// is dropped so an omitted exemplar block leaves no stray blank line).
inline bool render_line(std::string_view line,
                        const std::vector<std::string>& slot_names,
                        const std::map<std::string, std::string>& slots,
                        std::string& out) {
  std::string rendered;
  size_t i = 0;
  bool whole_line_slot_empty = false;
  while (i < line.size()) {
    char open = line[i];
    if (open == '{' || open == '[') {
      char close = (open == '{') ? '}' : ']';
      size_t j = i + 1;
      while (j < line.size() && is_slot_name_char(line[j])) ++j;
      if (j < line.size() && line[j] == close && j > i + 1) {
        std::string name(line.substr(i + 1, j - i - 1));
        bool known = std::find(slot_names.begin(), slot_names.end(), name) !=
                     slot_names.end();
        if (known) {
          auto it = slots.find(name);
          if (it == slots.end())
            throw Error("unbound slot '" + name + "'");
          if (it->second.empty() && trim_view(line) == line.substr(i, j - i + 1))
            whole_line_slot_empty = true;
          rendered += it->second;
          i = j + 1;
          continue;
        }
      }
    }
    rendered.push_back(line[i]);
    ++i;
  }
  if (whole_line_slot_empty && trim_view(rendered).empty()) return false;
  out = std::move(rendered);
  return true;
}

}  // namespace detail

// Instantiates `tmpl` with `slots`. All required slots must be bound; extra
// slots are ignored. A slot occupying an entire line renders to nothing when
// bound to the empty string.
inline RenderedPrompt render(const PromptTemplate& tmpl,
                             const std::map<std::string, std::string>& slots) {
  for (const auto& name : tmpl.required_slots)
    if (!slots.count(name))
      throw Error("missing slot '" + name + "' for template " +
                  to_string(tmpl.id));
  std::vector<std::string> lines = split_lines(tmpl.body);
  std::vector<std::string> out_lines;
  out_lines.reserve(lines.size());
  for (const auto& line : lines) {
    std::string rendered;
    if (detail::render_line(line, tmpl.required_slots, slots, rendered))
      out_lines.push_back(std::move(rendered));
  }
  RenderedPrompt rp;
  rp.template_id = tmpl.id;
  rp.bound = slots;
  rp.text = join(out_lines, "\n");
  if (!tmpl.body.empty() && tmpl.body.back() == '\n') rp.text.push_back('\n');
  rp.content_hash = sha256_hex(rp.text);
  return rp;
}

// True if any of the template's slot markers survive in `text`; rendering
// with all slots bound must leave none.
inline bool has_unbound_markers(std::string_view text, const PromptTemplate& tmpl) {
  for (const auto& name : tmpl.required_slots) {
    if (text.find("{" + name + "}") != std::string_view::npos) return true;
    if (text.find("[" + name + "]") != std::string_view::npos) return true;
  }
  return false;
}

// Exemplar trio for the terminology-extraction prompt.
struct ExtractionExemplars {
  std::string sources;
  std::string targets;
  std::string terms;
};

// Loads the prompt asset directory and verifies every file against the
// checksum manifest, so a drifted template fails loudly rather than
// producing subtly different prompts.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::filesystem::path& dir) {
    PromptLibrary lib;
    lib.dir_ = dir;
    std::filesystem::path manifest_path = dir / "manifest.json";
    std::string err;
    auto manifest = try_parse_json(read_file(manifest_path), &err);
    if (!manifest) throw Error("bad prompt manifest: " + err);
    if (manifest->value("format", "") != "damt.prompts")
      throw Error("not a damt.prompts manifest: " + manifest_path.string());
    for (auto& [rel, digest] : (*manifest)["files"].items()) {
      std::string content = read_file(dir / rel);
      std::string actual = sha256_hex(content);
      if (actual != digest.get<std::string>())
        throw Error("prompt asset digest mismatch for " + rel + ": manifest " +
                    digest.get<std::string>() + ", actual " + actual);
      lib.assets_[rel] = std::move(content);
    }
    for (TemplateId id : kAllTemplates) {
      std::string rel = "templates/" + to_string(id) + ".txt";
      auto it = lib.assets_.find(rel);
      if (it == lib.assets_.end())
        throw Error("prompt library is missing " + rel);
      lib.templates_[id] =
          PromptTemplate{id, it->second, required_slots_for(id)};
    }
    return lib;
  }

  const PromptTemplate& get(TemplateId id) const { return templates_.at(id); }

  RenderedPrompt render(TemplateId id,
                        const std::map<std::string, std::string>& slots) const {
    return damt::render(get(id), slots);
  }

  bool has_asset(const std::string& rel) const { return assets_.count(rel) > 0; }

  // Raw asset text (exemplar blocks keep their trailing newline stripped so
  // they can be dropped into a slot between template lines).
  std::string asset(const std::string& rel) const {
    auto it = assets_.find(rel);
    if (it == assets_.end())
      throw Error("prompt asset not in manifest: " + rel);
    std::string s = it->second;
    while (!s.empty() && s.back() == '\n') s.pop_back();
    return s;
  }

  std::string demo_gen_exemplars(const std::string& domain) const {
    return asset("exemplars/demo_gen/" + domain + ".txt");
  }
  std::string general_demo_exemplars() const {
    return asset("exemplars/demo_gen/general.txt");
  }
  std::string term_gen_exemplars(const std::string& domain) const {
    return asset("exemplars/term_gen/" + domain + ".txt");
  }
  ExtractionExemplars term_extract_exemplars(const std::string& domain) const {
    return ExtractionExemplars{
        asset("exemplars/term_extract/" + domain + ".sources.txt"),
        asset("exemplars/term_extract/" + domain + ".targets.txt"),
        asset("exemplars/term_extract/" + domain + ".terms.txt")};
  }
  std::string mt_with_terms_examples(const std::string& domain) const {
    return asset("exemplars/mt_with_terms/" + domain + ".txt");
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> assets_;
  std::map<TemplateId, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Slot-value formatting helpers shared by the pipeline stages.

// Demonstration block for the mt_with_demos prompt: one "<lang>: text" line
// pair per demonstration, in the order given (descending retrieval score).
inline std::string format_demo_block(
    const std::vector<std::pair<std::string, std::string>>& demos,
    const std::string& src_lang = "German", const std::string& tgt_lang = "English") {
  std::vector<std::string> lines;
  lines.reserve(demos.size() * 2);
  for (const auto& [src, tgt] : demos) {
    lines.push_back(src_lang + ": " + src);
    lines.push_back(tgt_lang + ": " + tgt);
  }
  return join(lines, "\n");
}

// One-to-many terminology payload for the mt_with_terms prompt: a JSON list
// of {"de": term, "en": [candidates...]} dictionaries on a single line.
inline std::string format_terminology_json(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& entries) {
  Json arr = Json::array();
  for (const auto& [de, en] : entries) {
    Json j;
    j["de"] = de;
    j["en"] = en;
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

// "prefix i: text" lines, 1-based, one per text.
inline std::string format_numbered_lines(const std::string& prefix,
                                         const std::vector<std::string>& texts) {
  std::vector<std::string> lines;
  lines.reserve(texts.size());
  for (size_t i = 0; i < texts.size(); ++i)
    lines.push_back(prefix + " " + std::to_string(i + 1) + ": " + texts[i]);
  return join(lines, "\n");
}

// ---------------------------------------------------------------------------
// Translation-output parsing.

namespace detail {

inline std::string strip_code_fences(std::string_view raw) {
  std::vector<std::string> kept;
  for (auto& line : split_lines(raw)) {
    std::string_view t = trim_view(line);
    if (t.substr(0, 3) == "```") continue;
    kept.push_back(line);
  }
  return join(kept, "\n");
}

// One bounded repair pass for almost-JSON: removes trailing commas, inserts
// the comma LLMs tend to drop between adjacent objects, and closes brackets
// left open at the end. Anything still unparseable after this is rejected.
inline std::string repair_json(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 8);
  bool in_string = false;
  bool escaped = false;
  std::vector<char> stack;
  for (size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      out.push_back(c);
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      out.push_back(c);
      continue;
    }
    if (c == '{' || c == '[') {
      stack.push_back(c);
      out.push_back(c);
      continue;
    }
    if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
      out.push_back(c);
      // missing comma between siblings: "} {" or "] ["
      size_t j = i + 1;
      while (j < s.size() && (s[j] == ' ' || s[j] == '\n' || s[j] == '\t' ||
                              s[j] == '\r'))
        ++j;
      if (j < s.size() && (s[j] == '{' || s[j] == '[')) out.push_back(',');
      continue;
    }
    if (c == ',') {
      // drop trailing commas before a closer
      size_t j = i + 1;
      while (j < s.size() && (s[j] == ' ' || s[j] == '\n' || s[j] == '\t' ||
                              s[j] == '\r'))
        ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
      out.push_back(c);
      continue;
    }
    out.push_back(c);
  }
  if (in_string) out.push_back('"');
  while (!stack.empty()) {
    out.push_back(stack.back() == '{' ? '}' : ']');
    stack.pop_back();
  }
  return out;
}

inline std::optional<Json> parse_json_with_repair(std::string_view s) {
  if (auto j = try_parse_json(s)) return j;
  return try_parse_json(repair_json(s));
}

// First balanced {...} region, honoring strings.
inline std::optional<std::string> first_json_object(std::string_view s) {
  size_t start = s.find('{');
  if (start == std::string_view::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false, escaped = false;
  for (size_t i = start; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}') {
      --depth;
      if (depth == 0) return std::string(s.substr(start, i - start + 1));
    }
  }
  return std::string(s.substr(start));  // unbalanced tail; repair may close it
}

// "<word> <i>:" at the start of a line (leading whitespace allowed). On a
// match returns the 1-based number and sets `payload_col` to the column just
// past the colon.
inline std::optional<size_t> line_anchor_number(std::string_view line,
                                                std::string_view word,
                                                size_t& payload_col) {
  size_t lead = 0;
  while (lead < line.size() && (line[lead] == ' ' || line[lead] == '\t')) ++lead;
  std::string_view t = line.substr(lead);
  if (t.substr(0, word.size()) != word) return std::nullopt;
  t.remove_prefix(word.size());
  size_t ws = 0;
  while (ws < t.size() && (t[ws] == ' ' || t[ws] == '\t')) ++ws;
  t.remove_prefix(ws);
  size_t d = 0;
  size_t number = 0;
  while (d < t.size() && t[d] >= '0' && t[d] <= '9') {
    number = number * 10 + static_cast<size_t>(t[d] - '0');
    ++d;
  }
  if (d == 0 || d >= t.size() || t[d] != ':') return std::nullopt;
  payload_col = lead + word.size() + ws + d + 1;
  return number;
}

struct LineAnchor {
  size_t number = 0;
  size_t payload_begin = 0;  // byte offset into the scanned text
  size_t line_begin = 0;
};

// All "<word> <i>:" anchors in `text`, in text order.
inline std::vector<LineAnchor> find_line_anchors(std::string_view text,
                                                 std::string_view word) {
  std::vector<LineAnchor> anchors;
  size_t offset = 0;
  for (const auto& line : split_lines(text)) {
    size_t payload_col = 0;
    if (auto num = line_anchor_number(line, word, payload_col))
      anchors.push_back({*num, offset + payload_col, offset});
    offset += line.size() + 1;
  }
  return anchors;
}

inline bool starts_lowercase(std::string_view line) {
  std::string_view t = trim_view(line);
  if (t.empty()) return false;
  size_t i = 0;
  char32_t cp = utf8_next(t, i);
  if (cp == kInvalidCp || !is_word_cp(cp)) return false;
  if (cp >= U'0' && cp <= U'9') return false;
  return cp == lower_cp(cp);
}

}  // namespace detail

struct TranslationParseOptions {
  // merge a following line into a few-shot translation when it starts with a
  // lowercase continuation
  bool merge_lowercase_continuation = true;
};

// Extracts the translation string from a raw completion. JSON-wrapped
// templates (zero_shot, mt_with_terms) get one repair pass and then fall
// back to the fence-stripped raw text; the few-shot templates elicit a bare
// continuation, so the first non-empty line is the translation.
inline std::string parse_translation(std::string_view raw, TemplateId id,
                                     const TranslationParseOptions& opt = {}) {
  if (trim_view(raw).empty()) throw ParseError("empty output");
  switch (id) {
    case TemplateId::zero_shot:
    case TemplateId::mt_with_terms: {
      std::string text = detail::strip_code_fences(raw);
      if (auto obj_text = detail::first_json_object(text)) {
        if (auto j = detail::parse_json_with_repair(*obj_text)) {
          if (j->is_object() && j->contains("translation") &&
              (*j)["translation"].is_string()) {
            std::string t = (*j)["translation"];
            if (!trim_view(t).empty()) return t;
          }
        }
      }
      std::string fallback = trim(text);
      if (!fallback.empty()) return fallback;
      throw ParseError("no translation found in output");
    }
    case TemplateId::mt_with_demos:
    case TemplateId::mt_with_style: {
      std::vector<std::string> lines = split_lines(raw);
      for (size_t i = 0; i < lines.size(); ++i) {
        std::string first = trim(lines[i]);
        if (first.empty()) continue;
        if (opt.merge_lowercase_continuation) {
          size_t j = i + 1;
          while (j < lines.size() && detail::starts_lowercase(lines[j])) {
            first += " " + trim(lines[j]);
            ++j;
          }
        }
        return first;
      }
      throw ParseError("empty output");
    }
    default:
      throw ConfigError("template " + to_string(id) +
                        " does not produce translations");
  }
}

}  // namespace damt
