#pragma once

#include <string>
#include <utility>
#include <vector>

#include "damt/error.hpp"
#include "damt/prompting.hpp"
#include "damt/text.hpp"

namespace damt {

// Which static exemplars accompany a generation prompt: the per-domain
// 2-source x 3-output set, the general-domain 5-source x 1-output set, or
// none at all.
enum class IclMode { domain_2x3, general_5x1, none };

inline std::string to_string(IclMode m) {
  switch (m) {
    case IclMode::domain_2x3: return "domain";
    case IclMode::general_5x1: return "general";
    case IclMode::none: return "none";
  }
  return "domain";
}

inline IclMode icl_mode_from_string(std::string_view s) {
  if (s == "domain" || s == "domain_2x3") return IclMode::domain_2x3;
  if (s == "general" || s == "general_5x1") return IclMode::general_5x1;
  if (s == "none") return IclMode::none;
  throw ConfigError("unknown ICL mode '" + std::string(s) + "'");
}

struct GeneratedDemos {
  std::string source_id;
  std::vector<std::pair<std::string, std::string>> pairs;  // (src, tgt)
  IclMode icl_mode = IclMode::domain_2x3;
  std::vector<std::string> warnings;
};

struct GeneratedTermRecord {
  std::string src_term;                  // lowercased
  std::vector<std::string> tgt_terms;
};

struct GeneratedTerms {
  std::string source_id;
  std::vector<GeneratedTermRecord> terms;
  std::vector<std::string> warnings;
};

namespace detail {

// Exemplar assets hold "---"-separated blocks, one block per example source.
inline std::vector<std::string> split_exemplar_blocks(std::string_view text) {
  std::vector<std::string> blocks;
  std::vector<std::string> current;
  for (const auto& line : split_lines(text)) {
    if (trim_view(line) == "---") {
      if (!current.empty()) blocks.push_back(join(current, "\n"));
      current.clear();
    } else {
      current.push_back(line);
    }
  }
  if (!current.empty()) blocks.push_back(join(current, "\n"));
  return blocks;
}

inline std::string join_exemplar_blocks(const std::vector<std::string>& blocks) {
  return blocks.empty() ? std::string() : join(blocks, "\n---\n") + "\n---";
}

inline size_t count_anchors(std::string_view block, std::string_view word) {
  return find_line_anchors(block, word).size();
}

inline void validate_exemplars(IclMode mode,
                               const std::vector<std::string>& blocks,
                               std::string_view anchor_word,
                               bool check_outputs_per_block) {
  size_t expected_blocks = mode == IclMode::domain_2x3 ? 2 : 5;
  if (blocks.size() != expected_blocks)
    throw Error("ICL mode " + to_string(mode) + " needs " +
                std::to_string(expected_blocks) + " exemplar blocks, got " +
                std::to_string(blocks.size()));
  if (!check_outputs_per_block) return;
  size_t expected_outputs = mode == IclMode::domain_2x3 ? 3 : 1;
  for (size_t i = 0; i < blocks.size(); ++i) {
    size_t n = count_anchors(blocks[i], anchor_word);
    if (n != expected_outputs)
      throw Error("exemplar block " + std::to_string(i + 1) + " has " +
                  std::to_string(n) + " outputs, expected " +
                  std::to_string(expected_outputs));
  }
}

}  // namespace detail

// Demonstration-generation prompt: asks for exactly 3 related text pairs,
// with exemplars per the ICL mode (empty exemplar block when mode is none).
inline RenderedPrompt build_demo_gen_prompt(const PromptLibrary& lib,
                                            const std::string& src,
                                            IclMode mode,
                                            const std::vector<std::string>& exemplar_blocks) {
  if (trim_view(src).empty()) throw Error("empty source text");
  std::string block;
  if (mode == IclMode::none) {
    if (!exemplar_blocks.empty())
      throw Error("ICL mode none takes no exemplars");
  } else {
    detail::validate_exemplars(mode, exemplar_blocks, "Pair", true);
    block = detail::join_exemplar_blocks(exemplar_blocks);
  }
  return lib.render(TemplateId::demo_gen,
                    {{"source_language_name", "German"},
                     {"target_language_name", "English"},
                     {"demo_examples", block},
                     {"source_text", src}});
}

// Terminology-generation prompt over a single source sentence.
inline RenderedPrompt build_term_gen_prompt(const PromptLibrary& lib,
                                            const std::string& src,
                                            IclMode mode,
                                            const std::vector<std::string>& exemplar_blocks) {
  if (trim_view(src).empty()) throw Error("empty source text");
  std::string block;
  if (mode == IclMode::none) {
    if (!exemplar_blocks.empty())
      throw Error("ICL mode none takes no exemplars");
  } else {
    detail::validate_exemplars(mode, exemplar_blocks, "Term", false);
    block = detail::join_exemplar_blocks(exemplar_blocks);
  }
  return lib.render(TemplateId::term_gen,
                    {{"source_language_name", "German"},
                     {"target_language_name", "English"},
                     {"term_examples", block},
                     {"source_text", src}});
}

// Parses `Pair i: {"de": ..., "en": ...}` lines. Three pairs are expected;
// one or two are accepted with a warning, extras beyond three are dropped
// with a warning, zero parseable pairs is an error.
inline GeneratedDemos parse_demo_gen_output(std::string_view raw,
                                            const std::string& source_id = {},
                                            IclMode mode = IclMode::domain_2x3) {
  GeneratedDemos out;
  out.source_id = source_id;
  out.icl_mode = mode;
  std::vector<detail::LineAnchor> anchors = detail::find_line_anchors(raw, "Pair");
  for (size_t a = 0; a < anchors.size(); ++a) {
    size_t end = (a + 1 < anchors.size()) ? anchors[a + 1].line_begin : raw.size();
    std::string_view payload(raw.data() + anchors[a].payload_begin,
                             end - anchors[a].payload_begin);
    auto obj_text = detail::first_json_object(payload);
    std::optional<Json> obj;
    if (obj_text) obj = detail::parse_json_with_repair(*obj_text);
    if (!obj || !obj->is_object() || !obj->contains("de") || !obj->contains("en") ||
        !(*obj)["de"].is_string() || !(*obj)["en"].is_string()) {
      out.warnings.push_back("malformed pair " + std::to_string(anchors[a].number));
      continue;
    }
    std::string de = trim((*obj)["de"].get<std::string>());
    std::string en = trim((*obj)["en"].get<std::string>());
    if (de.empty() || en.empty()) {
      out.warnings.push_back("empty pair " + std::to_string(anchors[a].number));
      continue;
    }
    if (out.pairs.size() == 3) {
      out.warnings.push_back("more than 3 pairs generated; keeping the first 3");
      break;
    }
    out.pairs.emplace_back(std::move(de), std::move(en));
  }
  if (out.pairs.empty()) throw ParseError("no parseable demonstration pairs");
  if (out.pairs.size() < 3)
    out.warnings.push_back("expected 3 pairs, got " +
                           std::to_string(out.pairs.size()));
  return out;
}

// Parses `Term i: {"de": ..., "en": [...]}` lines. Zero terms is a valid,
// empty result; malformed lines are skipped with a warning.
inline GeneratedTerms parse_term_gen_output(std::string_view raw,
                                            const std::string& source_id = {}) {
  GeneratedTerms out;
  out.source_id = source_id;
  std::vector<detail::LineAnchor> anchors = detail::find_line_anchors(raw, "Term");
  for (size_t a = 0; a < anchors.size(); ++a) {
    size_t end = (a + 1 < anchors.size()) ? anchors[a + 1].line_begin : raw.size();
    std::string_view payload(raw.data() + anchors[a].payload_begin,
                             end - anchors[a].payload_begin);
    auto obj_text = detail::first_json_object(payload);
    std::optional<Json> obj;
    if (obj_text) obj = detail::parse_json_with_repair(*obj_text);
    if (!obj || !obj->is_object() || !obj->contains("de") || !obj->contains("en") ||
        !(*obj)["de"].is_string()) {
      out.warnings.push_back("malformed term " + std::to_string(anchors[a].number));
      continue;
    }
    GeneratedTermRecord rec;
    rec.src_term = lower_utf8(nfc_latin(trim_view((*obj)["de"].get<std::string>())));
    const Json& en = (*obj)["en"];
    if (en.is_string()) {
      rec.tgt_terms.push_back(trim(en.get<std::string>()));
    } else if (en.is_array()) {
      for (const auto& t : en)
        if (t.is_string()) rec.tgt_terms.push_back(trim(t.get<std::string>()));
    }
    std::erase_if(rec.tgt_terms, [](const std::string& s) { return s.empty(); });
    if (rec.src_term.empty() || rec.tgt_terms.empty()) {
      out.warnings.push_back("empty term " + std::to_string(anchors[a].number));
      continue;
    }
    out.terms.push_back(std::move(rec));
  }
  return out;
}

// Inverse of the parsers; used to build exemplar-formatted text and to check
// the serialize/parse round trip.
inline std::string format_generated_demos(const GeneratedDemos& demos) {
  std::vector<std::string> lines;
  for (size_t i = 0; i < demos.pairs.size(); ++i) {
    Json j;
    j["de"] = demos.pairs[i].first;
    j["en"] = demos.pairs[i].second;
    lines.push_back("Pair " + std::to_string(i + 1) + ": " + j.dump());
  }
  return join(lines, "\n");
}

inline std::string format_generated_terms(const GeneratedTerms& terms) {
  std::vector<std::string> lines;
  for (size_t i = 0; i < terms.terms.size(); ++i) {
    Json j;
    j["de"] = terms.terms[i].src_term;
    j["en"] = terms.terms[i].tgt_terms;
    lines.push_back("Term " + std::to_string(i + 1) + ": " + j.dump());
  }
  return join(lines, "\n");
}

// Soft validity check: a generated term's source side should occur in the
// query sentence. Violations are reported, not dropped.
inline std::vector<std::string> check_terms_against_source(
    const GeneratedTerms& terms, std::string_view source_text) {
  std::vector<std::string> violations;
  std::string hay = nfc_latin(source_text);
  for (const auto& t : terms.terms)
    if (!contains_ci(hay, t.src_term))
      violations.push_back(t.src_term);
  return violations;
}

}  // namespace damt
