#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "damt/corpus.hpp"
#include "damt/llm_client.hpp"
#include "damt/parallel.hpp"
#include "damt/prompting.hpp"
#include "damt/text.hpp"

namespace damt {

// One extracted source/target term occurrence. Source terms are lowercased
// on ingest; target terms keep their extracted casing.
struct TermPair {
  std::string src_term;
  std::string tgt_term;
  std::string origin_pair_id;
};

struct TermCandidate {
  std::string tgt_term;
  uint32_t count = 0;
  double usage = 0.0;  // count / total count for this source term
};

struct TermEntry {
  std::string src_term;
  std::vector<TermCandidate> candidates;

  std::vector<std::string> target_terms() const {
    std::vector<std::string> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(c.tgt_term);
    return out;
  }
};

// One-to-many source-term dictionary for a domain.
struct GlobalDictionary {
  std::string domain;
  std::map<std::string, TermEntry> entries;

  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// ---------------------------------------------------------------------------
// Extraction prompt + output parsing

// Batched extraction prompt: numbered source/target blocks for up to five
// pairs, preceded by the static per-domain exemplars.
inline RenderedPrompt build_extraction_prompt(const PromptLibrary& lib,
                                              std::span<const BitextPair> batch,
                                              const ExtractionExemplars& exemplars) {
  if (batch.empty()) throw Error("extraction batch is empty");
  if (batch.size() > 5)
    throw Error("extraction batch holds " + std::to_string(batch.size()) +
                " pairs; the prompt format allows at most 5");
  std::vector<std::string> srcs, tgts;
  srcs.reserve(batch.size());
  tgts.reserve(batch.size());
  for (const auto& p : batch) {
    srcs.push_back(p.src);
    tgts.push_back(p.tgt);
  }
  return lib.render(TemplateId::term_extract,
                    {{"source_examples", exemplars.sources},
                     {"target_examples", exemplars.targets},
                     {"term_examples", exemplars.terms},
                     {"source_texts", format_numbered_lines("source", srcs)},
                     {"target_texts", format_numbered_lines("target", tgts)}});
}

struct ExtractionParse {
  std::vector<std::vector<TermPair>> slots;  // exactly batch_size lists
  std::vector<std::string> warnings;
};

namespace detail {

inline std::optional<std::string> first_json_array(std::string_view s) {
  size_t start = s.find('[');
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
    else if (c == '[') ++depth;
    else if (c == ']') {
      --depth;
      if (depth == 0) return std::string(s.substr(start, i - start + 1));
    }
  }
  return std::string(s.substr(start));  // unbalanced; the repair pass may close it
}

}  // namespace detail

// Parses `terminology i:` lines (payloads may wrap across lines) into one
// list of term pairs per batch slot. A missing or unparseable slot yields an
// empty list plus a warning; the batch is never aborted.
inline ExtractionParse parse_extraction_output(std::string_view raw,
                                               size_t batch_size) {
  ExtractionParse result;
  result.slots.resize(batch_size);

  std::vector<detail::LineAnchor> anchors =
      detail::find_line_anchors(raw, "terminology");

  for (size_t slot = 1; slot <= batch_size; ++slot) {
    const detail::LineAnchor* found = nullptr;
    size_t found_pos = 0;
    for (size_t a = 0; a < anchors.size(); ++a) {
      if (anchors[a].number == slot) {
        found = &anchors[a];
        found_pos = a;
        break;
      }
    }
    if (!found) {
      result.warnings.push_back("missing terminology line for slot " +
                                std::to_string(slot));
      continue;
    }
    size_t payload_end = raw.size();
    if (found_pos + 1 < anchors.size())
      payload_end = anchors[found_pos + 1].line_begin;
    std::string_view payload(raw.data() + found->payload_begin,
                             payload_end - found->payload_begin);

    auto array_text = detail::first_json_array(payload);
    std::optional<Json> arr;
    if (array_text) arr = detail::parse_json_with_repair(*array_text);
    if (!arr || !arr->is_array()) {
      result.warnings.push_back("unparseable terminology payload for slot " +
                                std::to_string(slot));
      continue;
    }
    for (const auto& item : *arr) {
      if (!item.is_object() || !item.contains("de") || !item.contains("en") ||
          !item["de"].is_string() || !item["en"].is_string()) {
        result.warnings.push_back("skipping malformed term object in slot " +
                                  std::to_string(slot));
        continue;
      }
      TermPair tp;
      tp.src_term = lower_utf8(nfc_latin(trim_view(item["de"].get<std::string>())));
      tp.tgt_term = trim(item["en"].get<std::string>());
      if (tp.src_term.empty() || tp.tgt_term.empty()) {
        result.warnings.push_back("skipping empty term in slot " +
                                  std::to_string(slot));
        continue;
      }
      result.slots[slot - 1].push_back(std::move(tp));
    }
  }
  return result;
}

// Quality gate: both sides of an extracted term must actually occur
// (case-insensitively) in the sentence pair it was extracted from.
inline bool filter_pair(const TermPair& pair, std::string_view source_text,
                        std::string_view target_text) {
  std::string src_needle = lower_utf8(nfc_latin(pair.src_term));
  std::string tgt_needle = lower_utf8(nfc_latin(pair.tgt_term));
  if (src_needle.empty() || tgt_needle.empty()) return false;
  return contains_ci(source_text, src_needle) &&
         contains_ci(target_text, tgt_needle);
}

struct AggregateOptions {
  double usage_threshold = 0.10;  // strict: candidates must exceed this
  bool apply_usage_filter = true;
};

// Counts target-term occurrences per source term, computes usage fractions
// and (by default) drops candidates at or below the usage threshold, then
// entries left without candidates.
inline GlobalDictionary aggregate(std::span<const TermPair> pairs,
                                  const std::string& domain,
                                  const AggregateOptions& opt = {}) {
  std::map<std::string, std::map<std::string, uint32_t>> counts;
  for (const auto& p : pairs) ++counts[p.src_term][p.tgt_term];

  GlobalDictionary dict;
  dict.domain = domain;
  for (auto& [src, tgt_counts] : counts) {
    uint64_t total = 0;
    for (const auto& [tgt, c] : tgt_counts) total += c;
    TermEntry entry;
    entry.src_term = src;
    for (const auto& [tgt, c] : tgt_counts) {
      double usage = static_cast<double>(c) / static_cast<double>(total);
      if (opt.apply_usage_filter && !(usage > opt.usage_threshold)) continue;
      entry.candidates.push_back({tgt, c, usage});
    }
    if (entry.candidates.empty()) continue;
    std::sort(entry.candidates.begin(), entry.candidates.end(),
              [](const TermCandidate& a, const TermCandidate& b) {
                if (a.count != b.count) return a.count > b.count;
                return a.tgt_term < b.tgt_term;
              });
    dict.entries.emplace(src, std::move(entry));
  }
  return dict;
}

struct LookupOptions {
  // substring matching by default ("exact lexical match"); token-boundary
  // matching is available because German compounds make substrings noisy
  bool word_boundaries = false;
};

// All entries whose source term occurs case-insensitively in `source_text`,
// ordered by first occurrence, longer terms first on ties. Overlapping and
// nested matches are all included.
inline std::vector<TermEntry> lookup(const GlobalDictionary& dict,
                                     std::string_view source_text,
                                     const LookupOptions& opt = {}) {
  struct Hit {
    size_t pos;
    const TermEntry* entry;
  };
  std::vector<Hit> hits;
  std::string hay = nfc_latin(source_text);
  for (const auto& [src, entry] : dict.entries) {
    std::string needle = lower_utf8(src);
    if (auto pos = find_ci(hay, needle, opt.word_boundaries))
      hits.push_back({*pos, &entry});
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.pos != b.pos) return a.pos < b.pos;
    if (a.entry->src_term.size() != b.entry->src_term.size())
      return a.entry->src_term.size() > b.entry->src_term.size();
    return a.entry->src_term < b.entry->src_term;
  });
  std::vector<TermEntry> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(*h.entry);
  return out;
}

// ---------------------------------------------------------------------------
// Dictionary persistence: versioned JSONL, one entry per line.

inline void save_dictionary(const GlobalDictionary& dict,
                            const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  Json header;
  header["format"] = "damt.dict";
  header["version"] = 1;
  header["domain"] = dict.domain;
  out << header.dump() << "\n";
  for (const auto& [src, entry] : dict.entries) {
    Json j;
    j["de"] = src;
    Json en = Json::array();
    Json counts = Json::array();
    for (const auto& c : entry.candidates) {
      en.push_back(c.tgt_term);
      counts.push_back(c.count);
    }
    j["en"] = std::move(en);
    j["counts"] = std::move(counts);
    out << j.dump() << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

inline GlobalDictionary load_dictionary(const std::filesystem::path& path) {
  GlobalDictionary dict;
  bool have_header = false;
  for_each_line(path, [&](long line_no, const std::string& line) {
    std::string err;
    auto j = try_parse_json(line, &err);
    if (!j) throw FormatError("bad dictionary line: " + err, line_no);
    if (!have_header) {
      if (j->value("format", "") != "damt.dict")
        throw FormatError("not a damt.dict file", line_no);
      if ((*j)["version"] != 1)
        throw FormatError("unsupported dictionary version", line_no);
      dict.domain = j->value("domain", "");
      have_header = true;
      return;
    }
    TermEntry entry;
    entry.src_term = (*j)["de"].get<std::string>();
    const Json& en = (*j)["en"];
    const Json& counts = (*j)["counts"];
    if (en.size() != counts.size())
      throw FormatError("en/counts length mismatch", line_no);
    uint64_t total = 0;
    for (const auto& c : counts) total += c.get<uint32_t>();
    for (size_t i = 0; i < en.size(); ++i) {
      uint32_t c = counts[i].get<uint32_t>();
      entry.candidates.push_back(
          {en[i].get<std::string>(), c,
           total ? static_cast<double>(c) / static_cast<double>(total) : 0.0});
    }
    dict.entries.emplace(entry.src_term, std::move(entry));
  });
  if (!have_header) throw Error("empty dictionary file: " + path.string());
  return dict;
}

// ---------------------------------------------------------------------------
// Full induction pipeline

struct InductionOptions {
  size_t batch_size = 5;
  size_t concurrency = 8;
  DecodeParams decode;
  AggregateOptions aggregate;
};

struct InductionResult {
  GlobalDictionary dictionary;
  std::vector<size_t> failed_batches;  // indices into the batch sequence
  std::vector<std::string> warnings;
  size_t extracted_pairs = 0;   // term pairs before the usage filter
  size_t filtered_out = 0;      // term pairs rejected by filter_pair
};

// Batches the subset, prompts for extraction, filters each term against its
// originating pair, and aggregates. Batch failures are isolated and listed;
// reruns resume through the completion cache.
inline InductionResult induce_dictionary(std::span<const BitextPair> subset,
                                         LlmClient& client,
                                         const StageRouting& routing,
                                         const PromptLibrary& lib,
                                         const std::string& domain,
                                         const InductionOptions& opt = {}) {
  InductionResult result;
  if (subset.empty()) {
    result.dictionary.domain = domain;
    return result;
  }
  ExtractionExemplars exemplars = lib.term_extract_exemplars(domain);
  auto batches = iter_batches(subset, opt.batch_size == 0 ? 5 : opt.batch_size);

  struct BatchOutcome {
    std::vector<TermPair> accepted;
    std::vector<std::string> warnings;
    size_t extracted = 0;
    size_t filtered_out = 0;
    bool failed = false;
  };
  std::vector<BatchOutcome> outcomes(batches.size());

  parallel_for(batches.size(), opt.concurrency, [&](size_t b) {
    BatchOutcome& outcome = outcomes[b];
    std::span<const BitextPair> batch = batches[b];
    try {
      RenderedPrompt prompt = build_extraction_prompt(lib, batch, exemplars);
      LlmRequest req{prompt, model_for(routing, Stage::extraction), opt.decode,
                     Stage::extraction};
      LlmResponse resp = client.complete(req);
      ExtractionParse parsed = parse_extraction_output(resp.text, batch.size());
      outcome.warnings = std::move(parsed.warnings);
      for (size_t i = 0; i < batch.size(); ++i) {
        for (TermPair& tp : parsed.slots[i]) {
          ++outcome.extracted;
          tp.origin_pair_id = batch[i].id;
          if (filter_pair(tp, batch[i].src, batch[i].tgt))
            outcome.accepted.push_back(std::move(tp));
          else
            ++outcome.filtered_out;
        }
      }
    } catch (const Error& e) {
      outcome.failed = true;
      outcome.warnings.push_back(std::string("batch failed: ") + e.what());
    }
  });

  std::vector<TermPair> all;
  for (size_t b = 0; b < outcomes.size(); ++b) {
    BatchOutcome& outcome = outcomes[b];
    if (outcome.failed) result.failed_batches.push_back(b);
    result.extracted_pairs += outcome.extracted;
    result.filtered_out += outcome.filtered_out;
    for (auto& w : outcome.warnings)
      result.warnings.push_back("batch " + std::to_string(b) + ": " + w);
    for (auto& tp : outcome.accepted) all.push_back(std::move(tp));
  }
  result.dictionary = aggregate(all, domain, opt.aggregate);
  return result;
}

}  // namespace damt
