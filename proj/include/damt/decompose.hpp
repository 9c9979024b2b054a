#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "damt/bm25.hpp"
#include "damt/corpus.hpp"
#include "damt/parallel.hpp"
#include "damt/terminology.hpp"

namespace damt {

// Terminology built only from the k demonstrations retrieved for one test
// instance. Every candidate is licensed by at least one of those
// demonstrations; no usage filtering is applied at these tiny counts.
struct LocalTerminology {
  std::string source_id;
  std::vector<TermEntry> entries;  // sorted by src_term

  bool empty() const { return entries.empty(); }
};

inline constexpr std::string_view kMaskToken = "<MASK>";

struct MaskedSpan {
  enum class Side { src, tgt };
  Side side = Side::src;
  size_t begin = 0;  // byte offsets into the original text
  size_t end = 0;
  std::string original;
};

inline std::string to_string(MaskedSpan::Side s) {
  return s == MaskedSpan::Side::src ? "src" : "tgt";
}

// A demonstration with its terminology spans replaced by the mask token.
// Replacing the masks with the recorded originals reconstructs the
// demonstration exactly.
struct StyleTemplate {
  std::string source_id;  // test instance this template was built for
  std::string demo_id;    // the masked demonstration's pair id
  std::string src_masked;
  std::string tgt_masked;
  std::vector<MaskedSpan> spans;  // sorted by (side, begin)

  size_t mask_count(MaskedSpan::Side side) const {
    size_t n = 0;
    for (const auto& s : spans)
      if (s.side == side) ++n;
    return n;
  }
};

namespace detail {

struct SpanCandidate {
  size_t begin = 0;
  size_t end = 0;
};

// Longest-match-first, non-overlapping span selection. Matches are aligned
// to token boundaries so masking removes whole tokens; nested or overlapping
// shorter matches lose to the longer span.
inline std::vector<SpanCandidate> select_mask_spans(
    std::string_view text, const std::vector<std::string>& needles_lower) {
  std::vector<SpanCandidate> candidates;
  for (const auto& needle : needles_lower) {
    if (needle.empty()) continue;
    for (const CiMatch& m : find_all_ci(text, needle, /*word_boundaries=*/true))
      candidates.push_back({m.begin, m.end});
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const SpanCandidate& a, const SpanCandidate& b) {
              size_t la = a.end - a.begin, lb = b.end - b.begin;
              if (la != lb) return la > lb;
              if (a.begin != b.begin) return a.begin < b.begin;
              return a.end < b.end;
            });
  std::vector<SpanCandidate> accepted;
  for (const auto& c : candidates) {
    bool overlaps = false;
    for (const auto& a : accepted) {
      if (c.begin < a.end && a.begin < c.end) {
        overlaps = true;
        break;
      }
    }
    if (!overlaps) accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const SpanCandidate& a, const SpanCandidate& b) {
              return a.begin < b.begin;
            });
  return accepted;
}

inline std::string apply_mask(std::string_view text,
                              const std::vector<SpanCandidate>& spans,
                              MaskedSpan::Side side,
                              std::vector<MaskedSpan>& out_spans) {
  std::string masked;
  size_t cursor = 0;
  for (const auto& s : spans) {
    masked.append(text.substr(cursor, s.begin - cursor));
    masked.append(kMaskToken);
    out_spans.push_back(
        {side, s.begin, s.end, std::string(text.substr(s.begin, s.end - s.begin))});
    cursor = s.end;
  }
  masked.append(text.substr(cursor));
  return masked;
}

}  // namespace detail

// Masks every case-insensitive, token-aligned occurrence of the local
// terminology's source terms in pair.src and of its licensed target terms in
// pair.tgt. Longer terms win over nested shorter ones.
inline StyleTemplate mask_terms(const BitextPair& pair,
                                const LocalTerminology& terms) {
  std::vector<std::string> src_needles, tgt_needles;
  for (const auto& e : terms.entries) {
    src_needles.push_back(lower_utf8(nfc_latin(e.src_term)));
    for (const auto& c : e.candidates)
      tgt_needles.push_back(lower_utf8(nfc_latin(c.tgt_term)));
  }
  StyleTemplate st;
  st.source_id = terms.source_id;
  st.demo_id = pair.id;
  auto src_spans = detail::select_mask_spans(pair.src, src_needles);
  auto tgt_spans = detail::select_mask_spans(pair.tgt, tgt_needles);
  st.src_masked = detail::apply_mask(pair.src, src_spans, MaskedSpan::Side::src, st.spans);
  st.tgt_masked = detail::apply_mask(pair.tgt, tgt_spans, MaskedSpan::Side::tgt, st.spans);
  return st;
}

// Inverse of mask_terms: substitutes the recorded originals back for the
// mask tokens, in order, on one side.
inline std::string unmask(std::string_view masked,
                          const StyleTemplate& st, MaskedSpan::Side side) {
  std::string out;
  size_t cursor = 0;
  size_t next_span = 0;
  std::vector<const MaskedSpan*> side_spans;
  for (const auto& s : st.spans)
    if (s.side == side) side_spans.push_back(&s);
  while (cursor < masked.size()) {
    size_t pos = masked.find(kMaskToken, cursor);
    if (pos == std::string::npos) break;
    out.append(masked.substr(cursor, pos - cursor));
    if (next_span >= side_spans.size())
      throw Error("more mask tokens than recorded spans");
    out.append(side_spans[next_span]->original);
    ++next_span;
    cursor = pos + kMaskToken.size();
  }
  out.append(masked.substr(cursor));
  if (next_span != side_spans.size())
    throw Error("fewer mask tokens than recorded spans");
  return out;
}

// Runs the extraction prompt over the k demonstrations only (batched by 5),
// filters against the originating demonstration, and keeps every licensed
// candidate (no usage threshold at counts this small).
inline LocalTerminology extract_local_terms(std::span<const BitextPair> demos,
                                            LlmClient& client,
                                            const StageRouting& routing,
                                            const PromptLibrary& lib,
                                            const std::string& domain,
                                            const std::string& source_id = {},
                                            DecodeParams decode = {}) {
  if (demos.empty()) throw Error("extract_local_terms needs at least one demonstration");
  ExtractionExemplars exemplars = lib.term_extract_exemplars(domain);
  std::vector<TermPair> accepted;
  for (std::span<const BitextPair> batch : iter_batches(demos, 5)) {
    RenderedPrompt prompt = build_extraction_prompt(lib, batch, exemplars);
    LlmRequest req{prompt, model_for(routing, Stage::extraction), decode,
                   Stage::extraction};
    LlmResponse resp = client.complete(req);
    ExtractionParse parsed = parse_extraction_output(resp.text, batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      for (TermPair& tp : parsed.slots[i]) {
        tp.origin_pair_id = batch[i].id;
        if (filter_pair(tp, batch[i].src, batch[i].tgt))
          accepted.push_back(std::move(tp));
      }
    }
  }
  AggregateOptions opt;
  opt.apply_usage_filter = false;
  GlobalDictionary local = aggregate(accepted, domain, opt);
  LocalTerminology out;
  out.source_id = source_id;
  for (auto& [src, entry] : local.entries) out.entries.push_back(entry);
  return out;
}

// Per-instance output of the decomposition: the local terminology and one
// style template per retrieved demonstration.
struct InstanceDecomposition {
  std::string source_id;
  std::vector<std::string> demo_ids;
  LocalTerminology local_terms;
  std::vector<StyleTemplate> style_templates;
  bool failed = false;
  std::string error;
};

struct DecompositionOptions {
  size_t k = 3;
  size_t concurrency = 8;
  DecodeParams decode;
};

// For each test instance: retrieve k demonstrations, extract the local
// terminology from exactly those, and mask each demonstration with it.
// Per-instance failures are isolated and reported on the result.
inline std::vector<InstanceDecomposition> run_decomposition(
    const DomainCorpus& test_corpus, const Bm25Index& index, LlmClient& client,
    const StageRouting& routing, const PromptLibrary& lib,
    const DecompositionOptions& opt = {}) {
  std::vector<InstanceDecomposition> results(test_corpus.pairs.size());
  parallel_for(test_corpus.pairs.size(), opt.concurrency, [&](size_t i) {
    const BitextPair& instance = test_corpus.pairs[i];
    InstanceDecomposition& r = results[i];
    r.source_id = instance.id;
    try {
      std::vector<RetrievalResult> retrieved = index.query(instance.src, opt.k);
      std::vector<BitextPair> demos;
      for (const auto& rr : retrieved) {
        demos.push_back(rr.pair);
        r.demo_ids.push_back(rr.pair.id);
      }
      if (!demos.empty()) {
        r.local_terms = extract_local_terms(demos, client, routing, lib,
                                            test_corpus.domain, instance.id,
                                            opt.decode);
      } else {
        r.local_terms.source_id = instance.id;
      }
      for (const auto& d : demos)
        r.style_templates.push_back(mask_terms(d, r.local_terms));
    } catch (const Error& e) {
      r.failed = true;
      r.error = e.what();
    }
  });
  return results;
}

// ---------------------------------------------------------------------------
// Artifact serialization (JSONL, one instance per line)

inline Json local_terms_to_json(const LocalTerminology& lt) {
  Json entries = Json::array();
  for (const auto& e : lt.entries) {
    Json j;
    j["de"] = e.src_term;
    j["en"] = e.target_terms();
    entries.push_back(std::move(j));
  }
  Json j;
  j["source_id"] = lt.source_id;
  j["local_terms"] = std::move(entries);
  return j;
}

inline Json style_templates_to_json(const std::string& source_id,
                                    const std::vector<StyleTemplate>& templates) {
  Json arr = Json::array();
  for (const auto& st : templates) {
    Json spans = Json::array();
    for (const auto& s : st.spans)
      spans.push_back(Json::array(
          {to_string(s.side), s.begin, s.end, s.original}));
    Json j;
    j["demo_id"] = st.demo_id;
    j["src_masked"] = st.src_masked;
    j["tgt_masked"] = st.tgt_masked;
    j["spans"] = std::move(spans);
    arr.push_back(std::move(j));
  }
  Json j;
  j["source_id"] = source_id;
  j["style_templates"] = std::move(arr);
  return j;
}

}  // namespace damt
