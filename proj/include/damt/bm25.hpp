#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "damt/corpus.hpp"
#include "damt/jsonl.hpp"
#include "damt/tokenize.hpp"

namespace damt {

struct Bm25Params {
  double k1 = 1.5;
  double b = 0.75;
};

struct RetrievalResult {
  BitextPair pair;
  double score = 0.0;
  size_t rank = 0;  // 1-based
};

// Okapi BM25 over the source sides of a corpus. IDF is floored at 0, so a
// term present in more than half the documents contributes nothing; docs
// whose total score is 0 are never returned. Ties break on ascending
// document number (corpus load order), which keeps rankings reproducible.
class Bm25Index {
 public:
  struct Posting {
    uint32_t doc = 0;
    uint32_t tf = 0;
  };

  static Bm25Index build(const DomainCorpus& corpus, Bm25Params params = {}) {
    if (corpus.empty()) throw Error("cannot index an empty corpus");
    Bm25Index index;
    index.params_ = params;
    index.docs_ = corpus.pairs;
    index.domain_ = corpus.domain;
    index.doc_lengths_.reserve(index.docs_.size());
    uint64_t total_len = 0;
    std::unordered_map<std::string, uint32_t> tf;
    for (uint32_t d = 0; d < index.docs_.size(); ++d) {
      TokenStream ts = tokenize(index.docs_[d].src);
      index.doc_lengths_.push_back(static_cast<uint32_t>(ts.size()));
      total_len += ts.size();
      tf.clear();
      for (const auto& tok : ts.tokens) ++tf[tok];
      for (const auto& [tok, count] : tf)
        index.postings_[tok].push_back({d, count});
    }
    index.avg_doc_length_ =
        index.docs_.empty() ? 0.0
                            : static_cast<double>(total_len) / index.docs_.size();
    // postings were appended in ascending doc order already; keep that
    // invariant explicit for merged/loaded indexes
    for (auto& [tok, plist] : index.postings_)
      std::sort(plist.begin(), plist.end(),
                [](const Posting& a, const Posting& b) { return a.doc < b.doc; });
    return index;
  }

  size_t doc_count() const { return docs_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  const Bm25Params& params() const { return params_; }
  const std::string& domain() const { return domain_; }
  const BitextPair& doc(size_t ordinal) const { return docs_.at(ordinal); }
  uint32_t doc_length(size_t ordinal) const { return doc_lengths_.at(ordinal); }
  const std::unordered_map<std::string, std::vector<Posting>>& postings() const {
    return postings_;
  }

  double idf(const std::string& token) const {
    auto it = postings_.find(token);
    if (it == postings_.end()) return 0.0;
    double df = static_cast<double>(it->second.size());
    double n = static_cast<double>(docs_.size());
    double v = std::log((n - df + 0.5) / (df + 0.5));
    return v > 0.0 ? v : 0.0;
  }

  std::vector<RetrievalResult> query(std::string_view text, size_t k) const {
    if (k == 0) throw Error("k must be >= 1");
    TokenStream q = tokenize(text);
    std::unordered_map<uint32_t, double> scores;
    for (const auto& tok : q.tokens) {
      auto it = postings_.find(tok);
      if (it == postings_.end()) continue;
      double w = idf(tok);
      if (w <= 0.0) continue;
      for (const Posting& p : it->second) {
        double len_norm =
            1.0 - params_.b + params_.b * doc_lengths_[p.doc] / avg_doc_length_;
        double tf = static_cast<double>(p.tf);
        scores[p.doc] += w * tf * (params_.k1 + 1.0) / (tf + params_.k1 * len_norm);
      }
    }
    std::vector<std::pair<uint32_t, double>> ranked;
    ranked.reserve(scores.size());
    for (const auto& [doc, score] : scores)
      if (score > 0.0) ranked.emplace_back(doc, score);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > k) ranked.resize(k);
    std::vector<RetrievalResult> out;
    out.reserve(ranked.size());
    for (size_t i = 0; i < ranked.size(); ++i)
      out.push_back({docs_[ranked[i].first], ranked[i].second, i + 1});
    return out;
  }

  // Union of top-k result ids over all queries; the train entries that are
  // "relevant" to a test set and worth sending to terminology extraction.
  std::set<std::string> relevant_subset(const std::vector<std::string>& queries,
                                        size_t k) const {
    std::set<std::string> ids;
    for (const auto& q : queries)
      for (const auto& r : query(q, k)) ids.insert(r.pair.id);
    return ids;
  }

  // JSONL dump: a versioned header, one line per document, then one line per
  // token with its postings, sorted for reproducibility.
  void save(const std::filesystem::path& path) const {
    std::ofstream out = open_output(path);
    Json header;
    header["format"] = "damt.bm25";
    header["version"] = 1;
    header["k1"] = params_.k1;
    header["b"] = params_.b;
    header["doc_count"] = docs_.size();
    header["avg_doc_length"] = avg_doc_length_;
    header["domain"] = domain_;
    out << header.dump() << "\n";
    for (uint32_t d = 0; d < docs_.size(); ++d) {
      Json j;
      j["doc"] = d;
      j["id"] = docs_[d].id;
      j["src"] = docs_[d].src;
      j["tgt"] = docs_[d].tgt;
      j["domain"] = docs_[d].domain;
      j["len"] = doc_lengths_[d];
      out << j.dump() << "\n";
    }
    std::vector<std::string> tokens;
    tokens.reserve(postings_.size());
    for (const auto& [tok, _] : postings_) tokens.push_back(tok);
    std::sort(tokens.begin(), tokens.end());
    for (const auto& tok : tokens) {
      Json j;
      j["t"] = tok;
      Json plist = Json::array();
      for (const Posting& p : postings_.at(tok))
        plist.push_back(Json::array({p.doc, p.tf}));
      j["p"] = std::move(plist);
      out << j.dump() << "\n";
    }
    if (!out) throw Error("failed writing " + path.string());
  }

  static Bm25Index load(const std::filesystem::path& path) {
    Bm25Index index;
    bool have_header = false;
    size_t expected_docs = 0;
    for_each_line(path, [&](long line_no, const std::string& line) {
      std::string err;
      auto j = try_parse_json(line, &err);
      if (!j) throw FormatError("bad index line: " + err, line_no);
      if (!have_header) {
        if (!j->contains("format") || (*j)["format"] != "damt.bm25")
          throw FormatError("not a damt.bm25 index file", line_no);
        if ((*j)["version"] != 1)
          throw FormatError("unsupported index version", line_no);
        index.params_.k1 = (*j)["k1"];
        index.params_.b = (*j)["b"];
        index.avg_doc_length_ = (*j)["avg_doc_length"];
        index.domain_ = j->value("domain", "");
        expected_docs = (*j)["doc_count"];
        index.docs_.resize(expected_docs);
        index.doc_lengths_.resize(expected_docs);
        have_header = true;
        return;
      }
      if (j->contains("doc")) {
        uint32_t d = (*j)["doc"];
        if (d >= expected_docs) throw FormatError("doc ordinal out of range", line_no);
        index.docs_[d] = BitextPair{(*j)["id"], (*j)["src"], (*j)["tgt"],
                                    j->value("domain", "")};
        index.doc_lengths_[d] = (*j)["len"];
      } else if (j->contains("t")) {
        std::vector<Posting>& plist = index.postings_[(*j)["t"].get<std::string>()];
        for (const auto& pair : (*j)["p"])
          plist.push_back({pair.at(0).get<uint32_t>(), pair.at(1).get<uint32_t>()});
      } else {
        throw FormatError("unrecognized index line", line_no);
      }
    });
    if (!have_header) throw Error("empty index file: " + path.string());
    return index;
  }

 private:
  Bm25Params params_;
  std::string domain_;
  std::vector<BitextPair> docs_;
  std::vector<uint32_t> doc_lengths_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  double avg_doc_length_ = 0.0;
};

}  // namespace damt
