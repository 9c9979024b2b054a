#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "damt/error.hpp"
#include "damt/jsonl.hpp"
#include "damt/text.hpp"

namespace damt {

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "test";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

// One source/target sentence pair. The unit of datastores, demonstrations
// and terminology extraction.
struct BitextPair {
  std::string id;
  std::string src;
  std::string tgt;
  std::string domain;

  bool operator==(const BitextPair&) const = default;
};

struct DomainCorpus {
  std::string domain;
  Split split = Split::test;
  std::vector<BitextPair> pairs;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

enum class CorpusFormat { jsonl, tsv, parallel_text };

inline CorpusFormat corpus_format_from_string(std::string_view s) {
  if (s == "jsonl") return CorpusFormat::jsonl;
  if (s == "tsv") return CorpusFormat::tsv;
  if (s == "parallel-text" || s == "parallel_text" || s == "parallel")
    return CorpusFormat::parallel_text;
  throw ConfigError("unknown corpus format '" + std::string(s) + "'");
}

struct LoadReport {
  size_t loaded = 0;              // pairs kept after validation + dedup
  size_t duplicates_dropped = 0;  // exact (src, tgt) duplicates
  std::vector<std::pair<long, std::string>> invalid;  // (line, reason)
};

struct LoadedCorpus {
  DomainCorpus corpus;
  LoadReport report;
};

struct LoadOptions {
  CorpusFormat format = CorpusFormat::jsonl;
  std::string domain_filter;           // keep only this domain when non-empty
  std::string default_domain = "unknown";
  Split default_split = Split::test;
  // parallel-text: `path` names the source file; the target file is `path`
  // with the last extension replaced by `tgt_ext`.
  std::string src_ext = "de";
  std::string tgt_ext = "en";
};

namespace detail {

struct RawRecord {
  long line = 0;
  std::string id, src, tgt, domain, split;
};

inline void read_jsonl_records(const std::filesystem::path& path,
                               std::vector<RawRecord>& out, LoadReport& report) {
  for_each_line(path, [&](long line_no, const std::string& line) {
    std::string err;
    auto j = try_parse_json(line, &err);
    if (!j || !j->is_object()) {
      report.invalid.emplace_back(line_no, "malformed record: " + err);
      return;
    }
    RawRecord r;
    r.line = line_no;
    if (j->contains("id") && (*j)["id"].is_string()) r.id = (*j)["id"];
    if (j->contains("src") && (*j)["src"].is_string()) r.src = (*j)["src"];
    if (j->contains("tgt") && (*j)["tgt"].is_string()) r.tgt = (*j)["tgt"];
    if (j->contains("domain") && (*j)["domain"].is_string()) r.domain = (*j)["domain"];
    if (j->contains("split") && (*j)["split"].is_string()) r.split = (*j)["split"];
    out.push_back(std::move(r));
  });
}

inline void read_tsv_records(const std::filesystem::path& path,
                             std::vector<RawRecord>& out, LoadReport& report) {
  for_each_line(path, [&](long line_no, const std::string& line) {
    std::vector<std::string> cols;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    RawRecord r;
    r.line = line_no;
    if (cols.size() == 2) {
      r.src = cols[0];
      r.tgt = cols[1];
    } else if (cols.size() == 3) {
      r.id = cols[0];
      r.src = cols[1];
      r.tgt = cols[2];
    } else if (cols.size() >= 4) {
      r.id = cols[0];
      r.src = cols[1];
      r.tgt = cols[2];
      r.domain = cols[3];
    } else {
      report.invalid.emplace_back(line_no, "expected 2-4 tab-separated columns");
      return;
    }
    out.push_back(std::move(r));
  });
}

inline void read_parallel_records(const std::filesystem::path& src_path,
                                  const LoadOptions& opt,
                                  std::vector<RawRecord>& out,
                                  LoadReport& report) {
  std::filesystem::path tgt_path = src_path;
  tgt_path.replace_extension("." + opt.tgt_ext);
  if (tgt_path == src_path)
    throw ConfigError("parallel-text target path equals source path: " +
                      src_path.string());
  std::ifstream src_in = open_input(src_path);
  std::ifstream tgt_in = open_input(tgt_path);
  std::string src_line, tgt_line;
  long line_no = 0;
  while (true) {
    bool more_src = static_cast<bool>(std::getline(src_in, src_line));
    bool more_tgt = static_cast<bool>(std::getline(tgt_in, tgt_line));
    if (!more_src && !more_tgt) break;
    ++line_no;
    if (more_src != more_tgt) {
      report.invalid.emplace_back(line_no, "source/target line count mismatch");
      break;
    }
    if (!src_line.empty() && src_line.back() == '\r') src_line.pop_back();
    if (!tgt_line.empty() && tgt_line.back() == '\r') tgt_line.pop_back();
    RawRecord r;
    r.line = line_no;
    r.src = src_line;
    r.tgt = tgt_line;
    out.push_back(std::move(r));
  }
}

}  // namespace detail

// Parses a corpus file into per-(domain, split) groups. Text is trimmed and
// NFC-normalized; invalid records are reported (not fatal); exact (src, tgt)
// duplicates within a group are collapsed.
inline std::vector<LoadedCorpus> load_corpora(const std::filesystem::path& path,
                                              const LoadOptions& opt = {}) {
  std::vector<detail::RawRecord> records;
  LoadReport parse_report;
  switch (opt.format) {
    case CorpusFormat::jsonl:
      detail::read_jsonl_records(path, records, parse_report);
      break;
    case CorpusFormat::tsv:
      detail::read_tsv_records(path, records, parse_report);
      break;
    case CorpusFormat::parallel_text:
      detail::read_parallel_records(path, opt, records, parse_report);
      break;
  }

  struct Group {
    DomainCorpus corpus;
    LoadReport report;
    std::set<std::pair<std::string, std::string>> seen_texts;
    std::set<std::string> seen_ids;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;  // (domain, split)
  std::vector<std::pair<std::string, std::string>> order;

  long auto_id = 0;
  for (auto& r : records) {
    ++auto_id;
    std::string domain = r.domain.empty() ? opt.default_domain : trim(r.domain);
    Split split = opt.default_split;
    if (!r.split.empty()) {
      try {
        split = split_from_string(trim(r.split));
      } catch (const FormatError&) {
        parse_report.invalid.emplace_back(r.line, "unknown split '" + r.split + "'");
        continue;
      }
    }
    if (!opt.domain_filter.empty() && domain != opt.domain_filter) continue;

    BitextPair pair;
    pair.src = nfc_latin(trim_view(r.src));
    pair.tgt = nfc_latin(trim_view(r.tgt));
    pair.domain = domain;
    pair.id = r.id.empty() ? domain + "-" + std::to_string(auto_id) : trim(r.id);

    auto key = std::make_pair(domain, to_string(split));
    auto it = groups.find(key);
    if (it == groups.end()) {
      it = groups.emplace(key, Group{}).first;
      it->second.corpus.domain = domain;
      it->second.corpus.split = split;
      order.push_back(key);
    }
    Group& g = it->second;

    if (pair.src.empty() || pair.tgt.empty()) {
      g.report.invalid.emplace_back(r.line, "empty source or target text");
      continue;
    }
    if (!g.seen_ids.insert(pair.id).second) {
      g.report.invalid.emplace_back(r.line, "duplicate id '" + pair.id + "'");
      continue;
    }
    if (!g.seen_texts.insert({pair.src, pair.tgt}).second) {
      ++g.report.duplicates_dropped;
      continue;
    }
    g.corpus.pairs.push_back(std::move(pair));
  }

  std::vector<LoadedCorpus> out;
  for (auto& key : order) {
    Group& g = groups.at(key);
    g.report.loaded = g.corpus.pairs.size();
    // parse-level problems are attached to the first group for visibility
    out.push_back({std::move(g.corpus), std::move(g.report)});
  }
  if (!out.empty()) {
    auto& head = out.front().report;
    head.invalid.insert(head.invalid.begin(), parse_report.invalid.begin(),
                        parse_report.invalid.end());
  } else if (!parse_report.invalid.empty()) {
    LoadedCorpus empty;
    empty.report = std::move(parse_report);
    out.push_back(std::move(empty));
  }
  return out;
}

// Loads a corpus expected to hold a single (domain, split) group.
inline LoadedCorpus load_corpus(const std::filesystem::path& path,
                                const LoadOptions& opt = {}) {
  auto groups = load_corpora(path, opt);
  size_t nonempty = 0;
  for (const auto& g : groups)
    if (!g.corpus.empty()) ++nonempty;
  if (nonempty == 0) throw Error("empty corpus: " + path.string());
  if (nonempty > 1)
    throw Error("corpus " + path.string() +
                " mixes domains/splits; set a domain filter or load groups");
  for (auto& g : groups)
    if (!g.corpus.empty()) return std::move(g);
  throw Error("empty corpus: " + path.string());  // unreachable
}

// Canonical interchange serialization: line-delimited JSON, UTF-8.
inline void save_corpus(const DomainCorpus& corpus,
                        const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  for (const auto& p : corpus.pairs) {
    Json j;
    j["id"] = p.id;
    j["src"] = p.src;
    j["tgt"] = p.tgt;
    j["domain"] = p.domain;
    j["split"] = to_string(corpus.split);
    out << j.dump() << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

// Order-preserving partition into chunks of `n`; the final chunk may be
// smaller. Views into `pairs` stay valid as long as the container does.
inline std::vector<std::span<const BitextPair>> iter_batches(
    std::span<const BitextPair> pairs, size_t n) {
  if (n == 0) throw Error("batch size must be >= 1");
  std::vector<std::span<const BitextPair>> out;
  for (size_t i = 0; i < pairs.size(); i += n)
    out.push_back(pairs.subspan(i, std::min(n, pairs.size() - i)));
  return out;
}

inline std::vector<std::span<const BitextPair>> iter_batches(
    const DomainCorpus& corpus, size_t n) {
  return iter_batches(std::span<const BitextPair>(corpus.pairs), n);
}

}  // namespace damt
