#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "damt/error.hpp"
#include "damt/jsonl.hpp"
#include "damt/prompting.hpp"
#include "damt/text.hpp"
#include "damt/tokenize.hpp"

namespace damt {

// One scored test instance: everything needed to audit the translation.
struct TranslationRecord {
  std::string source_id;
  Setting setting = Setting::zero_shot;
  std::string domain;
  std::string src;
  std::string hyp;        // parsed translation
  std::string ref;        // gold target
  std::string raw;        // untouched LLM output
  std::string prompt_hash;
  Json knowledge;         // attached demo/term artifact ids
};

struct MetricReport {
  Setting setting = Setting::zero_shot;
  std::string domain;
  std::string metric;
  double corpus_score = 0.0;
  std::vector<double> segment_scores;
};

struct SignificanceResult {
  Setting baseline = Setting::zero_shot;
  Setting contender = Setting::zero_shot;
  std::string domain;
  double delta = 0.0;    // mean(contender) - mean(baseline)
  double p_value = 1.0;
  double alpha = 0.05;
  bool significant = false;
  int resamples = 1000;
  uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// chrF: character n-gram F-score, n = 1..6, beta = 2. Whitespace is removed
// before n-gram extraction. Corpus score aggregates the per-order statistics
// over all segments; orders with no n-grams on either side are skipped, so a
// perfect hypothesis scores exactly 100 regardless of segment length.

namespace detail {

inline constexpr int kChrfOrder = 6;
inline constexpr double kChrfBeta = 2.0;

struct ChrfStats {
  // per order: matched, hypothesis count, reference count
  std::array<uint64_t, kChrfOrder> match{};
  std::array<uint64_t, kChrfOrder> hyp{};
  std::array<uint64_t, kChrfOrder> ref{};

  void add(const ChrfStats& o) {
    for (int i = 0; i < kChrfOrder; ++i) {
      match[i] += o.match[i];
      hyp[i] += o.hyp[i];
      ref[i] += o.ref[i];
    }
  }
};

inline std::u32string chrf_chars(std::string_view text) {
  std::u32string out;
  size_t i = 0;
  while (i < text.size()) {
    char32_t cp = utf8_next(text, i);
    if (cp == kInvalidCp || is_space_cp(cp)) continue;
    out.push_back(cp);
  }
  return out;
}

inline ChrfStats chrf_segment_stats(std::string_view hyp, std::string_view ref) {
  std::u32string h = chrf_chars(hyp);
  std::u32string r = chrf_chars(ref);
  ChrfStats stats;
  for (int n = 1; n <= kChrfOrder; ++n) {
    std::map<std::u32string, uint64_t> ref_counts;
    if (r.size() >= static_cast<size_t>(n)) {
      for (size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[r.substr(i, n)];
      stats.ref[n - 1] = r.size() - n + 1;
    }
    if (h.size() >= static_cast<size_t>(n)) {
      std::map<std::u32string, uint64_t> hyp_counts;
      for (size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[h.substr(i, n)];
      stats.hyp[n - 1] = h.size() - n + 1;
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          stats.match[n - 1] += std::min(c, it->second);
      }
    }
  }
  return stats;
}

inline double chrf_from_stats(const ChrfStats& s) {
  double sum = 0.0;
  int effective = 0;
  const double b2 = kChrfBeta * kChrfBeta;
  for (int i = 0; i < kChrfOrder; ++i) {
    if (s.hyp[i] == 0 && s.ref[i] == 0) continue;
    ++effective;
    double prec = s.hyp[i] ? static_cast<double>(s.match[i]) / s.hyp[i] : 0.0;
    double rec = s.ref[i] ? static_cast<double>(s.match[i]) / s.ref[i] : 0.0;
    if (prec + rec > 0.0) sum += (1.0 + b2) * prec * rec / (b2 * prec + rec);
  }
  return effective ? 100.0 * sum / effective : 0.0;
}

}  // namespace detail

inline MetricReport chrf(const std::vector<TranslationRecord>& records) {
  if (records.empty()) throw Error("chrf: no records");
  MetricReport report;
  report.metric = "chrf";
  report.setting = records.front().setting;
  report.domain = records.front().domain;
  detail::ChrfStats corpus;
  for (const auto& r : records) {
    detail::ChrfStats seg = detail::chrf_segment_stats(r.hyp, r.ref);
    report.segment_scores.push_back(detail::chrf_from_stats(seg));
    corpus.add(seg);
  }
  report.corpus_score = detail::chrf_from_stats(corpus);
  return report;
}

// ---------------------------------------------------------------------------
// BLEU: corpus-level 4-gram precision with brevity penalty, computed on the
// library tokenizer's lowercased tokens. Smoothing is configurable and
// recorded in the metric name; segment scores use the same configuration.

enum class BleuSmoothing { none, floor, add_one };

struct BleuOptions {
  BleuSmoothing smoothing = BleuSmoothing::none;
  double floor_value = 0.1;  // pseudo-matches when smoothing == floor
};

namespace detail {

inline constexpr int kBleuOrder = 4;

struct BleuStats {
  std::array<uint64_t, kBleuOrder> match{};
  std::array<uint64_t, kBleuOrder> total{};
  uint64_t hyp_len = 0;
  uint64_t ref_len = 0;

  void add(const BleuStats& o) {
    for (int i = 0; i < kBleuOrder; ++i) {
      match[i] += o.match[i];
      total[i] += o.total[i];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
  }
};

inline BleuStats bleu_segment_stats(std::string_view hyp, std::string_view ref) {
  std::vector<std::string> h = tokenize(hyp).tokens;
  std::vector<std::string> r = tokenize(ref).tokens;
  BleuStats stats;
  stats.hyp_len = h.size();
  stats.ref_len = r.size();
  for (int n = 1; n <= kBleuOrder; ++n) {
    if (h.size() < static_cast<size_t>(n)) break;
    std::map<std::vector<std::string>, uint64_t> ref_counts;
    for (size_t i = 0; n <= static_cast<int>(r.size()) && i + n <= r.size(); ++i)
      ++ref_counts[std::vector<std::string>(r.begin() + i, r.begin() + i + n)];
    std::map<std::vector<std::string>, uint64_t> hyp_counts;
    for (size_t i = 0; i + n <= h.size(); ++i)
      ++hyp_counts[std::vector<std::string>(h.begin() + i, h.begin() + i + n)];
    stats.total[n - 1] = h.size() - n + 1;
    for (const auto& [gram, c] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end())
        stats.match[n - 1] += std::min(c, it->second);
    }
  }
  return stats;
}

inline double bleu_from_stats(const BleuStats& s, const BleuOptions& opt) {
  if (s.hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int i = 0; i < kBleuOrder; ++i) {
    double match = static_cast<double>(s.match[i]);
    double total = static_cast<double>(s.total[i]);
    if (opt.smoothing == BleuSmoothing::add_one && i > 0) {
      match += 1.0;
      total += 1.0;
    } else if (opt.smoothing == BleuSmoothing::floor && match == 0.0) {
      match = opt.floor_value;
    }
    if (total == 0.0 || match == 0.0) return 0.0;
    log_precision += std::log(match / total);
  }
  double bp = 1.0;
  if (s.hyp_len < s.ref_len)
    bp = std::exp(1.0 - static_cast<double>(s.ref_len) / s.hyp_len);
  return 100.0 * bp * std::exp(log_precision / kBleuOrder);
}

}  // namespace detail

inline MetricReport bleu(const std::vector<TranslationRecord>& records,
                         const BleuOptions& opt = {}) {
  if (records.empty()) throw Error("bleu: no records");
  MetricReport report;
  report.metric = opt.smoothing == BleuSmoothing::none
                      ? "bleu"
                      : (opt.smoothing == BleuSmoothing::floor ? "bleu[floor]"
                                                               : "bleu[add1]");
  report.setting = records.front().setting;
  report.domain = records.front().domain;
  detail::BleuStats corpus;
  for (const auto& r : records) {
    detail::BleuStats seg = detail::bleu_segment_stats(r.hyp, r.ref);
    report.segment_scores.push_back(detail::bleu_from_stats(seg, opt));
    corpus.add(seg);
  }
  report.corpus_score = detail::bleu_from_stats(corpus, opt);
  return report;
}

// ---------------------------------------------------------------------------
// External-scorer protocol: one JSONL request line {"src","mt","ref"} per
// segment on the child's stdin, one JSONL response line {"score": x} per
// request on its stdout, same order. The corpus score is the segment mean.

namespace detail {

struct ScorerOutput {
  std::vector<std::string> lines;
  int exit_code = 0;
};

inline ScorerOutput run_child_process(const std::string& command,
                                      const std::string& input) {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
    throw ScorerError("failed to create pipes");
  pid_t pid = fork();
  if (pid < 0) throw ScorerError("fork failed");
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);

  // writer thread: the child may not start reading until we finish writing,
  // and vice versa, so never block on both ends from one thread
  std::thread writer([fd = in_pipe[1], &input] {
    size_t off = 0;
    while (off < input.size()) {
      ssize_t n = write(fd, input.data() + off, input.size() - off);
      if (n <= 0) break;
      off += static_cast<size_t>(n);
    }
    close(fd);
  });

  std::string stdout_data;
  char buf[4096];
  ssize_t n;
  while ((n = read(out_pipe[0], buf, sizeof(buf))) > 0)
    stdout_data.append(buf, static_cast<size_t>(n));
  close(out_pipe[0]);
  writer.join();

  int status = 0;
  waitpid(pid, &status, 0);
  ScorerOutput out;
  out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  out.lines = split_lines(stdout_data);
  std::erase_if(out.lines, [](const std::string& l) { return trim_view(l).empty(); });
  return out;
}

}  // namespace detail

inline MetricReport external_score(const std::vector<TranslationRecord>& records,
                                   const std::string& scorer_cmd) {
  if (records.empty()) throw Error("external_score: no records");
  std::string input;
  for (const auto& r : records) {
    Json j;
    j["src"] = r.src;
    j["mt"] = r.hyp;
    j["ref"] = r.ref;
    input += j.dump();
    input += "\n";
  }
  detail::ScorerOutput out = detail::run_child_process(scorer_cmd, input);
  if (out.exit_code != 0)
    throw ScorerError("scorer '" + scorer_cmd + "' exited with code " +
                      std::to_string(out.exit_code));
  if (out.lines.size() != records.size())
    throw ScorerError("scorer returned " + std::to_string(out.lines.size()) +
                      " lines for " + std::to_string(records.size()) + " inputs");
  MetricReport report;
  report.metric = "external:" + scorer_cmd;
  report.setting = records.front().setting;
  report.domain = records.front().domain;
  double sum = 0.0;
  for (size_t i = 0; i < out.lines.size(); ++i) {
    std::string err;
    auto j = try_parse_json(out.lines[i], &err);
    if (!j || !j->contains("score") || !(*j)["score"].is_number())
      throw ScorerError("bad scorer response line " + std::to_string(i + 1));
    double score = (*j)["score"];
    report.segment_scores.push_back(score);
    sum += score;
  }
  report.corpus_score = sum / static_cast<double>(records.size());
  return report;
}

// ---------------------------------------------------------------------------
// Paired bootstrap resampling over segment scores. p is the fraction of
// resamples in which the contender's mean fails to beat the baseline's
// (mean(b) <= mean(a)); significance is p < alpha. Index sampling uses
// mt19937_64 output reduced modulo n, so results are reproducible across
// standard libraries for a fixed seed.

inline SignificanceResult paired_bootstrap(const std::vector<double>& baseline,
                                           const std::vector<double>& contender,
                                           int resamples = 1000,
                                           uint64_t seed = 0,
                                           double alpha = 0.05) {
  if (baseline.size() != contender.size())
    throw Error("paired_bootstrap: score vectors differ in length");
  if (baseline.empty()) throw Error("paired_bootstrap: empty score vectors");
  if (resamples <= 0) throw Error("paired_bootstrap: resamples must be >= 1");
  const size_t n = baseline.size();
  std::mt19937_64 rng(seed);
  int not_better = 0;
  for (int r = 0; r < resamples; ++r) {
    double sum_a = 0.0, sum_b = 0.0;
    for (size_t i = 0; i < n; ++i) {
      size_t idx = static_cast<size_t>(rng() % n);
      sum_a += baseline[idx];
      sum_b += contender[idx];
    }
    if (sum_b <= sum_a) ++not_better;
  }
  SignificanceResult result;
  result.p_value = static_cast<double>(not_better) / resamples;
  result.alpha = alpha;
  result.significant = result.p_value < alpha;
  result.resamples = resamples;
  result.seed = seed;
  double mean_a = 0.0, mean_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_a += baseline[i];
    mean_b += contender[i];
  }
  result.delta = (mean_b - mean_a) / static_cast<double>(n);
  return result;
}

// ---------------------------------------------------------------------------
// Result table: one row per setting, one column per domain, with deltas
// against the baseline setting and significance marks.

struct ReportCell {
  double score = 0.0;
  std::optional<double> delta;
  bool significant = false;
};

struct ReportTable {
  std::string metric;
  Setting baseline = Setting::zero_shot;
  std::vector<std::string> domains;
  std::vector<Setting> rows;
  // (setting, domain) -> cell; absent pairs render as "-"
  std::map<std::pair<std::string, std::string>, ReportCell> cells;

  std::string to_text() const;
  Json to_json() const;
};

inline ReportTable build_report(const std::vector<MetricReport>& reports,
                                const std::vector<SignificanceResult>& significance,
                                Setting baseline = Setting::zero_shot) {
  ReportTable table;
  table.baseline = baseline;
  if (!reports.empty()) table.metric = reports.front().metric;

  std::map<std::pair<std::string, std::string>, const MetricReport*> by_key;
  for (const auto& r : reports) {
    by_key[{to_string(r.setting), r.domain}] = &r;
    if (std::find(table.domains.begin(), table.domains.end(), r.domain) ==
        table.domains.end())
      table.domains.push_back(r.domain);
  }
  for (Setting s : kAllSettings) {
    bool present = false;
    for (const auto& d : table.domains)
      if (by_key.count({to_string(s), d})) present = true;
    if (present) table.rows.push_back(s);
  }
  for (const auto& [key, report] : by_key) {
    ReportCell cell;
    cell.score = report->corpus_score;
    auto base_it = by_key.find({to_string(baseline), key.second});
    if (base_it != by_key.end() && key.first != to_string(baseline))
      cell.delta = report->corpus_score - base_it->second->corpus_score;
    table.cells[key] = cell;
  }
  for (const auto& s : significance) {
    auto it = table.cells.find({to_string(s.contender), s.domain});
    if (it != table.cells.end()) it->second.significant = s.significant;
  }
  return table;
}

inline std::string ReportTable::to_text() const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"setting"};
  for (const auto& d : domains) header.push_back(d);
  grid.push_back(header);
  for (Setting s : rows) {
    std::vector<std::string> row{to_string(s)};
    for (const auto& d : domains) {
      auto it = cells.find({to_string(s), d});
      if (it == cells.end()) {
        row.push_back("-");
        continue;
      }
      std::string cell = fmt(it->second.score);
      if (it->second.delta) {
        double delta = *it->second.delta;
        cell += " (" + std::string(delta >= 0 ? "+" : "") + fmt(delta) + ")";
      }
      if (it->second.significant) cell += "*";
      row.push_back(cell);
    }
    grid.push_back(row);
  }
  std::vector<size_t> widths(grid.front().size(), 0);
  for (const auto& row : grid)
    for (size_t c = 0; c < row.size(); ++c)
      widths[c] = std::max(widths[c], row[c].size());
  std::string out = "metric: " + metric +
                    "  baseline: " + to_string(baseline) + "\n";
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size())
        out += std::string(widths[c] - row[c].size() + 2, ' ');
    }
    out += "\n";
  }
  return out;
}

inline Json ReportTable::to_json() const {
  Json j;
  j["metric"] = metric;
  j["baseline"] = to_string(baseline);
  j["domains"] = domains;
  Json rows_json = Json::array();
  for (Setting s : rows) {
    Json row;
    row["setting"] = to_string(s);
    Json cells_json;
    for (const auto& d : domains) {
      auto it = cells.find({to_string(s), d});
      if (it == cells.end()) {
        cells_json[d] = nullptr;
        continue;
      }
      Json cell;
      cell["score"] = it->second.score;
      if (it->second.delta) cell["delta"] = *it->second.delta;
      cell["significant"] = it->second.significant;
      cells_json[d] = std::move(cell);
    }
    row["cells"] = std::move(cells_json);
    rows_json.push_back(std::move(row));
  }
  j["rows"] = std::move(rows_json);
  return j;
}

}  // namespace damt
