#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 text utilities shared by the tokenizer, terminology matching and the
// masking pass. All case-insensitive matching here assumes the haystack and
// needle went through the same normalization (the corpus loader applies
// nfc_latin at load, so anything read from a corpus is already composed).

namespace damt {

inline constexpr char32_t kInvalidCp = 0xFFFFFFFF;

// Decodes the code point starting at byte offset `i` and advances `i`.
// Malformed sequences yield kInvalidCp and advance by one byte, so transforms
// can copy the raw byte through unchanged.
inline char32_t utf8_next(std::string_view s, size_t& i) {
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  auto cont = [&](size_t k) {
    return i + k < s.size() &&
           (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    char32_t cp = (char32_t(b0 & 0x1F) << 6) |
                  (static_cast<unsigned char>(s[i + 1]) & 0x3F);
    i += 2;
    return cp < 0x80 ? kInvalidCp : cp;
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    char32_t cp = (char32_t(b0 & 0x0F) << 12) |
                  (char32_t(static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6) |
                  (static_cast<unsigned char>(s[i + 2]) & 0x3F);
    i += 3;
    return cp < 0x800 ? kInvalidCp : cp;
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    char32_t cp = (char32_t(b0 & 0x07) << 18) |
                  (char32_t(static_cast<unsigned char>(s[i + 1]) & 0x3F) << 12) |
                  (char32_t(static_cast<unsigned char>(s[i + 2]) & 0x3F) << 6) |
                  (static_cast<unsigned char>(s[i + 3]) & 0x3F);
    i += 4;
    return (cp < 0x10000 || cp > 0x10FFFF) ? kInvalidCp : cp;
  }
  ++i;
  return kInvalidCp;
}

inline void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Simple lowercase for the Latin ranges the corpora use (ASCII, Latin-1
// Supplement, Latin Extended-A). Only mappings that keep the UTF-8 byte
// length are applied, so lowercasing a string never shifts byte offsets;
// anything else passes through unchanged.
inline char32_t lower_cp(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 0x20;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
  if (cp == 0x178) return 0xFF;  // Y with diaeresis
  if (cp >= 0x100 && cp <= 0x137) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x139 && cp <= 0x148) return (cp % 2 == 1) ? cp + 1 : cp;
  if (cp >= 0x14A && cp <= 0x177) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x179 && cp <= 0x17E) return (cp % 2 == 1) ? cp + 1 : cp;
  return cp;
}

inline std::string lower_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    size_t start = i;
    char32_t cp = utf8_next(s, i);
    if (cp == kInvalidCp) {
      out.append(s.substr(start, i - start));
    } else {
      utf8_append(out, lower_cp(cp));
    }
  }
  return out;
}

namespace detail {

struct Composition {
  char32_t base;
  char32_t mark;
  char32_t composed;
};

// Canonical compositions of a Latin base letter followed by one combining
// diacritical mark. Covers the Latin-1 Supplement and Latin Extended-A
// outcomes, which is what German/English bitext contains in practice.
inline const Composition* composition_table(size_t& n) {
  static const Composition kTable[] = {
      // combining grave U+0300
      {U'A', 0x300, 0xC0}, {U'E', 0x300, 0xC8}, {U'I', 0x300, 0xCC},
      {U'O', 0x300, 0xD2}, {U'U', 0x300, 0xD9}, {U'a', 0x300, 0xE0},
      {U'e', 0x300, 0xE8}, {U'i', 0x300, 0xEC}, {U'o', 0x300, 0xF2},
      {U'u', 0x300, 0xF9},
      // combining acute U+0301
      {U'A', 0x301, 0xC1}, {U'E', 0x301, 0xC9}, {U'I', 0x301, 0xCD},
      {U'O', 0x301, 0xD3}, {U'U', 0x301, 0xDA}, {U'Y', 0x301, 0xDD},
      {U'a', 0x301, 0xE1}, {U'e', 0x301, 0xE9}, {U'i', 0x301, 0xED},
      {U'o', 0x301, 0xF3}, {U'u', 0x301, 0xFA}, {U'y', 0x301, 0xFD},
      {U'C', 0x301, 0x106}, {U'c', 0x301, 0x107}, {U'L', 0x301, 0x139},
      {U'l', 0x301, 0x13A}, {U'N', 0x301, 0x143}, {U'n', 0x301, 0x144},
      {U'R', 0x301, 0x154}, {U'r', 0x301, 0x155}, {U'S', 0x301, 0x15A},
      {U's', 0x301, 0x15B}, {U'Z', 0x301, 0x179}, {U'z', 0x301, 0x17A},
      // combining circumflex U+0302
      {U'A', 0x302, 0xC2}, {U'E', 0x302, 0xCA}, {U'I', 0x302, 0xCE},
      {U'O', 0x302, 0xD4}, {U'U', 0x302, 0xDB}, {U'a', 0x302, 0xE2},
      {U'e', 0x302, 0xEA}, {U'i', 0x302, 0xEE}, {U'o', 0x302, 0xF4},
      {U'u', 0x302, 0xFB}, {U'C', 0x302, 0x108}, {U'c', 0x302, 0x109},
      {U'G', 0x302, 0x11C}, {U'g', 0x302, 0x11D}, {U'H', 0x302, 0x124},
      {U'h', 0x302, 0x125}, {U'J', 0x302, 0x134}, {U'j', 0x302, 0x135},
      {U'S', 0x302, 0x15C}, {U's', 0x302, 0x15D}, {U'W', 0x302, 0x174},
      {U'w', 0x302, 0x175}, {U'Y', 0x302, 0x176}, {U'y', 0x302, 0x177},
      // combining tilde U+0303
      {U'A', 0x303, 0xC3}, {U'N', 0x303, 0xD1}, {U'O', 0x303, 0xD5},
      {U'a', 0x303, 0xE3}, {U'n', 0x303, 0xF1}, {U'o', 0x303, 0xF5},
      // combining macron U+0304
      {U'A', 0x304, 0x100}, {U'a', 0x304, 0x101}, {U'E', 0x304, 0x112},
      {U'e', 0x304, 0x113}, {U'I', 0x304, 0x12A}, {U'i', 0x304, 0x12B},
      {U'O', 0x304, 0x14C}, {U'o', 0x304, 0x14D}, {U'U', 0x304, 0x16A},
      {U'u', 0x304, 0x16B},
      // combining breve U+0306
      {U'A', 0x306, 0x102}, {U'a', 0x306, 0x103}, {U'G', 0x306, 0x11E},
      {U'g', 0x306, 0x11F}, {U'U', 0x306, 0x16C}, {U'u', 0x306, 0x16D},
      // combining dot above U+0307
      {U'E', 0x307, 0x116}, {U'e', 0x307, 0x117}, {U'G', 0x307, 0x120},
      {U'g', 0x307, 0x121}, {U'Z', 0x307, 0x17B}, {U'z', 0x307, 0x17C},
      // combining diaeresis U+0308
      {U'A', 0x308, 0xC4}, {U'E', 0x308, 0xCB}, {U'I', 0x308, 0xCF},
      {U'O', 0x308, 0xD6}, {U'U', 0x308, 0xDC}, {U'a', 0x308, 0xE4},
      {U'e', 0x308, 0xEB}, {U'i', 0x308, 0xEF}, {U'o', 0x308, 0xF6},
      {U'u', 0x308, 0xFC}, {U'y', 0x308, 0xFF}, {U'Y', 0x308, 0x178},
      // combining ring above U+030A
      {U'A', 0x30A, 0xC5}, {U'a', 0x30A, 0xE5}, {U'U', 0x30A, 0x16E},
      {U'u', 0x30A, 0x16F},
      // combining double acute U+030B
      {U'O', 0x30B, 0x150}, {U'o', 0x30B, 0x151}, {U'U', 0x30B, 0x170},
      {U'u', 0x30B, 0x171},
      // combining caron U+030C
      {U'C', 0x30C, 0x10C}, {U'c', 0x30C, 0x10D}, {U'D', 0x30C, 0x10E},
      {U'd', 0x30C, 0x10F}, {U'E', 0x30C, 0x11A}, {U'e', 0x30C, 0x11B},
      {U'L', 0x30C, 0x13D}, {U'l', 0x30C, 0x13E}, {U'N', 0x30C, 0x147},
      {U'n', 0x30C, 0x148}, {U'R', 0x30C, 0x158}, {U'r', 0x30C, 0x159},
      {U'S', 0x30C, 0x160}, {U's', 0x30C, 0x161}, {U'T', 0x30C, 0x164},
      {U't', 0x30C, 0x165}, {U'Z', 0x30C, 0x17D}, {U'z', 0x30C, 0x17E},
      // combining cedilla U+0327
      {U'C', 0x327, 0xC7}, {U'c', 0x327, 0xE7}, {U'G', 0x327, 0x122},
      {U'g', 0x327, 0x123}, {U'K', 0x327, 0x136}, {U'k', 0x327, 0x137},
      {U'L', 0x327, 0x13B}, {U'l', 0x327, 0x13C}, {U'N', 0x327, 0x145},
      {U'n', 0x327, 0x146}, {U'R', 0x327, 0x156}, {U'r', 0x327, 0x157},
      {U'S', 0x327, 0x15E}, {U's', 0x327, 0x15F}, {U'T', 0x327, 0x162},
      {U't', 0x327, 0x163},
      // combining ogonek U+0328
      {U'A', 0x328, 0x104}, {U'a', 0x328, 0x105}, {U'E', 0x328, 0x118},
      {U'e', 0x328, 0x119}, {U'I', 0x328, 0x12E}, {U'i', 0x328, 0x12F},
      {U'U', 0x328, 0x172}, {U'u', 0x328, 0x173},
  };
  n = sizeof(kTable) / sizeof(kTable[0]);
  return kTable;
}

inline std::optional<char32_t> compose_pair(char32_t base, char32_t mark) {
  size_t n = 0;
  const Composition* t = composition_table(n);
  for (size_t i = 0; i < n; ++i)
    if (t[i].base == base && t[i].mark == mark) return t[i].composed;
  return std::nullopt;
}

}  // namespace detail

// NFC normalization restricted to Latin base + single combining mark pairs,
// which covers the decomposed forms German/English corpora actually exhibit
// (a/o/u + diaeresis and friends). Sequences outside the table pass through.
inline std::string nfc_latin(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  size_t i = 0;
  std::optional<char32_t> pending;
  auto flush = [&]() {
    if (pending) {
      utf8_append(out, *pending);
      pending.reset();
    }
  };
  while (i < s.size()) {
    size_t start = i;
    char32_t cp = utf8_next(s, i);
    if (cp == kInvalidCp) {
      flush();
      out.append(s.substr(start, i - start));
      continue;
    }
    if (pending && cp >= 0x300 && cp <= 0x36F) {
      if (auto composed = detail::compose_pair(*pending, cp)) {
        pending = *composed;  // allow a further mark to compose again
        continue;
      }
    }
    flush();
    pending = cp;
  }
  flush();
  return out;
}

inline bool is_space_cp(char32_t cp) {
  if (cp == 0x20 || (cp >= 0x09 && cp <= 0x0D)) return true;
  if (cp == 0xA0 || cp == 0x1680) return true;
  if (cp >= 0x2000 && cp <= 0x200A) return true;
  return cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

// Token alphabet for the whitespace/punctuation splitter: ASCII alphanumerics,
// Latin letters, and (conservatively) the letter blocks of other scripts.
// Everything else separates tokens.
inline bool is_word_cp(char32_t cp) {
  if (cp < 0x80)
    return (cp >= U'0' && cp <= U'9') || (cp >= U'A' && cp <= U'Z') ||
           (cp >= U'a' && cp <= U'z');
  if (cp == 0xAA || cp == 0xB5 || cp == 0xBA) return true;
  if (cp >= 0xC0 && cp <= 0x2AF) return cp != 0xD7 && cp != 0xF7;
  if (cp >= 0x300 && cp <= 0x36F) return true;  // stray combining marks
  if (cp >= 0x370 && cp <= 0x1FFF) return true;
  return cp >= 0x3040;
}

// Trims Unicode whitespace from both ends, returning a view into `s`.
inline std::string_view trim_view(std::string_view s) {
  size_t begin = 0;
  size_t last_good = 0;
  size_t i = 0;
  bool seen = false;
  while (i < s.size()) {
    size_t start = i;
    char32_t cp = utf8_next(s, i);
    bool space = (cp != kInvalidCp) && is_space_cp(cp);
    if (!space) {
      if (!seen) {
        begin = start;
        seen = true;
      }
      last_good = i;
    }
  }
  if (!seen) return std::string_view{};
  return s.substr(begin, last_good - begin);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

struct CiMatch {
  size_t begin = 0;  // byte offsets into the original haystack
  size_t end = 0;
};

namespace detail {

// Matches `needle_lower` (pre-lowercased) against the haystack at byte
// offset `pos`, comparing code points case-insensitively. Returns the end
// offset on success.
inline std::optional<size_t> ci_match_at(std::string_view hay,
                                         std::string_view needle_lower,
                                         size_t pos) {
  size_t hi = pos, ni = 0;
  while (ni < needle_lower.size()) {
    if (hi >= hay.size()) return std::nullopt;
    char32_t hc = utf8_next(hay, hi);
    char32_t nc = utf8_next(needle_lower, ni);
    if (hc == kInvalidCp || nc == kInvalidCp) return std::nullopt;
    if (lower_cp(hc) != nc) return std::nullopt;
  }
  return hi;
}

}  // namespace detail

// All case-insensitive occurrences of `needle_lower` in `hay`, in text order,
// including overlapping ones. With `word_boundaries` a match must start and
// end at a token boundary (the characters just outside the match are not
// word characters).
inline std::vector<CiMatch> find_all_ci(std::string_view hay,
                                        std::string_view needle_lower,
                                        bool word_boundaries = false) {
  std::vector<CiMatch> out;
  if (needle_lower.empty() || hay.empty()) return out;
  size_t i = 0;
  bool prev_is_word = false;
  while (i < hay.size()) {
    size_t cp_start = i;
    if (auto end = detail::ci_match_at(hay, needle_lower, cp_start)) {
      bool ok = true;
      if (word_boundaries) {
        if (prev_is_word) ok = false;
        if (ok && *end < hay.size()) {
          size_t j = *end;
          char32_t after = utf8_next(hay, j);
          if (after != kInvalidCp && is_word_cp(after)) ok = false;
        }
      }
      if (ok) out.push_back({cp_start, *end});
    }
    char32_t cp = utf8_next(hay, i);
    prev_is_word = (cp != kInvalidCp) && is_word_cp(cp);
  }
  return out;
}

inline std::optional<size_t> find_ci(std::string_view hay,
                                     std::string_view needle_lower,
                                     bool word_boundaries = false) {
  if (needle_lower.empty() || hay.empty()) return std::nullopt;
  size_t i = 0;
  bool prev_is_word = false;
  while (i < hay.size()) {
    size_t cp_start = i;
    if (auto end = detail::ci_match_at(hay, needle_lower, cp_start)) {
      bool ok = true;
      if (word_boundaries) {
        if (prev_is_word) ok = false;
        if (ok && *end < hay.size()) {
          size_t j = *end;
          char32_t after = utf8_next(hay, j);
          if (after != kInvalidCp && is_word_cp(after)) ok = false;
        }
      }
      if (ok) return cp_start;
    }
    char32_t cp = utf8_next(hay, i);
    prev_is_word = (cp != kInvalidCp) && is_word_cp(cp);
  }
  return std::nullopt;
}

inline bool contains_ci(std::string_view hay, std::string_view needle_lower,
                        bool word_boundaries = false) {
  return find_ci(hay, needle_lower, word_boundaries).has_value();
}

inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '\n') {
      std::string_view line = s.substr(start, i - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.emplace_back(line);
      start = i + 1;
    }
  }
  if (!lines.empty() && lines.back().empty() && !s.empty() && s.back() == '\n')
    lines.pop_back();
  return lines;
}

inline std::string join(const std::vector<std::string>& parts,
                        std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

}  // namespace damt
