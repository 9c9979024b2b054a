#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "damt/text.hpp"

namespace damt {

// Lowercased word tokens in input order.
struct TokenStream {
  std::vector<std::string> tokens;

  bool empty() const { return tokens.empty(); }
  size_t size() const { return tokens.size(); }
};

// Lowercases, NFC-normalizes and splits on whitespace/punctuation boundaries.
// Punctuation never becomes a token, so punctuation-only input yields an
// empty stream. Deterministic for a given input.
inline TokenStream tokenize(std::string_view text) {
  std::string norm = nfc_latin(text);
  TokenStream ts;
  std::string current;
  size_t i = 0;
  while (i < norm.size()) {
    char32_t cp = utf8_next(norm, i);
    if (cp != kInvalidCp && is_word_cp(cp)) {
      utf8_append(current, lower_cp(cp));
    } else if (!current.empty()) {
      ts.tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) ts.tokens.push_back(std::move(current));
  return ts;
}

}  // namespace damt
