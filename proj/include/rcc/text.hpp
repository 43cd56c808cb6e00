#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rcc::text {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Raw whitespace-separated tokens, punctuation kept.
inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const auto start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

/// Whitespace tokens, lowercased. Used by the n-gram metrics.
inline std::vector<std::string> metric_tokens(std::string_view s) {
  auto out = split_whitespace(s);
  for (auto& t : out) t = to_lower(t);
  return out;
}

struct WordParts {
  std::string prefix;  // leading punctuation
  std::string core;    // letters/digits/inner punctuation
  std::string suffix;  // trailing punctuation
};

inline WordParts split_word(std::string_view token) {
  std::size_t b = 0;
  std::size_t e = token.size();
  while (b < e && !std::isalnum(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && !std::isalnum(static_cast<unsigned char>(token[e - 1]))) --e;
  return {std::string(token.substr(0, b)), std::string(token.substr(b, e - b)), std::string(token.substr(e))};
}

/// Lowercased word with surrounding punctuation removed.
inline std::string word_core(std::string_view token) { return to_lower(split_word(token).core); }

/// Lowercased alphanumeric words of a caption.
inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& t : split_whitespace(s)) {
    auto w = word_core(t);
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

inline std::string join(std::span<const std::string> parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) memory.
template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const auto up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace rcc::text
