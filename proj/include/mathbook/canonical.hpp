#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>

namespace mathbook {

namespace detail {

inline bool is_plain_decimal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  const std::size_t int_begin = i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == int_begin) return false;
  if (i == s.size()) return true;
  if (s[i] != '.') return false;
  ++i;
  const std::size_t frac_begin = i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  return i == s.size() && i > frac_begin;
}

}  // namespace detail

/// Canonical answer form: trimmed, ASCII case-folded, and decimal numerals
/// stripped of trailing fractional zeros ("0.50" -> "0.5", "2.000" -> "2").
inline std::string canonicalize_answer(std::string_view raw) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && is_space(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string s(raw.substr(b, e - b));
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (detail::is_plain_decimal(s)) {
    const auto dot = s.find('.');
    if (dot != std::string::npos) {
      while (s.back() == '0') s.pop_back();
      if (s.back() == '.') s.pop_back();
    }
  }
  return s;
}

inline bool answers_match(std::string_view prediction, std::string_view gold) {
  return canonicalize_answer(prediction) == canonicalize_answer(gold);
}

}  // namespace mathbook
