#include "karma/text.h"

#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>

namespace karma::text {

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out.push_back(0xFFFD);
      break;
    }
    bool ok = true;
    for (int k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

bool is_letter(char32_t cp) {
  if (cp < 0x80) return std::isalpha(static_cast<int>(cp)) != 0;
  struct Range {
    char32_t lo, hi;
  };
  static constexpr std::array<Range, 14> kLetterRanges{{
      {0x00C0, 0x024F},  // Latin-1 supplement letters, Latin extended
      {0x0370, 0x03FF},  // Greek
      {0x0400, 0x052F},  // Cyrillic
      {0x0531, 0x058F},  // Armenian
      {0x05D0, 0x05EA},  // Hebrew
      {0x0620, 0x064A},  // Arabic
      {0x0900, 0x0DFF},  // Indic scripts
      {0x0E00, 0x0E7F},  // Thai
      {0x10A0, 0x10FF},  // Georgian
      {0x1E00, 0x1FFF},  // Latin extended additional, Greek extended
      {0x3040, 0x30FF},  // Hiragana, Katakana
      {0x3400, 0x4DBF},  // CJK extension A
      {0x4E00, 0x9FFF},  // CJK unified
      {0xAC00, 0xD7AF},  // Hangul
  }};
  if (cp == 0x00D7 || cp == 0x00F7) return false;
  for (const auto& r : kLetterRanges) {
    if (cp >= r.lo && cp <= r.hi) return true;
  }
  return false;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> whitespace_tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c == '-' || c == '\'' || c >= 0x80;
}

}  // namespace

std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && !is_word_byte(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t start = i;
    while (i < s.size() && is_word_byte(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t end = i;
    while (start < end && (s[start] == '-' || s[start] == '\'')) ++start;
    while (end > start && (s[end - 1] == '-' || s[end - 1] == '\'')) --end;
    if (end > start) out.push_back(to_lower_ascii(s.substr(start, end - start)));
  }
  return out;
}

bool contains_case_insensitive(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  const std::string h = to_lower_ascii(haystack);
  const std::string n = to_lower_ascii(needle);
  return h.find(n) != std::string::npos;
}

std::string replace_case_insensitive(std::string_view haystack, std::string_view needle,
                                     std::string_view replacement) {
  if (needle.empty()) return std::string(haystack);
  const std::string h = to_lower_ascii(haystack);
  const std::string n = to_lower_ascii(needle);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = h.find(n, pos);
    if (hit == std::string::npos) break;
    out.append(haystack.substr(pos, hit - pos));
    out.append(replacement);
    pos = hit + n.size();
  }
  out.append(haystack.substr(pos));
  return out;
}

std::string iso_minute_utc(int64_t unix_seconds) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{unix_seconds}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()));
  return buf;
}

uint64_t fnv1a64(std::string_view data, uint64_t seed) {
  uint64_t h = seed;
  for (const char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace karma::text
