#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace karma::text {

// Decodes UTF-8 into code points; invalid bytes become U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view s);

// Letters: ASCII alphabet plus code points in the common alphabetic and
// ideographic blocks. Symbols, punctuation and emoji are excluded.
bool is_letter(char32_t cp);

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

// Splits on ASCII whitespace.
std::vector<std::string_view> whitespace_tokens(std::string_view s);

// Lowercased word tokens. A word is a run of alphanumerics, '_', '-', '\''
// or non-ASCII bytes; everything else separates words. Leading and trailing
// '-' / '\'' are trimmed.
std::vector<std::string> word_tokens(std::string_view s);

bool contains_case_insensitive(std::string_view haystack, std::string_view needle);

// Replaces every case-insensitive occurrence of `needle` with `replacement`.
std::string replace_case_insensitive(std::string_view haystack, std::string_view needle,
                                     std::string_view replacement);

// "YYYY-MM-DDTHH:MMZ" for a unix timestamp.
std::string iso_minute_utc(int64_t unix_seconds);

uint64_t fnv1a64(std::string_view data, uint64_t seed = 14695981039346656037ull);

std::string hex64(uint64_t v);

}  // namespace karma::text
