#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace siaedit::data {

// Malformed sequences decode to U+FFFD.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view codepoints);
std::string utf8_encode(char32_t codepoint);

/// Removes URL-like substrings and digit runs of seven or more, maps full-width
/// punctuation onto its ASCII counterpart and collapses runs of blanks.
std::string clean_text(std::string_view raw);

/// One token per codepoint.
std::vector<std::string> char_tokens(std::string_view text);

}  // namespace siaedit::data
