#include "siaedit/data/text.hpp"

#include <array>
#include <regex>
#include <utility>

namespace siaedit::data {

namespace {
constexpr char32_t kReplacement = 0xFFFD;
}

std::u32string utf8_decode(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      extra = 1;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      extra = 2;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      extra = 3;
      cp = b0 & 0x07;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    if (i + static_cast<std::size_t>(extra) >= text.size()) {
      out.push_back(kReplacement);
      break;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(text[i + static_cast<std::size_t>(k)]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
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
  return out;
}

std::string utf8_encode(std::u32string_view codepoints) {
  std::string out;
  out.reserve(codepoints.size());
  for (char32_t cp : codepoints) out += utf8_encode(cp);
  return out;
}

std::string clean_text(std::string_view raw) {
  static const std::regex url(R"((https?://|ftp://|www\.)[^\s]+)", std::regex::icase);
  static const std::regex long_digits(R"([0-9]{7,})");
  static const std::regex blank_run(R"([ \t]{2,})");
  static const std::array<std::pair<std::string_view, std::string_view>, 14> punctuation{{
      {"\xEF\xBC\x8C", ","},      // ，
      {"\xE3\x80\x82", "."},      // 。
      {"\xEF\xBC\x81", "!"},      // ！
      {"\xEF\xBC\x9F", "?"},      // ？
      {"\xEF\xBC\x9A", ":"},      // ：
      {"\xEF\xBC\x9B", ";"},      // ；
      {"\xEF\xBC\x88", "("},      // （
      {"\xEF\xBC\x89", ")"},      // ）
      {"\xE2\x80\x9C", "\""},     // “
      {"\xE2\x80\x9D", "\""},     // ”
      {"\xE2\x80\x98", "'"},      // ‘
      {"\xE2\x80\x99", "'"},      // ’
      {"\xE2\x80\xA6", "..."},    // …
      {"\xE2\x80\x94", "-"},      // em dash
  }};

  std::string s(raw);
  s = std::regex_replace(s, url, "");
  s = std::regex_replace(s, long_digits, "");
  for (const auto& [from, to] : punctuation) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
  }
  return std::regex_replace(s, blank_run, " ");
}

std::vector<std::string> char_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (char32_t cp : utf8_decode(text)) out.push_back(utf8_encode(cp));
  return out;
}

}  // namespace siaedit::data
