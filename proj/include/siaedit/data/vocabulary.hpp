#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace siaedit::data {

using TokenId = std::ptrdiff_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kReservedCount = 5;

inline constexpr std::string_view kSepText = "<sep>";

/// Character-level vocabulary. Ids 0..4 are reserved (PAD, BOS, EOS, SEP, UNK);
/// every other id maps to exactly one codepoint.
class Vocabulary {
 public:
  Vocabulary();
  // `tokens` lists the non-reserved codepoints in id order starting at kReservedCount.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;

  std::vector<TokenId> encode(std::string_view text) const;
  // Drops reserved ids except SEP, which renders as kSepText.
  std::string decode(std::span<const TokenId> ids) const;

  // Non-reserved tokens in id order.
  std::vector<std::string> content_tokens() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Codepoints seen at least `min_freq` times; ids by descending count, ties by codepoint.
Vocabulary build_vocab(std::span<const std::string> corpus, std::int64_t min_freq);

}  // namespace siaedit::data
