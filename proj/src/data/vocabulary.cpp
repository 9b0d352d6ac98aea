#include "siaedit/data/vocabulary.hpp"

#include "siaedit/data/text.hpp"
#include "siaedit/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>

namespace siaedit::data {

namespace {
const std::vector<std::string> kReservedTokens{"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
constexpr int kVocabFormatVersion = 1;
}  // namespace

Vocabulary::Vocabulary() : id_to_token_(kReservedTokens) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) {
    if (utf8_decode(t).size() != 1) throw ValidationError("vocabulary token is not a single codepoint: " + t);
    if (token_to_id_.count(t)) throw ValidationError("duplicate vocabulary token: " + t);
    token_to_id_.emplace(t, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) != 0; }

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (char32_t cp : utf8_decode(text)) ids.push_back(id(utf8_encode(cp)));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = token(id);
    if (id == kSep) {
      out += kSepText;
    } else if (id >= kReservedCount) {
      out += tok;
    }
  }
  return out;
}

std::vector<std::string> Vocabulary::content_tokens() const {
  return {id_to_token_.begin() + kReservedCount, id_to_token_.end()};
}

void Vocabulary::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["version"] = kVocabFormatVersion;
  j["reserved"] = kReservedTokens;
  j["tokens"] = content_tokens();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write vocabulary to " + path.string());
  os << j.dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read vocabulary from " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("vocabulary " + path.string() + ": " + e.what());
  }
  if (j.value("version", 0) != kVocabFormatVersion) {
    throw FormatError("vocabulary " + path.string() + ": unsupported version");
  }
  return Vocabulary(j.at("tokens").get<std::vector<std::string>>());
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::int64_t min_freq) {
  if (corpus.empty()) throw EmptyInputError("build_vocab: empty corpus");
  if (min_freq < 1) throw ValidationError("build_vocab: min_freq must be >= 1");
  std::map<char32_t, std::int64_t> counts;
  for (const auto& line : corpus) {
    for (char32_t cp : utf8_decode(line)) ++counts[cp];
  }
  std::vector<std::pair<char32_t, std::int64_t>> kept;
  for (const auto& [cp, n] : counts) {
    if (n >= min_freq) kept.emplace_back(cp, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (const auto& [cp, n] : kept) tokens.push_back(utf8_encode(cp));
  return Vocabulary(tokens);
}

}  // namespace siaedit::data
