#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace siaedit::data {

/// (body, original headline, edited headline) triple.
struct Example {
  std::string body;
  std::string original;
  std::string edited;
  std::optional<std::string> domain;

  bool operator==(const Example&) const = default;
};

std::vector<Example> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::vector<Example>& examples, const std::filesystem::path& path);

struct GeneratorSpec {
  std::uint64_t seed = 1;
  std::int64_t n_examples = 2400;
  double generic_fraction = 0.4;
  std::int64_t template_pool_size = 8;
  std::int64_t content_vocab_size = 48;
  std::pair<std::int64_t, std::int64_t> body_length_range{32, 32};
  std::pair<std::int64_t, std::int64_t> headline_length_range{6, 12};
  // Editing-level mix for the original headline; the rest are light edits.
  double rewrite_fraction = 0.258;
  double half_edit_fraction = 0.273;

  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
void from_json(const nlohmann::json& j, GeneratorSpec& spec);

/// Seeded synthetic stand-in for a professional headline-editing corpus. Each
/// body carries two or three bracketed salient words. A `generic_fraction` share
/// of edited headlines are verbatim picks from a small template pool; the rest
/// join the body's salient words with content-dependent connectors. Originals are
/// corrupted copies of the edited headline at a light, half or full-rewrite level.
std::vector<Example> generate_corpus(const GeneratorSpec& spec);

/// Salient words of a generated body, in order of appearance.
std::vector<std::string> salient_words(const std::string& body);

/// Template pool a spec draws its generic headlines from.
std::vector<std::string> template_pool(const GeneratorSpec& spec);

}  // namespace siaedit::data
