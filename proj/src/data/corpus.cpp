#include "siaedit/data/corpus.hpp"

#include "siaedit/data/text.hpp"
#include "siaedit/errors.hpp"
#include "siaedit/random.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <string_view>

namespace siaedit::data {

namespace {

constexpr char32_t kOpen = U'【';
constexpr char32_t kClose = U'】';
constexpr char32_t kColon = U'：';
constexpr std::u32string_view kConnectors = U"与和称将又再遇";

// Candidate content characters; duplicates and reserved glyphs are filtered out.
constexpr std::u32string_view kContentSource =
    U"是在不了有人这中大为上个国我以要他时来用们生到作地于出就分对成会可主发年动同工也能下过子说产种面"
    U"而方后多定行学法所民得经十三之进着等部度家电力里如水化高自二理起小物现实加量都两体制机当使点从业本"
    U"去把性好应开它合还因由其些然前外天政四日那社义事平形相全表间样关各重新线内数正心反你明看原么利比或"
    U"但质气第向道命此变条只没结解问意建月公无系军很情者最立代想已通并提直题党程展五果料象员革位入常文总";

const std::u32string& content_alphabet() {
  static const std::u32string alphabet = [] {
    std::u32string out;
    for (char32_t c : kContentSource) {
      if (kConnectors.find(c) != std::u32string_view::npos || c == kOpen || c == kClose || c == kColon) continue;
      if (out.find(c) != std::u32string::npos) continue;
      out.push_back(c);
    }
    return out;
  }();
  return alphabet;
}

struct Domain {
  const char* name;
  double weight;
};

// Domain mix of the professional editing corpus (article counts per domain).
constexpr std::array<Domain, 6> kDomains{{{"sports", 8837},
                                          {"health", 7298},
                                          {"finance", 1029},
                                          {"parenting", 1283},
                                          {"technology", 1419},
                                          {"electronics", 1128}}};

const char* pick_domain(Rng& rng) {
  double total = 0.0;
  for (const auto& d : kDomains) total += d.weight;
  double u = rng.uniform() * total;
  for (const auto& d : kDomains) {
    if (u < d.weight) return d.name;
    u -= d.weight;
  }
  return kDomains.back().name;
}

char32_t content_char(Rng& rng, std::int64_t vocab) {
  return content_alphabet()[static_cast<std::size_t>(rng.index(static_cast<std::uint64_t>(vocab)))];
}

std::u32string random_content(Rng& rng, std::int64_t vocab, std::int64_t length) {
  std::u32string s;
  for (std::int64_t i = 0; i < length; ++i) s.push_back(content_char(rng, vocab));
  return s;
}

std::u32string corrupt(const std::u32string& edited, const GeneratorSpec& spec, Rng& rng) {
  const double level = rng.uniform();
  if (level < spec.rewrite_fraction) {
    const auto [lo, hi] = spec.headline_length_range;
    return random_content(rng, spec.content_vocab_size, rng.uniform_int(lo, hi));
  }
  std::u32string out = edited;
  if (level < spec.rewrite_fraction + spec.half_edit_fraction) {
    std::u32string kept;
    for (char32_t c : edited) {
      if (rng.bernoulli(0.5)) kept.push_back(c);
    }
    if (kept.empty()) kept.push_back(edited[static_cast<std::size_t>(rng.index(edited.size()))]);
    out = std::move(kept);
  }
  if (out.size() >= 2) {
    const std::size_t i = static_cast<std::size_t>(rng.index(out.size() - 1));
    std::swap(out[i], out[i + 1]);
  }
  return out;
}

std::u32string hard_headline(const std::vector<std::u32string>& salient, const std::u32string& filler,
                             std::int64_t min_len) {
  std::u32string out = salient.front();
  const std::size_t base = salient.front().front();
  for (std::size_t i = 1; i < salient.size(); ++i) {
    out.push_back(kConnectors[(base + i) % kConnectors.size()]);
    out += salient[i];
  }
  if (static_cast<std::int64_t>(out.size()) < min_len) {
    out.push_back(kColon);
    for (std::size_t i = 0; static_cast<std::int64_t>(out.size()) < min_len && i < filler.size(); ++i) {
      out.push_back(filler[i]);
    }
  }
  return out;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (!(generic_fraction >= 0.0 && generic_fraction <= 1.0)) {
    throw ValidationError("generic_fraction must lie in [0, 1]");
  }
  if (!(rewrite_fraction >= 0.0 && half_edit_fraction >= 0.0 && rewrite_fraction + half_edit_fraction <= 1.0)) {
    throw ValidationError("rewrite_fraction and half_edit_fraction must be non-negative and sum to at most 1");
  }
  if (n_examples < 0) throw ValidationError("n_examples must be non-negative");
  if (template_pool_size < 1) throw ValidationError("template_pool_size must be >= 1");
  const auto max_vocab = static_cast<std::int64_t>(content_alphabet().size());
  if (content_vocab_size < 8 || content_vocab_size > max_vocab) {
    throw ValidationError("content_vocab_size must lie in [8, " + std::to_string(max_vocab) + "]");
  }
  if (body_length_range.first < 12 || body_length_range.first > body_length_range.second) {
    throw ValidationError("body_length_range must satisfy 12 <= lo <= hi");
  }
  if (headline_length_range.first < 2 || headline_length_range.first > headline_length_range.second) {
    throw ValidationError("headline_length_range must satisfy 2 <= lo <= hi");
  }
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"n_examples", s.n_examples},
                     {"generic_fraction", s.generic_fraction},
                     {"template_pool_size", s.template_pool_size},
                     {"content_vocab_size", s.content_vocab_size},
                     {"body_length_range", {s.body_length_range.first, s.body_length_range.second}},
                     {"headline_length_range", {s.headline_length_range.first, s.headline_length_range.second}},
                     {"rewrite_fraction", s.rewrite_fraction},
                     {"half_edit_fraction", s.half_edit_fraction}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  const GeneratorSpec d;
  s.seed = j.value("seed", d.seed);
  s.n_examples = j.value("n_examples", d.n_examples);
  s.generic_fraction = j.value("generic_fraction", d.generic_fraction);
  s.template_pool_size = j.value("template_pool_size", d.template_pool_size);
  s.content_vocab_size = j.value("content_vocab_size", d.content_vocab_size);
  s.rewrite_fraction = j.value("rewrite_fraction", d.rewrite_fraction);
  s.half_edit_fraction = j.value("half_edit_fraction", d.half_edit_fraction);
  auto range = [&](const char* key, std::pair<std::int64_t, std::int64_t> fallback) {
    if (!j.contains(key)) return fallback;
    const auto& r = j.at(key);
    if (!r.is_array() || r.size() != 2) throw ValidationError(std::string(key) + " must be a [lo, hi] pair");
    return std::pair<std::int64_t, std::int64_t>{r[0].get<std::int64_t>(), r[1].get<std::int64_t>()};
  };
  s.body_length_range = range("body_length_range", d.body_length_range);
  s.headline_length_range = range("headline_length_range", d.headline_length_range);
}

std::vector<std::string> template_pool(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 1));
  std::vector<std::string> pool;
  const auto [lo, hi] = spec.headline_length_range;
  while (static_cast<std::int64_t>(pool.size()) < spec.template_pool_size) {
    std::string t = utf8_encode(random_content(rng, spec.content_vocab_size, rng.uniform_int(lo, hi)));
    if (std::find(pool.begin(), pool.end(), t) == pool.end()) pool.push_back(std::move(t));
  }
  return pool;
}

std::vector<Example> generate_corpus(const GeneratorSpec& spec) {
  spec.validate();
  const std::vector<std::string> pool = template_pool(spec);
  Rng rng(derive_seed(spec.seed, 2));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(spec.n_examples));
  for (std::int64_t n = 0; n < spec.n_examples; ++n) {
    Example ex;
    ex.domain = pick_domain(rng);

    const std::size_t k = 2 + static_cast<std::size_t>(rng.index(2));
    std::vector<std::u32string> salient;
    for (std::size_t i = 0; i < k; ++i) salient.push_back(random_content(rng, spec.content_vocab_size, 2));

    const std::int64_t length = rng.uniform_int(spec.body_length_range.first, spec.body_length_range.second);
    const std::int64_t filler_len = std::max<std::int64_t>(0, length - 4 * static_cast<std::int64_t>(k));
    const std::u32string filler = random_content(rng, spec.content_vocab_size, filler_len);
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < k; ++i) slots.push_back(static_cast<std::size_t>(rng.index(filler.size() + 1)));
    std::sort(slots.begin(), slots.end());
    std::u32string body;
    std::size_t next = 0;
    for (std::size_t pos = 0; pos <= filler.size(); ++pos) {
      while (next < k && slots[next] == pos) {
        body.push_back(kOpen);
        body += salient[next++];
        body.push_back(kClose);
      }
      if (pos < filler.size()) body.push_back(filler[pos]);
    }
    ex.body = utf8_encode(body);

    std::u32string edited;
    if (rng.uniform() < spec.generic_fraction) {
      edited = utf8_decode(pool[static_cast<std::size_t>(rng.index(pool.size()))]);
    } else {
      edited = hard_headline(salient, filler, spec.headline_length_range.first);
    }
    ex.edited = utf8_encode(edited);
    ex.original = utf8_encode(corrupt(edited, spec, rng));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::string> salient_words(const std::string& body) {
  std::vector<std::string> words;
  const std::u32string s = utf8_decode(body);
  std::size_t pos = 0;
  while ((pos = s.find(kOpen, pos)) != std::u32string::npos) {
    const std::size_t end = s.find(kClose, pos);
    if (end == std::u32string::npos) break;
    words.push_back(utf8_encode(s.substr(pos + 1, end - pos - 1)));
    pos = end + 1;
  }
  return words;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      Example ex;
      ex.body = j.at("body").get<std::string>();
      ex.original = j.value("original", std::string());
      ex.edited = j.at("edited").get<std::string>();
      if (j.contains("domain") && !j.at("domain").is_null()) ex.domain = j.at("domain").get<std::string>();
      if (ex.body.empty() || ex.edited.empty()) throw ParseError(where + "body and edited must be non-empty");
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + "not a valid record: " + e.what());
    }
  }
  return out;
}

void save_jsonl(const std::vector<Example>& examples, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json j{{"body", ex.body}, {"original", ex.original}, {"edited", ex.edited}};
    j["domain"] = ex.domain ? nlohmann::json(*ex.domain) : nlohmann::json(nullptr);
    os << j.dump() << '\n';
  }
}

}  // namespace siaedit::data
