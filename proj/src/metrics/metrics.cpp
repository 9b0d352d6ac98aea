#include "siaedit/metrics/metrics.hpp"

#include "siaedit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace siaedit::metrics {

namespace {

void require_aligned(const std::vector<Sequence>& candidates, const std::vector<Sequence>& references) {
  if (candidates.size() != references.size()) {
    throw ContractError("candidate/reference count mismatch: " + std::to_string(candidates.size()) + " vs " +
                        std::to_string(references.size()));
  }
}

template <std::size_t N>
std::map<std::array<TokenId, N>, std::int64_t> ngram_counts(const Sequence& seq) {
  std::map<std::array<TokenId, N>, std::int64_t> counts;
  for (std::size_t i = 0; i + N <= seq.size(); ++i) {
    std::array<TokenId, N> g;
    std::copy_n(seq.begin() + static_cast<std::ptrdiff_t>(i), N, g.begin());
    ++counts[g];
  }
  return counts;
}

template <std::size_t N>
void clipped_matches(const Sequence& cand, const Sequence& ref, std::int64_t& matched, std::int64_t& total) {
  const auto c = ngram_counts<N>(cand);
  const auto r = ngram_counts<N>(ref);
  for (const auto& [g, n] : c) {
    total += n;
    if (auto it = r.find(g); it != r.end()) matched += std::min(n, it->second);
  }
}

std::size_t lcs_length(const Sequence& a, const Sequence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <class PerHeadline>
double macro_percent(const std::vector<Sequence>& headlines, PerHeadline score) {
  if (headlines.empty()) return 0.0;
  double total = 0.0;
  for (const auto& h : headlines) total += score(h);
  return 100.0 * total / static_cast<double>(headlines.size());
}

}  // namespace

void NllAccumulator::add(const num::Tensor& log_probs, const data::Batch& batch) {
  const Index b = batch.size();
  const Index t = batch.decoder_target_ids.cols();
  if (log_probs.rank() != 3 || log_probs.dim(0) != b || log_probs.dim(1) != t) {
    throw DimensionError("log-probabilities " + num::shape_string(log_probs.shape()) + " do not match batch");
  }
  const Index v = log_probs.dim(2);
  const auto& lp = log_probs.values();
  for (Index i = 0; i < b; ++i) {
    for (Index j = 0; j < t; ++j) {
      if (!batch.target_mask(i, j)) continue;
      const TokenId y = batch.decoder_target_ids(i, j);
      if (y < 0 || y >= v) throw RangeError("target id " + std::to_string(y) + " outside vocabulary");
      total_nll -= lp[(i * t + j) * v + y];
      ++tokens;
    }
  }
}

double NllAccumulator::perplexity() const {
  if (tokens == 0) throw EmptyInputError("perplexity over zero target tokens");
  return std::exp(total_nll / static_cast<double>(tokens));
}

double perplexity(const model::SeqModel& m, const std::vector<data::Example>& examples,
                  const data::Vocabulary& vocab, data::Task task, const data::BatchLimits& limits,
                  std::int64_t batch_size) {
  if (examples.empty()) throw EmptyInputError("perplexity over an empty evaluation set");
  num::NoGradScope no_grad;
  NllAccumulator acc;
  for (const auto& batch : data::make_batches(examples, vocab, task, batch_size, limits, data::kNoShuffle)) {
    acc.add(m.forward(batch), batch);
  }
  return acc.perplexity();
}

double bleu4(const std::vector<Sequence>& candidates, const std::vector<Sequence>& references) {
  require_aligned(candidates, references);
  std::array<std::int64_t, 4> matched{}, total{};
  std::int64_t cand_len = 0, ref_len = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    const auto& r = references[k];
    cand_len += static_cast<std::int64_t>(c.size());
    ref_len += static_cast<std::int64_t>(r.size());
    clipped_matches<1>(c, r, matched[0], total[0]);
    clipped_matches<2>(c, r, matched[1], total[1]);
    clipped_matches<3>(c, r, matched[2], total[2]);
    clipped_matches<4>(c, r, matched[3], total[3]);
  }
  if (cand_len == 0 || matched[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (n > 0 && matched[n] == 0) {
      p = 1.0 / static_cast<double>(total[n] + 1);
    } else {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    }
    log_sum += std::log(p);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / cand_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double rouge_l(const std::vector<Sequence>& candidates, const std::vector<Sequence>& references) {
  require_aligned(candidates, references);
  if (candidates.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    const auto& r = references[k];
    if (c.empty() || r.empty()) continue;
    const double l = static_cast<double>(lcs_length(c, r));
    const double p = l / static_cast<double>(c.size());
    const double rc = l / static_cast<double>(r.size());
    if (p + rc > 0.0) total += 2.0 * p * rc / (p + rc);
  }
  return 100.0 * total / static_cast<double>(candidates.size());
}

std::vector<Gram4> grams4(const Sequence& seq) {
  std::vector<Gram4> out;
  for (std::size_t i = 0; i + 4 <= seq.size(); ++i) {
    out.push_back({seq[i], seq[i + 1], seq[i + 2], seq[i + 3]});
  }
  return out;
}

double token_rep4(const std::vector<Sequence>& headlines) {
  return macro_percent(headlines, [](const Sequence& h) {
    const auto grams = grams4(h);
    if (grams.empty()) return 0.0;
    std::set<Gram4> seen;
    std::size_t repeats = 0;
    for (const auto& g : grams) {
      if (!seen.insert(g).second) ++repeats;
    }
    return static_cast<double>(repeats) / static_cast<double>(grams.size());
  });
}

RepRefSet build_rep_ref(const std::vector<Sequence>& train_targets) {
  std::map<Gram4, std::int64_t> counts;
  for (const auto& t : train_targets) {
    for (const auto& g : grams4(t)) ++counts[g];
  }
  RepRefSet ref;
  for (const auto& [g, n] : counts) {
    if (n > 1) ref.grams.insert(g);
  }
  return ref;
}

double sent_rep4(const std::vector<Sequence>& headlines, const RepRefSet& ref) {
  return macro_percent(headlines, [&](const Sequence& h) {
    const auto grams = grams4(h);
    if (grams.empty()) return 0.0;
    const auto hits = std::count_if(grams.begin(), grams.end(), [&](const Gram4& g) { return ref.contains(g); });
    return static_cast<double>(hits) / static_cast<double>(grams.size());
  });
}

std::int64_t unique4(const std::vector<Sequence>& headlines) {
  std::set<Gram4> distinct;
  for (const auto& h : headlines) {
    for (const auto& g : grams4(h)) distinct.insert(g);
  }
  return static_cast<std::int64_t>(distinct.size());
}

std::string MetricsReport::csv_header() { return "perplexity,bleu4,rouge_l,token_rep4,sent_rep4,unique4"; }

std::string MetricsReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%lld", perplexity, bleu4, rouge_l, token_rep4,
                sent_rep4, static_cast<long long>(unique4));
  return buf;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"perplexity", r.perplexity}, {"bleu4", r.bleu4},         {"rouge_l", r.rouge_l},
                     {"token_rep4", r.token_rep4}, {"sent_rep4", r.sent_rep4}, {"unique4", r.unique4}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("perplexity").get_to(r.perplexity);
  j.at("bleu4").get_to(r.bleu4);
  j.at("rouge_l").get_to(r.rouge_l);
  j.at("token_rep4").get_to(r.token_rep4);
  j.at("sent_rep4").get_to(r.sent_rep4);
  j.at("unique4").get_to(r.unique4);
}

std::vector<Sequence> tokenize(const std::vector<std::string>& texts, const data::Vocabulary& vocab) {
  std::vector<Sequence> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(vocab.encode(t));
  return out;
}

MetricsReport evaluate(const model::SeqModel& m, const std::vector<data::Example>& eval,
                       const std::vector<std::string>& generated, const data::Vocabulary& vocab,
                       const RepRefSet& ref, const data::BatchLimits& limits) {
  if (generated.size() != eval.size()) {
    throw ContractError("generated " + std::to_string(generated.size()) + " headlines for " +
                        std::to_string(eval.size()) + " examples");
  }
  std::vector<std::string> refs;
  refs.reserve(eval.size());
  for (const auto& ex : eval) refs.push_back(ex.edited);
  const auto cand = tokenize(generated, vocab);
  const auto gold = tokenize(refs, vocab);

  MetricsReport r;
  r.perplexity = perplexity(m, eval, vocab, data::Task::kEdit, limits);
  r.bleu4 = bleu4(cand, gold);
  r.rouge_l = rouge_l(cand, gold);
  r.token_rep4 = token_rep4(cand);
  r.sent_rep4 = sent_rep4(cand, ref);
  r.unique4 = unique4(cand);
  return r;
}

}  // namespace siaedit::metrics
