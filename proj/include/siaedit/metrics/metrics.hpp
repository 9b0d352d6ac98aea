#pragma once

#include "siaedit/data/batch.hpp"
#include "siaedit/model/seq_model.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace siaedit::metrics {

using data::TokenId;
using num::Index;

using Sequence = std::vector<TokenId>;
using Gram4 = std::array<TokenId, 4>;

/// Running token-level negative log-likelihood over unmasked targets.
struct NllAccumulator {
  double total_nll = 0.0;
  Index tokens = 0;

  // `log_probs` is [B x T x V] for `batch`.
  void add(const num::Tensor& log_probs, const data::Batch& batch);
  double perplexity() const;  // EmptyInputError when no tokens were added
};

double perplexity(const model::SeqModel& m, const std::vector<data::Example>& examples,
                  const data::Vocabulary& vocab, data::Task task = data::Task::kEdit,
                  const data::BatchLimits& limits = {}, std::int64_t batch_size = 32);

/// Corpus BLEU-4 in [0, 100] with a single reference per candidate.
/// Zero match counts for n >= 2 become 1 / (total + 1).
double bleu4(const std::vector<Sequence>& candidates, const std::vector<Sequence>& references);

/// Macro-averaged LCS F1 in [0, 100]. An empty side scores 0.
double rouge_l(const std::vector<Sequence>& candidates, const std::vector<Sequence>& references);

std::vector<Gram4> grams4(const Sequence& seq);

/// Share of 4-grams that already occurred earlier in the same headline, averaged over headlines.
double token_rep4(const std::vector<Sequence>& headlines);

/// 4-grams occurring more than once across the training targets.
struct RepRefSet {
  std::set<Gram4> grams;

  bool contains(const Gram4& g) const { return grams.count(g) != 0; }
  std::size_t size() const { return grams.size(); }
};

RepRefSet build_rep_ref(const std::vector<Sequence>& train_targets);
double sent_rep4(const std::vector<Sequence>& headlines, const RepRefSet& ref);

/// Distinct 4-grams across all headlines.
std::int64_t unique4(const std::vector<Sequence>& headlines);

struct MetricsReport {
  double perplexity = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double token_rep4 = 0.0;
  double sent_rep4 = 0.0;
  std::int64_t unique4 = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// Character-level token ids of each text.
std::vector<Sequence> tokenize(const std::vector<std::string>& texts, const data::Vocabulary& vocab);

/// Generation metrics for `generated` against the edited headlines of `eval`,
/// plus perplexity of `m` on `eval`.
MetricsReport evaluate(const model::SeqModel& m, const std::vector<data::Example>& eval,
                       const std::vector<std::string>& generated, const data::Vocabulary& vocab,
                       const RepRefSet& ref, const data::BatchLimits& limits = {});

}  // namespace siaedit::metrics
