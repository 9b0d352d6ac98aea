#pragma once

#include "siaedit/data/batch.hpp"
#include "siaedit/model/seq_model.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace siaedit::decode {

using data::TokenId;
using num::Index;

struct DecodeConfig {
  Index beam_size = 10;
  double temperature = 1.0;
  double length_norm_lambda = 0.6;
  Index max_len = 32;  // generated tokens, EOS included
  Index min_len = 1;   // EOS becomes available at this step

  void validate() const;
};

void to_json(nlohmann::json& j, const DecodeConfig& cfg);
void from_json(const nlohmann::json& j, DecodeConfig& cfg);

struct Hypothesis {
  std::vector<TokenId> token_ids;  // BOS first; EOS last when finished
  double logprob_sum = 0.0;
  double norm_score = 0.0;

  bool finished(TokenId eos = data::kEos) const { return token_ids.size() > 1 && token_ids.back() == eos; }
  // Generated tokens, EOS included.
  Index length() const { return static_cast<Index>(token_ids.size()) - 1; }
};

/// lp(n) = ((5 + n) / 6)^lambda.
double length_penalty(Index generated, double lambda);

/// Next-token log-probabilities [prefixes x V] for prefixes of equal length.
using StepFn = std::function<num::RowMatrix(const std::vector<std::vector<TokenId>>&)>;

/// Which ids start, end, and may never appear in a generated sequence.
struct TokenPolicy {
  TokenId bos = data::kBos;
  TokenId eos = data::kEos;
  std::vector<TokenId> banned{data::kPad, data::kBos, data::kSep, data::kUnk};
};

/// Ties between equal scores go to the lower id, except that EOS yields to any
/// other token so a flat distribution keeps generating.
Hypothesis greedy_decode(const StepFn& step, const DecodeConfig& cfg, const TokenPolicy& policy = {});
/// Completed hypotheses (plus those cut at max_len), best norm_score first;
/// equal scores ordered by token-id sequence. Search ends at max_len, or once
/// beam_size hypotheses have completed and no live one can still overtake the best.
std::vector<Hypothesis> beam_search(const StepFn& step, const DecodeConfig& cfg, const TokenPolicy& policy = {});

StepFn model_step(const model::SeqModel& m, std::span<const TokenId> encoder_input);

Hypothesis greedy_decode(const model::SeqModel& m, std::span<const TokenId> encoder_input, const DecodeConfig& cfg);
std::vector<Hypothesis> beam_search(const model::SeqModel& m, std::span<const TokenId> encoder_input,
                                    const DecodeConfig& cfg);

/// Top beam hypothesis per example, decoded to text, in input order.
std::vector<std::string> batch_generate(const model::SeqModel& m, const std::vector<data::Example>& examples,
                                        const data::Vocabulary& vocab, const DecodeConfig& cfg,
                                        data::Task task = data::Task::kEdit, const data::BatchLimits& limits = {},
                                        std::size_t threads = 1);

}  // namespace siaedit::decode
