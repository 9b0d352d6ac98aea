#include "siaedit/decode/decode.hpp"

#include "siaedit/errors.hpp"
#include "siaedit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace siaedit::decode {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ValidationError("beam_size must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be finite and > 0");
  if (!(length_norm_lambda >= 0.0) || !std::isfinite(length_norm_lambda)) {
    throw ValidationError("length_norm_lambda must be finite and >= 0");
  }
  if (min_len < 1 || max_len < min_len) throw ValidationError("decode lengths must satisfy max_len >= min_len >= 1");
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"beam_size", c.beam_size},
                     {"temperature", c.temperature},
                     {"length_norm_lambda", c.length_norm_lambda},
                     {"max_len", c.max_len},
                     {"min_len", c.min_len}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  const DecodeConfig d;
  c.beam_size = j.value("beam_size", d.beam_size);
  c.temperature = j.value("temperature", d.temperature);
  c.length_norm_lambda = j.value("length_norm_lambda", d.length_norm_lambda);
  c.max_len = j.value("max_len", d.max_len);
  c.min_len = j.value("min_len", d.min_len);
}

double length_penalty(Index generated, double lambda) {
  if (lambda == 0.0) return 1.0;
  return std::pow((5.0 + static_cast<double>(generated)) / 6.0, lambda);
}

namespace {

constexpr double kBlocked = -std::numeric_limits<double>::infinity();

// Temperature-scaled log-probabilities with disallowed ids set to -inf.
Eigen::VectorXd step_scores(const Eigen::Ref<const Eigen::VectorXd>& logp, Index step, const DecodeConfig& cfg,
                            const TokenPolicy& policy) {
  Eigen::VectorXd out = logp;
  if (cfg.temperature != 1.0) {
    out /= cfg.temperature;
    const double m = out.maxCoeff();
    out.array() -= m + std::log((out.array() - m).exp().sum());
  }
  for (TokenId id : policy.banned) {
    if (id >= 0 && id < out.size()) out[id] = kBlocked;
  }
  if (step < cfg.min_len && policy.eos >= 0 && policy.eos < out.size()) out[policy.eos] = kBlocked;
  return out;
}

TokenId tie_key(TokenId id, const TokenPolicy& policy) {
  return id == policy.eos ? std::numeric_limits<TokenId>::max() : id;
}

void finalize(Hypothesis& h, double lambda) { h.norm_score = h.logprob_sum / length_penalty(h.length(), lambda); }

bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.norm_score != b.norm_score) return a.norm_score > b.norm_score;
  return a.token_ids < b.token_ids;
}

// Log-probs are <= 0 and lp(n) grows with n, so sum / lp(max_len) bounds any
// future norm_score of a live hypothesis.
bool can_still_win(const std::vector<Hypothesis>& live, const std::vector<Hypothesis>& pool, const DecodeConfig& cfg) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& h : pool) best = std::max(best, h.norm_score);
  const double lp_max = length_penalty(cfg.max_len, cfg.length_norm_lambda);
  for (const auto& h : live) {
    if (h.logprob_sum / lp_max > best) return true;
  }
  return false;
}

}  // namespace

Hypothesis greedy_decode(const StepFn& step, const DecodeConfig& cfg, const TokenPolicy& policy) {
  cfg.validate();
  Hypothesis h;
  h.token_ids = {policy.bos};
  for (Index n = 1; n <= cfg.max_len; ++n) {
    const num::RowMatrix logp = step({h.token_ids});
    const Eigen::VectorXd scores = step_scores(logp.row(0).transpose(), n, cfg, policy);
    TokenId best = -1;
    for (Index v = 0; v < scores.size(); ++v) {
      if (scores[v] == kBlocked) continue;
      if (best < 0 || scores[v] > scores[best] ||
          (scores[v] == scores[best] && tie_key(v, policy) < tie_key(best, policy))) {
        best = v;
      }
    }
    if (best < 0) throw ContractError("greedy_decode: every token is blocked");
    h.token_ids.push_back(best);
    h.logprob_sum += scores[best];
    if (best == policy.eos) break;
  }
  finalize(h, cfg.length_norm_lambda);
  return h;
}

std::vector<Hypothesis> beam_search(const StepFn& step, const DecodeConfig& cfg, const TokenPolicy& policy) {
  cfg.validate();
  struct Candidate {
    double score;
    std::size_t parent;
    TokenId token;
  };

  std::vector<Hypothesis> live(1);
  live[0].token_ids = {policy.bos};
  std::vector<Hypothesis> pool;
  const auto beam = static_cast<std::size_t>(cfg.beam_size);

  for (Index n = 1; n <= cfg.max_len && !live.empty(); ++n) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const auto& h : live) prefixes.push_back(h.token_ids);
    const num::RowMatrix logp = step(prefixes);

    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const Eigen::VectorXd scores = step_scores(logp.row(static_cast<Index>(i)).transpose(), n, cfg, policy);
      for (Index v = 0; v < scores.size(); ++v) {
        if (scores[v] != kBlocked) candidates.push_back({live[i].logprob_sum + scores[v], i, v});
      }
    }
    if (candidates.empty()) throw ContractError("beam_search: every token is blocked");
    const std::size_t keep = std::min(beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return live[a.parent].token_ids < live[b.parent].token_ids;
                        return tie_key(a.token, policy) < tie_key(b.token, policy);
                      });

    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis h;
      h.token_ids = live[candidates[c].parent].token_ids;
      h.token_ids.push_back(candidates[c].token);
      h.logprob_sum = candidates[c].score;
      if (candidates[c].token == policy.eos) {
        finalize(h, cfg.length_norm_lambda);
        pool.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (pool.size() >= beam && !can_still_win(live, pool, cfg)) {
      live.clear();
      break;
    }
  }
  for (auto& h : live) {
    finalize(h, cfg.length_norm_lambda);
    pool.push_back(std::move(h));
  }

  std::sort(pool.begin(), pool.end(), ranks_before);
  for (const auto& h : pool) {
    if (h.norm_score > pool.front().norm_score) throw ContractError("beam_search: ranking is inconsistent");
  }
  return pool;
}

StepFn model_step(const model::SeqModel& m, std::span<const TokenId> encoder_input) {
  auto state = std::make_shared<model::EncoderState>(m.encode(encoder_input));
  return [&m, state](const std::vector<std::vector<TokenId>>& prefixes) { return m.step_batch(*state, prefixes); };
}

Hypothesis greedy_decode(const model::SeqModel& m, std::span<const TokenId> encoder_input, const DecodeConfig& cfg) {
  return greedy_decode(model_step(m, encoder_input), cfg);
}

std::vector<Hypothesis> beam_search(const model::SeqModel& m, std::span<const TokenId> encoder_input,
                                    const DecodeConfig& cfg) {
  return beam_search(model_step(m, encoder_input), cfg);
}

std::vector<std::string> batch_generate(const model::SeqModel& m, const std::vector<data::Example>& examples,
                                        const data::Vocabulary& vocab, const DecodeConfig& cfg, data::Task task,
                                        const data::BatchLimits& limits, std::size_t threads) {
  cfg.validate();
  std::vector<std::string> out(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    try {
      const auto source = data::encoder_input(examples[i], vocab, task, limits);
      const auto ranked = beam_search(m, source, cfg);
      out[i] = vocab.decode(ranked.front().token_ids);
    } catch (const Error& e) {
      throw Error(e.category(), "example " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace siaedit::decode
