#pragma once

#include "siaedit/data/batch.hpp"
#include "siaedit/numcore/ops.hpp"

#include <json.hpp>

namespace siaedit::losses {

using num::Index;
using num::RowMatrix;
using num::Tensor;

struct SIAConfig {
  double alpha = 0.2;  // token-level exponent
  double beta = 40.0;  // sentence-level exponent
  bool detach_weights = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const SIAConfig& cfg);
void from_json(const nlohmann::json& j, SIAConfig& cfg);

/// Scalar training loss plus the confidence/weight statistics behind it.
/// Masked positions carry confidence 1 and token weight 0.
struct LossOutput {
  Tensor loss;                    // mean over sequences
  RowMatrix per_token_conf;       // [B x T]
  Eigen::VectorXd sent_log_conf;  // [B], sum of unmasked log-probs
  Eigen::VectorXd sent_conf;      // [B]
  RowMatrix w_t;                  // [B x T]
  Eigen::VectorXd w_s;            // [B]
};

struct SIAWeights {
  RowMatrix w_t;
  Eigen::VectorXd w_s;
};

/// Token weights (1 - p)^alpha and sentence weights (1 - prod p)^beta.
SIAWeights sia_weights(const RowMatrix& per_token_conf, const data::MaskMatrix& mask, const SIAConfig& cfg);

/// Mean over sequences of -w_s * sum_t w_t * log p(y_t) with the weights held
/// constant. This is the function whose gradient the detached SIA loss follows.
Tensor weighted_nll(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask,
                    const SIAWeights& weights);

LossOutput mle_loss(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask);
LossOutput sia_loss(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask,
                    const SIAConfig& cfg);

}  // namespace siaedit::losses
