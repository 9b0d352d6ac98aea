#include "siaedit/losses/losses.hpp"

#include "siaedit/errors.hpp"

#include <cmath>

namespace siaedit::losses {

namespace {

constexpr double kMaxSentLogConf = -1e-12;

struct Gathered {
  Tensor masked_logp;  // [B x T], 0 on masked positions
  std::vector<std::uint8_t> pad;
  Index rows = 0, cols = 0;
};

Gathered gather_targets(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask) {
  if (log_probs.rank() != 3) throw DimensionError("loss: log_probs must be [B x T x V], got " + num::shape_string(log_probs.shape()));
  Gathered g;
  g.rows = log_probs.dim(0);
  g.cols = log_probs.dim(1);
  if (targets.rows() != g.rows || targets.cols() != g.cols || mask.rows() != g.rows || mask.cols() != g.cols) {
    throw DimensionError("loss: targets/mask shape does not match " + num::shape_string(log_probs.shape()));
  }
  std::vector<Index> ids(targets.data(), targets.data() + targets.size());
  g.pad.resize(static_cast<std::size_t>(mask.size()));
  for (Index i = 0; i < mask.size(); ++i) g.pad[static_cast<std::size_t>(i)] = mask.data()[i] == 0;
  g.masked_logp = num::mask_fill(num::gather_last(log_probs, ids), g.pad, 0.0);
  return g;
}

void fill_confidences(LossOutput& out, const Gathered& g) {
  const auto logp = g.masked_logp.matrix();
  out.per_token_conf = logp.array().exp().matrix();
  out.sent_log_conf = logp.rowwise().sum();
  out.sent_conf = out.sent_log_conf.array().exp().matrix();
}

Eigen::VectorXd sentence_weights(const Eigen::VectorXd& sent_log_conf, double beta) {
  const Eigen::ArrayXd s = sent_log_conf.array().min(kMaxSentLogConf);
  return (beta * (-s.exp()).log1p()).exp().matrix();
}

Tensor weighted_sum(const Gathered& g, const Tensor& w_t, const Tensor& w_s) {
  const Tensor weighted = num::mask_fill(num::mul(g.masked_logp, w_t), g.pad, 0.0);
  return num::mean(num::neg(num::mul(num::sum_last(weighted), w_s)));
}

}  // namespace

void SIAConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be finite and >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be finite and >= 0");
}

void to_json(nlohmann::json& j, const SIAConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha}, {"beta", c.beta}, {"detach_weights", c.detach_weights}};
}

void from_json(const nlohmann::json& j, SIAConfig& c) {
  const SIAConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.detach_weights = j.value("detach_weights", d.detach_weights);
}

SIAWeights sia_weights(const RowMatrix& conf, const data::MaskMatrix& mask, const SIAConfig& cfg) {
  cfg.validate();
  if (conf.rows() != mask.rows() || conf.cols() != mask.cols()) throw DimensionError("sia_weights: mask shape mismatch");
  SIAWeights w;
  w.w_t = RowMatrix::Zero(conf.rows(), conf.cols());
  w.w_s = Eigen::VectorXd(conf.rows());
  for (Index r = 0; r < conf.rows(); ++r) {
    double log_conf = 0.0;
    for (Index t = 0; t < conf.cols(); ++t) {
      if (!mask(r, t)) continue;
      const double p = conf(r, t);
      if (!(p > 0.0 && p <= 1.0)) throw DomainError("sia_weights: confidence " + std::to_string(p) + " outside (0, 1]");
      w.w_t(r, t) = cfg.alpha == 0.0 ? 1.0 : std::pow(1.0 - p, cfg.alpha);
      log_conf += std::log(p);
    }
    w.w_s[r] = std::exp(cfg.beta * std::log1p(-std::exp(std::min(log_conf, kMaxSentLogConf))));
  }
  return w;
}

Tensor weighted_nll(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask,
                    const SIAWeights& weights) {
  const Gathered g = gather_targets(log_probs, targets, mask);
  if (weights.w_t.rows() != g.rows || weights.w_t.cols() != g.cols || weights.w_s.size() != g.rows) {
    throw DimensionError("weighted_nll: weight shapes do not match the batch");
  }
  const Tensor w_t = Tensor::from({g.rows, g.cols}, Eigen::Map<const num::Values>(weights.w_t.data(), weights.w_t.size()));
  return weighted_sum(g, w_t, Tensor::from({g.rows}, weights.w_s));
}

LossOutput mle_loss(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask) {
  const Gathered g = gather_targets(log_probs, targets, mask);
  LossOutput out;
  fill_confidences(out, g);
  out.w_t = mask.cast<double>();
  out.w_s = Eigen::VectorXd::Ones(g.rows);
  out.loss = num::mean(num::neg(num::sum_last(g.masked_logp)));
  return out;
}

LossOutput sia_loss(const Tensor& log_probs, const data::IdMatrix& targets, const data::MaskMatrix& mask,
                    const SIAConfig& cfg) {
  cfg.validate();
  const Gathered g = gather_targets(log_probs, targets, mask);
  LossOutput out;
  fill_confidences(out, g);

  Tensor w_t, w_s;
  if (cfg.detach_weights) {
    const RowMatrix wt = (1.0 - out.per_token_conf.array()).pow(cfg.alpha).matrix();
    w_t = Tensor::from({g.rows, g.cols}, Eigen::Map<const num::Values>(wt.data(), wt.size()));
    w_s = Tensor::from({g.rows}, sentence_weights(out.sent_log_conf, cfg.beta));
  } else {
    // Masked slots sit at p = 1; shift them off the pow singularity before the
    // mask zeroes their contribution.
    const Tensor one_minus_p = num::mask_fill(num::add_scalar(num::neg(num::exp(g.masked_logp)), 1.0), g.pad, 1.0);
    w_t = num::pow(one_minus_p, cfg.alpha);
    const Tensor s = num::minimum(num::sum_last(g.masked_logp), kMaxSentLogConf);
    w_s = num::exp(num::scale(num::log1p(num::neg(num::exp(s))), cfg.beta));
  }
  out.loss = weighted_sum(g, w_t, w_s);

  out.w_t = w_t.matrix();
  for (Index i = 0; i < out.w_t.size(); ++i) {
    if (g.pad[static_cast<std::size_t>(i)]) out.w_t.data()[i] = 0.0;
  }
  out.w_s = w_s.values();
  return out;
}

}  // namespace siaedit::losses
