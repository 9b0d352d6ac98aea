#include "siaedit/pipeline/optim.hpp"

#include "siaedit/errors.hpp"

#include <cmath>

namespace siaedit::pipeline {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("adam: eps must be positive");
}

void to_json(nlohmann::json& j, const AdamConfig& cfg) {
  j = nlohmann::json{{"lr", cfg.lr}, {"beta1", cfg.beta1}, {"beta2", cfg.beta2}, {"eps", cfg.eps}};
}

void from_json(const nlohmann::json& j, AdamConfig& cfg) {
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.eps = j.value("eps", cfg.eps);
}

Adam::Adam(std::vector<num::Tensor> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.push_back(num::Values::Zero(p.numel()));
    v_.push_back(num::Values::Zero(p.numel()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p.mutable_values().array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

double grad_norm(const std::vector<num::Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.has_grad()) sq += p.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<num::Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      // Gradient buffers are only reachable through the node.
      p.node()->grad *= scale;
    }
  }
  return norm;
}

}  // namespace siaedit::pipeline
