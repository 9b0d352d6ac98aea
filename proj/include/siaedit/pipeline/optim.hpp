#pragma once

#include "siaedit/numcore/tensor.hpp"

#include <json.hpp>

#include <vector>

namespace siaedit::pipeline {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdamConfig& cfg);
void from_json(const nlohmann::json& j, AdamConfig& cfg);

/// Adam with bias correction and a fixed learning rate.
class Adam {
 public:
  Adam(std::vector<num::Tensor> params, const AdamConfig& cfg);

  // Applies one update from the accumulated gradients; parameters without a gradient are skipped.
  void step();
  long steps() const { return t_; }

 private:
  std::vector<num::Tensor> params_;
  std::vector<num::Values> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const std::vector<num::Tensor>& params);
/// Rescales gradients so the global norm is at most `max_norm`; returns the norm before clipping.
double clip_grad_norm(std::vector<num::Tensor>& params, double max_norm);

}  // namespace siaedit::pipeline
