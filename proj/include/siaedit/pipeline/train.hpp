#pragma once

#include "siaedit/data/batch.hpp"
#include "siaedit/losses/losses.hpp"
#include "siaedit/metrics/metrics.hpp"
#include "siaedit/model/seq_model.hpp"
#include "siaedit/pipeline/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace siaedit::pipeline {

enum class Stage { kPretrain, kAdapt, kFinetune };
enum class LossKind { kMle, kSia };

Stage parse_stage(std::string_view name);
std::string_view stage_name(Stage stage);
LossKind parse_loss(std::string_view name);
std::string_view loss_name(LossKind loss);
data::Task stage_task(Stage stage);

struct TrainConfig {
  Stage stage = Stage::kFinetune;
  LossKind loss = LossKind::kMle;
  losses::SIAConfig sia;
  AdamConfig adam;
  std::int64_t batch_size = 32;
  std::int64_t max_steps = 300;
  std::int64_t eval_every = 50;
  std::int64_t patience = 3;
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::string init_checkpoint;  // empty: caller supplies the model
  std::string out_checkpoint;   // empty: nothing written

  // Pre-training and adaptation only accept the likelihood objective.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EvalPoint {
  std::int64_t step = 0;
  double valid_perplexity = 0.0;
  double train_loss = 0.0;  // mean over the steps since the previous evaluation; 0 at step 0
};

struct RunRecord {
  std::string stage;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> evals;
  double initial_train_loss = 0.0;  // first batch, before any update
  double final_train_loss = 0.0;    // last batch trained on
  std::int64_t steps_run = 0;
  std::int64_t best_step = 0;
  double best_valid_perplexity = 0.0;
  bool stopped_early = false;
  std::optional<metrics::MetricsReport> metrics;
  double wall_seconds = 0.0;
};

void to_json(nlohmann::json& j, const RunRecord& r);

struct StageData {
  const std::vector<data::Example>& train;
  const std::vector<data::Example>& valid;
};

struct StageResult {
  model::SeqModel model;  // weights at the best validation perplexity
  RunRecord record;
};

/// Trains `init` on the stage's task with validation-perplexity early stopping.
/// Validation runs at step 0 and every `eval_every` steps; training halts once
/// `patience` consecutive evaluations fail to improve on the best one.
StageResult train_stage(const TrainConfig& cfg, const StageData& data, const data::Vocabulary& vocab,
                        const model::SeqModel& init, const data::BatchLimits& limits = {});

}  // namespace siaedit::pipeline
