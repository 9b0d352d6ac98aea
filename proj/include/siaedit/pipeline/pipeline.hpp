#pragma once

#include "siaedit/data/corpus.hpp"
#include "siaedit/decode/decode.hpp"
#include "siaedit/metrics/metrics.hpp"
#include "siaedit/pipeline/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace siaedit::pipeline {

struct PipelineConfig {
  data::GeneratorSpec generator;
  std::int64_t n_valid = 200;
  std::int64_t n_test = 200;
  model::ModelConfig model;  // vocab_size and max_positions are derived
  data::BatchLimits limits;
  TrainConfig pretrain;
  TrainConfig adapt;
  TrainConfig finetune;
  decode::DecodeConfig decode;
  bool skip_adapt = false;
  std::uint64_t seed = 1;  // model and stage seeds derive from this
  std::size_t threads = 1;

  PipelineConfig();
  void validate() const;
  // Fills derived seeds and stage tags.
  PipelineConfig resolved() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& cfg);
// Unknown top-level keys are a ValidationError.
void from_json(const nlohmann::json& j, PipelineConfig& cfg);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct Corpus {
  std::vector<data::Example> train, valid, test;
};

/// Generates the synthetic corpus and splits it: test last, validation before it.
Corpus build_corpus(const data::GeneratorSpec& spec, std::int64_t n_valid, std::int64_t n_test);
/// Character vocabulary over every text of the training split.
data::Vocabulary corpus_vocab(const Corpus& corpus);
/// Bodies as pretraining examples.
std::vector<data::Example> bodies_only(const std::vector<data::Example>& examples);

struct Evaluation {
  metrics::MetricsReport report;
  std::vector<std::string> generated;
};

/// One experiment: a resolved config over a fixed corpus and vocabulary.
class Pipeline {
 public:
  Pipeline(const PipelineConfig& cfg, Corpus corpus);
  Pipeline(const PipelineConfig& cfg, Corpus corpus, data::Vocabulary vocab);

  const PipelineConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return corpus_; }
  const data::Vocabulary& vocab() const { return vocab_; }
  const metrics::RepRefSet& rep_ref() const { return rep_ref_; }

  model::ModelConfig model_config() const;
  model::SeqModel initial_model() const;

  StageResult pretrain(const model::SeqModel& init) const;
  StageResult adapt(const model::SeqModel& init) const;
  StageResult finetune(const model::SeqModel& init, const TrainConfig& cfg) const;
  StageResult finetune(const model::SeqModel& init) const { return finetune(init, cfg_.finetune); }

  /// Beam-decodes the test split and scores it.
  Evaluation evaluate(const model::SeqModel& m) const;

 private:
  PipelineConfig cfg_;
  Corpus corpus_;
  data::Vocabulary vocab_;
  metrics::RepRefSet rep_ref_;
};

struct PasResult {
  std::vector<RunRecord> stages;
  Evaluation test;
  model::SeqModel final_model;
};

/// pretrain -> adapt (unless skipped) -> finetune, then test evaluation. With
/// `out`, writes checkpoints, run records, metrics and generations there.
PasResult run_pas(const Pipeline& p, const std::optional<std::filesystem::path>& out = std::nullopt);

enum class SweepParam { kAlpha, kBeta, kJoint };
SweepParam parse_sweep_param(std::string_view name);

struct SweepRow {
  double alpha = 0.0;
  double beta = 0.0;
  metrics::MetricsReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  std::string csv() const;
  // Rows plus every metric min-max normalized to [0, 1] across the grid.
  nlohmann::json json() const;
};

/// Grid points as (alpha, beta); `kAlpha` keeps the base beta, `kBeta` keeps the
/// base alpha, `kJoint` takes the cross product.
std::vector<std::pair<double, double>> sweep_grid(SweepParam param, const std::vector<double>& alphas,
                                                  const std::vector<double>& betas, const losses::SIAConfig& base);

/// One SIA fine-tune per grid point from the same starting model and seed.
SweepResult sweep(const Pipeline& p, const model::SeqModel& start, const std::vector<std::pair<double, double>>& grid);

/// Worker count from SIA_SEQ_THREADS; 1 when unset. Malformed values are a ValidationError.
std::size_t threads_from_env();

}  // namespace siaedit::pipeline
