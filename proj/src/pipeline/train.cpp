#include "siaedit/pipeline/train.hpp"

#include "siaedit/errors.hpp"

#include <chrono>
#include <cmath>

namespace siaedit::pipeline {

Stage parse_stage(std::string_view name) {
  if (name == "pretrain") return Stage::kPretrain;
  if (name == "adapt") return Stage::kAdapt;
  if (name == "finetune") return Stage::kFinetune;
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kPretrain:
      return "pretrain";
    case Stage::kAdapt:
      return "adapt";
    case Stage::kFinetune:
      return "finetune";
  }
  return "?";
}

LossKind parse_loss(std::string_view name) {
  if (name == "mle") return LossKind::kMle;
  if (name == "sia") return LossKind::kSia;
  throw ValidationError("unknown loss '" + std::string(name) + "'");
}

std::string_view loss_name(LossKind loss) { return loss == LossKind::kMle ? "mle" : "sia"; }

data::Task stage_task(Stage stage) {
  switch (stage) {
    case Stage::kPretrain:
      return data::Task::kPretrain;
    case Stage::kAdapt:
      return data::Task::kAdapt;
    case Stage::kFinetune:
      return data::Task::kEdit;
  }
  return data::Task::kEdit;
}

void TrainConfig::validate() const {
  if (stage != Stage::kFinetune && loss != LossKind::kMle) {
    throw ValidationError(std::string(stage_name(stage)) + " stage requires loss mle");
  }
  sia.validate();
  adam.validate();
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (max_steps < 0) throw ValidationError("max_steps must be non-negative");
  if (eval_every < 1) throw ValidationError("eval_every must be at least 1");
  if (patience < 1) throw ValidationError("patience must be at least 1");
  if (!(clip_norm >= 0.0)) throw ValidationError("clip_norm must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"stage", stage_name(cfg.stage)},
                     {"loss", loss_name(cfg.loss)},
                     {"sia", cfg.sia},
                     {"adam", cfg.adam},
                     {"batch_size", cfg.batch_size},
                     {"max_steps", cfg.max_steps},
                     {"eval_every", cfg.eval_every},
                     {"patience", cfg.patience},
                     {"clip_norm", cfg.clip_norm},
                     {"seed", cfg.seed},
                     {"init_checkpoint", cfg.init_checkpoint},
                     {"out_checkpoint", cfg.out_checkpoint}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  if (j.contains("stage")) cfg.stage = parse_stage(j.at("stage").get<std::string>());
  if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss").get<std::string>());
  if (j.contains("sia")) j.at("sia").get_to(cfg.sia);
  if (j.contains("adam")) j.at("adam").get_to(cfg.adam);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.init_checkpoint = j.value("init_checkpoint", cfg.init_checkpoint);
  cfg.out_checkpoint = j.value("out_checkpoint", cfg.out_checkpoint);
}

void to_json(nlohmann::json& j, const RunRecord& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) {
    evals.push_back({{"step", e.step}, {"valid_perplexity", e.valid_perplexity}, {"train_loss", e.train_loss}});
  }
  j = nlohmann::json{{"stage", r.stage},
                     {"config", r.config},
                     {"seed", r.seed},
                     {"evals", evals},
                     {"initial_train_loss", r.initial_train_loss},
                     {"final_train_loss", r.final_train_loss},
                     {"steps_run", r.steps_run},
                     {"best_step", r.best_step},
                     {"best_valid_perplexity", r.best_valid_perplexity},
                     {"stopped_early", r.stopped_early},
                     {"wall_seconds", r.wall_seconds}};
  if (r.metrics) j["metrics"] = *r.metrics;
}

namespace {

num::Tensor stage_loss(const TrainConfig& cfg, const num::Tensor& log_probs, const data::Batch& b) {
  if (cfg.loss == LossKind::kSia) return losses::sia_loss(log_probs, b.decoder_target_ids, b.target_mask, cfg.sia).loss;
  return losses::mle_loss(log_probs, b.decoder_target_ids, b.target_mask).loss;
}

}  // namespace

StageResult train_stage(const TrainConfig& cfg, const StageData& data, const data::Vocabulary& vocab,
                        const model::SeqModel& init, const data::BatchLimits& limits) {
  cfg.validate();
  if (data.train.empty()) throw EmptyInputError(std::string(stage_name(cfg.stage)) + ": empty training set");
  if (data.valid.empty()) throw EmptyInputError(std::string(stage_name(cfg.stage)) + ": empty validation set");
  if (static_cast<std::size_t>(init.config().vocab_size) != vocab.size()) {
    throw FormatError("model vocab_size " + std::to_string(init.config().vocab_size) + " does not match vocabulary size " +
                      std::to_string(vocab.size()));
  }
  const auto start = std::chrono::steady_clock::now();
  const data::Task task = stage_task(cfg.stage);

  model::SeqModel m = init.clone();
  std::vector<num::Tensor> params;
  for (const auto& p : m.parameters()) params.push_back(p.tensor);
  Adam adam(params, cfg.adam);
  Rng dropout_rng(derive_seed(cfg.seed, 1));
  const model::ForwardOptions train_opts{true, &dropout_rng};

  RunRecord rec;
  rec.stage = std::string(stage_name(cfg.stage));
  rec.config = cfg;
  rec.seed = cfg.seed;

  auto validate_ppl = [&] { return metrics::perplexity(m, data.valid, vocab, task, limits, cfg.batch_size); };
  const double ppl0 = validate_ppl();
  rec.evals.push_back({0, ppl0, 0.0});
  rec.best_valid_perplexity = ppl0;
  model::SeqModel best = m.clone();

  std::vector<data::Batch> epoch;
  std::size_t cursor = 0;
  std::uint64_t epoch_index = 0;
  std::int64_t bad_evals = 0;
  double window_loss = 0.0;
  std::int64_t window_steps = 0;

  for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
    if (cursor == epoch.size()) {
      epoch = data::make_batches(data.train, vocab, task, cfg.batch_size, limits, derive_seed(cfg.seed, 100 + epoch_index++));
      cursor = 0;
    }
    const data::Batch& batch = epoch[cursor++];
    double loss_value;
    {
      num::Tape tape;
      num::TapeScope scope(tape);
      m.zero_grad();
      const num::Tensor loss = stage_loss(cfg, m.forward(batch, train_opts), batch);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw NumericError(rec.stage + ": non-finite loss at step " + std::to_string(step));
      tape.backward(loss);
    }
    clip_grad_norm(params, cfg.clip_norm);
    adam.step();

    if (step == 1) rec.initial_train_loss = loss_value;
    rec.final_train_loss = loss_value;
    rec.steps_run = step;
    window_loss += loss_value;
    ++window_steps;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double ppl = validate_ppl();
      rec.evals.push_back({step, ppl, window_loss / static_cast<double>(window_steps)});
      window_loss = 0.0;
      window_steps = 0;
      if (ppl < rec.best_valid_perplexity) {
        rec.best_valid_perplexity = ppl;
        rec.best_step = step;
        best = m.clone();
        bad_evals = 0;
      } else if (++bad_evals >= cfg.patience) {
        rec.stopped_early = step < cfg.max_steps;
        break;
      }
    }
  }

  if (!cfg.out_checkpoint.empty()) best.save(cfg.out_checkpoint);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(best), std::move(rec)};
}

}  // namespace siaedit::pipeline
