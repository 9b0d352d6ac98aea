#include "siaedit/pipeline/pipeline.hpp"

#include "siaedit/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace siaedit::pipeline {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

PipelineConfig::PipelineConfig() {
  model.n_layers = 1;
  model.hidden = 32;
  model.heads = 4;
  model.ffn_mult = 2;
  model.init_std = 0.05;
  pretrain.stage = Stage::kPretrain;
  adapt.stage = Stage::kAdapt;
  finetune.stage = Stage::kFinetune;
  finetune.loss = LossKind::kSia;
  pretrain.max_steps = 200;
  pretrain.eval_every = 100;
  adapt.max_steps = 600;
  adapt.eval_every = 100;
  finetune.max_steps = 1500;
  finetune.eval_every = 250;
  for (TrainConfig* stage : {&pretrain, &adapt, &finetune}) stage->adam.lr = 3e-3;
}

void PipelineConfig::validate() const {
  generator.validate();
  if (n_valid < 1 || n_test < 1) throw ValidationError("n_valid and n_test must be at least 1");
  if (n_valid + n_test >= generator.n_examples) throw ValidationError("n_valid + n_test leaves no training examples");
  if (limits.max_src_len < 3 || limits.max_tgt_len < 1) throw ValidationError("batch limits too small");
  if (pretrain.stage != Stage::kPretrain || adapt.stage != Stage::kAdapt || finetune.stage != Stage::kFinetune) {
    throw ValidationError("stage sections carry the wrong stage tag");
  }
  pretrain.validate();
  adapt.validate();
  finetune.validate();
  decode.validate();
  if (threads < 1) throw ValidationError("threads must be at least 1");
}

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig r = *this;
  r.model.seed = derive_seed(seed, 0);
  r.pretrain.seed = derive_seed(seed, 1);
  r.adapt.seed = derive_seed(seed, 2);
  r.finetune.seed = derive_seed(seed, 3);
  return r;
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"generator", c.generator},
                     {"n_valid", c.n_valid},
                     {"n_test", c.n_test},
                     {"model", c.model},
                     {"limits", {{"max_src_len", c.limits.max_src_len}, {"max_tgt_len", c.limits.max_tgt_len}}},
                     {"pretrain", c.pretrain},
                     {"adapt", c.adapt},
                     {"finetune", c.finetune},
                     {"decode", c.decode},
                     {"skip_adapt", c.skip_adapt},
                     {"seed", c.seed},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  if (!j.is_object()) throw ValidationError("pipeline config must be a JSON object");
  static const std::set<std::string> known{"generator", "n_valid", "n_test",  "model",      "limits", "pretrain",
                                           "adapt",     "finetune", "decode", "skip_adapt", "seed",   "threads"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("unknown config key '" + key + "'");
  }
  if (j.contains("generator")) j.at("generator").get_to(c.generator);
  c.n_valid = j.value("n_valid", c.n_valid);
  c.n_test = j.value("n_test", c.n_test);
  if (j.contains("model")) {
    // Partial model sections keep the pipeline defaults for absent keys.
    nlohmann::json merged = c.model;
    merged.update(j.at("model"));
    merged.get_to(c.model);
  }
  if (j.contains("limits")) {
    const auto& l = j.at("limits");
    c.limits.max_src_len = l.value("max_src_len", c.limits.max_src_len);
    c.limits.max_tgt_len = l.value("max_tgt_len", c.limits.max_tgt_len);
  }
  if (j.contains("pretrain")) j.at("pretrain").get_to(c.pretrain);
  if (j.contains("adapt")) j.at("adapt").get_to(c.adapt);
  if (j.contains("finetune")) j.at("finetune").get_to(c.finetune);
  if (j.contains("decode")) j.at("decode").get_to(c.decode);
  c.skip_adapt = j.value("skip_adapt", c.skip_adapt);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  PipelineConfig cfg;
  try {
    j.get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return cfg;
}

Corpus build_corpus(const data::GeneratorSpec& spec, std::int64_t n_valid, std::int64_t n_test) {
  auto all = data::generate_corpus(spec);
  const auto n = static_cast<std::int64_t>(all.size());
  if (n_valid < 0 || n_test < 0 || n_valid + n_test >= n) {
    throw ValidationError("split sizes " + std::to_string(n_valid) + "/" + std::to_string(n_test) + " do not fit " +
                          std::to_string(n) + " examples");
  }
  Corpus c;
  const auto train_end = all.begin() + (n - n_valid - n_test);
  const auto valid_end = train_end + n_valid;
  c.train.assign(all.begin(), train_end);
  c.valid.assign(train_end, valid_end);
  c.test.assign(valid_end, all.end());
  return c;
}

data::Vocabulary corpus_vocab(const Corpus& corpus) {
  std::vector<std::string> texts;
  for (const auto& ex : corpus.train) {
    texts.push_back(ex.body);
    texts.push_back(ex.original);
    texts.push_back(ex.edited);
  }
  return data::build_vocab(texts, 1);
}

std::vector<data::Example> bodies_only(const std::vector<data::Example>& examples) {
  std::vector<data::Example> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back({ex.body, "", "", ex.domain});
  return out;
}

Pipeline::Pipeline(const PipelineConfig& cfg, Corpus corpus)
    : Pipeline(cfg, corpus, corpus_vocab(corpus)) {}

Pipeline::Pipeline(const PipelineConfig& cfg, Corpus corpus, data::Vocabulary vocab)
    : cfg_(cfg.resolved()), corpus_(std::move(corpus)), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (corpus_.train.empty() || corpus_.valid.empty() || corpus_.test.empty()) {
    throw EmptyInputError("pipeline needs non-empty train, valid and test splits");
  }
  std::vector<std::string> targets;
  for (const auto& ex : corpus_.train) targets.push_back(ex.edited);
  rep_ref_ = metrics::build_rep_ref(metrics::tokenize(targets, vocab_));
}

model::ModelConfig Pipeline::model_config() const {
  model::ModelConfig m = cfg_.model;
  m.vocab_size = static_cast<num::Index>(vocab_.size());
  m.max_positions = std::max(cfg_.limits.max_src_len, cfg_.limits.max_tgt_len) + 1;
  return m;
}

model::SeqModel Pipeline::initial_model() const { return model::SeqModel(model_config()); }

StageResult Pipeline::pretrain(const model::SeqModel& init) const {
  const auto train = bodies_only(corpus_.train);
  const auto valid = bodies_only(corpus_.valid);
  return train_stage(cfg_.pretrain, {train, valid}, vocab_, init, cfg_.limits);
}

StageResult Pipeline::adapt(const model::SeqModel& init) const {
  return train_stage(cfg_.adapt, {corpus_.train, corpus_.valid}, vocab_, init, cfg_.limits);
}

StageResult Pipeline::finetune(const model::SeqModel& init, const TrainConfig& cfg) const {
  return train_stage(cfg, {corpus_.train, corpus_.valid}, vocab_, init, cfg_.limits);
}

Evaluation Pipeline::evaluate(const model::SeqModel& m) const {
  Evaluation e;
  e.generated = decode::batch_generate(m, corpus_.test, vocab_, cfg_.decode, data::Task::kEdit, cfg_.limits, cfg_.threads);
  e.report = metrics::evaluate(m, corpus_.test, e.generated, vocab_, rep_ref_, cfg_.limits);
  return e;
}

namespace {

template <class Fn>
auto in_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.category(), std::string(stage) + ": " + e.what());
  }
}

}  // namespace

PasResult run_pas(const Pipeline& p, const std::optional<std::filesystem::path>& out) {
  if (out) std::filesystem::create_directories(*out);
  auto ckpt = [&](const char* stage) { return out ? (*out / (std::string(stage) + ".ckpt")) : std::filesystem::path{}; };

  std::vector<RunRecord> records;
  auto keep = [&](StageResult r, const char* stage) {
    if (out) r.model.save(ckpt(stage));
    records.push_back(std::move(r.record));
    return std::move(r.model);
  };

  model::SeqModel m = in_stage("pretrain", [&] { return keep(p.pretrain(p.initial_model()), "pretrain"); });
  if (!p.config().skip_adapt) m = in_stage("adapt", [&] { return keep(p.adapt(m), "adapt"); });
  m = in_stage("finetune", [&] { return keep(p.finetune(m), "finetune"); });
  Evaluation test = in_stage("evaluate", [&] { return p.evaluate(m); });
  records.back().metrics = test.report;

  if (out) {
    nlohmann::json resolved = p.config();
    write_text(*out / "config.json", resolved.dump(2) + "\n");
    write_text(*out / "records.json", nlohmann::json(records).dump(2) + "\n");
    write_text(*out / "metrics.json", nlohmann::json(test.report).dump(2) + "\n");
    write_text(*out / "metrics.csv", metrics::MetricsReport::csv_header() + "\n" + test.report.csv_row() + "\n");
    std::string gen;
    for (const auto& g : test.generated) gen += g + "\n";
    write_text(*out / "generated.txt", gen);
    p.vocab().save(*out / "vocab.txt");
  }
  return {std::move(records), std::move(test), std::move(m)};
}

SweepParam parse_sweep_param(std::string_view name) {
  if (name == "alpha") return SweepParam::kAlpha;
  if (name == "beta") return SweepParam::kBeta;
  if (name == "joint") return SweepParam::kJoint;
  throw ValidationError("unknown sweep parameter '" + std::string(name) + "'");
}

std::vector<std::pair<double, double>> sweep_grid(SweepParam param, const std::vector<double>& alphas,
                                                  const std::vector<double>& betas, const losses::SIAConfig& base) {
  std::vector<std::pair<double, double>> grid;
  switch (param) {
    case SweepParam::kAlpha:
      for (double a : alphas) grid.emplace_back(a, base.beta);
      break;
    case SweepParam::kBeta:
      for (double b : betas) grid.emplace_back(base.alpha, b);
      break;
    case SweepParam::kJoint:
      for (double a : alphas) {
        for (double b : betas) grid.emplace_back(a, b);
      }
      break;
  }
  if (grid.empty()) throw ValidationError("sweep grid is empty");
  return grid;
}

SweepResult sweep(const Pipeline& p, const model::SeqModel& start, const std::vector<std::pair<double, double>>& grid) {
  if (grid.empty()) throw ValidationError("sweep grid is empty");
  SweepResult result;
  for (const auto& [alpha, beta] : grid) {
    TrainConfig cfg = p.config().finetune;
    cfg.loss = LossKind::kSia;
    cfg.sia.alpha = alpha;
    cfg.sia.beta = beta;
    const auto tuned = p.finetune(start, cfg);
    result.rows.push_back({alpha, beta, p.evaluate(tuned.model).report});
  }
  return result;
}

std::string SweepResult::csv() const {
  std::ostringstream out;
  out << "alpha,beta," << metrics::MetricsReport::csv_header() << "\n";
  for (const auto& r : rows) {
    nlohmann::json a = r.alpha, b = r.beta;
    out << a.dump() << "," << b.dump() << "," << r.report.csv_row() << "\n";
  }
  return out.str();
}

nlohmann::json SweepResult::json() const {
  static const char* const kNames[] = {"perplexity", "bleu4", "rouge_l", "token_rep4", "sent_rep4", "unique4"};
  nlohmann::json rows_json = nlohmann::json::array();
  std::vector<nlohmann::json> reports;
  for (const auto& r : rows) {
    reports.push_back(r.report);
    rows_json.push_back({{"alpha", r.alpha}, {"beta", r.beta}, {"metrics", reports.back()}});
  }
  nlohmann::json normalized = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) normalized.push_back({{"alpha", rows[i].alpha}, {"beta", rows[i].beta}});
  for (const char* name : kNames) {
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = reports[i][name].get<double>();
      lo = i == 0 ? v : std::min(lo, v);
      hi = i == 0 ? v : std::max(hi, v);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = reports[i][name].get<double>();
      normalized[i][name] = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    }
  }
  return {{"rows", rows_json}, {"normalized", normalized}};
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("SIA_SEQ_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) {
    throw ValidationError("SIA_SEQ_THREADS must be an integer in [1, 256], got '" + std::string(raw) + "'");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace siaedit::pipeline
