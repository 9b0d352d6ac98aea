// siaedit command-line entry point.
#include "siaedit/errors.hpp"
#include "siaedit/pipeline/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace siaedit;
using pipeline::PipelineConfig;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, beta, temperature, length_norm_lambda;
  std::optional<std::int64_t> beam_size;
  std::optional<std::string> loss;
  bool skip_adapt = false;

  std::string data;
  std::string init;
  std::string model;
  std::string vocab;
  std::string train;
  std::string generated;

  std::string sweep_param = "alpha";
  std::vector<double> alphas{0.0, 0.5, 1.0};
  std::vector<double> betas{0.0, 20.0, 40.0};
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + one_line(e.what()));
  }
}

template <class T>
void get_checked(const nlohmann::json& j, T& value, const std::string& what) {
  try {
    j.get_to(value);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": " + one_line(e.what()));
  }
}

// A bare generator spec is accepted wherever a pipeline config is.
bool looks_like_generator_spec(const nlohmann::json& j) {
  if (!j.is_object()) return false;
  static const char* const kKeys[] = {"n_examples", "generic_fraction", "template_pool_size", "content_vocab_size",
                                      "body_length_range", "headline_length_range", "rewrite_fraction",
                                      "half_edit_fraction"};
  return std::any_of(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return j.contains(k); });
}

PipelineConfig resolve_config(const Options& o) {
  PipelineConfig cfg;
  if (!o.config.empty()) {
    const auto j = read_json(o.config);
    if (looks_like_generator_spec(j)) {
      get_checked(j, cfg.generator, o.config);
    } else {
      get_checked(j, cfg, o.config);
    }
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.alpha) cfg.finetune.sia.alpha = *o.alpha;
  if (o.beta) cfg.finetune.sia.beta = *o.beta;
  if (o.beam_size) cfg.decode.beam_size = *o.beam_size;
  if (o.temperature) cfg.decode.temperature = *o.temperature;
  if (o.length_norm_lambda) cfg.decode.length_norm_lambda = *o.length_norm_lambda;
  if (o.loss) cfg.finetune.loss = pipeline::parse_loss(*o.loss);
  if (o.skip_adapt) cfg.skip_adapt = true;
  cfg.threads = pipeline::threads_from_env();
  cfg.validate();
  return cfg.resolved();
}

fs::path prepare_out(const Options& o) {
  fs::path out(o.out);
  fs::create_directories(out);
  return out;
}

struct LoadedData {
  pipeline::Corpus corpus;
  data::Vocabulary vocab;
};

// Corpus from a gen-data directory, or freshly generated from the config.
LoadedData load_corpus(const Options& o, const PipelineConfig& cfg) {
  if (o.data.empty()) {
    auto corpus = pipeline::build_corpus(cfg.generator, cfg.n_valid, cfg.n_test);
    auto vocab = pipeline::corpus_vocab(corpus);
    return {std::move(corpus), std::move(vocab)};
  }
  const fs::path dir(o.data);
  if (!fs::is_directory(dir)) throw IoError("--data must name a gen-data output directory here: " + o.data);
  pipeline::Corpus c{data::load_jsonl(dir / "train.jsonl"), data::load_jsonl(dir / "valid.jsonl"),
                     data::load_jsonl(dir / "test.jsonl")};
  auto vocab = fs::exists(dir / "vocab.txt") ? data::Vocabulary::load(dir / "vocab.txt") : pipeline::corpus_vocab(c);
  return {std::move(c), std::move(vocab)};
}

int cmd_gen_data(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto out = prepare_out(o);
  const auto corpus = pipeline::build_corpus(cfg.generator, cfg.n_valid, cfg.n_test);
  data::save_jsonl(corpus.train, out / "train.jsonl");
  data::save_jsonl(corpus.valid, out / "valid.jsonl");
  data::save_jsonl(corpus.test, out / "test.jsonl");
  pipeline::corpus_vocab(corpus).save(out / "vocab.txt");
  write_json(out / "config.json", cfg);
  std::printf("wrote %zu/%zu/%zu examples to %s\n", corpus.train.size(), corpus.valid.size(), corpus.test.size(),
              out.string().c_str());
  return 0;
}

int cmd_stage(const Options& o, pipeline::Stage stage) {
  const auto cfg = resolve_config(o);
  const auto out = prepare_out(o);
  auto loaded = load_corpus(o, cfg);
  const pipeline::Pipeline p(cfg, std::move(loaded.corpus), std::move(loaded.vocab));
  const auto init = o.init.empty() ? p.initial_model() : model::SeqModel::load(o.init, p.model_config());

  pipeline::TrainConfig tc = stage == pipeline::Stage::kPretrain ? p.config().pretrain
                             : stage == pipeline::Stage::kAdapt  ? p.config().adapt
                                                                 : p.config().finetune;
  const std::string name(pipeline::stage_name(stage));
  tc.init_checkpoint = o.init;
  tc.out_checkpoint = (out / (name + ".ckpt")).string();
  pipeline::StageResult r = [&] {
    switch (stage) {
      case pipeline::Stage::kPretrain: {
        const auto train = pipeline::bodies_only(p.corpus().train);
        const auto valid = pipeline::bodies_only(p.corpus().valid);
        return pipeline::train_stage(tc, {train, valid}, p.vocab(), init, cfg.limits);
      }
      default:
        return pipeline::train_stage(tc, {p.corpus().train, p.corpus().valid}, p.vocab(), init, cfg.limits);
    }
  }();
  p.vocab().save(out / "vocab.txt");
  write_json(out / "record.json", r.record);
  write_json(out / "config.json", cfg);
  std::printf("%s: %lld steps, best validation perplexity %.4f at step %lld\n", name.c_str(),
              static_cast<long long>(r.record.steps_run), r.record.best_valid_perplexity,
              static_cast<long long>(r.record.best_step));
  return 0;
}

struct EvalInputs {
  std::vector<data::Example> test;
  std::vector<data::Example> train;
  data::Vocabulary vocab;
};

EvalInputs load_eval_inputs(const Options& o) {
  if (o.data.empty()) throw ValidationError("--data is required");
  const fs::path data_path(o.data);
  const bool is_dir = fs::is_directory(data_path);
  const fs::path dir = is_dir ? data_path : data_path.parent_path();
  const fs::path test = is_dir ? dir / "test.jsonl" : data_path;
  const fs::path vocab = o.vocab.empty() ? dir / "vocab.txt" : fs::path(o.vocab);
  const fs::path train = o.train.empty() ? dir / "train.jsonl" : fs::path(o.train);
  return {data::load_jsonl(test), data::load_jsonl(train), data::Vocabulary::load(vocab)};
}

model::SeqModel load_model(const Options& o, const data::Vocabulary& vocab) {
  if (o.model.empty()) throw ValidationError("--model is required");
  auto m = model::SeqModel::load(o.model);
  if (static_cast<std::size_t>(m.config().vocab_size) != vocab.size()) {
    throw FormatError("checkpoint vocab_size " + std::to_string(m.config().vocab_size) +
                      " does not match vocabulary size " + std::to_string(vocab.size()));
  }
  return m;
}

std::string joined_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

int cmd_generate(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto out = prepare_out(o);
  const auto in = load_eval_inputs(o);
  const auto m = load_model(o, in.vocab);
  const auto generated =
      decode::batch_generate(m, in.test, in.vocab, cfg.decode, data::Task::kEdit, cfg.limits, cfg.threads);
  write_text(out / "generated.txt", joined_lines(generated));
  write_json(out / "config.json", cfg);
  std::printf("generated %zu headlines\n", generated.size());
  return 0;
}

int cmd_evaluate(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto out = prepare_out(o);
  const auto in = load_eval_inputs(o);
  const auto m = load_model(o, in.vocab);
  std::vector<std::string> generated;
  if (o.generated.empty()) {
    generated = decode::batch_generate(m, in.test, in.vocab, cfg.decode, data::Task::kEdit, cfg.limits, cfg.threads);
    write_text(out / "generated.txt", joined_lines(generated));
  } else {
    generated = read_lines(o.generated);
  }
  std::vector<std::string> targets;
  for (const auto& ex : in.train) targets.push_back(ex.edited);
  const auto ref = metrics::build_rep_ref(metrics::tokenize(targets, in.vocab));
  const auto report = metrics::evaluate(m, in.test, generated, in.vocab, ref, cfg.limits);
  write_json(out / "metrics.json", report);
  write_text(out / "metrics.csv", metrics::MetricsReport::csv_header() + "\n" + report.csv_row() + "\n");
  write_json(out / "config.json", cfg);
  std::printf("%s\n%s\n", metrics::MetricsReport::csv_header().c_str(), report.csv_row().c_str());
  return 0;
}

int cmd_sweep(const Options& o) {
  auto cfg = resolve_config(o);
  const auto out = prepare_out(o);
  auto loaded = load_corpus(o, cfg);
  const pipeline::Pipeline p(cfg, std::move(loaded.corpus), std::move(loaded.vocab));
  const auto grid =
      pipeline::sweep_grid(pipeline::parse_sweep_param(o.sweep_param), o.alphas, o.betas, p.config().finetune.sia);
  model::SeqModel start = [&] {
    if (!o.init.empty()) return model::SeqModel::load(o.init, p.model_config());
    auto m = p.pretrain(p.initial_model()).model;
    if (!p.config().skip_adapt) m = p.adapt(m).model;
    m.save(out / "start.ckpt");
    return m;
  }();
  const auto result = pipeline::sweep(p, start, grid);
  write_text(out / "sweep.csv", result.csv());
  write_json(out / "sweep.json", result.json());
  nlohmann::json resolved = p.config();
  resolved["sweep"] = {{"param", o.sweep_param}, {"grid", grid}, {"init", o.init}};
  write_json(out / "config.json", resolved);
  std::printf("%s", result.csv().c_str());
  return 0;
}

int cmd_run_pas(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto out = prepare_out(o);
  auto loaded = load_corpus(o, cfg);
  const pipeline::Pipeline p(cfg, std::move(loaded.corpus), std::move(loaded.vocab));
  const auto r = pipeline::run_pas(p, out);
  std::printf("%s\n%s\n", metrics::MetricsReport::csv_header().c_str(), r.test.report.csv_row().c_str());
  return 0;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON pipeline config (or bare generator spec)")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "output directory")->required();
  sub->add_option("--seed", o.seed, "top-level seed");
  sub->add_option("--alpha", o.alpha, "token-level SIA exponent");
  sub->add_option("--beta", o.beta, "sentence-level SIA exponent");
  sub->add_option("--beam-size", o.beam_size, "beam width");
  sub->add_option("--temperature", o.temperature, "decoding temperature");
  sub->add_option("--length-norm-lambda", o.length_norm_lambda, "length penalty exponent");
  sub->add_option("--loss", o.loss, "fine-tuning objective: mle or sia");
  sub->add_flag("--skip-adapt", o.skip_adapt, "skip the adaptation stage");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Headline editing with self importance-aware training"};
  app.require_subcommand(1);
  Options o;

  struct Command {
    const char* name;
    const char* help;
    CLI::App* app = nullptr;
  };
  std::vector<Command> commands{{"gen-data", "generate and split the synthetic corpus"},
                                {"pretrain", "train the decoder as a language model on bodies"},
                                {"adapt", "train body -> headline generation"},
                                {"finetune", "train body + original -> edited headline"},
                                {"generate", "beam-decode edited headlines"},
                                {"evaluate", "score generations on a test set"},
                                {"sweep", "fine-tune over an alpha/beta grid"},
                                {"run-pas", "pretrain, adapt and fine-tune, then evaluate"}};
  for (auto& c : commands) {
    c.app = app.add_subcommand(c.name, c.help);
    add_common(c.app, o);
  }
  for (const char* name : {"pretrain", "adapt", "finetune", "sweep"}) {
    auto* sub = app.get_subcommand(name);
    sub->add_option("--data", o.data, "gen-data output directory");
    sub->add_option("--init", o.init, "checkpoint to start from")->check(CLI::ExistingFile);
  }
  app.get_subcommand("run-pas")->add_option("--data", o.data, "gen-data output directory");
  for (const char* name : {"generate", "evaluate"}) {
    auto* sub = app.get_subcommand(name);
    sub->add_option("--model", o.model, "checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", o.data, "test JSONL file or gen-data directory")->required();
    sub->add_option("--vocab", o.vocab, "vocabulary file (default: next to the data)");
  }
  app.get_subcommand("evaluate")->add_option("--train", o.train, "training JSONL for the Sent-REP-4 reference");
  app.get_subcommand("evaluate")->add_option("--generated", o.generated, "headlines to score, one per line");
  auto* sweep = app.get_subcommand("sweep");
  sweep->add_option("--param", o.sweep_param, "alpha, beta or joint");
  sweep->add_option("--alphas", o.alphas, "alpha grid")->delimiter(',');
  sweep->add_option("--betas", o.betas, "beta grid")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "error: usage: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") return cmd_gen_data(o);
    if (cmd == "pretrain") return cmd_stage(o, pipeline::Stage::kPretrain);
    if (cmd == "adapt") return cmd_stage(o, pipeline::Stage::kAdapt);
    if (cmd == "finetune") return cmd_stage(o, pipeline::Stage::kFinetune);
    if (cmd == "generate") return cmd_generate(o);
    if (cmd == "evaluate") return cmd_evaluate(o);
    if (cmd == "sweep") return cmd_sweep(o);
    return cmd_run_pas(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << one_line(e.what()) << "\n";
    return e.category() == "validation" || e.category() == "parse" ? kExitValidation : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << "\n";
    return kExitFailure;
  }
}
