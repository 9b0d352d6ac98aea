#include "siaedit/errors.hpp"
#include "siaedit/model/seq_model.hpp"
#include "siaedit/numcore/grad_check.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace siaedit;
using namespace siaedit::model;
using data::TokenId;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 3, double init_std = 0.5) {
  ModelConfig c;
  c.n_layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.vocab_size = 10;
  c.max_positions = 12;
  c.init_std = init_std;
  c.seed = seed;
  return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, Index vocab) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(data::kUnk + static_cast<TokenId>(rng.index(static_cast<std::uint64_t>(vocab - data::kUnk))));
  return ids;
}

data::Batch random_batch(Rng& rng, Index vocab, std::size_t rows, bool with_encoder) {
  std::vector<std::vector<TokenId>> src, tgt;
  for (std::size_t r = 0; r < rows; ++r) {
    src.push_back(with_encoder ? random_ids(rng, 1 + rng.index(6), vocab) : std::vector<TokenId>{});
    tgt.push_back(random_ids(rng, 1 + rng.index(5), vocab));
  }
  return data::collate(src, tgt);
}

double logsumexp(const num::Values& v, Index start, Index n) {
  double m = v.segment(start, n).maxCoeff();
  return m + std::log((v.segment(start, n).array() - m).exp().sum());
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("siaedit_model_test_" + name);
}

}  // namespace

TEST(ModelConfig, RejectsInvalidSettings) {
  ModelConfig c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(SeqModel{c}, ValidationError);
  c = tiny_config();
  c.vocab_size = 5;
  EXPECT_THROW(SeqModel{c}, ValidationError);
  c = tiny_config();
  c.max_positions = 0;
  EXPECT_THROW(SeqModel{c}, ValidationError);
}

TEST(ModelConfig, JsonRoundTrip) {
  const ModelConfig c = tiny_config(42);
  EXPECT_EQ(nlohmann::json(c).get<ModelConfig>(), c);
}

TEST(InitModel, SameConfigGivesBitIdenticalParameters) {
  const SeqModel a(tiny_config()), b(tiny_config());
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values()) << pa[i].name;
}

TEST(InitModel, DifferentSeedsDiffer) {
  const SeqModel a(tiny_config(1)), b(tiny_config(2));
  EXPECT_NE(a.token_embedding.values(), b.token_embedding.values());
}

TEST(InitModel, LayerNormGainsOneBiasesZero) {
  const SeqModel m(tiny_config());
  for (const auto& p : m.parameters()) {
    if (p.name.ends_with(".gain")) EXPECT_TRUE((p.tensor.values().array() == 1.0).all()) << p.name;
    if (p.name.find("norm") != std::string::npos && p.name.ends_with(".bias")) {
      EXPECT_TRUE((p.tensor.values().array() == 0.0).all()) << p.name;
    }
  }
}

TEST(InitModel, ZeroStdGivesUniformOutput) {
  const SeqModel m(tiny_config(1, 0.0));
  for (const auto& p : m.parameters()) {
    if (!p.name.ends_with(".gain")) EXPECT_TRUE((p.tensor.values().array() == 0.0).all()) << p.name;
  }
  Rng rng(5);
  const auto logp = m.forward(random_batch(rng, 10, 3, true));
  EXPECT_TRUE((logp.values().array() - (-std::log(10.0))).abs().maxCoeff() < 1e-12);
}

TEST(InitModel, ParameterCountMatchesClosedForm) {
  ModelConfig c;
  c.vocab_size = 50;
  c.max_positions = 64;
  // Hand count: embeddings 50*64, positions 2*64*64, per encoder layer 49920,
  // per decoder layer 66624, final norms 256, output bias 50.
  EXPECT_EQ(parameter_count(c), 244786);
  EXPECT_EQ(SeqModel(c).parameter_count(), 244786);
  EXPECT_EQ(SeqModel(tiny_config()).parameter_count(), parameter_count(tiny_config()));
  EXPECT_LE(parameter_count(tiny_config()), 10000);
}

TEST(Forward, RowsAreLogNormalized) {
  const SeqModel m(tiny_config());
  Rng rng(7);
  const auto batch = random_batch(rng, 10, 4, true);
  const auto logp = m.forward(batch);
  ASSERT_EQ(logp.shape(), (num::Shape{batch.size(), batch.decoder_in_ids.cols(), 10}));
  for (Index r = 0; r < logp.numel() / 10; ++r) EXPECT_NEAR(logsumexp(logp.values(), r * 10, 10), 0.0, 1e-9);
}

TEST(Forward, EmptyEncoderIsCausalLm) {
  const SeqModel m(tiny_config());
  Rng rng(8);
  const auto logp = m.forward(random_batch(rng, 10, 3, false));
  EXPECT_TRUE(logp.values().allFinite());
}

TEST(Forward, PerturbingLaterDecoderInputLeavesEarlierOutputs) {
  const SeqModel m(tiny_config());
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto batch = random_batch(rng, 10, 2, trial % 2 == 0);
    const Index t_len = batch.decoder_in_ids.cols();
    if (t_len < 2) continue;
    const Index t = 1 + static_cast<Index>(rng.index(static_cast<std::uint64_t>(t_len - 1)));
    const auto before = m.forward(batch);
    batch.decoder_in_ids(0, t) = batch.decoder_in_ids(0, t) == 5 ? 6 : 5;
    const auto after = m.forward(batch);
    for (Index s = 0; s < t; ++s) {
      for (Index v = 0; v < 10; ++v) EXPECT_EQ(before.at({0, s, v}), after.at({0, s, v}));
    }
    bool changed = false;
    for (Index v = 0; v < 10; ++v) changed |= before.at({0, t, v}) != after.at({0, t, v});
    EXPECT_TRUE(changed);
  }
}

TEST(Forward, EncoderPaddingHasNoEffect) {
  SeqModel m(tiny_config());
  const std::vector<std::vector<TokenId>> src{{5, 6}, {7, 8, 9, 4, 5}};
  const std::vector<std::vector<TokenId>> tgt{{4, 5, 6}, {9}};
  const auto padded = data::collate(src, tgt);
  const auto alone = data::collate({src[0]}, {tgt[0]});
  const auto lp_padded = m.forward(padded);
  const auto lp_alone = m.forward(alone);
  for (Index t = 0; t < alone.decoder_in_ids.cols(); ++t) {
    for (Index v = 0; v < 10; ++v) EXPECT_NEAR(lp_padded.at({0, t, v}), lp_alone.at({0, t, v}), 1e-12);
  }

  // Whatever a PAD slot would carry, the padded row still matches its unpadded twin.
  m.token_embedding.mutable_values().head(8).setConstant(3.0);
  const auto lp_perturbed = m.forward(padded);
  const auto lp_alone_perturbed = m.forward(alone);
  for (Index t = 0; t < alone.decoder_in_ids.cols(); ++t) {
    for (Index v = 0; v < 10; ++v) EXPECT_NEAR(lp_perturbed.at({0, t, v}), lp_alone_perturbed.at({0, t, v}), 1e-12);
  }
}

TEST(Forward, LengthOverflowIsRangeError) {
  const SeqModel m(tiny_config());
  const auto long_target = data::collate({{5}}, {std::vector<TokenId>(12, 5)});
  EXPECT_THROW(m.forward(long_target), RangeError);
  const auto long_source = data::collate({std::vector<TokenId>(13, 5)}, {{5}});
  EXPECT_THROW(m.forward(long_source), RangeError);
}

TEST(Step, AgreesWithForwardOnRandomPrefixes) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const SeqModel m(tiny_config(100 + trial));
    const bool with_encoder = trial % 5 != 0;
    const auto src = with_encoder ? random_ids(rng, 1 + rng.index(8), 10) : std::vector<TokenId>{};
    std::vector<TokenId> prefix{data::kBos};
    const auto rest = random_ids(rng, rng.index(8), 10);
    prefix.insert(prefix.end(), rest.begin(), rest.end());

    const auto batch = data::collate({src}, {rest});
    const auto logp = m.forward(batch);
    const auto state = m.encode(src);
    const Eigen::VectorXd step = m.step(state, prefix);
    const Index last = static_cast<Index>(prefix.size()) - 1;
    for (Index v = 0; v < 10; ++v) EXPECT_NEAR(step[v], logp.at({0, last, v}), 1e-12);
  }
}

TEST(Step, EarlierStepsUnchangedByExtension) {
  const SeqModel m(tiny_config());
  const auto state = m.encode(std::vector<TokenId>{5, 6, 7});
  std::vector<TokenId> prefix{data::kBos};
  std::vector<Eigen::VectorXd> seen;
  for (TokenId next : {4, 8, 9, 5}) {
    seen.push_back(m.step(state, prefix));
    prefix.push_back(next);
  }
  for (std::size_t k = 0; k < seen.size(); ++k) {
    EXPECT_EQ(m.step(state, std::span(prefix).first(k + 1)), seen[k]);
  }
}

TEST(Step, BatchMatchesSingle) {
  const SeqModel m(tiny_config());
  const auto state = m.encode(std::vector<TokenId>{5, 6, 7});
  const std::vector<std::vector<TokenId>> prefixes{{1, 4, 5}, {1, 9, 9}, {1, 6, 4}};
  const auto rows = m.step_batch(state, prefixes);
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const Eigen::VectorXd single = m.step(state, prefixes[i]);
    EXPECT_LT((rows.row(static_cast<Index>(i)).transpose() - single).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Step, ZeroInitBosIsUniform) {
  const SeqModel m(tiny_config(1, 0.0));
  const auto logp = m.step(m.encode(std::vector<TokenId>{}), std::vector<TokenId>{data::kBos});
  EXPECT_LT((logp.array() + std::log(10.0)).abs().maxCoeff(), 1e-12);
}

TEST(Step, RejectsBadPrefixes) {
  const SeqModel m(tiny_config());
  const auto state = m.encode(std::vector<TokenId>{5});
  EXPECT_THROW(m.step(state, std::vector<TokenId>{}), ContractError);
  EXPECT_THROW(m.step(state, std::vector<TokenId>{5, 6}), ContractError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const SeqModel m(tiny_config());
  const auto path = temp_path("roundtrip.ckpt");
  m.save(path);
  const SeqModel loaded = SeqModel::load(path, tiny_config());
  Rng rng(12);
  const auto batch = random_batch(rng, 10, 3, true);
  EXPECT_EQ(m.forward(batch).values(), loaded.forward(batch).values());
  EXPECT_EQ(loaded.config(), m.config());
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  const SeqModel m(tiny_config());
  const auto path = temp_path("truncated.ckpt");
  m.save(path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_THROW(SeqModel::load(path), FormatError);
  std::filesystem::resize_file(path, 5);
  EXPECT_THROW(SeqModel::load(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ConfigMismatchIsNamed) {
  const SeqModel m(tiny_config());
  const auto path = temp_path("mismatch.ckpt");
  m.save(path);
  ModelConfig other = tiny_config();
  other.hidden = 16;
  try {
    SeqModel::load(path, other);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("config mismatch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("hidden"), std::string::npos);
    EXPECT_EQ(e.category(), "format");
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, WrongVersionIsFormatError) {
  const SeqModel m(tiny_config());
  const auto path = temp_path("version.ckpt");
  m.save(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  EXPECT_THROW(SeqModel::load(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Clone, CopiesValuesIntoIndependentStorage) {
  const SeqModel m(tiny_config());
  SeqModel c = m.clone();
  EXPECT_EQ(c.token_embedding.values(), m.token_embedding.values());
  c.token_embedding.mutable_values()[0] += 1.0;
  EXPECT_NE(c.token_embedding.values(), m.token_embedding.values());
}

TEST(GradCheck, FullModelTeacherForcedLogLikelihood) {
  const SeqModel m(tiny_config(21));
  Rng rng(13);
  const auto batch = random_batch(rng, 10, 2, true);
  std::vector<Index> targets(batch.decoder_target_ids.data(),
                             batch.decoder_target_ids.data() + batch.decoder_target_ids.size());
  std::vector<std::uint8_t> pad(batch.target_mask.size());
  for (std::size_t i = 0; i < pad.size(); ++i) pad[i] = batch.target_mask.data()[i] == 0;
  auto loss = [&] {
    const auto logp = m.forward(batch);
    return num::neg(num::sum(num::mask_fill(num::gather_last(logp, targets), pad, 0.0)));
  };
  std::vector<num::Tensor> params;
  for (const auto& p : m.parameters()) params.push_back(p.tensor);
  const auto report = num::grad_check_params(loss, params, 1e-5);
  EXPECT_EQ(report.components_checked, parameter_count(tiny_config()));
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_tensor << "[" << report.worst_component << "]";
}
