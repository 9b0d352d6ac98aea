#pragma once

#include "siaedit/data/batch.hpp"
#include "siaedit/numcore/ops.hpp"
#include "siaedit/random.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace siaedit::model {

using num::Index;
using num::Tensor;

struct ModelConfig {
  Index n_layers = 2;
  Index hidden = 64;
  Index heads = 4;
  Index ffn_mult = 4;
  Index vocab_size = 0;
  Index max_positions = 0;
  double dropout_rate = 0.0;
  double init_std = 0.02;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Closed-form parameter count for `cfg`.
Index parameter_count(const ModelConfig& cfg);

struct LayerNormParams {
  Tensor gain, bias;
};

// Keys have no bias: it shifts every score of a query equally and cancels in softmax.
struct AttentionParams {
  Tensor wq, bq, wk, wv, bv, wo, bo;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayer {
  LayerNormParams norm_attn;
  AttentionParams self_attn;
  LayerNormParams norm_ffn;
  FeedForwardParams ffn;
};

struct DecoderLayer {
  LayerNormParams norm_self;
  AttentionParams self_attn;
  LayerNormParams norm_cross;
  AttentionParams cross_attn;
  LayerNormParams norm_ffn;
  FeedForwardParams ffn;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Encoder output for one source sequence plus the per-layer cross-attention
/// keys/values derived from it. Empty when the source is empty.
struct EncoderState {
  std::optional<Tensor> memory;  // [S x H]
  std::vector<Tensor> cross_keys, cross_values;

  bool empty() const { return !memory.has_value(); }
  Index length() const { return memory ? memory->dim(0) : 0; }
};

struct ForwardOptions {
  bool train = false;  // enables dropout
  Rng* rng = nullptr;  // required when train && dropout_rate > 0
};

/// Transformer encoder-decoder with pre-norm residual blocks, learned positions,
/// and output projection tied to the shared token embedding.
class SeqModel {
 public:
  explicit SeqModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // Stable order; names are unique.
  std::vector<NamedParameter> parameters() const;
  Index parameter_count() const;

  SeqModel clone() const;
  void zero_grad();

  /// Teacher-forced log-probabilities [B x T x V].
  Tensor forward(const data::Batch& batch, const ForwardOptions& opts = {}) const;

  EncoderState encode(std::span<const data::TokenId> source) const;

  /// Next-token log-probabilities [V] after `prefix` (which starts with BOS).
  Eigen::VectorXd step(const EncoderState& state, std::span<const data::TokenId> prefix) const;
  /// One row of next-token log-probabilities per prefix; prefixes share a length.
  num::RowMatrix step_batch(const EncoderState& state, const std::vector<std::vector<data::TokenId>>& prefixes) const;

  void save(const std::filesystem::path& path) const;
  // Throws FormatError on damage, version skew, or a config that differs from `expected`.
  static SeqModel load(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

  Tensor token_embedding;     // [V x H], also the output projection
  Tensor encoder_positions;   // [P x H]
  Tensor decoder_positions;   // [P x H]
  std::vector<EncoderLayer> encoder_layers;
  std::vector<DecoderLayer> decoder_layers;
  LayerNormParams encoder_norm;
  LayerNormParams decoder_norm;
  Tensor output_bias;  // [V]

 private:
  Tensor run_encoder(const std::vector<data::TokenId>& ids, const std::vector<Index>& positions,
                     std::span<const num::Segment> segments, const ForwardOptions& opts) const;
  // Returns log-probabilities [N x V] for packed decoder inputs.
  Tensor run_decoder(const std::vector<data::TokenId>& ids, const std::vector<Index>& positions,
                     std::span<const num::Segment> segments, const std::vector<Tensor>* cross_keys,
                     const std::vector<Tensor>* cross_values, std::span<const num::Segment> memory_segments,
                     const ForwardOptions& opts) const;

  ModelConfig cfg_;
};

}  // namespace siaedit::model
