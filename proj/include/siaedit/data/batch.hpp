#pragma once

#include "siaedit/data/corpus.hpp"
#include "siaedit/data/vocabulary.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string_view>
#include <vector>

namespace siaedit::data {

using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Input layouts of the three training stages:
///   pretrain: no encoder input, decoder models the body as a causal LM
///   adapt:    body -> edited headline
///   edit:     body SEP original -> edited headline
enum class Task { kPretrain, kAdapt, kEdit };

Task parse_task(std::string_view name);
std::string_view task_name(Task task);

struct Batch {
  IdMatrix encoder_ids;         // [B x S], PAD padded; S == 0 for pretrain
  IdMatrix decoder_in_ids;      // [B x T], BOS first
  IdMatrix decoder_target_ids;  // [B x T], EOS terminated, PAD padded
  MaskMatrix target_mask;       // [B x T], 1 on non-PAD targets

  Eigen::Index size() const { return decoder_in_ids.rows(); }
  Eigen::Index encoder_length(Eigen::Index row) const;  // non-PAD prefix length
  Eigen::Index target_length(Eigen::Index row) const;
};

struct BatchLimits {
  Eigen::Index max_src_len = 256;
  Eigen::Index max_tgt_len = 32;
};

/// Encoder ids for one example under `task` (empty for pretrain).
std::vector<TokenId> encoder_input(const Example& ex, const Vocabulary& vocab, Task task, const BatchLimits& limits);
/// Target ids without BOS/EOS.
std::vector<TokenId> target_tokens(const Example& ex, const Vocabulary& vocab, Task task, const BatchLimits& limits);

/// Pads the given rows into one batch.
Batch collate(const std::vector<std::vector<TokenId>>& sources, const std::vector<std::vector<TokenId>>& targets);

/// Shuffles with `seed` (no shuffle when seed is the sentinel kNoShuffle) and
/// chunks into batches of at most `batch_size`.
inline constexpr std::uint64_t kNoShuffle = ~std::uint64_t{0};
std::vector<Batch> make_batches(const std::vector<Example>& examples, const Vocabulary& vocab, Task task,
                                std::int64_t batch_size, const BatchLimits& limits, std::uint64_t seed);

}  // namespace siaedit::data
