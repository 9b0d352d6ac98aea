#include "siaedit/data/batch.hpp"

#include "siaedit/errors.hpp"
#include "siaedit/random.hpp"

#include <algorithm>
#include <numeric>

namespace siaedit::data {

Task parse_task(std::string_view name) {
  if (name == "pretrain") return Task::kPretrain;
  if (name == "adapt") return Task::kAdapt;
  if (name == "edit" || name == "finetune") return Task::kEdit;
  throw ValidationError("unknown task '" + std::string(name) + "'");
}

std::string_view task_name(Task task) {
  switch (task) {
    case Task::kPretrain:
      return "pretrain";
    case Task::kAdapt:
      return "adapt";
    case Task::kEdit:
      return "edit";
  }
  return "?";
}

Eigen::Index Batch::encoder_length(Eigen::Index row) const {
  Eigen::Index n = 0;
  while (n < encoder_ids.cols() && encoder_ids(row, n) != kPad) ++n;
  return n;
}

Eigen::Index Batch::target_length(Eigen::Index row) const {
  return static_cast<Eigen::Index>(target_mask.row(row).cast<Eigen::Index>().sum());
}

namespace {

std::vector<TokenId> truncated(std::vector<TokenId> ids, Eigen::Index limit) {
  if (static_cast<Eigen::Index>(ids.size()) > limit) ids.resize(static_cast<std::size_t>(std::max<Eigen::Index>(0, limit)));
  return ids;
}

}  // namespace

std::vector<TokenId> encoder_input(const Example& ex, const Vocabulary& vocab, Task task, const BatchLimits& limits) {
  switch (task) {
    case Task::kPretrain:
      return {};
    case Task::kAdapt:
      return truncated(vocab.encode(ex.body), limits.max_src_len);
    case Task::kEdit: {
      std::vector<TokenId> original = truncated(vocab.encode(ex.original), std::min(limits.max_tgt_len, limits.max_src_len - 2));
      std::vector<TokenId> ids = truncated(vocab.encode(ex.body), limits.max_src_len - 1 - static_cast<Eigen::Index>(original.size()));
      ids.push_back(kSep);
      ids.insert(ids.end(), original.begin(), original.end());
      return ids;
    }
  }
  return {};
}

std::vector<TokenId> target_tokens(const Example& ex, const Vocabulary& vocab, Task task, const BatchLimits& limits) {
  if (task == Task::kPretrain) return truncated(vocab.encode(ex.body), limits.max_src_len);
  return truncated(vocab.encode(ex.edited), limits.max_tgt_len);
}

Batch collate(const std::vector<std::vector<TokenId>>& sources, const std::vector<std::vector<TokenId>>& targets) {
  if (sources.size() != targets.size()) throw DimensionError("collate: source/target row counts differ");
  const auto rows = static_cast<Eigen::Index>(targets.size());
  std::size_t src_len = 0, tgt_len = 0;
  for (const auto& s : sources) src_len = std::max(src_len, s.size());
  for (const auto& t : targets) tgt_len = std::max(tgt_len, t.size() + 1);

  Batch b;
  b.encoder_ids = IdMatrix::Constant(rows, static_cast<Eigen::Index>(src_len), kPad);
  b.decoder_in_ids = IdMatrix::Constant(rows, static_cast<Eigen::Index>(tgt_len), kPad);
  b.decoder_target_ids = IdMatrix::Constant(rows, static_cast<Eigen::Index>(tgt_len), kPad);
  b.target_mask = MaskMatrix::Zero(rows, static_cast<Eigen::Index>(tgt_len));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& src = sources[static_cast<std::size_t>(r)];
    const auto& tgt = targets[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < src.size(); ++i) b.encoder_ids(r, static_cast<Eigen::Index>(i)) = src[i];
    b.decoder_in_ids(r, 0) = kBos;
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      b.decoder_in_ids(r, static_cast<Eigen::Index>(i + 1)) = tgt[i];
      b.decoder_target_ids(r, static_cast<Eigen::Index>(i)) = tgt[i];
    }
    b.decoder_target_ids(r, static_cast<Eigen::Index>(tgt.size())) = kEos;
    for (std::size_t i = 0; i <= tgt.size(); ++i) b.target_mask(r, static_cast<Eigen::Index>(i)) = 1;
  }
  return b;
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, const Vocabulary& vocab, Task task,
                                std::int64_t batch_size, const BatchLimits& limits, std::uint64_t seed) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (seed != kNoShuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<TokenId>> src, tgt;
    for (std::size_t i = start; i < end; ++i) {
      const Example& ex = examples[order[i]];
      src.push_back(encoder_input(ex, vocab, task, limits));
      tgt.push_back(target_tokens(ex, vocab, task, limits));
    }
    batches.push_back(collate(src, tgt));
  }
  return batches;
}

}  // namespace siaedit::data
