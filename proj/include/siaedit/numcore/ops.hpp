#pragma once

#include "siaedit/numcore/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace siaedit::num {

// Binary elementwise ops accept: identical shapes, a scalar right operand, or a
// rank-1 right operand matching the last axis of the left one (row broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // DomainError on non-positive input
Tensor log1p(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
// Elementwise min(x, ceiling); gradient passes only where x < ceiling.
Tensor minimum(const Tensor& x, double ceiling);
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces the last axis.
Tensor sum_last(const Tensor& x);

// Positions where mask is non-zero are replaced by `value` and receive no gradient.
Tensor mask_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape shape);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// out[i] = x[i, ids[i]] with x viewed as [numel/V x V]; result has x's shape minus the last axis.
Tensor gather_last(const Tensor& x, std::span<const Index> ids);
// Rows of a [V x H] table.
Tensor embedding(const Tensor& table, std::span<const Index> ids);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice_rows(const Tensor& x, Index start, Index count);
Tensor concat_rows(std::span<const Tensor> parts);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

/// Contiguous run of rows belonging to one sequence in a packed [N x H] matrix.
struct Segment {
  Index offset = 0;
  Index length = 0;
};

/// Multi-head scaled dot-product attention over packed sequences. Query segment
/// i attends only to key segment i; with `causal`, query row t of a segment sees
/// key rows 0..t of its paired segment.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const Segment> q_segments, std::span<const Segment> k_segments,
                 Index heads, bool causal);

}  // namespace siaedit::num
