// SPDX-License-Identifier: Apache-2.0
//
// Scaled dot-product soft attention, the multihead wrapper and DropHead.
#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "monoattn/ndgrad.hpp"

namespace monoattn::attention {

/// Energy assigned to masked positions before the softmax. exp(-1e9) is 0 in
/// double precision, so masked weights are exactly zero.
inline constexpr double kMaskedEnergy = -1e9;

/// Row-stochastic target-to-source weights of one attention mechanism for one
/// sequence. Rows are target steps, columns source positions.
struct AttentionWeights {
  std::size_t layer = 0;
  std::size_t head = 0;
  nd::Array weights;
  std::vector<bool> source_mask;  ///< valid columns
  std::vector<bool> target_mask;  ///< valid rows
  /// Graph node holding `weights` when produced inside a differentiable pass.
  std::optional<nd::Var> node;

  std::size_t rows() const { return weights.rows(); }
  std::size_t cols() const { return weights.cols(); }
};

struct AttentionMask {
  std::vector<bool> source;  ///< empty means every column is valid
  bool causal = false;       ///< column j > row i is masked
};

struct AttendResult {
  nd::Var context;
  AttentionWeights weights;
};

/// Softmax(q k^T / sqrt(d)) v for queries [|Y| x d], keys and values [|X| x d].
/// Throws InputError when a row has no unmasked column.
AttendResult attend(nd::Var queries, nd::Var keys, nd::Var values, const AttentionMask& mask = {});

struct DropHeadPlan {
  double rate = 0.0;
  std::vector<bool> keep;
  double rescale = 1.0;  ///< heads / kept heads

  std::size_t kept() const;
};

/// Drops each head independently with probability `rate`, resampling until
/// at least one head survives. Throws ConfigError unless 0 <= rate < 1.
DropHeadPlan sample_drophead(std::size_t heads, double rate, std::mt19937_64& rng);

/// Learned projections of one multihead block, each [d x d].
struct MultiHeadParams {
  nd::Var query;
  nd::Var key;
  nd::Var value;
  nd::Var output;
};

/// Row range of one sequence inside a row-stacked matrix.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct MultiHeadResult {
  nd::Var output;
  /// weights[s][h] for segment s and head h.
  std::vector<std::vector<AttentionWeights>> weights;
};

/// Multihead attention over row-stacked sequences. Query segment s attends to
/// key/value segment s only. Projections run once over the stacked rows.
MultiHeadResult multihead_attend_segments(const MultiHeadParams& params, nd::Var queries, nd::Var keys,
                                          nd::Var values, std::span<const Segment> query_segments,
                                          std::span<const Segment> memory_segments, std::size_t heads,
                                          std::span<const AttentionMask> masks, const DropHeadPlan* plan,
                                          std::size_t layer);

/// Single-sequence multihead attention. `keys` and `values` are the inputs
/// to the key and value projections.
MultiHeadResult multihead_attend(const MultiHeadParams& params, nd::Var queries, nd::Var keys, nd::Var values,
                                 std::size_t heads, const AttentionMask& mask = {},
                                 const DropHeadPlan* plan = nullptr, std::size_t layer = 0);

}  // namespace monoattn::attention
