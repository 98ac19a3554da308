// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace monoattn {

/// One example as token ids. `source` and `target` both end with the
/// end-of-sequence id; `separator` is the 0-based index of the separator
/// token in `source`, when the task has one.
struct EncodedExample {
  std::vector<int> source;
  std::vector<int> target;
  std::optional<std::size_t> separator;
};

/// Padded [rows x cols] matrix of token ids.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;

  int operator()(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

/// A padded batch with the true length of every row.
struct Batch {
  TokenMatrix source;
  std::vector<std::size_t> source_lengths;
  TokenMatrix target;
  std::vector<std::size_t> target_lengths;
  std::vector<std::optional<std::size_t>> separators;
  int pad_id = 0;

  std::size_t size() const noexcept { return source_lengths.size(); }
  std::span<const int> source_row(std::size_t i) const {
    return {source.ids.data() + i * source.cols, source_lengths[i]};
  }
  std::span<const int> target_row(std::size_t i) const {
    return {target.ids.data() + i * target.cols, target_lengths[i]};
  }
  std::size_t target_tokens() const;

  /// Throws InputError when lengths exceed the matrix extents or a
  /// separator lies outside its source row.
  void validate() const;
};

/// Pads to the longest row. `min_source_cols` lets callers add extra
/// padding columns (used to check padding invariance).
Batch make_batch(std::span<const EncodedExample> examples, int pad_id, std::size_t min_source_cols = 0);

}  // namespace monoattn
