// SPDX-License-Identifier: Apache-2.0
#include "monoattn/batch.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "monoattn/error.hpp"

namespace monoattn {

std::size_t Batch::target_tokens() const {
  return std::accumulate(target_lengths.begin(), target_lengths.end(), std::size_t{0});
}

void Batch::validate() const {
  const std::size_t n = size();
  if (target_lengths.size() != n || separators.size() != n) throw InputError("batch: inconsistent example counts");
  if (source.rows != n || target.rows != n) throw InputError("batch: matrix rows do not match example count");
  if (source.ids.size() != source.rows * source.cols || target.ids.size() != target.rows * target.cols) {
    throw InputError("batch: token matrix storage does not match its extents");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (source_lengths[i] > source.cols || target_lengths[i] > target.cols) {
      throw InputError("batch: example " + std::to_string(i) + " length exceeds matrix extent");
    }
    if (separators[i] && *separators[i] >= source_lengths[i]) {
      throw InputError("batch: example " + std::to_string(i) + " separator outside source");
    }
  }
}

Batch make_batch(std::span<const EncodedExample> examples, int pad_id, std::size_t min_source_cols) {
  Batch batch;
  batch.pad_id = pad_id;
  std::size_t src_cols = min_source_cols;
  std::size_t tgt_cols = 0;
  for (const auto& ex : examples) {
    src_cols = std::max(src_cols, ex.source.size());
    tgt_cols = std::max(tgt_cols, ex.target.size());
  }
  batch.source = {examples.size(), src_cols, std::vector<int>(examples.size() * src_cols, pad_id)};
  batch.target = {examples.size(), tgt_cols, std::vector<int>(examples.size() * tgt_cols, pad_id)};
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    std::copy(ex.source.begin(), ex.source.end(), batch.source.ids.begin() + static_cast<std::ptrdiff_t>(i * src_cols));
    std::copy(ex.target.begin(), ex.target.end(), batch.target.ids.begin() + static_cast<std::ptrdiff_t>(i * tgt_cols));
    batch.source_lengths.push_back(ex.source.size());
    batch.target_lengths.push_back(ex.target.size());
    batch.separators.push_back(ex.separator);
  }
  batch.validate();
  return batch;
}

}  // namespace monoattn
