// SPDX-License-Identifier: Apache-2.0
#include "monoattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace monoattn::attention {

AttendResult attend(nd::Var queries, nd::Var keys, nd::Var values, const AttentionMask& mask) {
  const nd::Array& q = queries.value();
  const nd::Array& k = keys.value();
  const nd::Array& v = values.value();
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attend: queries " + nd::to_string(q.shape()) + ", keys " + nd::to_string(k.shape()) +
                     ", values " + nd::to_string(v.shape()));
  }
  const std::size_t rows = q.rows();
  const std::size_t cols = k.rows();
  if (!mask.source.empty() && mask.source.size() != cols) {
    throw ShapeError("attend: source mask has " + std::to_string(mask.source.size()) + " entries for " +
                     std::to_string(cols) + " positions");
  }

  std::vector<bool> source_valid = mask.source.empty() ? std::vector<bool>(cols, true) : mask.source;
  nd::Var energies = nd::scale(nd::matmul(queries, nd::transpose(keys)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  bool any_masked = false;
  nd::Array additive = nd::Array::zeros({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    bool row_has_valid = false;
    for (std::size_t j = 0; j < cols; ++j) {
      const bool valid = source_valid[j] && !(mask.causal && j > i);
      if (valid) {
        row_has_valid = true;
      } else {
        additive(i, j) = kMaskedEnergy;
        any_masked = true;
      }
    }
    if (!row_has_valid) throw InputError("attend: every source position is masked in row " + std::to_string(i));
  }
  if (any_masked) energies = nd::add(energies, queries.graph->constant(std::move(additive)));
  nd::Var alpha = nd::row_softmax(energies);

  AttentionWeights weights;
  weights.weights = alpha.value();
  weights.source_mask = std::move(source_valid);
  weights.target_mask.assign(rows, true);
  weights.node = alpha;
  return {nd::matmul(alpha, values), std::move(weights)};
}

std::size_t DropHeadPlan::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

DropHeadPlan sample_drophead(std::size_t heads, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("drophead rate must lie in [0, 1), got " + std::to_string(rate));
  if (heads == 0) throw ConfigError("drophead: at least one head required");
  DropHeadPlan plan;
  plan.rate = rate;
  plan.keep.assign(heads, true);
  if (rate > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    do {
      for (std::size_t h = 0; h < heads; ++h) plan.keep[h] = unit(rng) >= rate;
    } while (plan.kept() == 0);
  }
  plan.rescale = static_cast<double>(heads) / static_cast<double>(plan.kept());
  return plan;
}

MultiHeadResult multihead_attend_segments(const MultiHeadParams& params, nd::Var queries, nd::Var keys,
                                          nd::Var values, std::span<const Segment> query_segments,
                                          std::span<const Segment> memory_segments, std::size_t heads,
                                          std::span<const AttentionMask> masks, const DropHeadPlan* plan,
                                          std::size_t layer) {
  const std::size_t dim = queries.value().cols();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("multihead: " + std::to_string(heads) + " heads do not divide model dimension " +
                      std::to_string(dim));
  }
  if (query_segments.size() != memory_segments.size() || masks.size() != query_segments.size()) {
    throw ShapeError("multihead: segment and mask counts differ");
  }
  if (plan != nullptr && plan->keep.size() != heads) throw ConfigError("multihead: drop plan head count mismatch");

  const std::size_t head_dim = dim / heads;
  nd::Graph& graph = *queries.graph;
  nd::Var q_all = nd::matmul(queries, params.query);
  nd::Var k_all = nd::matmul(keys, params.key);
  nd::Var v_all = nd::matmul(values, params.value);

  MultiHeadResult result;
  std::vector<nd::Var> segment_outputs;
  for (std::size_t s = 0; s < query_segments.size(); ++s) {
    const Segment qs = query_segments[s];
    const Segment ms = memory_segments[s];
    std::vector<nd::Var> head_outputs;
    std::vector<AttentionWeights> head_weights;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * head_dim;
      const std::size_t c1 = c0 + head_dim;
      nd::Var q = nd::slice(q_all, qs.offset, qs.offset + qs.length, c0, c1);
      nd::Var k = nd::slice(k_all, ms.offset, ms.offset + ms.length, c0, c1);
      nd::Var v = nd::slice(v_all, ms.offset, ms.offset + ms.length, c0, c1);
      AttendResult r = attend(q, k, v, masks[s]);
      r.weights.layer = layer;
      r.weights.head = h;
      nd::Var context = r.context;
      if (plan != nullptr) {
        if (!plan->keep[h]) {
          context = graph.constant(nd::Array::zeros({qs.length, head_dim}));
        } else if (plan->rescale != 1.0) {
          context = nd::scale(context, plan->rescale);
        }
      }
      head_outputs.push_back(context);
      head_weights.push_back(std::move(r.weights));
    }
    segment_outputs.push_back(heads == 1 ? head_outputs[0] : nd::concat_cols(head_outputs));
    result.weights.push_back(std::move(head_weights));
  }
  nd::Var stacked = segment_outputs.size() == 1 ? segment_outputs[0] : nd::concat_rows(segment_outputs);
  result.output = nd::matmul(stacked, params.output);
  return result;
}

MultiHeadResult multihead_attend(const MultiHeadParams& params, nd::Var queries, nd::Var keys, nd::Var values,
                                 std::size_t heads, const AttentionMask& mask, const DropHeadPlan* plan,
                                 std::size_t layer) {
  if (keys.value().rows() != values.value().rows()) throw ShapeError("multihead: keys and values differ in length");
  const Segment qs{0, queries.value().rows()};
  const Segment ms{0, keys.value().rows()};
  return multihead_attend_segments(params, queries, keys, values, std::span(&qs, 1), std::span(&ms, 1), heads,
                                   std::span(&mask, 1), plan, layer);
}

}  // namespace monoattn::attention
