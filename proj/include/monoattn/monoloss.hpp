// SPDX-License-Identifier: Apache-2.0
//
// Attention monotonicity loss.
//
// For a row-stochastic attention matrix alpha [|Y| x |X|] the mean attended
// position of target step i is
//
//   a_i = sum_j alpha_ij * j          (j = 1..|X|)
//
// and the loss over one sequence is
//
//   L = sum_{i=1}^{|Y|-1} max((a_i - a_{i+1} + delta * |X| / |Y|) / |X|, 0).
//
// delta = 0 penalises any decrease of the mean position; delta = 1 asks for
// an increase of |X|/|Y| per step, i.e. the main diagonal. The decreasing
// direction swaps a_i and a_{i+1}.
#pragma once

#include <compare>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "monoattn/attention.hpp"
#include "monoattn/batch.hpp"
#include "monoattn/ndgrad.hpp"

namespace monoattn::mono {

enum class Direction { kIncreasing, kDecreasing };

/// "inc" or "dec".
std::string to_string(Direction direction);
Direction parse_direction(const std::string& text);

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;
  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId id);

/// The attention mechanisms that feed the loss.
class HeadMask {
 public:
  static HeadMask all() { return HeadMask(Kind::kAll, {}); }
  static HeadMask none() { return HeadMask(Kind::kNone, {}); }
  static HeadMask subset(std::set<HeadId> heads) { return HeadMask(Kind::kSubset, std::move(heads)); }
  /// Parses "all", "none" or a comma list of layer:head pairs.
  static HeadMask parse(const std::string& text);

  bool contains(HeadId id) const { return kind_ == Kind::kAll || (kind_ == Kind::kSubset && heads_.contains(id)); }
  bool is_none() const { return kind_ == Kind::kNone || (kind_ == Kind::kSubset && heads_.empty()); }
  bool is_all() const { return kind_ == Kind::kAll; }
  /// Throws ConfigError if a listed pair is outside layers x heads.
  void validate(std::size_t layers, std::size_t heads) const;
  std::string to_string() const;

 private:
  enum class Kind { kAll, kNone, kSubset };
  HeadMask(Kind kind, std::set<HeadId> heads) : kind_(kind), heads_(std::move(heads)) {}

  Kind kind_;
  std::set<HeadId> heads_;
};

struct MonoConfig {
  double lambda = 0.1;
  double delta = 0.0;
  Direction direction = Direction::kIncreasing;
  HeadMask heads = HeadMask::all();
  /// Score only source columns right of the separator token.
  bool separator_masking = false;
  /// Under separator masking, renormalise rows over the scored columns.
  bool renormalize = true;

  /// Throws ConfigError for lambda < 0, delta outside [0, 1], or a non-zero
  /// lambda with an empty head mask.
  void validate() const;
};

struct HeadReport {
  HeadId id;
  bool in_loss = false;  ///< mechanism belongs to the head mask
  double loss = 0.0;     ///< token-normalised
  double pct_mono = 1.0;
  std::size_t pairs = 0;
};

struct MonoReport {
  /// Mean over scored mechanisms of (summed per-sequence loss / target tokens).
  double loss = 0.0;
  /// Fraction of scored consecutive pairs with a zero hinge term.
  double pct_mono = 1.0;
  std::size_t pairs = 0;
  std::size_t target_tokens = 0;
  std::vector<HeadReport> heads;
};

/// a_i = sum_j row_j * j over 1-based positions. Throws InputError when the row sums to 0.
double mean_attended_position(std::span<const double> row);
std::vector<double> mean_attended_positions(const nd::Array& weights);

/// The |Y|-1 hinge terms in pair order.
std::vector<double> pairwise_terms(std::span<const double> positions, double source_length, double delta,
                                   Direction direction = Direction::kIncreasing);
double mono_loss(std::span<const double> positions, double source_length, double delta,
                 Direction direction = Direction::kIncreasing);
/// dL/da_i: +1/|X| on a_i and -1/|X| on a_{i+1} for each active increasing term.
std::vector<double> mono_loss_grad(std::span<const double> positions, double source_length, double delta,
                                   Direction direction = Direction::kIncreasing);
/// Fraction of pairs that move by at least delta*|X|/|Y| in the configured
/// direction (margin equality counts). 1 when there are no pairs.
double percent_mono(std::span<const double> positions, double source_length, double delta,
                    Direction direction = Direction::kIncreasing);

/// Source columns scored for one example.
struct ScoringScope {
  std::size_t begin = 0;  ///< first column, 0-based
  std::size_t end = 0;    ///< one past the last column
  std::size_t length() const { return end - begin; }
};

/// Columns strictly right of the separator. Throws InputError when the
/// separator is missing or the region after it is empty.
ScoringScope separator_scope(const Batch& batch, std::size_t example);
ScoringScope scoring_scope(const Batch& batch, std::size_t example, const MonoConfig& config);

/// Mean positions of one mechanism on one example, restricted to the scope
/// (rows: scored target steps).
std::vector<double> scoped_positions(const attention::AttentionWeights& weights, const Batch& batch,
                                     std::size_t example, const MonoConfig& config);

/// attn[example][mechanism]
using BatchAttention = std::vector<std::vector<attention::AttentionWeights>>;

/// Plain-value report over every mechanism; no graph involved.
MonoReport report_batch(const BatchAttention& attn, const Batch& batch, const MonoConfig& config);

struct ScoreResult {
  nd::Var loss;
  MonoReport report;
};

/// Differentiable loss (unweighted by lambda) over the mechanisms in the head
/// mask, normalised by the number of scored target tokens, plus the report.
/// Weights carrying a graph node are differentiated through; others enter as
/// constants.
ScoreResult score_batch(nd::Graph& graph, const BatchAttention& attn, const Batch& batch, const MonoConfig& config);

}  // namespace monoattn::mono
