// SPDX-License-Identifier: Apache-2.0
#include "monoattn/monoloss.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace monoattn::mono {
namespace {

double margin(double delta, double source_length, std::size_t target_length) {
  return delta * source_length / static_cast<double>(target_length);
}

// Hinge argument of pair (i, i+1), before the max.
double hinge_argument(double current, double next, double margin_value, double source_length, Direction direction) {
  const double drop = direction == Direction::kIncreasing ? current - next : next - current;
  return (drop + margin_value) / source_length;
}

void check_positions(std::span<const double> positions, double source_length) {
  if (positions.empty()) throw InputError("monotonicity loss needs at least one target step");
  if (!(source_length >= 1.0)) throw InputError("monotonicity loss needs a non-empty source");
}

double weighted_position(std::span<const double> row, bool normalize) {
  double total = 0.0;
  double position = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    total += row[j];
    position += row[j] * static_cast<double>(j + 1);
  }
  if (normalize) {
    if (total == 0.0) throw InputError("mean attended position: attention row sums to zero");
    return position / total;
  }
  return position;
}

const std::vector<attention::AttentionWeights>& mechanisms_of(const BatchAttention& attn, std::size_t example) {
  if (example >= attn.size()) throw InputError("attention missing for example " + std::to_string(example));
  return attn[example];
}

}  // namespace

std::string to_string(Direction direction) { return direction == Direction::kIncreasing ? "inc" : "dec"; }

Direction parse_direction(const std::string& text) {
  if (text == "inc" || text == "increasing") return Direction::kIncreasing;
  if (text == "dec" || text == "decreasing") return Direction::kDecreasing;
  throw ConfigError("unknown direction '" + text + "' (expected inc or dec)");
}

std::string to_string(HeadId id) { return std::to_string(id.layer) + ":" + std::to_string(id.head); }

HeadMask HeadMask::parse(const std::string& text) {
  if (text == "all") return all();
  if (text == "none") return none();
  std::set<HeadId> heads;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("head mask entry '" + item + "' is not layer:head");
    try {
      std::size_t used = 0;
      const std::string layer = item.substr(0, colon);
      const std::string head = item.substr(colon + 1);
      const unsigned long l = std::stoul(layer, &used);
      if (used != layer.size()) throw std::invalid_argument(layer);
      const unsigned long h = std::stoul(head, &used);
      if (used != head.size()) throw std::invalid_argument(head);
      heads.insert(HeadId{l, h});
    } catch (const std::logic_error&) {
      throw ConfigError("head mask entry '" + item + "' is not layer:head");
    }
  }
  if (heads.empty()) throw ConfigError("empty head mask '" + text + "'");
  return subset(std::move(heads));
}

void HeadMask::validate(std::size_t layers, std::size_t heads) const {
  for (const HeadId& id : heads_) {
    if (id.layer >= layers || id.head >= heads) {
      throw ConfigError("head mask refers to " + mono::to_string(id) + " outside " + std::to_string(layers) +
                        " layers x " + std::to_string(heads) + " heads");
    }
  }
}

std::string HeadMask::to_string() const {
  if (kind_ == Kind::kAll) return "all";
  if (is_none()) return "none";
  std::string out;
  for (const HeadId& id : heads_) out += (out.empty() ? "" : ",") + mono::to_string(id);
  return out;
}

void MonoConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
  if (lambda > 0.0 && heads.is_none()) {
    throw ConfigError("lambda > 0 with an empty head mask: no mechanism would receive the loss");
  }
}

double mean_attended_position(std::span<const double> row) { return weighted_position(row, true); }

std::vector<double> mean_attended_positions(const nd::Array& weights) {
  std::vector<double> out;
  out.reserve(weights.rows());
  for (std::size_t r = 0; r < weights.rows(); ++r) out.push_back(mean_attended_position(weights.row(r)));
  return out;
}

std::vector<double> pairwise_terms(std::span<const double> positions, double source_length, double delta,
                                   Direction direction) {
  check_positions(positions, source_length);
  const double m = margin(delta, source_length, positions.size());
  std::vector<double> terms;
  for (std::size_t i = 0; i + 1 < positions.size(); ++i) {
    terms.push_back(std::max(hinge_argument(positions[i], positions[i + 1], m, source_length, direction), 0.0));
  }
  return terms;
}

double mono_loss(std::span<const double> positions, double source_length, double delta, Direction direction) {
  const std::vector<double> terms = pairwise_terms(positions, source_length, delta, direction);
  // The decreasing direction accumulates from the end of the sequence, so a
  // reversed sequence sums the same terms in the same order.
  double total = 0.0;
  if (direction == Direction::kIncreasing) {
    for (double t : terms) total += t;
  } else {
    for (auto it = terms.rbegin(); it != terms.rend(); ++it) total += *it;
  }
  return total;
}

std::vector<double> mono_loss_grad(std::span<const double> positions, double source_length, double delta,
                                   Direction direction) {
  check_positions(positions, source_length);
  const double m = margin(delta, source_length, positions.size());
  const double step = 1.0 / source_length;
  std::vector<double> grad(positions.size(), 0.0);
  for (std::size_t i = 0; i + 1 < positions.size(); ++i) {
    if (hinge_argument(positions[i], positions[i + 1], m, source_length, direction) <= 0.0) continue;
    const double sign = direction == Direction::kIncreasing ? 1.0 : -1.0;
    grad[i] += sign * step;
    grad[i + 1] -= sign * step;
  }
  return grad;
}

double percent_mono(std::span<const double> positions, double source_length, double delta, Direction direction) {
  check_positions(positions, source_length);
  if (positions.size() < 2) return 1.0;
  const double m = margin(delta, source_length, positions.size());
  std::size_t monotone = 0;
  for (std::size_t i = 0; i + 1 < positions.size(); ++i) {
    const double advance =
        direction == Direction::kIncreasing ? positions[i + 1] - positions[i] : positions[i] - positions[i + 1];
    if (advance >= m) ++monotone;
  }
  return static_cast<double>(monotone) / static_cast<double>(positions.size() - 1);
}

ScoringScope separator_scope(const Batch& batch, std::size_t example) {
  if (example >= batch.size()) throw InputError("separator scope: example index out of range");
  const auto& sep = batch.separators[example];
  if (!sep) throw InputError("separator masking is on but example " + std::to_string(example) + " has no separator");
  const std::size_t length = batch.source_lengths[example];
  if (*sep + 1 >= length) {
    throw InputError("separator of example " + std::to_string(example) + " leaves no columns to score");
  }
  return {*sep + 1, length};
}

ScoringScope scoring_scope(const Batch& batch, std::size_t example, const MonoConfig& config) {
  if (config.separator_masking) return separator_scope(batch, example);
  return {0, batch.source_lengths.at(example)};
}

std::vector<double> scoped_positions(const attention::AttentionWeights& weights, const Batch& batch,
                                     std::size_t example, const MonoConfig& config) {
  const ScoringScope scope = scoring_scope(batch, example, config);
  const std::size_t rows = batch.target_lengths.at(example);
  if (weights.rows() < rows || weights.cols() < scope.end) {
    throw ShapeError("attention of example " + std::to_string(example) + " is smaller than its lengths");
  }
  const bool normalize = !config.separator_masking || config.renormalize;
  std::vector<double> positions;
  positions.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = weights.weights.row(r).subspan(scope.begin, scope.length());
    positions.push_back(weighted_position(row, normalize));
  }
  return positions;
}

MonoReport report_batch(const BatchAttention& attn, const Batch& batch, const MonoConfig& config) {
  if (attn.size() != batch.size()) throw InputError("attention covers a different number of examples than the batch");
  struct Accumulator {
    double loss = 0.0;
    std::size_t zero_terms = 0;
    std::size_t pairs = 0;
  };
  std::map<HeadId, Accumulator> per_head;
  std::size_t tokens = 0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    tokens += batch.target_lengths[e];
    const ScoringScope scope = scoring_scope(batch, e, config);
    for (const auto& w : mechanisms_of(attn, e)) {
      const std::vector<double> positions = scoped_positions(w, batch, e, config);
      if (positions.empty()) continue;
      const double x = static_cast<double>(scope.length());
      Accumulator& acc = per_head[HeadId{w.layer, w.head}];
      const std::vector<double> terms = pairwise_terms(positions, x, config.delta, config.direction);
      acc.loss += mono_loss(positions, x, config.delta, config.direction);
      acc.pairs += terms.size();
      acc.zero_terms += static_cast<std::size_t>(std::count(terms.begin(), terms.end(), 0.0));
    }
  }

  MonoReport report;
  report.target_tokens = tokens;
  const bool use_all = config.heads.is_none();
  double loss_sum = 0.0;
  std::size_t scored = 0;
  std::size_t zero_terms = 0;
  for (const auto& [id, acc] : per_head) {
    HeadReport h;
    h.id = id;
    h.in_loss = config.heads.contains(id);
    h.loss = tokens > 0 ? acc.loss / static_cast<double>(tokens) : 0.0;
    h.pairs = acc.pairs;
    h.pct_mono = acc.pairs > 0 ? static_cast<double>(acc.zero_terms) / static_cast<double>(acc.pairs) : 1.0;
    if (h.in_loss || use_all) {
      loss_sum += h.loss;
      ++scored;
      report.pairs += acc.pairs;
      zero_terms += acc.zero_terms;
    }
    report.heads.push_back(h);
  }
  report.loss = scored > 0 ? loss_sum / static_cast<double>(scored) : 0.0;
  report.pct_mono = report.pairs > 0 ? static_cast<double>(zero_terms) / static_cast<double>(report.pairs) : 1.0;
  return report;
}

ScoreResult score_batch(nd::Graph& graph, const BatchAttention& attn, const Batch& batch, const MonoConfig& config) {
  if (config.lambda > 0.0 && config.heads.is_none()) {
    throw ConfigError("lambda > 0 with an empty head mask: no mechanism would receive the loss");
  }
  ScoreResult result;
  result.report = report_batch(attn, batch, config);

  std::set<HeadId> mechanisms;
  std::vector<nd::Var> terms;
  const bool renormalize = config.separator_masking && config.renormalize;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const ScoringScope scope = scoring_scope(batch, e, config);
    const std::size_t rows = batch.target_lengths[e];
    const double x = static_cast<double>(scope.length());
    nd::Array position_column = nd::Array::zeros({scope.length(), 1});
    for (std::size_t j = 0; j < scope.length(); ++j) position_column[j] = static_cast<double>(j + 1);
    nd::Var positions_const;
    for (const auto& w : mechanisms_of(attn, e)) {
      const HeadId id{w.layer, w.head};
      if (!config.heads.contains(id)) continue;
      mechanisms.insert(id);
      if (rows < 2) continue;
      if (positions_const.graph == nullptr) positions_const = graph.constant(position_column);
      nd::Var alpha = w.node && w.node->graph == &graph ? *w.node : graph.constant(w.weights);
      nd::Var scoped = nd::slice(alpha, 0, rows, scope.begin, scope.end);
      if (renormalize) scoped = nd::row_normalize(scoped);
      nd::Var mean_pos = nd::matmul(scoped, positions_const);
      nd::Var current = nd::slice(mean_pos, 0, rows - 1, 0, 1);
      nd::Var next = nd::slice(mean_pos, 1, rows, 0, 1);
      nd::Var drop = config.direction == Direction::kIncreasing ? nd::subtract(current, next)
                                                                 : nd::subtract(next, current);
      nd::Var hinge =
          nd::max_with_zero(nd::scale(nd::add_scalar(drop, margin(config.delta, x, rows)), 1.0 / x));
      terms.push_back(hinge);
    }
  }
  const std::size_t tokens = batch.target_tokens();
  if (terms.empty() || mechanisms.empty() || tokens == 0) {
    result.loss = graph.constant(nd::Array::scalar(0.0));
    return result;
  }
  nd::Var total = nd::sum(terms.size() == 1 ? terms[0] : nd::concat_rows(terms));
  result.loss = nd::scale(total, 1.0 / (static_cast<double>(mechanisms.size()) * static_cast<double>(tokens)));
  return result;
}

}  // namespace monoattn::mono
