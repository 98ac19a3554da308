// SPDX-License-Identifier: Apache-2.0
//
// Task metrics over token sequences, on a percent scale where applicable.
#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace monoattn::metrics {

using Sequence = std::vector<std::string>;

struct EvalPair {
  Sequence candidate;
  /// Acceptable outputs; must not be empty.
  std::vector<Sequence> references;
};

/// Levenshtein distance with unit costs over any random-access sequences.
template <class A, class B>
std::size_t edit_distance(const A& a, const B& b) {
  const std::size_t n = std::size(b);
  std::vector<std::size_t> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  std::size_t i = 0;
  for (const auto& x : a) {
    ++i;
    cur[0] = i;
    std::size_t j = 0;
    for (const auto& y : b) {
      ++j;
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x == y ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

/// Index of the reference closest to the candidate; the first one on ties.
std::size_t closest_reference(const EvalPair& pair);
/// Exact match against any reference.
bool exact_match(const EvalPair& pair);

/// 100 x fraction of candidates matching no reference.
double wer(std::span<const EvalPair> pairs);

enum class Averaging { kMicro, kMacro };
/// Micro: 100 x sum of min edit distances / sum of closest-reference lengths.
/// Macro: mean of the per-pair ratios. Throws InputError on a zero denominator.
double per(std::span<const EvalPair> pairs, Averaging averaging = Averaging::kMicro);

struct AccuracyLev {
  double accuracy = 0.0;  ///< percent exact match
  double lev = 0.0;       ///< mean min edit distance
};
AccuracyLev accuracy_and_lev(std::span<const EvalPair> pairs);

/// Mean character F-score with LCS = (|c| + |r| - ED) / 2 against the closest
/// reference, x100. F is 0 when R + P = 0 or the candidate is empty.
double mfs(std::span<const EvalPair> pairs);

/// Recognised metric names: wer, per, acc, lev, mfs.
const std::vector<std::string>& metric_names();
/// Parses a comma list of metric names. Throws ConfigError on unknown names.
std::vector<std::string> parse_metric_list(const std::string& text);

/// Named values in insertion order.
class MetricReport {
 public:
  void set(const std::string& name, double value);
  double get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, double>>& entries() const noexcept { return entries_; }

  /// `name=value` lines.
  std::string to_key_values() const;
  std::string csv_header() const;
  std::string csv_row() const;

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

/// Computes the named metrics into a report, in the given order.
MetricReport compute(std::span<const EvalPair> pairs, const std::vector<std::string>& names,
                     Averaging per_averaging = Averaging::kMicro);

/// Shortest decimal text that round-trips.
std::string format_number(double value);

}  // namespace monoattn::metrics
