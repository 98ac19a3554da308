// SPDX-License-Identifier: Apache-2.0
#include "monoattn/metrics.hpp"

#include <charconv>
#include <sstream>

#include "monoattn/error.hpp"

namespace monoattn::metrics {
namespace {

void require_nonempty(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw InputError("metric over an empty set of pairs");
  for (const auto& p : pairs) {
    if (p.references.empty()) throw InputError("evaluation pair without references");
  }
}

std::size_t min_distance(const EvalPair& pair) {
  return edit_distance(pair.candidate, pair.references[closest_reference(pair)]);
}

}  // namespace

std::size_t closest_reference(const EvalPair& pair) {
  if (pair.references.empty()) throw InputError("evaluation pair without references");
  std::size_t best = 0;
  std::size_t best_distance = edit_distance(pair.candidate, pair.references[0]);
  for (std::size_t i = 1; i < pair.references.size(); ++i) {
    const std::size_t d = edit_distance(pair.candidate, pair.references[i]);
    if (d < best_distance) {
      best = i;
      best_distance = d;
    }
  }
  return best;
}

bool exact_match(const EvalPair& pair) {
  return std::find(pair.references.begin(), pair.references.end(), pair.candidate) != pair.references.end();
}

double wer(std::span<const EvalPair> pairs) {
  require_nonempty(pairs);
  std::size_t wrong = 0;
  for (const auto& p : pairs) wrong += exact_match(p) ? 0 : 1;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(pairs.size());
}

double per(std::span<const EvalPair> pairs, Averaging averaging) {
  require_nonempty(pairs);
  if (averaging == Averaging::kMicro) {
    std::size_t errors = 0, length = 0;
    for (const auto& p : pairs) {
      const std::size_t r = closest_reference(p);
      errors += edit_distance(p.candidate, p.references[r]);
      length += p.references[r].size();
    }
    if (length == 0) throw InputError("PER undefined: total reference length is 0");
    return 100.0 * static_cast<double>(errors) / static_cast<double>(length);
  }
  double total = 0.0;
  for (const auto& p : pairs) {
    const std::size_t r = closest_reference(p);
    if (p.references[r].empty()) throw InputError("macro PER undefined: empty reference");
    total += static_cast<double>(edit_distance(p.candidate, p.references[r])) /
             static_cast<double>(p.references[r].size());
  }
  return 100.0 * total / static_cast<double>(pairs.size());
}

AccuracyLev accuracy_and_lev(std::span<const EvalPair> pairs) {
  require_nonempty(pairs);
  std::size_t correct = 0, distance = 0;
  for (const auto& p : pairs) {
    correct += exact_match(p) ? 1 : 0;
    distance += min_distance(p);
  }
  const double n = static_cast<double>(pairs.size());
  return {100.0 * static_cast<double>(correct) / n, static_cast<double>(distance) / n};
}

double mfs(std::span<const EvalPair> pairs) {
  require_nonempty(pairs);
  double total = 0.0;
  for (const auto& p : pairs) {
    const Sequence& r = p.references[closest_reference(p)];
    const Sequence& c = p.candidate;
    if (c.empty() || r.empty()) continue;
    const double ed = static_cast<double>(edit_distance(c, r));
    const double lcs = 0.5 * (static_cast<double>(c.size() + r.size()) - ed);
    const double recall = lcs / static_cast<double>(r.size());
    const double precision = lcs / static_cast<double>(c.size());
    if (recall + precision > 0.0) total += 2.0 * recall * precision / (recall + precision);
  }
  return 100.0 * total / static_cast<double>(pairs.size());
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"wer", "per", "acc", "lev", "mfs"};
  return names;
}

std::vector<std::string> parse_metric_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string name;
  while (std::getline(in, name, ',')) {
    if (name.empty()) continue;
    const auto& known = metric_names();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("unknown metric '" + name + "' (expected wer, per, acc, lev or mfs)");
    }
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  if (out.empty()) throw ConfigError("empty metric list");
  return out;
}

void MetricReport::set(const std::string& name, double value) {
  for (auto& [n, v] : entries_) {
    if (n == name) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(name, value);
}

double MetricReport::get(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw InputError("report has no value '" + name + "'");
}

bool MetricReport::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::string MetricReport::to_key_values() const {
  std::string out;
  for (const auto& [n, v] : entries_) out += n + "=" + format_number(v) + "\n";
  return out;
}

std::string MetricReport::csv_header() const {
  std::string out;
  for (const auto& [n, v] : entries_) out += (out.empty() ? "" : ",") + n;
  return out;
}

std::string MetricReport::csv_row() const {
  std::string out;
  bool first = true;
  for (const auto& [n, v] : entries_) {
    if (!first) out += ",";
    first = false;
    out += format_number(v);
  }
  return out;
}

MetricReport compute(std::span<const EvalPair> pairs, const std::vector<std::string>& names, Averaging per_averaging) {
  MetricReport report;
  for (const auto& name : names) {
    if (name == "wer") {
      report.set(name, wer(pairs));
    } else if (name == "per") {
      report.set(name, per(pairs, per_averaging));
    } else if (name == "acc") {
      report.set(name, accuracy_and_lev(pairs).accuracy);
    } else if (name == "lev") {
      report.set(name, accuracy_and_lev(pairs).lev);
    } else if (name == "mfs") {
      report.set(name, mfs(pairs));
    } else {
      throw ConfigError("unknown metric '" + name + "'");
    }
  }
  return report;
}

std::string format_number(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace monoattn::metrics
