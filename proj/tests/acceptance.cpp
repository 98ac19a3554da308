// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "monoattn/corpus.hpp"
#include "monoattn/metrics.hpp"
#include "monoattn/model.hpp"
#include "monoattn/monoloss.hpp"
#include "monoattn/ndgrad.hpp"
#include "monoattn/trainer.hpp"

using namespace monoattn;
using attention::AttentionWeights;
using nd::Array;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::cout << "criterion " << std::setw(2) << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

AttentionWeights mechanism(std::size_t head, Array weights) {
  AttentionWeights w;
  w.head = head;
  w.source_mask.assign(weights.cols(), true);
  w.target_mask.assign(weights.rows(), true);
  w.weights = std::move(weights);
  return w;
}

Batch batch_of(std::size_t x, std::size_t y, std::optional<std::size_t> separator = std::nullopt) {
  EncodedExample e;
  e.source.assign(x, 7);
  e.target.assign(y, 7);
  e.separator = separator;
  return make_batch(std::vector<EncodedExample>{e}, 0);
}

// ---- formula-level criteria --------------------------------------------------

void gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  const double lambda = 0.1;
  int checked = 0;
  double worst = 0.0;
  for (int t = 0; checked < 120 && t < 1000; ++t) {
    const std::size_t x = 2 + rng() % 9, y = 2 + rng() % 7;
    mono::MonoConfig config;
    config.lambda = lambda;
    config.delta = std::array{0.0, 0.5, 1.0}[static_cast<std::size_t>(t) % 3];
    const Batch batch = batch_of(x, y);
    Array energies = Array::zeros({y, x});
    std::normal_distribution<double> n(0.0, 2.0);
    for (double& v : energies.data()) v = n(rng);

    nd::Graph probe(false);
    const auto a = mono::mean_attended_positions(nd::row_softmax(probe.constant(energies)).value());
    bool near_kink = false;
    for (std::size_t i = 0; i + 1 < y; ++i) {
      near_kink |= std::abs((a[i] - a[i + 1] + config.delta * static_cast<double>(x) / static_cast<double>(y)) /
                            static_cast<double>(x)) < 1e-7;
    }
    if (near_kink) continue;

    auto loss = [&](nd::Graph& g, nd::Var e) {
      const nd::Var alpha = nd::row_softmax(e);
      AttentionWeights w = mechanism(0, alpha.value());
      w.node = alpha;
      return nd::scale(mono::score_batch(g, {{w}}, batch, config).loss, lambda);
    };
    worst = std::max(worst, nd::grad_check(loss, energies, 1e-5));
    ++checked;
  }
  const double elapsed = seconds_since(start);
  report(1, checked >= 100 && worst < 1e-4 && elapsed < 10.0,
         std::to_string(checked) + " instances, max relative error " + fmt(worst) + ", " + fmt(elapsed) + " s");
}

void closed_form_examples() {
  struct Case {
    std::vector<double> a;
    double x;
    double delta;
    double expected;
  };
  const std::vector<Case> cases = {
      {{1.0, 1.0, 2.5, 4.0}, 4.0, 0.0, 0.0},
      {{2.0, 1.0}, 4.0, 0.0, 0.25},
      {{2.0, 4.0, 6.0}, 6.0, 1.0, 0.0},
      {{3.0, 3.0, 3.0}, 5.0, 1.0, 2.0 / 3.0},
  };
  double worst = 0.0;
  for (const Case& c : cases) worst = std::max(worst, std::abs(mono::mono_loss(c.a, c.x, c.delta) - c.expected));
  report(2, worst <= 1e-12, "4 examples, max deviation " + fmt(worst));
}

void term_bound() {
  std::mt19937_64 rng(103);
  std::size_t violations = 0;
  double tightest = -1.0;
  for (int t = 0; t < 100000; ++t) {
    const std::size_t x = 2 + rng() % 199, y = 2 + rng() % 30;
    const double xd = static_cast<double>(x), yd = static_cast<double>(y);
    const double delta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    std::vector<double> a(y);
    // Positions of genuine stochastic rows, with one-hot extremes mixed in.
    for (std::size_t i = 0; i < y; ++i) {
      const auto kind = rng() % 4;
      if (kind == 0) a[i] = 1.0;
      else if (kind == 1) a[i] = xd;
      else {
        std::vector<double> row(x);
        std::exponential_distribution<double> ex(1.0);
        double total = 0.0;
        for (double& r : row) total += r = std::pow(ex(rng), 4.0);
        for (double& r : row) r /= total;
        a[i] = mono::mean_attended_position(row);
      }
    }
    const double bound = (xd - 1.0) / xd + delta / yd;
    // The extremes reach the bound exactly, so allow floating-point evaluation error.
    for (double term : mono::pairwise_terms(a, xd, delta)) {
      violations += term > bound * (1.0 + 1e-12);
      tightest = std::max(tightest, term - bound);
    }
  }
  report(3, violations == 0,
         "100000 instances, " + std::to_string(violations) + " violations beyond rounding, max term minus bound " + fmt(tightest));
}

void direction_symmetry() {
  std::mt19937_64 rng(104);
  std::size_t mismatches = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t x = 2 + rng() % 50, y = 1 + rng() % 20;
    const double delta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    std::uniform_real_distribution<double> u(1.0, static_cast<double>(x));
    std::vector<double> a(y);
    for (double& v : a) v = u(rng);
    std::vector<double> reversed(a.rbegin(), a.rend());
    mismatches += mono::mono_loss(a, static_cast<double>(x), delta, mono::Direction::kIncreasing) !=
                  mono::mono_loss(reversed, static_cast<double>(x), delta, mono::Direction::kDecreasing);
  }
  report(4, mismatches == 0, "10000 instances, " + std::to_string(mismatches) + " mismatches");
}

void percent_consistency() {
  std::mt19937_64 rng(105);
  std::size_t mismatches = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t x = 2 + rng() % 20, y = 1 + rng() % 12;
    const double xd = static_cast<double>(x);
    const double delta = std::array{0.0, 0.5, 1.0, 0.25}[rng() % 4];
    const auto dir = rng() % 2 ? mono::Direction::kIncreasing : mono::Direction::kDecreasing;
    std::vector<double> a(y);
    // Integer positions hit the margin exactly; real ones fill the rest.
    for (double& v : a) v = rng() % 2 ? static_cast<double>(1 + rng() % x) : std::uniform_real_distribution<double>(1.0, xd)(rng);
    const auto terms = mono::pairwise_terms(a, xd, delta, dir);
    const double zero = static_cast<double>(std::count(terms.begin(), terms.end(), 0.0));
    const double expected = terms.empty() ? 1.0 : zero / static_cast<double>(terms.size());
    mismatches += mono::percent_mono(a, xd, delta, dir) != expected;
  }
  report(5, mismatches == 0, "10000 instances, " + std::to_string(mismatches) + " mismatches");
}

void margin_semantics() {
  bool ok = true;
  std::ostringstream detail;
  // Exact diagonal paths: square and |X| = 2|Y|.
  for (auto [x, y] : std::vector<std::pair<std::size_t, std::size_t>>{{5, 5}, {6, 3}, {8, 4}}) {
    Array w = Array::zeros({y, x});
    for (std::size_t i = 0; i < y; ++i) w(i, (i + 1) * (x / y) - 1) = 1.0;
    mono::MonoConfig c;
    c.delta = 1.0;
    const double loss = mono::report_batch({{mechanism(0, w)}}, batch_of(x, y), c).loss;
    ok &= loss == 0.0;
    detail << "diagonal " << y << "x" << x << " loss " << fmt(loss) << "; ";
  }
  const std::size_t x = 6, y = 4;
  Array flat = Array::zeros({y, x});
  for (std::size_t i = 0; i < y; ++i) flat(i, 2) = 1.0;
  for (double delta : {0.0, 1e-3, 0.5, 1.0}) {
    mono::MonoConfig c;
    c.delta = delta;
    const double loss = mono::report_batch({{mechanism(0, flat)}}, batch_of(x, y), c).loss;
    ok &= delta == 0.0 ? loss == 0.0 : loss > 0.0;
    detail << "constant delta " << delta << " loss " << fmt(loss) << "; ";
  }
  report(8, ok, detail.str());
}

// All strings over {a,b,c} up to length 6 against a memoised recursion.
void metric_formulas() {
  auto chars = [](const std::string& s) {
    metrics::Sequence out;
    for (char c : s) out.emplace_back(1, c);
    return out;
  };
  auto mfs_of = [&](const std::string& c, const std::string& r) {
    return metrics::mfs(std::vector<metrics::EvalPair>{{chars(c), {chars(r)}}});
  };
  const bool hand = std::abs(mfs_of("abc", "abc") - 100.0) <= 1e-9 && std::abs(mfs_of("ab", "abc") - 80.0) <= 1e-9;

  std::vector<std::string> strings = {""};
  for (std::size_t begin = 0, len = 1; len <= 6; ++len) {
    const std::size_t end = strings.size();
    for (std::size_t i = begin; i < end; ++i)
      for (char c : std::string("abc")) strings.push_back(strings[i] + c);
    begin = end;
  }
  std::size_t mismatches = 0;
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
      std::function<std::size_t(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == a.size()) return b.size() - j;
        if (j == b.size()) return a.size() - i;
        if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
        const std::size_t best = std::min({rec(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1), rec(i + 1, j) + 1, rec(i, j + 1) + 1});
        return memo[{i, j}] = best;
      };
      mismatches += metrics::edit_distance(a, b) != rec(0, 0);
    }
  }
  report(9, hand && mismatches == 0,
         std::string("MFS hand cases ") + (hand ? "exact" : "wrong") + ", " + std::to_string(strings.size() * strings.size()) +
             " string pairs, " + std::to_string(mismatches) + " edit distance mismatches");
}

void separator_encoding() {
  const std::vector<long> positions = model::position_indices(8, 4, model::PositionMode::kSeparatorCentered);
  const bool positions_ok = positions == std::vector<long>{-4, -3, -2, -1, 0, 1, 2, 3};

  // Tags at columns 0..2, separator at 3, lemma plus eos at 4..7.
  const std::size_t x = 8, y = 4;
  Array w = Array::zeros({y, x});
  for (std::size_t i = 0; i < y; ++i) {
    w(i, 2 - std::min<std::size_t>(i, 2)) = 0.8;
    w(i, 4 + i) = 0.2;
  }
  const Batch batch = batch_of(x, y, 3);
  mono::MonoConfig masked;
  masked.separator_masking = true;
  mono::MonoConfig raw_rows = masked;
  raw_rows.renormalize = false;
  const double loss_masked = mono::report_batch({{mechanism(0, w)}}, batch, masked).loss;
  const double loss_raw = mono::report_batch({{mechanism(0, w)}}, batch, raw_rows).loss;
  const double loss_unmasked = mono::report_batch({{mechanism(0, w)}}, batch, mono::MonoConfig{}).loss;
  report(10, positions_ok && loss_masked == 0.0 && loss_raw == 0.0 && loss_unmasked > 0.0,
         std::string("positions ") + (positions_ok ? "[-4..3]" : "wrong") + ", lemma-scoped loss " + fmt(loss_masked) +
             " (unnormalised " + fmt(loss_raw) + "), full-row loss " + fmt(loss_unmasked));
}

// ---- training criteria ---------------------------------------------------------

struct RunResult {
  double test_mono = 0.0;
  double test_pct_mono = 0.0;
  double test_acc = 0.0;
  double dev_mono = 0.0;
  double cpu = 0.0;
  std::vector<mono::HeadReport> heads;
};

std::map<std::string, RunResult> cache;

RunResult run(const std::string& task, std::uint64_t seed, double lambda, const std::string& heads = "all") {
  std::ostringstream key;
  key << task << '/' << seed << '/' << lambda << '/' << heads;
  if (auto it = cache.find(key.str()); it != cache.end()) return it->second;

  corpus::Splits data;
  if (task == "cipher") {
    corpus::CipherOptions o;
    o.seed = seed;
    data = corpus::gen_cipher(o);
  } else {
    corpus::ReorderOptions o;
    o.swap_probability = 0.3;
    o.seed = seed;
    data = corpus::gen_reorder(o);
  }
  trainer::TrainConfig config;
  config.seed = seed;
  config.mono.lambda = lambda;
  config.mono.heads = mono::HeadMask::parse(heads);
  const double cpu_start = cpu_seconds();
  const trainer::FitResult fit = trainer::fit(data.train, data.dev, config);
  RunResult r;
  r.cpu = cpu_seconds() - cpu_start;
  const auto ev = trainer::evaluate(fit.best.model, fit.best.vocab, data.test, config.mono, {"acc"});
  r.test_mono = ev.decoded.loss;
  r.test_pct_mono = ev.decoded.pct_mono;
  r.test_acc = ev.metrics.get("acc");
  r.heads = ev.decoded.heads;
  for (const auto& row : fit.trace)
    if (row.step == fit.best_step) r.dev_mono = row.dev_mono;
  std::cerr << "  " << key.str() << ": test acc " << fmt(r.test_acc) << ", L_MONO " << fmt(r.test_mono) << ", %mono "
            << fmt(r.test_pct_mono) << ", dev L_MONO " << fmt(r.dev_mono) << ", " << fmt(r.cpu) << " s cpu, best step "
            << fit.best_step << std::endl;
  cache.emplace(key.str(), r);
  return r;
}

constexpr std::array<std::uint64_t, 3> kSeeds = {1, 2, 3};

void cipher_trend() {
  std::vector<double> base_mono, mono, base_acc, acc, pct, cpu;
  for (auto seed : kSeeds) {
    const RunResult b = run("cipher", seed, 0.0), m = run("cipher", seed, 0.1);
    base_mono.push_back(b.test_mono);
    mono.push_back(m.test_mono);
    base_acc.push_back(b.test_acc);
    acc.push_back(m.test_acc);
    pct.push_back(m.test_pct_mono);
    cpu.push_back(std::max(b.cpu, m.cpu));
  }
  const double ratio = mean(mono) / mean(base_mono);
  const double max_cpu = *std::max_element(cpu.begin(), cpu.end());
  const bool pass = ratio <= 0.1 && mean(pct) >= 0.95 && std::abs(mean(acc) - mean(base_acc)) <= 5.0 && max_cpu <= 300.0;
  report(6, pass,
         "L_MONO " + fmt(mean(mono)) + " vs baseline " + fmt(mean(base_mono)) + " (ratio " + fmt(ratio) +
             ", needs <= 0.1), %mono " + fmt(100.0 * mean(pct)) + "%, acc " + fmt(mean(acc)) + " vs " +
             fmt(mean(base_acc)) + ", slowest run " + fmt(max_cpu) + " s cpu");
}

void head_subset() {
  std::vector<double> constrained, others;
  for (auto seed : kSeeds) {
    const RunResult r = run("cipher", seed, 0.1, "0:0");
    std::vector<double> rest;
    for (const auto& h : r.heads) {
      if (h.id.layer != 0) continue;
      if (h.id.head == 0) constrained.push_back(h.loss);
      else rest.push_back(h.loss);
    }
    others.push_back(mean(rest));
  }
  const double ratio = mean(constrained) / mean(others);
  report(7, ratio <= 0.1,
         "constrained head L_MONO " + fmt(mean(constrained)) + " vs unconstrained mean " + fmt(mean(others)) +
             " (ratio " + fmt(ratio) + ", needs <= 0.1)");
}

void reorder_behaviour() {
  std::vector<double> base_acc, acc, base_mono, mono;
  for (auto seed : kSeeds) {
    const RunResult b = run("reorder", seed, 0.0), m = run("reorder", seed, 0.1);
    base_acc.push_back(b.test_acc);
    acc.push_back(m.test_acc);
    base_mono.push_back(b.test_mono);
    mono.push_back(m.test_mono);
  }
  const bool pass = mean(acc) <= mean(base_acc) + 2.0 && mean(mono) < mean(base_mono);
  report(11, pass,
         "acc " + fmt(mean(acc)) + " vs baseline " + fmt(mean(base_acc)) + ", L_MONO " + fmt(mean(mono)) + " vs " +
             fmt(mean(base_mono)));
}

void lambda_sweep() {
  const std::vector<double> lambdas = {0.0, 0.001, 0.01, 0.1};
  std::vector<double> dev;
  for (double l : lambdas) dev.push_back(run("cipher", 1, l).dev_mono);
  const double tolerance = 0.05 * dev[0];
  bool pass = true;
  std::ostringstream detail;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    if (i > 0) pass &= dev[i] <= dev[i - 1] + tolerance;
    detail << "lambda " << lambdas[i] << ": " << fmt(dev[i]) << (i + 1 < dev.size() ? ", " : "");
  }
  report(12, pass, "dev L_MONO " + detail.str() + " (slack " + fmt(tolerance) + ")");
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::pair<int, std::function<void()>>> criteria = {
      {1, gradient_correctness}, {2, closed_form_examples}, {3, term_bound},      {4, direction_symmetry},
      {5, percent_consistency},  {6, cipher_trend},         {7, head_subset},     {8, margin_semantics},
      {9, metric_formulas},      {10, separator_encoding},  {11, reorder_behaviour}, {12, lambda_sweep},
  };
  for (const auto& [id, check] : criteria) {
    try {
      check();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(start)) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
