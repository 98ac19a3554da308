// SPDX-License-Identifier: Apache-2.0
//
// Training loop: cross-entropy plus lambda * monotonicity loss, Adam,
// early stopping on a dev metric and a per-checkpoint trace.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "monoattn/batch.hpp"
#include "monoattn/corpus.hpp"
#include "monoattn/keyvalue.hpp"
#include "monoattn/metrics.hpp"
#include "monoattn/model.hpp"
#include "monoattn/monoloss.hpp"

namespace monoattn::trainer {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

struct TrainConfig {
  model::ModelConfig model;
  mono::MonoConfig mono;
  std::size_t batch_size = 32;
  std::size_t max_steps = 3000;
  std::size_t checkpoint_interval = 100;
  /// Stop after this many consecutive checkpoints without improvement.
  std::size_t patience = 10;
  AdamConfig adam;
  /// One of wer, per, acc, lev, mfs.
  std::string dev_metric = "acc";
  /// Drives initialisation, shuffling and DropHead; overrides model.seed in fit().
  std::uint64_t seed = 1;

  /// Throws ConfigError on invalid settings.
  void validate() const;
  /// Every setting with defaults materialised, for manifests.
  KeyValues to_key_values() const;
  /// Applies settings named as in to_key_values(); `layers` sets both
  /// encoder_layers and decoder_layers. Throws ConfigError on unknown keys
  /// or malformed values.
  void apply(const KeyValues& values);
};

/// Keys understood by TrainConfig::apply.
bool is_train_key(const std::string& key);

/// True for metrics where larger is better (acc, mfs).
bool metric_maximizes(const std::string& name);

/// Lambda in effect at a step. Constant; the single place to hook a schedule.
double scheduled_lambda(const mono::MonoConfig& config, std::size_t step);

/// Adam with bias correction; moments keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void update(model::Parameters& params, const std::map<std::string, nd::Array>& grads);
  std::size_t steps() const noexcept { return steps_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, nd::Array> first_;
  std::map<std::string, nd::Array> second_;
};

struct StepStats {
  double cross_entropy = 0.0;
  double mono = 0.0;           ///< unweighted token-normalised monotonicity loss
  double weighted_mono = 0.0;  ///< lambda * mono as added to the objective
  double total = 0.0;
  double lambda = 0.0;
  mono::MonoReport report;
};

/// Loss and parameter gradients without an update.
struct Gradients {
  StepStats stats;
  std::map<std::string, nd::Array> grads;
};

/// Forward and backward pass. With lambda 0 the monotonicity term is only
/// reported, never added to the objective. Throws NumericalError describing
/// the batch when the loss is not finite.
Gradients compute_gradients(const model::Model& model, const Batch& batch, const TrainConfig& config,
                            std::size_t step, std::mt19937_64* drophead_rng);

StepStats train_step(model::Model& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                     std::size_t step, std::mt19937_64* drophead_rng);

struct Evaluation {
  metrics::MetricReport metrics;
  /// Scored on greedy-decoded outputs; the headline figures.
  mono::MonoReport decoded;
  /// Scored under teacher forcing on the references.
  mono::MonoReport teacher_forced;
  std::vector<model::Decoded> outputs;
};

/// Decodes `data` greedily and scores it. Decoded attention rows follow the
/// produced tokens, the eos step included when reached.
Evaluation evaluate(const model::Model& model, const corpus::Vocabularies& vocab, const corpus::Corpus& data,
                    const mono::MonoConfig& mono, const std::vector<std::string>& metric_names,
                    std::size_t batch_size = 64, metrics::Averaging per_averaging = metrics::Averaging::kMicro);

struct TraceRow {
  std::size_t step = 0;
  double train_ce = 0.0;
  double train_mono = 0.0;
  double train_pct_mono = 0.0;
  double dev_metric = 0.0;
  double dev_mono = 0.0;
  double dev_pct_mono = 0.0;
  /// Dev per-head reports on decoded outputs, mechanisms in (layer, head) order.
  std::vector<mono::HeadReport> heads;
};

std::string trace_csv_header(const std::vector<mono::HeadReport>& heads);
std::string trace_csv_row(const TraceRow& row);
/// Header followed by one line per row.
void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& out);

struct FitResult {
  model::Checkpoint best;
  std::size_t best_step = 0;
  double best_metric = 0.0;
  std::size_t steps = 0;
  bool stopped_early = false;
  std::vector<TraceRow> trace;
};

/// Called after every checkpoint evaluation.
using TraceCallback = std::function<void(const TraceRow&)>;

/// Trains on `train`, evaluating `dev` every checkpoint interval and after the
/// last step. Vocabularies come from `train`. The returned checkpoint is the
/// first one reaching the best dev metric.
FitResult fit(const corpus::Corpus& train, const corpus::Corpus& dev, TrainConfig config,
              const TraceCallback& on_checkpoint = {});

struct SweepRow {
  double lambda = 0.0;
  double dev_metric = 0.0;
  double dev_mono = 0.0;
  double dev_pct_mono = 0.0;
};

/// Independent fit() per lambda with the shared seed; rows sorted by lambda.
/// Throws ConfigError for fewer than two values.
std::vector<SweepRow> sweep_lambda(const corpus::Corpus& train, const corpus::Corpus& dev, const TrainConfig& config,
                                   std::vector<double> lambdas);

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

}  // namespace monoattn::trainer
