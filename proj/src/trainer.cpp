// SPDX-License-Identifier: Apache-2.0
#include "monoattn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace monoattn::trainer {
namespace {

using metrics::format_number;

std::string describe_batch(const Batch& batch) {
  std::ostringstream out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << "\n  example " << i << ": source [";
    for (int id : batch.source_row(i)) out << ' ' << id;
    out << " ] target [";
    for (int id : batch.target_row(i)) out << ' ' << id;
    out << " ]";
    if (batch.separators[i]) out << " sep " << *batch.separators[i];
  }
  return out.str();
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw ConfigError("invalid non-negative integer for " + key + ": '" + text + "'");
  }
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("invalid number for " + key + ": '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + text + "'");
}

const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> keys = {
      "dim", "heads", "layers", "encoder_layers", "decoder_layers", "ff_dim", "drophead", "attention_dropout",
      "pos_mode", "tie_target_softmax", "init_scale", "lambda", "delta", "direction", "mono_heads", "sep_masking",
      "renormalize", "batch_size", "max_steps", "checkpoint_interval", "patience", "learning_rate", "beta1", "beta2",
      "epsilon", "dev_metric", "seed"};
  return keys;
}

metrics::Sequence to_sequence(const corpus::Tokens& tokens) { return {tokens.begin(), tokens.end()}; }

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  mono.validate();
  mono.heads.validate(model.decoder_layers, model.heads);
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (max_steps == 0) throw ConfigError("max steps must be >= 1");
  if (checkpoint_interval == 0) throw ConfigError("checkpoint interval must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam decay rates must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  const auto& names = metrics::metric_names();
  if (std::find(names.begin(), names.end(), dev_metric) == names.end()) {
    throw ConfigError("unknown dev metric '" + dev_metric + "'");
  }
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues out;
  for (const auto& [k, v] : model.to_key_values()) {
    if (k != "source_vocab" && k != "target_vocab" && k != "model_seed") out[k] = v;
  }
  out["lambda"] = format_number(mono.lambda);
  out["delta"] = format_number(mono.delta);
  out["direction"] = mono::to_string(mono.direction);
  out["mono_heads"] = mono.heads.to_string();
  out["sep_masking"] = mono.separator_masking ? "true" : "false";
  out["renormalize"] = mono.renormalize ? "true" : "false";
  out["batch_size"] = std::to_string(batch_size);
  out["max_steps"] = std::to_string(max_steps);
  out["checkpoint_interval"] = std::to_string(checkpoint_interval);
  out["patience"] = std::to_string(patience);
  out["learning_rate"] = format_number(adam.learning_rate);
  out["beta1"] = format_number(adam.beta1);
  out["beta2"] = format_number(adam.beta2);
  out["epsilon"] = format_number(adam.epsilon);
  out["dev_metric"] = dev_metric;
  out["seed"] = std::to_string(seed);
  return out;
}

void TrainConfig::apply(const KeyValues& values) {
  for (const auto& [key, value] : values) {
    if (key == "dim") model.dim = parse_size(key, value);
    else if (key == "heads") model.heads = parse_size(key, value);
    else if (key == "layers") model.encoder_layers = model.decoder_layers = parse_size(key, value);
    else if (key == "encoder_layers") model.encoder_layers = parse_size(key, value);
    else if (key == "decoder_layers") model.decoder_layers = parse_size(key, value);
    else if (key == "ff_dim") model.ff_dim = parse_size(key, value);
    else if (key == "drophead") model.drophead = parse_real(key, value);
    else if (key == "attention_dropout") model.attention_dropout = parse_real(key, value);
    else if (key == "pos_mode") model.position_mode = model::parse_position_mode(value);
    else if (key == "tie_target_softmax") model.tie_target_softmax = parse_bool(key, value);
    else if (key == "init_scale") model.init_scale = parse_real(key, value);
    else if (key == "lambda") mono.lambda = parse_real(key, value);
    else if (key == "delta") mono.delta = parse_real(key, value);
    else if (key == "direction") mono.direction = mono::parse_direction(value);
    else if (key == "mono_heads") mono.heads = mono::HeadMask::parse(value);
    else if (key == "sep_masking") mono.separator_masking = parse_bool(key, value);
    else if (key == "renormalize") mono.renormalize = parse_bool(key, value);
    else if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "max_steps") max_steps = parse_size(key, value);
    else if (key == "checkpoint_interval") checkpoint_interval = parse_size(key, value);
    else if (key == "patience") patience = parse_size(key, value);
    else if (key == "learning_rate") adam.learning_rate = parse_real(key, value);
    else if (key == "beta1") adam.beta1 = parse_real(key, value);
    else if (key == "beta2") adam.beta2 = parse_real(key, value);
    else if (key == "epsilon") adam.epsilon = parse_real(key, value);
    else if (key == "dev_metric") dev_metric = value;
    else if (key == "seed") seed = parse_size(key, value);
    else throw ConfigError("unknown training setting '" + key + "'");
  }
}

bool is_train_key(const std::string& key) {
  const auto& keys = train_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

bool metric_maximizes(const std::string& name) { return name == "acc" || name == "mfs"; }

double scheduled_lambda(const mono::MonoConfig& config, std::size_t /*step*/) { return config.lambda; }

void Adam::update(model::Parameters& params, const std::map<std::string, nd::Array>& grads) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correct1 = 1.0 - std::pow(config_.beta1, t);
  const double correct2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& [name, value] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != value.shape()) throw ShapeError("Adam: gradient shape mismatch for " + name);
    auto [m_it, m_new] = first_.try_emplace(name, nd::Array::zeros(value.shape()));
    auto [v_it, v_new] = second_.try_emplace(name, nd::Array::zeros(value.shape()));
    auto m = m_it->second.data();
    auto v = v_it->second.data();
    auto w = value.data();
    const auto grad = g->second.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

Gradients compute_gradients(const model::Model& model, const Batch& batch, const TrainConfig& config,
                            std::size_t step, std::mt19937_64* drophead_rng) {
  nd::Graph graph;
  const model::BoundParameters bound(graph, model.params);
  const auto forward = model::forward_teacher_forced(graph, bound, model.config, batch, drophead_rng);
  Gradients out;
  StepStats& stats = out.stats;
  stats.lambda = scheduled_lambda(config.mono, step);
  stats.cross_entropy = forward.loss.value().item();
  nd::Var total = forward.loss;
  if (stats.lambda > 0.0) {
    auto scored = mono::score_batch(graph, forward.cross_attention, batch, config.mono);
    const nd::Var weighted = nd::scale(scored.loss, stats.lambda);
    stats.mono = scored.loss.value().item();
    stats.weighted_mono = weighted.value().item();
    stats.report = std::move(scored.report);
    total = nd::add(total, weighted);
  } else {
    stats.report = mono::report_batch(forward.cross_attention, batch, config.mono);
    stats.mono = stats.report.loss;
  }
  stats.total = total.value().item();
  if (!std::isfinite(stats.total)) {
    throw NumericalError("non-finite loss at step " + std::to_string(step) + " (cross-entropy " +
                         format_number(stats.cross_entropy) + ", monotonicity " + format_number(stats.mono) +
                         "); batch:" + describe_batch(batch));
  }
  const auto table = graph.backward(total);
  for (const auto& [name, var] : bound.vars()) out.grads.emplace(name, table[var]);
  return out;
}

StepStats train_step(model::Model& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                     std::size_t step, std::mt19937_64* drophead_rng) {
  auto result = compute_gradients(model, batch, config, step, drophead_rng);
  optimizer.update(model.params, result.grads);
  return std::move(result.stats);
}

Evaluation evaluate(const model::Model& model, const corpus::Vocabularies& vocab, const corpus::Corpus& data,
                    const mono::MonoConfig& mono, const std::vector<std::string>& metric_names,
                    std::size_t batch_size, metrics::Averaging per_averaging) {
  if (data.empty()) throw InputError("evaluation data is empty");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  const auto examples = corpus::encode_all(data, vocab);
  Evaluation ev;
  ev.outputs.reserve(examples.size());
  mono::BatchAttention decoded_attention, forced_attention;
  std::vector<EncodedExample> decoded_examples;
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const std::size_t end = std::min(examples.size(), begin + batch_size);
    const std::span<const EncodedExample> chunk(examples.data() + begin, end - begin);
    std::vector<std::size_t> limits;
    for (const auto& ex : chunk) limits.push_back(model::default_decode_limit(ex));
    auto decoded = model::greedy_decode(model, chunk, limits);
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      EncodedExample out{chunk[i].source, decoded[i].tokens, chunk[i].separator};
      if (decoded[i].finished) out.target.push_back(corpus::kEosId);
      decoded_examples.push_back(std::move(out));
      decoded_attention.push_back(decoded[i].attention);
      ev.outputs.push_back(std::move(decoded[i]));
    }
    nd::Graph graph(false);
    const model::BoundParameters bound(graph, model.params);
    const Batch batch = make_batch(chunk, corpus::kPadId);
    auto forward = model::forward_teacher_forced(graph, bound, model.config, batch);
    for (auto& per_example : forward.cross_attention) {
      for (auto& w : per_example) w.node.reset();
      forced_attention.push_back(std::move(per_example));
    }
  }
  ev.decoded = mono::report_batch(decoded_attention, make_batch(decoded_examples, corpus::kPadId), mono);
  ev.teacher_forced = mono::report_batch(forced_attention, make_batch(examples, corpus::kPadId), mono);

  std::vector<metrics::EvalPair> pairs;
  pairs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    metrics::EvalPair pair;
    pair.candidate = to_sequence(corpus::decode_target(ev.outputs[i].tokens, vocab.target));
    pair.references.push_back(to_sequence(data.pairs[i].target));
    for (const auto& ref : data.pairs[i].extra_references) pair.references.push_back(to_sequence(ref));
    pairs.push_back(std::move(pair));
  }
  ev.metrics = metrics::compute(pairs, metric_names, per_averaging);
  return ev;
}

std::string trace_csv_header(const std::vector<mono::HeadReport>& heads) {
  std::string out = "step,train_ce,train_mono,train_pctmono,dev_metric,dev_mono,dev_pctmono";
  for (const auto& h : heads) {
    out += ",dev_mono_l" + std::to_string(h.id.layer) + "h" + std::to_string(h.id.head) +
           (h.in_loss ? "_with_lmono" : "_without_lmono");
  }
  return out;
}

std::string trace_csv_row(const TraceRow& row) {
  std::string out = std::to_string(row.step);
  for (double v : {row.train_ce, row.train_mono, row.train_pct_mono, row.dev_metric, row.dev_mono, row.dev_pct_mono}) {
    out += "," + format_number(v);
  }
  for (const auto& h : row.heads) out += "," + format_number(h.loss);
  return out;
}

void write_trace_csv(const std::vector<TraceRow>& trace, std::ostream& out) {
  out << trace_csv_header(trace.empty() ? std::vector<mono::HeadReport>{} : trace.front().heads) << '\n';
  for (const auto& row : trace) out << trace_csv_row(row) << '\n';
}

FitResult fit(const corpus::Corpus& train, const corpus::Corpus& dev, TrainConfig config,
              const TraceCallback& on_checkpoint) {
  if (train.empty()) throw InputError("training corpus is empty");
  if (dev.empty()) throw InputError("dev corpus is empty");
  corpus::Vocabularies vocab = corpus::build_vocabularies(train);
  config.model.source_vocab = vocab.source.size();
  config.model.target_vocab = vocab.target.size();
  config.model.seed = config.seed;
  config.validate();

  model::Model model{config.model, model::init_parameters(config.model)};
  Adam optimizer(config.adam);
  const auto examples = corpus::encode_all(train, vocab);
  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 drophead_rng(config.seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  FitResult result;
  const bool maximize = metric_maximizes(config.dev_metric);
  bool have_best = false;
  std::size_t stale = 0;
  double ce_sum = 0.0, mono_sum = 0.0, pct_sum = 0.0;
  std::size_t since_checkpoint = 0;
  std::vector<EncodedExample> chunk;
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    chunk.clear();
    while (chunk.size() < config.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      chunk.push_back(examples[order[cursor++]]);
      if (chunk.size() == examples.size()) break;
    }
    const Batch batch = make_batch(chunk, corpus::kPadId);
    const StepStats stats = train_step(model, optimizer, batch, config, step, &drophead_rng);
    ce_sum += stats.cross_entropy;
    mono_sum += stats.mono;
    pct_sum += stats.report.pct_mono;
    ++since_checkpoint;
    result.steps = step;

    if (step % config.checkpoint_interval != 0 && step != config.max_steps) continue;
    const Evaluation ev = evaluate(model, vocab, dev, config.mono, {config.dev_metric});
    TraceRow row;
    row.step = step;
    row.train_ce = ce_sum / static_cast<double>(since_checkpoint);
    row.train_mono = mono_sum / static_cast<double>(since_checkpoint);
    row.train_pct_mono = pct_sum / static_cast<double>(since_checkpoint);
    row.dev_metric = ev.metrics.get(config.dev_metric);
    row.dev_mono = ev.decoded.loss;
    row.dev_pct_mono = ev.decoded.pct_mono;
    row.heads = ev.decoded.heads;
    ce_sum = mono_sum = pct_sum = 0.0;
    since_checkpoint = 0;
    result.trace.push_back(row);
    if (on_checkpoint) on_checkpoint(row);

    const bool improved = !have_best || (maximize ? row.dev_metric > result.best_metric
                                                  : row.dev_metric < result.best_metric);
    if (improved) {
      have_best = true;
      stale = 0;
      result.best_metric = row.dev_metric;
      result.best_step = step;
      result.best = model::Checkpoint{model, vocab};
    } else if (++stale >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

std::vector<SweepRow> sweep_lambda(const corpus::Corpus& train, const corpus::Corpus& dev, const TrainConfig& config,
                                   std::vector<double> lambdas) {
  if (lambdas.size() < 2) throw ConfigError("a lambda sweep needs at least two values");
  std::sort(lambdas.begin(), lambdas.end());
  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    TrainConfig run = config;
    run.mono.lambda = lambda;
    const FitResult fitted = fit(train, dev, run);
    const auto best = std::find_if(fitted.trace.begin(), fitted.trace.end(),
                                   [&](const TraceRow& r) { return r.step == fitted.best_step; });
    rows.push_back({lambda, best->dev_metric, best->dev_mono, best->dev_pct_mono});
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "lambda,dev_metric,dev_mono,dev_pctmono\n";
  for (const auto& r : rows) {
    out << format_number(r.lambda) << ',' << format_number(r.dev_metric) << ',' << format_number(r.dev_mono) << ','
        << format_number(r.dev_pct_mono) << '\n';
  }
}

}  // namespace monoattn::trainer
