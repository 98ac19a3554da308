// SPDX-License-Identifier: Apache-2.0
#include "monoattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace monoattn::model {
namespace {

using attention::AttentionMask;
using attention::Segment;

std::string layer_prefix(const char* stack, std::size_t layer) { return stack + std::to_string(layer) + "."; }

struct ParamShape {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  enum class Init { kXavier, kOnes, kZeros } init;
};

std::vector<ParamShape> parameter_layout(const ModelConfig& c) {
  using Init = ParamShape::Init;
  std::vector<ParamShape> out;
  out.push_back({"src_embed", c.source_vocab, c.dim, Init::kXavier});
  out.push_back({"tgt_embed", c.target_vocab, c.dim, Init::kXavier});
  if (!c.tie_target_softmax) out.push_back({"out_proj", c.dim, c.target_vocab, Init::kXavier});
  auto attention_block = [&](const std::string& p) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({p + w, c.dim, c.dim, Init::kXavier});
  };
  auto norm = [&](const std::string& p) {
    out.push_back({p + "g", 1, c.dim, Init::kOnes});
    out.push_back({p + "b", 1, c.dim, Init::kZeros});
  };
  auto feed_forward = [&](const std::string& p) {
    out.push_back({p + "w1", c.dim, c.ff_dim, Init::kXavier});
    out.push_back({p + "b1", 1, c.ff_dim, Init::kZeros});
    out.push_back({p + "w2", c.ff_dim, c.dim, Init::kXavier});
    out.push_back({p + "b2", 1, c.dim, Init::kZeros});
  };
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::string p = layer_prefix("enc", l);
    attention_block(p + "self.");
    norm(p + "ln1.");
    feed_forward(p + "ff.");
    norm(p + "ln2.");
  }
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::string p = layer_prefix("dec", l);
    attention_block(p + "self.");
    norm(p + "ln1.");
    attention_block(p + "cross.");
    norm(p + "ln2.");
    feed_forward(p + "ff.");
    norm(p + "ln3.");
  }
  return out;
}

attention::MultiHeadParams attention_params(const BoundParameters& p, const std::string& prefix) {
  return {p[prefix + "wq"], p[prefix + "wk"], p[prefix + "wv"], p[prefix + "wo"]};
}

nd::Var feed_forward(const BoundParameters& p, const std::string& prefix, nd::Var x) {
  nd::Var hidden = nd::relu(nd::add_row(nd::matmul(x, p[prefix + "w1"]), p[prefix + "b1"]));
  return nd::add_row(nd::matmul(hidden, p[prefix + "w2"]), p[prefix + "b2"]);
}

nd::Var add_norm(const BoundParameters& p, const std::string& prefix, nd::Var x, nd::Var sublayer) {
  return nd::layer_norm(nd::add(x, sublayer), p[prefix + "g"], p[prefix + "b"]);
}

std::optional<attention::DropHeadPlan> maybe_drophead(const ModelConfig& c, std::mt19937_64* rng) {
  if (rng == nullptr || c.drophead <= 0.0) return std::nullopt;
  return attention::sample_drophead(c.heads, c.drophead, *rng);
}

const attention::DropHeadPlan* plan_ptr(const std::optional<attention::DropHeadPlan>& plan) {
  return plan ? &*plan : nullptr;
}

std::vector<Segment> segments_of(std::span<const std::size_t> lengths) {
  std::vector<Segment> out;
  std::size_t offset = 0;
  for (std::size_t len : lengths) {
    out.push_back({offset, len});
    offset += len;
  }
  return out;
}

// Token embeddings scaled by sqrt(d) plus fixed sinusoidal positions.
nd::Var embed(nd::Graph& g, nd::Var table, std::span<const int> ids, std::span<const long> positions, std::size_t dim) {
  nd::Var tokens = nd::scale(nd::gather(table, ids), std::sqrt(static_cast<double>(dim)));
  return nd::add(tokens, g.constant(sinusoidal_encoding(positions, dim)));
}

struct Encoded {
  nd::Var memory;
  std::vector<Segment> segments;
};

Encoded run_encoder(nd::Graph& g, const BoundParameters& p, const ModelConfig& c,
                    std::span<const std::vector<int>> sources, std::span<const std::optional<std::size_t>> separators,
                    std::mt19937_64* rng) {
  std::vector<int> ids;
  std::vector<long> positions;
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (int id : sources[i]) {
      if (id < 0 || static_cast<std::size_t>(id) >= c.source_vocab) {
        throw InputError("source token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(c.source_vocab));
      }
    }
    ids.insert(ids.end(), sources[i].begin(), sources[i].end());
    const auto pos = position_indices(sources[i].size(), separators[i], c.position_mode);
    positions.insert(positions.end(), pos.begin(), pos.end());
    lengths.push_back(sources[i].size());
  }
  Encoded enc;
  enc.segments = segments_of(lengths);
  nd::Var x = embed(g, p["src_embed"], ids, positions, c.dim);
  const std::vector<AttentionMask> masks(sources.size());
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::string prefix = layer_prefix("enc", l);
    const auto plan = maybe_drophead(c, rng);
    auto self = attention::multihead_attend_segments(attention_params(p, prefix + "self."), x, x, x, enc.segments,
                                                     enc.segments, c.heads, masks, plan_ptr(plan), l);
    x = add_norm(p, prefix + "ln1.", x, self.output);
    x = add_norm(p, prefix + "ln2.", x, feed_forward(p, prefix + "ff.", x));
  }
  enc.memory = x;
  return enc;
}

// Returns the final decoder states; cross-attention weights are appended to
// `cross[segment]` in (layer, head) order.
nd::Var run_decoder(nd::Graph& g, const BoundParameters& p, const ModelConfig& c, std::span<const int> ids,
                    std::span<const std::size_t> lengths, nd::Var memory, std::span<const Segment> memory_segments,
                    std::mt19937_64* rng, mono::BatchAttention& cross) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.target_vocab) {
      throw InputError("target token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.target_vocab));
    }
  }
  std::vector<long> positions;
  for (std::size_t len : lengths) {
    for (std::size_t i = 0; i < len; ++i) positions.push_back(static_cast<long>(i));
  }
  const auto segments = segments_of(lengths);
  nd::Var y = embed(g, p["tgt_embed"], ids, positions, c.dim);
  const std::vector<AttentionMask> causal(lengths.size(), AttentionMask{{}, true});
  const std::vector<AttentionMask> open(lengths.size());
  cross.assign(lengths.size(), {});
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::string prefix = layer_prefix("dec", l);
    const auto self_plan = maybe_drophead(c, rng);
    auto self = attention::multihead_attend_segments(attention_params(p, prefix + "self."), y, y, y, segments,
                                                     segments, c.heads, causal, plan_ptr(self_plan), l);
    y = add_norm(p, prefix + "ln1.", y, self.output);
    const auto cross_plan = maybe_drophead(c, rng);
    auto attended = attention::multihead_attend_segments(attention_params(p, prefix + "cross."), y, memory, memory,
                                                         segments, memory_segments, c.heads, open,
                                                         plan_ptr(cross_plan), l);
    y = add_norm(p, prefix + "ln2.", y, attended.output);
    y = add_norm(p, prefix + "ln3.", y, feed_forward(p, prefix + "ff.", y));
    for (std::size_t s = 0; s < attended.weights.size(); ++s) {
      for (auto& w : attended.weights[s]) cross[s].push_back(std::move(w));
    }
  }
  return y;
}

nd::Var output_logits(const BoundParameters& p, const ModelConfig& c, nd::Var states) {
  if (c.tie_target_softmax) return nd::matmul(states, nd::transpose(p["tgt_embed"]));
  return nd::matmul(states, p["out_proj"]);
}

}  // namespace

std::string to_string(PositionMode mode) {
  return mode == PositionMode::kVanilla ? "vanilla" : "sep-centered";
}

PositionMode parse_position_mode(const std::string& text) {
  if (text == "vanilla") return PositionMode::kVanilla;
  if (text == "sep-centered" || text == "separator-centered") return PositionMode::kSeparatorCentered;
  throw ConfigError("unknown positional mode '" + text + "' (expected vanilla or sep-centered)");
}

void ModelConfig::validate() const {
  if (source_vocab == 0 || target_vocab == 0) throw ConfigError("vocabulary sizes must be >= 1");
  if (dim == 0 || heads == 0 || encoder_layers == 0 || decoder_layers == 0 || ff_dim == 0) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (dim % heads != 0) {
    throw ConfigError("model dimension " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (!(drophead >= 0.0 && drophead < 1.0)) throw ConfigError("drophead rate must lie in [0, 1)");
  if (attention_dropout != 0.0) {
    throw ConfigError("attention dropout is not supported together with the monotonicity loss; use drophead");
  }
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be >= 0");
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  std::ostringstream dh, is;
  dh << drophead;
  is << init_scale;
  return {
      {"source_vocab", std::to_string(source_vocab)},
      {"target_vocab", std::to_string(target_vocab)},
      {"dim", std::to_string(dim)},
      {"heads", std::to_string(heads)},
      {"encoder_layers", std::to_string(encoder_layers)},
      {"decoder_layers", std::to_string(decoder_layers)},
      {"ff_dim", std::to_string(ff_dim)},
      {"drophead", dh.str()},
      {"pos_mode", to_string(position_mode)},
      {"tie_target_softmax", tie_target_softmax ? "true" : "false"},
      {"model_seed", std::to_string(seed)},
      {"init_scale", is.str()},
  };
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  };
  auto size = [&](const char* key, std::size_t& out) {
    if (const auto* v = get(key)) {
      try {
        std::size_t used = 0;
        out = std::stoull(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("invalid integer for ") + key + ": '" + *v + "'");
      }
    }
  };
  auto real = [&](const char* key, double& out) {
    if (const auto* v = get(key)) {
      try {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
      } catch (const std::logic_error&) {
        throw ConfigError(std::string("invalid number for ") + key + ": '" + *v + "'");
      }
    }
  };
  size("source_vocab", c.source_vocab);
  size("target_vocab", c.target_vocab);
  size("dim", c.dim);
  size("heads", c.heads);
  size("encoder_layers", c.encoder_layers);
  size("decoder_layers", c.decoder_layers);
  size("ff_dim", c.ff_dim);
  real("drophead", c.drophead);
  real("attention_dropout", c.attention_dropout);
  real("init_scale", c.init_scale);
  if (const auto* v = get("pos_mode")) c.position_mode = parse_position_mode(*v);
  if (const auto* v = get("tie_target_softmax")) {
    if (*v != "true" && *v != "false") throw ConfigError("tie_target_softmax must be true or false");
    c.tie_target_softmax = *v == "true";
  }
  std::size_t seed = c.seed;
  size("model_seed", seed);
  c.seed = seed;
  return c;
}

const nd::Array& Parameters::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

nd::Array& Parameters::get(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

std::size_t Parameters::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, a] : arrays_) n += a.size();
  return n;
}

Parameters init_parameters(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Parameters params;
  for (const auto& shape : parameter_layout(config)) {
    nd::Array a = nd::Array::zeros({shape.rows, shape.cols});
    switch (shape.init) {
      case ParamShape::Init::kXavier: {
        const double range =
            config.init_scale * std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (double& v : a.data()) v = range * dist(rng);
        break;
      }
      case ParamShape::Init::kOnes:
        for (double& v : a.data()) v = 1.0;
        break;
      case ParamShape::Init::kZeros:
        break;
    }
    params.set(shape.name, std::move(a));
  }
  return params;
}

std::vector<long> position_indices(std::size_t length, std::optional<std::size_t> separator, PositionMode mode) {
  std::vector<long> out(length);
  long origin = 0;
  if (mode == PositionMode::kSeparatorCentered) {
    if (!separator) throw InputError("separator-centered positions need a separator position");
    origin = static_cast<long>(*separator);
  }
  for (std::size_t i = 0; i < length; ++i) out[i] = static_cast<long>(i) - origin;
  return out;
}

nd::Array sinusoidal_encoding(std::span<const long> positions, std::size_t dim) {
  nd::Array out = nd::Array::zeros({positions.size(), dim});
  const std::size_t half = dim / 2;
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
      out(r, k) = std::sin(pos * freq);
      out(r, half + k) = std::cos(pos * freq);
    }
    if (dim % 2 == 1) out(r, dim - 1) = std::sin(pos);
  }
  return out;
}

BoundParameters::BoundParameters(nd::Graph& graph, const Parameters& params) {
  for (const auto& [name, value] : params) vars_.emplace(name, graph.leaf(value));
}

nd::Var BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

void BoundParameters::rebind(const std::string& name, nd::Var var) {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing parameter '" + name + "'");
  if (var.shape() != it->second.shape()) {
    throw ShapeError("rebind '" + name + "': shape " + nd::to_string(var.shape()) + ", expected " +
                     nd::to_string(it->second.shape()));
  }
  it->second = var;
}

ForwardResult forward_teacher_forced(nd::Graph& graph, const BoundParameters& params, const ModelConfig& config,
                                     const Batch& batch, std::mt19937_64* drophead_rng) {
  batch.validate();
  const std::size_t n = batch.size();
  if (n == 0) throw InputError("empty batch");
  std::vector<std::vector<int>> sources;
  std::vector<int> decoder_ids;
  std::vector<int> targets;
  std::vector<std::size_t> target_lengths;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = batch.source_row(i);
    const auto tgt = batch.target_row(i);
    if (src.empty() || tgt.empty()) throw InputError("example " + std::to_string(i) + " has an empty side");
    sources.emplace_back(src.begin(), src.end());
    decoder_ids.push_back(corpus::kBosId);
    decoder_ids.insert(decoder_ids.end(), tgt.begin(), tgt.end() - 1);
    targets.insert(targets.end(), tgt.begin(), tgt.end());
    target_lengths.push_back(tgt.size());
  }
  const Encoded enc = run_encoder(graph, params, config, sources, batch.separators, drophead_rng);
  ForwardResult result;
  nd::Var states = run_decoder(graph, params, config, decoder_ids, target_lengths, enc.memory, enc.segments,
                               drophead_rng, result.cross_attention);
  result.logits = output_logits(params, config, states);
  result.target_tokens = targets.size();
  result.loss = nd::scale(nd::cross_entropy(result.logits, targets), 1.0 / static_cast<double>(targets.size()));
  return result;
}

std::size_t default_decode_limit(const EncodedExample& example) { return example.source.size() + 10; }

std::vector<Decoded> greedy_decode(const Model& model, std::span<const EncodedExample> examples,
                                   std::span<const std::size_t> max_lengths) {
  const ModelConfig& c = model.config;
  if (max_lengths.size() != examples.size()) throw InputError("greedy_decode: one length cap per example required");
  for (std::size_t cap : max_lengths) {
    if (cap < 1) throw InputError("greedy_decode: max length must be >= 1");
  }
  std::vector<Decoded> out(examples.size());
  if (examples.empty()) return out;

  nd::Array memory;
  std::vector<Segment> memory_segments;
  {
    nd::Graph g(false);
    BoundParameters p(g, model.params);
    std::vector<std::vector<int>> sources;
    std::vector<std::optional<std::size_t>> separators;
    for (const auto& ex : examples) {
      sources.push_back(ex.source);
      separators.push_back(ex.separator);
    }
    const Encoded enc = run_encoder(g, p, c, sources, separators, nullptr);
    memory = enc.memory.value();
    memory_segments = enc.segments;
  }

  std::vector<std::size_t> active(examples.size());
  std::iota(active.begin(), active.end(), std::size_t{0});
  while (!active.empty()) {
    nd::Graph g(false);
    BoundParameters p(g, model.params);
    std::vector<int> ids;
    std::vector<std::size_t> lengths;
    std::vector<nd::Var> memory_parts;
    std::vector<Segment> step_memory_segments;
    std::size_t memory_offset = 0;
    nd::Var full_memory = g.constant(memory);
    for (std::size_t e : active) {
      ids.push_back(corpus::kBosId);
      ids.insert(ids.end(), out[e].tokens.begin(), out[e].tokens.end());
      lengths.push_back(out[e].tokens.size() + 1);
      const Segment s = memory_segments[e];
      memory_parts.push_back(nd::slice(full_memory, s.offset, s.offset + s.length, 0, c.dim));
      step_memory_segments.push_back({memory_offset, s.length});
      memory_offset += s.length;
    }
    nd::Var step_memory = memory_parts.size() == 1 ? memory_parts[0] : nd::concat_rows(memory_parts);
    mono::BatchAttention cross;
    nd::Var states =
        run_decoder(g, p, c, ids, lengths, step_memory, step_memory_segments, nullptr, cross);
    std::vector<nd::Var> last_rows;
    std::size_t offset = 0;
    for (std::size_t len : lengths) {
      offset += len;
      last_rows.push_back(nd::slice(states, offset - 1, offset, 0, c.dim));
    }
    const nd::Array& logits =
        output_logits(p, c, last_rows.size() == 1 ? last_rows[0] : nd::concat_rows(last_rows)).value();

    std::vector<std::size_t> still_active;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t e = active[k];
      const auto row = logits.row(k);
      const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      Decoded& d = out[e];
      d.attention = std::move(cross[k]);
      for (auto& w : d.attention) w.node.reset();
      if (best == corpus::kEosId) {
        d.finished = true;
        continue;
      }
      d.tokens.push_back(best);
      if (d.tokens.size() >= max_lengths[e]) continue;
      still_active.push_back(e);
    }
    active = std::move(still_active);
  }
  return out;
}

std::vector<Decoded> greedy_decode(const Model& model, std::span<const EncodedExample> examples,
                                   std::size_t max_length) {
  const std::vector<std::size_t> caps(examples.size(), max_length);
  return greedy_decode(model, examples, caps);
}

}  // namespace monoattn::model
