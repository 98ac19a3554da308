// SPDX-License-Identifier: Apache-2.0
//
// A small post-norm transformer encoder-decoder over token ids.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "monoattn/attention.hpp"
#include "monoattn/batch.hpp"
#include "monoattn/corpus.hpp"
#include "monoattn/monoloss.hpp"
#include "monoattn/ndgrad.hpp"

namespace monoattn::model {

enum class PositionMode { kVanilla, kSeparatorCentered };

std::string to_string(PositionMode mode);
PositionMode parse_position_mode(const std::string& text);

struct ModelConfig {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t ff_dim = 128;
  double drophead = 0.0;
  /// Not supported; validate() rejects any non-zero value. Dropping single
  /// attention connections fights the monotonicity loss, DropHead is used instead.
  double attention_dropout = 0.0;
  PositionMode position_mode = PositionMode::kVanilla;
  bool tie_target_softmax = true;
  std::uint64_t seed = 1;
  /// Multiplier on the Xavier initialisation range.
  double init_scale = 1.0;

  void validate() const;
  std::map<std::string, std::string> to_key_values() const;
  /// Keys missing from `values` keep their defaults. Unknown keys are ignored.
  static ModelConfig from_key_values(const std::map<std::string, std::string>& values);

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter arrays, iterated in name order.
class Parameters {
 public:
  void set(const std::string& name, nd::Array value) { arrays_[name] = std::move(value); }
  const nd::Array& get(const std::string& name) const;
  nd::Array& get(const std::string& name);
  bool contains(const std::string& name) const { return arrays_.contains(name); }
  std::size_t count() const noexcept { return arrays_.size(); }
  std::size_t total_size() const;

  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }

  bool operator==(const Parameters&) const = default;

 private:
  std::map<std::string, nd::Array> arrays_;
};

/// Xavier-uniform weights, unit layer-norm gains, zero biases.
Parameters init_parameters(const ModelConfig& config);

struct Model {
  ModelConfig config;
  Parameters params;
};

/// Signed position of every token: 0..L-1 (vanilla) or i - separator
/// (separator-centered). Throws InputError when the separator is required but absent.
std::vector<long> position_indices(std::size_t length, std::optional<std::size_t> separator, PositionMode mode);
/// Row p: sin(pos / 10000^(2k/d)) in the first half of the columns, cos in the second.
nd::Array sinusoidal_encoding(std::span<const long> positions, std::size_t dim);

/// Parameters entered into one graph as differentiable leaves.
class BoundParameters {
 public:
  BoundParameters(nd::Graph& graph, const Parameters& params);
  nd::Var operator[](const std::string& name) const;
  /// Replaces the node bound to an existing parameter name.
  void rebind(const std::string& name, nd::Var var);
  const std::map<std::string, nd::Var>& vars() const noexcept { return vars_; }

 private:
  std::map<std::string, nd::Var> vars_;
};

struct ForwardResult {
  nd::Var logits;           ///< [target tokens x target vocab], examples stacked
  nd::Var loss;             ///< token-mean cross-entropy
  std::size_t target_tokens = 0;
  /// cross_attention[example][decoder_layer * heads + head]
  mono::BatchAttention cross_attention;
};

/// Teacher-forced pass. The decoder input of each example is bos followed by
/// its target without the final eos. DropHead is applied when `drophead_rng`
/// is given and the configured rate is positive.
ForwardResult forward_teacher_forced(nd::Graph& graph, const BoundParameters& params, const ModelConfig& config,
                                     const Batch& batch, std::mt19937_64* drophead_rng = nullptr);

struct Decoded {
  std::vector<int> tokens;  ///< without the final eos
  bool finished = false;    ///< eos was produced
  /// One matrix per cross-attention mechanism; one row per decoding step
  /// (the eos step included).
  std::vector<attention::AttentionWeights> attention;
};

/// Argmax decoding, ties to the lowest id. `max_lengths[i]` caps the number of
/// steps of example i and must be >= 1.
std::vector<Decoded> greedy_decode(const Model& model, std::span<const EncodedExample> examples,
                                   std::span<const std::size_t> max_lengths);
std::vector<Decoded> greedy_decode(const Model& model, std::span<const EncodedExample> examples,
                                   std::size_t max_length);

/// Step cap used by the evaluation code: source length (with eos) + 10.
std::size_t default_decode_limit(const EncodedExample& example);

struct Checkpoint {
  Model model;
  corpus::Vocabularies vocab;
};

inline constexpr int kCheckpointVersion = 1;

/// Text format:
///   monoattn-checkpoint <version>
///   config <key> <value>             (one line per ModelConfig field)
///   vocab <source|target> <count>    followed by one token per line
///   param <name> <rows> <cols>       followed by one line of values
///   end
/// Values use the shortest representation that round-trips exactly.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out);
/// Throws ParseError on malformed content and ConfigError when the parameter
/// set does not match the stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in);

}  // namespace monoattn::model
