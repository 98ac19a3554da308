// SPDX-License-Identifier: Apache-2.0
//
// Corpus I/O, vocabularies and synthetic transduction tasks.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "monoattn/batch.hpp"

namespace monoattn::corpus {

using Tokens = std::vector<std::string>;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kBosToken = "<bos>";
inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kSepToken = "<sep>";
inline constexpr const char* kUnkToken = "<unk>";

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kReservedCount = 5;

struct Pair {
  Tokens source;
  Tokens target;
  /// Further acceptable outputs besides `target`.
  std::vector<Tokens> extra_references;
  /// Gold alignment from generators: target position -> source position.
  /// Not serialised.
  std::vector<std::size_t> alignment;

  bool operator==(const Pair& other) const {
    return source == other.source && target == other.target && extra_references == other.extra_references;
  }
};

struct Corpus {
  std::vector<Pair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  bool operator==(const Corpus& other) const { return pairs == other.pairs; }
};

/// Token <-> id map. Ids 0..4 are pad, bos, eos, sep and unk.
class Vocabulary {
 public:
  Vocabulary();
  /// Adds tokens from `sequences` in first-seen order.
  void extend(const std::vector<Tokens>& sequences);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens_in_id_order);

  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  const std::string& token(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  int add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Vocabularies {
  Vocabulary source;
  Vocabulary target;
};

/// Vocabularies covering every token of the given corpus.
Vocabularies build_vocabularies(const Corpus& corpus);

/// Appends eos to both sides and records the separator index.
EncodedExample encode(const Pair& pair, const Vocabularies& vocab);
std::vector<EncodedExample> encode_all(const Corpus& corpus, const Vocabularies& vocab);
Tokens decode_target(std::span<const int> ids, const Vocabulary& vocab);

/// `source<TAB>target[<TAB>reference...]` per line, tokens space separated,
/// lines starting with '#' and blank lines ignored.
Corpus read_tsv(std::istream& in);
Corpus read_tsv(const std::filesystem::path& path);
void write_tsv(const Corpus& corpus, std::ostream& out);
void write_tsv(const Corpus& corpus, const std::filesystem::path& path);

struct Splits {
  Corpus train;
  Corpus dev;
  Corpus test;
  /// Generator parameters, written as the sidecar manifest.
  std::map<std::string, std::string> manifest;
};

struct CipherOptions {
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::size_t vocab_size = 20;
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  bool identity = false;
  std::uint64_t seed = 1;
};

struct InflectionOptions {
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::vector<std::string> tags = {"V", "N", "SG", "PL", "1", "2", "3", "PRS", "PST"};
  std::size_t max_tags = 3;
  std::size_t vocab_size = 20;
  std::size_t min_length = 3;
  std::size_t max_length = 10;
  std::uint64_t seed = 1;
};

struct ReorderOptions {
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::size_t vocab_size = 20;
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  double swap_probability = 0.3;
  std::uint64_t seed = 1;
};

/// Default dev/test size for a training size n: n/10, at least 1.
std::size_t default_heldout_size(std::size_t train_size);

/// Suffix (space separated characters) appended for a tag, possibly empty.
std::string inflection_suffix(const std::string& tag);

/// Target for an inflection source `tags <sep> lemma`: the lemma followed by
/// the suffix of every tag in order. Throws InputError without a separator or tags.
Tokens inflect(const Tokens& source);

/// Character-wise random bijection over the alphabet; identity when requested.
Splits gen_cipher(const CipherOptions& options);
/// tags + <sep> + lemma -> lemma + tag suffixes.
Splits gen_inflection(const InflectionOptions& options);
/// Copy task where, with the given probability, the last token moves to an
/// earlier position.
Splits gen_reorder(const ReorderOptions& options);

}  // namespace monoattn::corpus
