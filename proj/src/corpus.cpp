// SPDX-License-Identifier: Apache-2.0
#include "monoattn/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "monoattn/error.hpp"

namespace monoattn::corpus {
namespace {

Tokens split_tokens(const std::string& field) {
  Tokens out;
  std::istringstream in(field);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> alphabet(std::size_t size) {
  if (size < 2) throw ConfigError("alphabet needs at least 2 symbols");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < size; ++i) {
    out.push_back(i < 26 ? std::string(1, static_cast<char>('a' + i)) : "x" + std::to_string(i));
  }
  return out;
}

// Distinct random strings; the first `counts[0]` go to train, and so on.
std::vector<Tokens> draw_unique(std::size_t total, const std::vector<std::string>& symbols, std::size_t min_length,
                                std::size_t max_length, std::mt19937_64& rng,
                                const std::function<Tokens(Tokens, std::mt19937_64&)>& decorate = {}) {
  if (min_length < 1 || min_length > max_length) throw ConfigError("invalid length range");
  std::uniform_int_distribution<std::size_t> length_dist(min_length, max_length);
  std::uniform_int_distribution<std::size_t> symbol_dist(0, symbols.size() - 1);
  std::set<Tokens> seen;
  std::vector<Tokens> out;
  std::size_t attempts = 0;
  while (out.size() < total) {
    if (++attempts > 100 * total + 1000) throw ConfigError("cannot draw enough distinct sequences; widen the task");
    Tokens seq(length_dist(rng));
    for (auto& tok : seq) tok = symbols[symbol_dist(rng)];
    if (decorate) seq = decorate(std::move(seq), rng);
    if (seen.insert(seq).second) out.push_back(std::move(seq));
  }
  return out;
}

Splits distribute(std::vector<Pair> pairs, std::size_t train, std::size_t dev) {
  Splits splits;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Corpus& target = i < train ? splits.train : (i < train + dev ? splits.dev : splits.test);
    target.pairs.push_back(std::move(pairs[i]));
  }
  return splits;
}

std::string format_probability(double p) {
  std::ostringstream out;
  out << p;
  return out.str();
}

// Source strings and transformation draws use separate streams so tasks that
// share a source draw produce identical sources for identical seeds.
std::mt19937_64 source_stream(std::uint64_t seed) { return std::mt19937_64(seed); }
std::mt19937_64 transform_stream(std::uint64_t seed) { return std::mt19937_64(seed ^ 0x9e3779b97f4a7c15ULL); }

void base_manifest(Splits& s, const std::string& task, std::uint64_t seed, std::size_t vocab, std::size_t min_len,
                   std::size_t max_len) {
  s.manifest["task"] = task;
  s.manifest["seed"] = std::to_string(seed);
  s.manifest["train_size"] = std::to_string(s.train.size());
  s.manifest["dev_size"] = std::to_string(s.dev.size());
  s.manifest["test_size"] = std::to_string(s.test.size());
  s.manifest["vocab_size"] = std::to_string(vocab);
  s.manifest["min_length"] = std::to_string(min_len);
  s.manifest["max_length"] = std::to_string(max_len);
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* tok : {kPadToken, kBosToken, kEosToken, kSepToken, kUnkToken}) add(tok);
}

int Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

void Vocabulary::extend(const std::vector<Tokens>& sequences) {
  for (const auto& seq : sequences) {
    for (const auto& tok : seq) add(tok);
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens_in_id_order) {
  Vocabulary v;
  if (tokens_in_id_order.size() < kReservedCount ||
      !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens_in_id_order.begin())) {
    throw ParseError("vocabulary does not start with the reserved tokens", 0);
  }
  for (std::size_t i = kReservedCount; i < tokens_in_id_order.size(); ++i) {
    if (v.contains(tokens_in_id_order[i])) throw ParseError("duplicate vocabulary token " + tokens_in_id_order[i], 0);
    v.add(tokens_in_id_order[i]);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw InputError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabularies build_vocabularies(const Corpus& corpus) {
  Vocabularies v;
  for (const auto& p : corpus.pairs) {
    v.source.extend({p.source});
    v.target.extend({p.target});
    v.target.extend(p.extra_references);
  }
  return v;
}

EncodedExample encode(const Pair& pair, const Vocabularies& vocab) {
  EncodedExample ex;
  for (std::size_t i = 0; i < pair.source.size(); ++i) {
    const int id = vocab.source.id(pair.source[i]);
    if (id == kSepId && !ex.separator) ex.separator = i;
    ex.source.push_back(id);
  }
  ex.source.push_back(kEosId);
  for (const auto& tok : pair.target) ex.target.push_back(vocab.target.id(tok));
  ex.target.push_back(kEosId);
  return ex;
}

std::vector<EncodedExample> encode_all(const Corpus& corpus, const Vocabularies& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back(encode(p, vocab));
  return out;
}

Tokens decode_target(std::span<const int> ids, const Vocabulary& vocab) {
  Tokens out;
  for (int id : ids) {
    if (id == kEosId) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

Corpus read_tsv(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2) throw ParseError("expected source<TAB>target", number);
    Pair pair;
    pair.source = split_tokens(fields[0]);
    pair.target = split_tokens(fields[1]);
    if (pair.source.empty() || pair.target.empty()) throw ParseError("empty source or target", number);
    for (std::size_t f = 2; f < fields.size(); ++f) {
      Tokens ref = split_tokens(fields[f]);
      if (ref.empty()) throw ParseError("empty reference", number);
      pair.extra_references.push_back(std::move(ref));
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

Corpus read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return read_tsv(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void write_tsv(const Corpus& corpus, std::ostream& out) {
  for (const auto& p : corpus.pairs) {
    out << join(p.source) << '\t' << join(p.target);
    for (const auto& ref : p.extra_references) out << '\t' << join(ref);
    out << '\n';
  }
}

void write_tsv(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_tsv(corpus, out);
}

std::size_t default_heldout_size(std::size_t train_size) { return std::max<std::size_t>(1, train_size / 10); }

std::string inflection_suffix(const std::string& tag) {
  static const std::map<std::string, std::string> table = {
      {"V", ""}, {"N", ""}, {"SG", "s"}, {"PL", "e n"}, {"1", ""}, {"2", "s t"}, {"3", "t"}, {"PRS", ""}, {"PST", "e d"},
  };
  if (auto it = table.find(tag); it != table.end()) return it->second;
  unsigned code = 0;
  for (char c : tag) code = code * 31 + static_cast<unsigned char>(c);
  return std::string(1, static_cast<char>('a' + code % 20));
}

Tokens inflect(const Tokens& source) {
  const auto sep_it = std::find(source.begin(), source.end(), kSepToken);
  if (sep_it == source.end()) throw InputError("inflection source has no separator");
  if (sep_it == source.begin()) throw InputError("inflection source has no tags");
  Tokens target(sep_it + 1, source.end());
  for (auto it = source.begin(); it != sep_it; ++it) {
    for (auto& c : split_tokens(inflection_suffix(*it))) target.push_back(std::move(c));
  }
  return target;
}

Splits gen_cipher(const CipherOptions& o) {
  const auto symbols = alphabet(o.vocab_size);
  auto src_rng = source_stream(o.seed);
  const auto sources = draw_unique(o.train_size + o.dev_size + o.test_size, symbols, o.min_length, o.max_length, src_rng);

  std::map<std::string, std::string> mapping;
  std::vector<std::string> image = symbols;
  if (!o.identity) {
    auto rng = transform_stream(o.seed);
    std::shuffle(image.begin(), image.end(), rng);
  }
  for (std::size_t i = 0; i < symbols.size(); ++i) mapping[symbols[i]] = image[i];

  std::vector<Pair> pairs;
  for (const auto& src : sources) {
    Pair p;
    p.source = src;
    for (std::size_t i = 0; i < src.size(); ++i) {
      p.target.push_back(mapping.at(src[i]));
      p.alignment.push_back(i);
    }
    pairs.push_back(std::move(p));
  }
  Splits s = distribute(std::move(pairs), o.train_size, o.dev_size);
  base_manifest(s, "cipher", o.seed, o.vocab_size, o.min_length, o.max_length);
  s.manifest["identity"] = o.identity ? "true" : "false";
  return s;
}

Splits gen_inflection(const InflectionOptions& o) {
  if (o.tags.empty()) throw ConfigError("inflection task needs at least one tag");
  if (o.max_tags < 1) throw ConfigError("inflection task needs max_tags >= 1");
  for (const auto& t : o.tags) {
    if (t == kSepToken || t.empty()) throw ConfigError("invalid tag '" + t + "'");
  }
  const auto symbols = alphabet(o.vocab_size);
  const std::size_t max_tags = std::min(o.max_tags, o.tags.size());
  auto rng = source_stream(o.seed);
  auto with_tags = [&](Tokens lemma, std::mt19937_64& r) {
    std::uniform_int_distribution<std::size_t> count_dist(1, max_tags);
    std::vector<std::size_t> order(o.tags.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), r);
    order.resize(count_dist(r));
    std::sort(order.begin(), order.end());
    Tokens source;
    for (std::size_t i : order) source.push_back(o.tags[i]);
    source.push_back(kSepToken);
    source.insert(source.end(), lemma.begin(), lemma.end());
    return source;
  };
  const auto sources =
      draw_unique(o.train_size + o.dev_size + o.test_size, symbols, o.min_length, o.max_length, rng, with_tags);

  std::vector<Pair> pairs;
  for (const auto& src : sources) {
    Pair p;
    p.source = src;
    p.target = inflect(src);
    const auto sep = static_cast<std::size_t>(std::find(src.begin(), src.end(), kSepToken) - src.begin());
    for (std::size_t t = 0; t < p.target.size(); ++t) p.alignment.push_back(std::min(sep + 1 + t, src.size() - 1));
    pairs.push_back(std::move(p));
  }
  Splits s = distribute(std::move(pairs), o.train_size, o.dev_size);
  base_manifest(s, "inflection", o.seed, o.vocab_size, o.min_length, o.max_length);
  std::string tags;
  for (const auto& t : o.tags) tags += (tags.empty() ? "" : ",") + t;
  s.manifest["tags"] = tags;
  s.manifest["max_tags"] = std::to_string(o.max_tags);
  return s;
}

Splits gen_reorder(const ReorderOptions& o) {
  if (!(o.swap_probability >= 0.0 && o.swap_probability <= 1.0)) {
    throw ConfigError("swap probability must lie in [0, 1]");
  }
  const auto symbols = alphabet(o.vocab_size);
  auto src_rng = source_stream(o.seed);
  const auto sources = draw_unique(o.train_size + o.dev_size + o.test_size, symbols, o.min_length, o.max_length, src_rng);

  auto rng = transform_stream(o.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Pair> pairs;
  for (const auto& src : sources) {
    Pair p;
    p.source = src;
    const std::size_t n = src.size();
    const bool displace = n >= 2 && coin(rng) < o.swap_probability;
    if (!displace) {
      p.target = src;
      for (std::size_t i = 0; i < n; ++i) p.alignment.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pos_dist(0, n - 2);
      const std::size_t k = pos_dist(rng);
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t from = t < k ? t : (t == k ? n - 1 : t - 1);
        p.target.push_back(src[from]);
        p.alignment.push_back(from);
      }
    }
    pairs.push_back(std::move(p));
  }
  Splits s = distribute(std::move(pairs), o.train_size, o.dev_size);
  base_manifest(s, "reorder", o.seed, o.vocab_size, o.min_length, o.max_length);
  s.manifest["swap_probability"] = format_probability(o.swap_probability);
  return s;
}

}  // namespace monoattn::corpus
