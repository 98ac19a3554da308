#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "monoattn/corpus.hpp"
#include "monoattn/error.hpp"

using namespace monoattn;
using namespace monoattn::corpus;

namespace {

std::set<Tokens> sources_of(const Corpus& c) {
  std::set<Tokens> out;
  for (const Pair& p : c.pairs) out.insert(p.source);
  return out;
}

void check_disjoint(const Splits& s) {
  const auto train = sources_of(s.train), dev = sources_of(s.dev), test = sources_of(s.test);
  for (const Tokens& t : dev) CHECK_FALSE(train.contains(t));
  for (const Tokens& t : test) {
    CHECK_FALSE(train.contains(t));
    CHECK_FALSE(dev.contains(t));
  }
}

void check_no_reserved(const Splits& s, bool separator_allowed) {
  const std::set<std::string> reserved = {kPadToken, kBosToken, kEosToken, kUnkToken};
  for (const Corpus* c : {&s.train, &s.dev, &s.test}) {
    for (const Pair& p : c->pairs) {
      for (const auto& t : p.source) {
        CHECK_FALSE(reserved.contains(t));
        if (!separator_allowed) CHECK(t != kSepToken);
      }
      for (const auto& t : p.target) {
        CHECK_FALSE(reserved.contains(t));
        CHECK(t != kSepToken);
      }
    }
  }
}

}  // namespace

TEST_CASE("reading tab-separated pairs") {
  std::istringstream in("# comment\na b c\tx y\n\nd\te\tf g\n");
  const Corpus c = read_tsv(in);
  REQUIRE(c.size() == 2);
  CHECK(c.pairs[0].source == Tokens{"a", "b", "c"});
  CHECK(c.pairs[0].target == Tokens{"x", "y"});
  CHECK(c.pairs[1].extra_references == std::vector<Tokens>{{"f", "g"}});
}

TEST_CASE("empty input is an empty corpus") {
  std::istringstream in("");
  CHECK(read_tsv(in).empty());
}

TEST_CASE("malformed lines report their line number") {
  std::istringstream in("a\tb\n# fine\nno tab here\n");
  try {
    (void)read_tsv(in);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream empty_side("a\t\n");
  CHECK_THROWS_AS((void)read_tsv(empty_side), ParseError);
}

TEST_CASE("write then read reproduces a generated corpus") {
  const Splits s = gen_inflection({});
  Corpus with_refs = s.dev;
  with_refs.pairs[0].extra_references.push_back({"q", "r"});
  for (const Corpus* c : {&s.train, static_cast<const Corpus*>(&with_refs)}) {
    std::stringstream buffer;
    write_tsv(*c, buffer);
    CHECK(read_tsv(buffer) == *c);
  }
  const auto path = std::filesystem::temp_directory_path() / "monoattn_corpus_roundtrip.tsv";
  write_tsv(s.test, path);
  CHECK(read_tsv(path) == s.test);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)read_tsv(std::filesystem::path("/nonexistent/dir/file.tsv")), InputError);
}

TEST_CASE("vocabulary reserves the special ids") {
  const Vocabulary v;
  CHECK(v.size() == kReservedCount);
  CHECK(v.id(kPadToken) == kPadId);
  CHECK(v.id(kBosToken) == kBosId);
  CHECK(v.id(kEosToken) == kEosId);
  CHECK(v.id(kSepToken) == kSepId);
  CHECK(v.id(kUnkToken) == kUnkId);
  Vocabulary w;
  w.extend({{"b", "a"}, {"a", "c"}});
  CHECK(w.id("b") == 5);
  CHECK(w.id("a") == 6);
  CHECK(w.id("c") == 7);
  CHECK(w.id("never seen") == kUnkId);
  CHECK(Vocabulary::from_tokens(w.tokens()) == w);
  CHECK_THROWS_AS((void)Vocabulary::from_tokens({"a", "b"}), ParseError);
}

TEST_CASE("encoding appends eos and records the separator") {
  const Corpus c{{{{"V", "SG", kSepToken, "u", "s", "e"}, {"u", "s", "e", "s"}, {}, {}}}};
  const Vocabularies v = build_vocabularies(c);
  const EncodedExample e = encode(c.pairs[0], v);
  CHECK(e.source.size() == 7);
  CHECK(e.source.back() == kEosId);
  CHECK(e.target.back() == kEosId);
  REQUIRE(e.separator.has_value());
  CHECK(*e.separator == 2);
  CHECK(decode_target(std::span(e.target).first(4), v.target) == Tokens{"u", "s", "e", "s"});
}

TEST_CASE("cipher generator") {
  CipherOptions o;
  o.train_size = 300;
  o.dev_size = 30;
  o.test_size = 30;
  const Splits s = gen_cipher(o);
  CHECK(s.train.size() == 300);
  CHECK(s.dev.size() == 30);
  CHECK(s.test.size() == 30);
  check_disjoint(s);
  check_no_reserved(s, false);
  SUBCASE("fixed seed is deterministic") {
    const Splits again = gen_cipher(o);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
    CHECK(again.manifest == s.manifest);
    o.seed = 2;
    CHECK_FALSE(gen_cipher(o).train == s.train);
  }
  SUBCASE("a fixed character bijection aligned position by position") {
    std::map<std::string, std::string> cipher;
    std::set<std::string> images;
    for (const Pair& p : s.train.pairs) {
      REQUIRE(p.source.size() == p.target.size());
      for (std::size_t i = 0; i < p.source.size(); ++i) {
        CHECK(p.alignment[i] == i);
        auto [it, fresh] = cipher.emplace(p.source[i], p.target[i]);
        CHECK(it->second == p.target[i]);
        if (fresh) images.insert(p.target[i]);
      }
    }
    CHECK(images.size() == cipher.size());
    for (const Pair& p : s.test.pairs)
      for (std::size_t i = 0; i < p.source.size(); ++i) CHECK(cipher.at(p.source[i]) == p.target[i]);
  }
  SUBCASE("identity cipher copies") {
    o.identity = true;
    for (const Pair& p : gen_cipher(o).train.pairs) CHECK(p.target == p.source);
  }
  SUBCASE("lengths stay in range") {
    for (const Pair& p : s.train.pairs) {
      CHECK(p.source.size() >= o.min_length);
      CHECK(p.source.size() <= o.max_length);
    }
  }
  SUBCASE("bad options") {
    o.vocab_size = 1;
    CHECK_THROWS_AS((void)gen_cipher(o), ConfigError);
  }
}

TEST_CASE("inflection generator") {
  CHECK(inflect({"V", "SG", kSepToken, "u", "s", "e"}) == Tokens{"u", "s", "e", "s"});
  CHECK_THROWS_AS((void)inflect({kSepToken, "u"}), InputError);
  CHECK_THROWS_AS((void)inflect({"V", "u"}), InputError);
  InflectionOptions o;
  o.train_size = 300;
  o.dev_size = 30;
  o.test_size = 30;
  const Splits s = gen_inflection(o);
  check_disjoint(s);
  check_no_reserved(s, true);
  for (const Pair& p : s.train.pairs) {
    const auto sep = static_cast<std::size_t>(std::find(p.source.begin(), p.source.end(), kSepToken) - p.source.begin());
    REQUIRE(sep < p.source.size());
    CHECK(sep >= 1);
    CHECK(sep <= o.max_tags);
    CHECK(p.target == inflect(p.source));
    // Alignment stays inside the lemma and never moves backwards.
    for (std::size_t t = 0; t < p.alignment.size(); ++t) {
      CHECK(p.alignment[t] > sep);
      if (t > 0) CHECK(p.alignment[t] >= p.alignment[t - 1]);
    }
  }
  o.tags.clear();
  CHECK_THROWS_AS((void)gen_inflection(o), ConfigError);
}

TEST_CASE("reorder generator") {
  ReorderOptions o;
  o.train_size = 300;
  o.dev_size = 30;
  o.test_size = 30;
  SUBCASE("probability 0 is a copy task") {
    o.swap_probability = 0.0;
    for (const Pair& p : gen_reorder(o).train.pairs) CHECK(p.target == p.source);
  }
  SUBCASE("probability 1 displaces exactly one token") {
    o.swap_probability = 1.0;
    o.min_length = 3;
    for (const Pair& p : gen_reorder(o).train.pairs) {
      const std::size_t n = p.source.size();
      REQUIRE(p.alignment.size() == n);
      std::size_t decreases = 0;
      for (std::size_t t = 1; t < n; ++t) decreases += p.alignment[t] < p.alignment[t - 1];
      CHECK(decreases == 1);
      std::vector<std::size_t> sorted = p.alignment;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t t = 0; t < n; ++t) CHECK(sorted[t] == t);
      for (std::size_t t = 0; t < n; ++t) CHECK(p.target[t] == p.source[p.alignment[t]]);
      // The moved token comes from the end.
      CHECK(std::find(p.alignment.begin(), p.alignment.end(), n - 1) != p.alignment.end() - 1);
    }
  }
  SUBCASE("probability outside [0, 1] is rejected") {
    o.swap_probability = 1.5;
    CHECK_THROWS_AS((void)gen_reorder(o), ConfigError);
  }
  SUBCASE("deterministic and disjoint") {
    const Splits a = gen_reorder(o), b = gen_reorder(o);
    CHECK(a.train == b.train);
    check_disjoint(a);
  }
}

TEST_CASE("default held-out size") {
  CHECK(default_heldout_size(2000) == 200);
  CHECK(default_heldout_size(5) == 1);
}
