// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "monoattn/model.hpp"

namespace monoattn::model {
namespace {

constexpr const char* kMagic = "monoattn-checkpoint";

void write_double(std::ostream& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, res.ptr - buf);
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(std::string("unexpected end of file, expected ") + what, line_ + 1);
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

std::size_t parse_count(const std::string& text, std::size_t line) {
  std::size_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError("invalid count '" + text + "'", line);
  }
  return v;
}

std::vector<double> parse_values(const std::string& text, std::size_t expected, std::size_t line) {
  std::vector<double> out;
  out.reserve(expected);
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    double v = 0;
    const auto res = std::from_chars(p, end, v);
    if (res.ec != std::errc()) throw ParseError("invalid number in parameter values", line);
    out.push_back(v);
    p = res.ptr;
  }
  if (out.size() != expected) {
    throw ParseError("expected " + std::to_string(expected) + " values, found " + std::to_string(out.size()), line);
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, std::ostream& out) {
  out << kMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [key, value] : checkpoint.model.config.to_key_values()) out << "config " << key << ' ' << value << '\n';
  auto vocab = [&](const char* side, const corpus::Vocabulary& v) {
    out << "vocab " << side << ' ' << v.size() << '\n';
    for (const auto& t : v.tokens()) out << t << '\n';
  };
  vocab("source", checkpoint.vocab.source);
  vocab("target", checkpoint.vocab.target);
  for (const auto& [name, a] : checkpoint.model.params) {
    out << "param " << name << ' ' << a.rows() << ' ' << a.cols() << '\n';
    bool first = true;
    for (double v : a.data()) {
      if (!first) out << ' ';
      first = false;
      write_double(out, v);
    }
    out << '\n';
  }
  out << "end\n";
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  save_checkpoint(checkpoint, out);
  if (!out) throw Error("write failed: " + path.string());
}

Checkpoint load_checkpoint(std::istream& in) {
  LineReader reader(in);
  {
    std::istringstream header(reader.next("header"));
    std::string magic;
    int version = 0;
    if (!(header >> magic >> version) || magic != kMagic) throw ParseError("not a checkpoint file", reader.line());
    if (version != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version " + std::to_string(version), reader.line());
    }
  }
  std::map<std::string, std::string> config_values;
  std::vector<std::string> source_tokens, target_tokens;
  bool have_source = false, have_target = false;
  Parameters params;
  for (;;) {
    const std::string line = reader.next("'end'");
    if (line == "end") break;
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "config") {
      std::string key, value;
      if (!(fields >> key >> value)) throw ParseError("malformed config line", reader.line());
      config_values[key] = value;
    } else if (kind == "vocab") {
      std::string side, count_text;
      if (!(fields >> side >> count_text)) throw ParseError("malformed vocab line", reader.line());
      const std::size_t count = parse_count(count_text, reader.line());
      std::vector<std::string>* dest = nullptr;
      if (side == "source") {
        dest = &source_tokens;
        have_source = true;
      } else if (side == "target") {
        dest = &target_tokens;
        have_target = true;
      } else {
        throw ParseError("unknown vocab side '" + side + "'", reader.line());
      }
      dest->clear();
      for (std::size_t i = 0; i < count; ++i) dest->push_back(reader.next("vocabulary token"));
    } else if (kind == "param") {
      std::string name, rows_text, cols_text;
      if (!(fields >> name >> rows_text >> cols_text)) throw ParseError("malformed param line", reader.line());
      const std::size_t rows = parse_count(rows_text, reader.line());
      const std::size_t cols = parse_count(cols_text, reader.line());
      const std::string values = reader.next("parameter values");
      params.set(name, nd::Array::matrix(rows, cols, parse_values(values, rows * cols, reader.line())));
    } else {
      throw ParseError("unknown record '" + kind + "'", reader.line());
    }
  }
  if (!have_source || !have_target) throw ParseError("checkpoint lacks a vocabulary", reader.line());

  Checkpoint ck;
  ck.model.config = ModelConfig::from_key_values(config_values);
  ck.model.config.validate();
  try {
    ck.vocab.source = corpus::Vocabulary::from_tokens(source_tokens);
    ck.vocab.target = corpus::Vocabulary::from_tokens(target_tokens);
  } catch (const Error& e) {
    throw ParseError(std::string("invalid vocabulary: ") + e.what(), 0);
  }
  if (ck.vocab.source.size() != ck.model.config.source_vocab || ck.vocab.target.size() != ck.model.config.target_vocab) {
    throw ConfigError("checkpoint vocabulary sizes do not match its configuration");
  }
  const Parameters expected = init_parameters(ck.model.config);
  if (expected.count() != params.count()) {
    throw ConfigError("checkpoint has " + std::to_string(params.count()) + " parameters, configuration expects " +
                      std::to_string(expected.count()));
  }
  for (const auto& [name, a] : expected) {
    if (!params.contains(name)) throw ConfigError("checkpoint lacks parameter '" + name + "'");
    if (params.get(name).shape() != a.shape()) {
      throw ConfigError("parameter '" + name + "' has shape " + nd::to_string(params.get(name).shape()) +
                        ", configuration expects " + nd::to_string(a.shape()));
    }
  }
  ck.model.params = std::move(params);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace monoattn::model
