// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "monoattn/corpus.hpp"
#include "monoattn/error.hpp"
#include "monoattn/metrics.hpp"
#include "monoattn/model.hpp"
#include "monoattn/trainer.hpp"

#ifndef MONOATTN_VERSION
#define MONOATTN_VERSION "0.1.0"
#endif

namespace monoattn::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using metrics::format_number;

/// Invalid invocation; reported with exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

constexpr const char* kSeedVariable = "MONOATTN_SEED";

// Binds CLI options to settings keys and reports the ones given.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  void value(const std::string& name, const std::string& key, const std::string& help) {
    CLI::Option* option = app_->add_option(name, store_[key], help);
    bindings_.push_back({option, key, std::nullopt});
  }

  void flag(const std::string& name, const std::string& key, const std::string& help, const std::string& when_set) {
    CLI::Option* option = app_->add_flag(name, help);
    bindings_.push_back({option, key, when_set});
  }

  KeyValues given() const {
    KeyValues out;
    for (const auto& b : bindings_) {
      if (b.option->count() == 0) continue;
      out[b.key] = b.when_set ? *b.when_set : store_.at(b.key);
    }
    return out;
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::optional<std::string> when_set;
  };
  CLI::App* app_;
  std::map<std::string, std::string> store_;
  std::vector<Binding> bindings_;
};

const std::string& require(const KeyValues& kv, const std::string& key, const std::string& flag) {
  auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) throw UsageError("missing required option " + flag);
  return it->second;
}

std::size_t to_size(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw UsageError("invalid non-negative integer for " + key + ": '" + text + "'");
  }
}

double to_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw UsageError("invalid number for " + key + ": '" + text + "'");
  }
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw UsageError("invalid boolean for " + key + ": '" + text + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void set_seed_fallback(KeyValues& settings) {
  if (settings.contains("seed")) return;
  if (const char* env = std::getenv(kSeedVariable); env != nullptr && *env != '\0') {
    to_size(kSeedVariable, env);
    settings["seed"] = env;
  }
}

void write_manifest(const std::string& command, const KeyValues& settings, const fs::path& dir) {
  fs::create_directories(dir);
  KeyValues manifest = settings;
  manifest["command"] = command;
  manifest["tool_version"] = version();
  write_key_values(manifest, dir / "manifest.txt");
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

mono::MonoConfig scoring_config(const KeyValues& s) {
  mono::MonoConfig config;
  config.lambda = 0.0;
  config.delta = to_real("delta", s.at("delta"));
  config.direction = mono::parse_direction(s.at("direction"));
  config.heads = mono::HeadMask::parse(s.at("mono_heads"));
  config.separator_masking = to_bool("sep_masking", s.at("sep_masking"));
  config.renormalize = to_bool("renormalize", s.at("renormalize"));
  config.validate();
  return config;
}

void fill_scoring_defaults(KeyValues& s) {
  s.try_emplace("delta", "0");
  s.try_emplace("direction", "inc");
  s.try_emplace("mono_heads", "all");
  s.try_emplace("sep_masking", "false");
  s.try_emplace("renormalize", "true");
}

// ---- gen ------------------------------------------------------------------

KeyValues resolve_gen(KeyValues s) {
  set_seed_fallback(s);
  const std::string task = require(s, "task", "--task");
  require(s, "out_dir", "--out-dir");
  if (task != "cipher" && task != "inflection" && task != "reorder") {
    throw UsageError("unknown task '" + task + "' (expected cipher, inflection or reorder)");
  }
  auto reject = [&](const char* key, const char* flag, const char* only) {
    if (s.contains(key)) throw UsageError(std::string(flag) + " only applies to --task " + only);
  };
  if (task != "cipher") reject("identity", "--identity", "cipher");
  if (task != "reorder") reject("swap", "--swap", "reorder");
  if (task != "inflection") {
    reject("tags", "--tags", "inflection");
    reject("max_tags", "--max-tags", "inflection");
  }
  const std::size_t n = to_size("n", s.try_emplace("n", "2000").first->second);
  s.try_emplace("dev_size", std::to_string(corpus::default_heldout_size(n)));
  s.try_emplace("test_size", std::to_string(corpus::default_heldout_size(n)));
  s.try_emplace("vocab", "20");
  s.try_emplace("seed", "1");
  s.try_emplace("min_len", task == "inflection" ? "3" : "5");
  s.try_emplace("max_len", task == "inflection" ? "10" : "15");
  if (task == "cipher") s.try_emplace("identity", "false");
  if (task == "reorder") s.try_emplace("swap", "0.3");
  if (task == "inflection") {
    std::string tags;
    for (const auto& t : corpus::InflectionOptions{}.tags) tags += (tags.empty() ? "" : ",") + t;
    s.try_emplace("tags", tags);
    s.try_emplace("max_tags", "3");
  }
  return s;
}

corpus::Splits generate(const KeyValues& s) {
  const std::string& task = s.at("task");
  auto common = [&](auto& o) {
    o.train_size = to_size("n", s.at("n"));
    o.dev_size = to_size("dev_size", s.at("dev_size"));
    o.test_size = to_size("test_size", s.at("test_size"));
    o.vocab_size = to_size("vocab", s.at("vocab"));
    o.min_length = to_size("min_len", s.at("min_len"));
    o.max_length = to_size("max_len", s.at("max_len"));
    o.seed = to_size("seed", s.at("seed"));
  };
  if (task == "cipher") {
    corpus::CipherOptions o;
    common(o);
    o.identity = to_bool("identity", s.at("identity"));
    return corpus::gen_cipher(o);
  }
  if (task == "inflection") {
    corpus::InflectionOptions o;
    common(o);
    o.tags = split(s.at("tags"), ',');
    o.max_tags = to_size("max_tags", s.at("max_tags"));
    return corpus::gen_inflection(o);
  }
  corpus::ReorderOptions o;
  common(o);
  o.swap_probability = to_real("swap", s.at("swap"));
  return corpus::gen_reorder(o);
}

void run_gen(const KeyValues& s, std::ostream& out) {
  const fs::path dir = s.at("out_dir");
  write_manifest("gen", s, dir);
  const corpus::Splits splits = generate(s);
  corpus::write_tsv(splits.train, dir / "train.tsv");
  corpus::write_tsv(splits.dev, dir / "dev.tsv");
  corpus::write_tsv(splits.test, dir / "test.tsv");
  write_key_values(splits.manifest, dir / "generator.txt");
  out << "train=" << splits.train.size() << "\ndev=" << splits.dev.size() << "\ntest=" << splits.test.size() << '\n';
}

// ---- train / sweep ----------------------------------------------------------

// Default margin for tag-separated (inflection-style) sources.
constexpr const char* kSeparatedDelta = "0.1";

bool has_separator(const corpus::Corpus& data) {
  return std::any_of(data.pairs.begin(), data.pairs.end(), [](const corpus::Pair& p) {
    return std::find(p.source.begin(), p.source.end(), corpus::kSepToken) != p.source.end();
  });
}

// Vocabulary sizes come from the training data, so they are not checked here.
void validate_before_data(trainer::TrainConfig config) {
  config.model.source_vocab = config.model.target_vocab = corpus::kReservedCount;
  config.validate();
}

KeyValues resolve_training(KeyValues given, bool sweep) {
  KeyValues s;
  if (auto it = given.find("config"); it != given.end()) {
    const KeyValues file = read_key_values(it->second);
    for (const auto& [key, value] : file) {
      if (!trainer::is_train_key(key) && key != "data" && key != "out_dir" && !(sweep && key == "lambdas")) {
        throw UsageError("unknown key '" + key + "' in config file " + it->second);
      }
    }
    s = file;
    given.erase(it);
  }
  for (const auto& [key, value] : given) s[key] = value;
  set_seed_fallback(s);
  require(s, "data", "--data");
  require(s, "out_dir", "--out");
  trainer::TrainConfig config;
  KeyValues train_settings;
  for (const auto& [key, value] : s) {
    if (trainer::is_train_key(key)) train_settings[key] = value;
  }
  config.apply(train_settings);
  const bool delta_given = s.contains("delta");
  KeyValues resolved = config.to_key_values();
  resolved["data"] = s.at("data");
  resolved["out_dir"] = s.at("out_dir");
  if (sweep) {
    std::vector<double> lambdas;
    for (const auto& item : split(require(s, "lambdas", "--lambdas"), ',')) lambdas.push_back(to_real("lambdas", item));
    if (lambdas.size() < 2) throw UsageError("--lambdas needs at least two values");
    std::sort(lambdas.begin(), lambdas.end());
    std::string list;
    for (double l : lambdas) list += (list.empty() ? "" : ",") + format_number(l);
    resolved["lambdas"] = list;
    resolved.erase("lambda");
    // Each sweep value must be valid with the rest of the configuration.
    for (double l : lambdas) {
      trainer::TrainConfig probe = config;
      probe.mono.lambda = l;
      validate_before_data(probe);
    }
  } else {
    validate_before_data(config);
  }
  if (!delta_given && has_separator(corpus::read_tsv(fs::path(s.at("data")) / "train.tsv"))) {
    resolved["delta"] = kSeparatedDelta;
  }
  return resolved;
}

trainer::TrainConfig training_config(const KeyValues& s) {
  trainer::TrainConfig config;
  KeyValues train_settings;
  for (const auto& [key, value] : s) {
    if (trainer::is_train_key(key)) train_settings[key] = value;
  }
  config.apply(train_settings);
  return config;
}

void run_train(const KeyValues& s, std::ostream& out) {
  const fs::path dir = s.at("out_dir");
  write_manifest("train", s, dir);
  const fs::path data = s.at("data");
  const corpus::Corpus train = corpus::read_tsv(data / "train.tsv");
  const corpus::Corpus dev = corpus::read_tsv(data / "dev.tsv");
  const trainer::TrainConfig config = training_config(s);

  std::ofstream trace = open_output(dir / "trace.csv");
  bool header = false;
  const auto result = trainer::fit(train, dev, config, [&](const trainer::TraceRow& row) {
    if (!header) {
      trace << trainer::trace_csv_header(row.heads) << '\n';
      header = true;
    }
    trace << trainer::trace_csv_row(row) << '\n' << std::flush;
    out << "step " << row.step << ' ' << config.dev_metric << ' ' << format_number(row.dev_metric) << " dev_mono "
        << format_number(row.dev_mono) << " dev_pctmono " << format_number(row.dev_pct_mono) << '\n'
        << std::flush;
  });
  model::save_checkpoint(result.best, dir / "model.ckpt");
  out << "best_step=" << result.best_step << "\nbest_dev_metric=" << format_number(result.best_metric)
      << "\nsteps=" << result.steps << "\nstopped_early=" << (result.stopped_early ? "true" : "false") << '\n';
}

void run_sweep(const KeyValues& s, std::ostream& out) {
  const fs::path dir = s.at("out_dir");
  write_manifest("sweep", s, dir);
  const fs::path data = s.at("data");
  const corpus::Corpus train = corpus::read_tsv(data / "train.tsv");
  const corpus::Corpus dev = corpus::read_tsv(data / "dev.tsv");
  std::vector<double> lambdas;
  for (const auto& item : split(s.at("lambdas"), ',')) lambdas.push_back(to_real("lambdas", item));
  const auto rows = trainer::sweep_lambda(train, dev, training_config(s), lambdas);
  std::ofstream csv = open_output(dir / "sweep.csv");
  trainer::write_sweep_csv(rows, csv);
  trainer::write_sweep_csv(rows, out);
}

// ---- eval / analyze ---------------------------------------------------------

corpus::Corpus read_eval_data(const fs::path& path) {
  return corpus::read_tsv(fs::is_directory(path) ? path / "test.tsv" : path);
}

std::vector<DumpRecord> decode_records(const model::Checkpoint& ck, const corpus::Corpus& data,
                                       const std::vector<model::Decoded>& outputs) {
  std::vector<DumpRecord> records;
  records.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    DumpRecord r;
    r.id = i;
    r.source = data.pairs[i].source;
    r.source.push_back(corpus::kEosToken);
    r.target = corpus::decode_target(outputs[i].tokens, ck.vocab.target);
    if (outputs[i].finished) r.target.push_back(corpus::kEosToken);
    const auto sep = std::find(data.pairs[i].source.begin(), data.pairs[i].source.end(), corpus::kSepToken);
    if (sep != data.pairs[i].source.end()) r.separator = static_cast<std::size_t>(sep - data.pairs[i].source.begin());
    r.heads = outputs[i].attention;
    records.push_back(std::move(r));
  }
  return records;
}

KeyValues resolve_eval(KeyValues s) {
  require(s, "model", "--model");
  require(s, "data", "--data");
  s.try_emplace("metrics", "wer,per,acc,lev,mfs");
  metrics::parse_metric_list(s.at("metrics"));
  fill_scoring_defaults(s);
  scoring_config(s);
  s.try_emplace("per_averaging", "micro");
  if (s.at("per_averaging") != "micro" && s.at("per_averaging") != "macro") {
    throw UsageError("--per-averaging must be micro or macro");
  }
  s.try_emplace("dump_attn", "false");
  to_bool("dump_attn", s.at("dump_attn"));
  s.try_emplace("out_dir", ".");
  return s;
}

void run_eval(const KeyValues& s, std::ostream& out) {
  const fs::path dir = s.at("out_dir");
  write_manifest("eval", s, dir);
  const model::Checkpoint ck = model::load_checkpoint(fs::path(s.at("model")));
  const corpus::Corpus data = read_eval_data(s.at("data"));
  const mono::MonoConfig config = scoring_config(s);
  config.heads.validate(ck.model.config.decoder_layers, ck.model.config.heads);
  const auto averaging = s.at("per_averaging") == "macro" ? metrics::Averaging::kMacro : metrics::Averaging::kMicro;
  const auto ev = trainer::evaluate(ck.model, ck.vocab, data, config, metrics::parse_metric_list(s.at("metrics")), 64,
                                    averaging);
  metrics::MetricReport report = ev.metrics;
  report.set("l_mono", ev.decoded.loss);
  report.set("pct_mono", ev.decoded.pct_mono);
  report.set("l_mono_teacher_forced", ev.teacher_forced.loss);
  report.set("pct_mono_teacher_forced", ev.teacher_forced.pct_mono);
  report.set("pairs", static_cast<double>(ev.decoded.pairs));
  report.set("examples", static_cast<double>(data.size()));
  std::ofstream csv = open_output(dir / "metrics.csv");
  csv << report.csv_header() << '\n' << report.csv_row() << '\n';
  if (to_bool("dump_attn", s.at("dump_attn"))) {
    std::ofstream dump = open_output(dir / "attention.jsonl");
    for (const auto& r : decode_records(ck, data, ev.outputs)) dump << dump_line(r) << '\n';
  }
  out << report.to_key_values();
}

KeyValues resolve_analyze(KeyValues s) {
  const bool from_dump = s.contains("dump");
  const bool from_model = s.contains("model") || s.contains("data");
  if (from_dump == from_model) throw UsageError("give either --dump or both --model and --data");
  if (from_model) {
    require(s, "model", "--model");
    require(s, "data", "--data");
  }
  require(s, "out_dir", "--out-dir");
  fill_scoring_defaults(s);
  scoring_config(s);
  return s;
}

void run_analyze(const KeyValues& s, std::ostream& out) {
  const fs::path dir = s.at("out_dir");
  write_manifest("analyze", s, dir);
  const mono::MonoConfig config = scoring_config(s);
  std::vector<DumpRecord> records;
  if (s.contains("dump")) {
    records = read_dump(fs::path(s.at("dump")));
  } else {
    const model::Checkpoint ck = model::load_checkpoint(fs::path(s.at("model")));
    config.heads.validate(ck.model.config.decoder_layers, ck.model.config.heads);
    const corpus::Corpus data = read_eval_data(s.at("data"));
    const auto ev = trainer::evaluate(ck.model, ck.vocab, data, config, {"acc"});
    records = decode_records(ck, data, ev.outputs);
  }
  if (records.empty()) throw InputError("nothing to analyze");
  const mono::MonoReport report = score_dump(records, config);

  std::vector<EncodedExample> shapes;
  for (const auto& r : records) {
    shapes.push_back({std::vector<int>(r.source.size(), corpus::kUnkId), std::vector<int>(r.target.size(), corpus::kUnkId),
                      r.separator});
  }
  const Batch batch = make_batch(shapes, corpus::kPadId);
  const fs::path maps = dir / "heatmaps";
  fs::create_directories(maps);
  std::ofstream paths = open_output(dir / "paths.csv");
  std::ofstream summary = open_output(dir / "summary.csv");
  paths << "example,layer,head,step,position,term\n";
  summary << "example,layer,head,loss,pct_mono,pairs\n";
  for (std::size_t e = 0; e < records.size(); ++e) {
    const auto scope = mono::scoring_scope(batch, e, config);
    for (const auto& w : records[e].heads) {
      const auto positions = mono::scoped_positions(w, batch, e, config);
      const double x = static_cast<double>(scope.length());
      const auto terms = mono::pairwise_terms(positions, x, config.delta, config.direction);
      for (std::size_t i = 0; i < positions.size(); ++i) {
        paths << records[e].id << ',' << w.layer << ',' << w.head << ',' << i + 1 << ',' << format_number(positions[i])
              << ',' << (i < terms.size() ? format_number(terms[i]) : "") << '\n';
      }
      summary << records[e].id << ',' << w.layer << ',' << w.head << ','
              << format_number(mono::mono_loss(positions, x, config.delta, config.direction)) << ','
              << format_number(mono::percent_mono(positions, x, config.delta, config.direction)) << ','
              << terms.size() << '\n';
      const std::string stem =
          "ex" + std::to_string(records[e].id) + "_l" + std::to_string(w.layer) + "h" + std::to_string(w.head);
      open_output(maps / (stem + ".pgm")) << heatmap_pgm(w.weights);
      std::ofstream twin = open_output(maps / (stem + ".csv"));
      for (std::size_t r = 0; r < w.weights.rows(); ++r) {
        for (std::size_t c = 0; c < w.weights.cols(); ++c) twin << (c ? "," : "") << format_number(w.weights(r, c));
        twin << '\n';
      }
    }
  }
  out << "l_mono=" << format_number(report.loss) << "\npct_mono=" << format_number(report.pct_mono)
      << "\npairs=" << report.pairs << "\nexamples=" << records.size() << '\n';
}

// ---- replay -------------------------------------------------------------------

void run_replay(const KeyValues& given, std::ostream& out) {
  KeyValues manifest = read_key_values(require(given, "manifest", "--manifest"));
  auto command = manifest.find("command");
  if (command == manifest.end()) throw InputError("manifest has no command");
  const std::string name = command->second;
  manifest.erase(command);
  manifest.erase("tool_version");
  if (name == "replay") throw InputError("manifest records a replay");
  if (auto it = given.find("out_dir"); it != given.end()) manifest["out_dir"] = it->second;
  execute(name, manifest, out);
}

}  // namespace

const char* version() { return MONOATTN_VERSION; }

void execute(const std::string& command, const KeyValues& settings, std::ostream& out) {
  if (command == "gen") return run_gen(resolve_gen(settings), out);
  if (command == "train") return run_train(resolve_training(settings, false), out);
  if (command == "sweep") return run_sweep(resolve_training(settings, true), out);
  if (command == "eval") return run_eval(resolve_eval(settings), out);
  if (command == "analyze") return run_analyze(resolve_analyze(settings), out);
  throw UsageError("unknown command '" + command + "'");
}

std::string dump_line(const DumpRecord& record) {
  json j;
  j["id"] = record.id;
  j["src"] = record.source;
  j["tgt"] = record.target;
  j["sep"] = record.separator ? json(*record.separator) : json(nullptr);
  json heads = json::array();
  for (const auto& w : record.heads) {
    json rows = json::array();
    for (std::size_t r = 0; r < w.weights.rows(); ++r) {
      const auto row = w.weights.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    heads.push_back({{"layer", w.layer}, {"head", w.head}, {"weights", std::move(rows)}});
  }
  j["heads"] = std::move(heads);
  return j.dump();
}

std::vector<DumpRecord> read_dump(std::istream& in) {
  std::vector<DumpRecord> records;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "record " + std::to_string(records.size());
    try {
      const json j = json::parse(line);
      DumpRecord r;
      r.id = j.at("id").get<std::size_t>();
      r.source = j.at("src").get<std::vector<std::string>>();
      r.target = j.at("tgt").get<std::vector<std::string>>();
      if (!j.at("sep").is_null()) r.separator = j.at("sep").get<std::size_t>();
      if (r.separator && *r.separator >= r.source.size()) throw ParseError(where + ": separator outside source", line_number);
      for (const auto& h : j.at("heads")) {
        attention::AttentionWeights w;
        w.layer = h.at("layer").get<std::size_t>();
        w.head = h.at("head").get<std::size_t>();
        const auto rows = h.at("weights").get<std::vector<std::vector<double>>>();
        if (rows.size() != r.target.size()) {
          throw ParseError(where + ": weights have " + std::to_string(rows.size()) + " rows for " +
                               std::to_string(r.target.size()) + " target tokens",
                           line_number);
        }
        std::vector<double> flat;
        for (const auto& row : rows) {
          if (row.size() != r.source.size()) {
            throw ParseError(where + ": weight row length does not match the source length", line_number);
          }
          flat.insert(flat.end(), row.begin(), row.end());
        }
        w.weights = nd::Array::matrix(rows.size(), r.source.size(), std::move(flat));
        w.source_mask.assign(r.source.size(), true);
        w.target_mask.assign(rows.size(), true);
        r.heads.push_back(std::move(w));
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what(), line_number);
    }
  }
  return records;
}

std::vector<DumpRecord> read_dump(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_dump(in);
}

mono::MonoReport score_dump(const std::vector<DumpRecord>& records, const mono::MonoConfig& config) {
  std::vector<EncodedExample> shapes;
  mono::BatchAttention attn;
  for (const auto& r : records) {
    shapes.push_back({std::vector<int>(r.source.size(), corpus::kUnkId), std::vector<int>(r.target.size(), corpus::kUnkId),
                      r.separator});
    attn.push_back(r.heads);
  }
  return mono::report_batch(attn, make_batch(shapes, corpus::kPadId), config);
}

std::string heatmap_pgm(const nd::Array& weights) {
  std::ostringstream out;
  out << "P2\n" << weights.cols() << ' ' << weights.rows() << "\n255\n";
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    for (std::size_t c = 0; c < weights.cols(); ++c) {
      const long level = std::lround(std::clamp(weights(r, c), 0.0, 1.0) * 255.0);
      out << (c ? " " : "") << level;
    }
    out << '\n';
  }
  return out.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Seq2seq toolkit with an attention monotonicity loss", "monoattn"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  auto add_train_flags = [](Flags& f) {
    f.value("--config", "config", "Flat key = value settings file; flags win");
    f.value("--data", "data", "Directory with train.tsv and dev.tsv");
    f.value("--out", "out_dir", "Output directory");
    f.value("--lambda", "lambda", "Monotonicity loss weight (0.1)");
    f.value("--delta", "delta", "Margin in [0, 1] (0; 0.1 for separator data)");
    f.value("--direction", "direction", "inc or dec");
    f.value("--mono-heads", "mono_heads", "all, none or layer:head list");
    f.value("--drophead", "drophead", "DropHead rate in [0, 1)");
    f.value("--heads", "heads", "Attention heads per layer");
    f.value("--layers", "layers", "Encoder and decoder layers");
    f.value("--dim", "dim", "Model dimension");
    f.value("--ff-dim", "ff_dim", "Feed-forward dimension");
    f.value("--seed", "seed", "Random seed (falls back to MONOATTN_SEED)");
    f.flag("--sep-masking", "sep_masking", "Score only source columns right of the separator", "true");
    f.flag("--no-renormalize", "renormalize", "Do not renormalise rows under separator masking", "false");
    f.value("--pos-mode", "pos_mode", "vanilla or sep-centered");
    f.value("--batch-size", "batch_size", "Examples per batch");
    f.value("--max-steps", "max_steps", "Training step limit");
    f.value("--checkpoint-interval", "checkpoint_interval", "Steps between dev evaluations");
    f.value("--patience", "patience", "Checkpoints without improvement before stopping");
    f.value("--lr", "learning_rate", "Adam step size");
    f.value("--dev-metric", "dev_metric", "wer, per, acc, lev or mfs");
  };
  auto add_scoring_flags = [](Flags& f) {
    f.value("--delta", "delta", "Margin in [0, 1] (0)");
    f.value("--direction", "direction", "inc or dec");
    f.value("--mono-heads", "mono_heads", "Mechanisms in the headline figure");
    f.flag("--sep-masking", "sep_masking", "Score only source columns right of the separator", "true");
    f.flag("--no-renormalize", "renormalize", "Do not renormalise rows under separator masking", "false");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  Flags gen_flags(gen);
  gen_flags.value("--task", "task", "cipher, inflection or reorder");
  gen_flags.value("--out-dir", "out_dir", "Output directory");
  gen_flags.value("--seed", "seed", "Random seed (falls back to MONOATTN_SEED)");
  gen_flags.value("--n", "n", "Training pairs (2000)");
  gen_flags.value("--dev-size", "dev_size", "Dev pairs (n/10)");
  gen_flags.value("--test-size", "test_size", "Test pairs (n/10)");
  gen_flags.value("--vocab", "vocab", "Alphabet size (20)");
  gen_flags.value("--min-len", "min_len", "Shortest sequence");
  gen_flags.value("--max-len", "max_len", "Longest sequence");
  gen_flags.flag("--identity", "identity", "Identity cipher", "true");
  gen_flags.value("--swap", "swap", "Reordering probability (0.3)");
  gen_flags.value("--tags", "tags", "Comma list of inflection tags");
  gen_flags.value("--max-tags", "max_tags", "Tags per source (3)");

  CLI::App* train = app.add_subcommand("train", "Train a model");
  Flags train_flags(train);
  add_train_flags(train_flags);

  CLI::App* sweep = app.add_subcommand("sweep", "Train one model per lambda");
  Flags sweep_flags(sweep);
  add_train_flags(sweep_flags);
  sweep_flags.value("--lambdas", "lambdas", "Comma list of at least two lambdas");

  CLI::App* eval = app.add_subcommand("eval", "Decode and score a data set");
  Flags eval_flags(eval);
  eval_flags.value("--model", "model", "Checkpoint file");
  eval_flags.value("--data", "data", "TSV file, or a directory with test.tsv");
  eval_flags.value("--metrics", "metrics", "Subset of wer,per,acc,lev,mfs");
  eval_flags.value("--per-averaging", "per_averaging", "micro or macro");
  eval_flags.flag("--dump-attn", "dump_attn", "Write attention.jsonl", "true");
  eval_flags.value("--out-dir", "out_dir", "Output directory (.)");
  add_scoring_flags(eval_flags);

  CLI::App* analyze = app.add_subcommand("analyze", "Mean-position paths and heatmaps");
  Flags analyze_flags(analyze);
  analyze_flags.value("--dump", "dump", "Attention dump from eval --dump-attn");
  analyze_flags.value("--model", "model", "Checkpoint file");
  analyze_flags.value("--data", "data", "TSV file, or a directory with test.tsv");
  analyze_flags.value("--out-dir", "out_dir", "Output directory");
  add_scoring_flags(analyze_flags);

  CLI::App* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  Flags replay_flags(replay);
  replay_flags.value("--manifest", "manifest", "manifest.txt of an earlier run");
  replay_flags.value("--out-dir", "out_dir", "Write outputs here instead");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::string command;
  KeyValues given;
  const std::pair<CLI::App*, Flags*> commands[] = {{gen, &gen_flags},         {train, &train_flags},
                                                   {sweep, &sweep_flags},     {eval, &eval_flags},
                                                   {analyze, &analyze_flags}, {replay, &replay_flags}};
  for (const auto& [sub, flags] : commands) {
    if (sub->parsed()) {
      command = sub->get_name();
      given = flags->given();
    }
  }

  std::function<void(std::ostream&)> job;
  try {
    if (command == "replay") {
      require(given, "manifest", "--manifest");
      job = [given](std::ostream& o) { run_replay(given, o); };
    } else if (command == "gen") {
      const KeyValues s = resolve_gen(given);
      job = [s](std::ostream& o) { run_gen(s, o); };
    } else if (command == "train" || command == "sweep") {
      const KeyValues s = resolve_training(given, command == "sweep");
      job = [s, command](std::ostream& o) { command == "train" ? run_train(s, o) : run_sweep(s, o); };
    } else if (command == "eval") {
      const KeyValues s = resolve_eval(given);
      job = [s](std::ostream& o) { run_eval(s, o); };
    } else {
      const KeyValues s = resolve_analyze(given);
      job = [s](std::ostream& o) { run_analyze(s, o); };
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  try {
    job(out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace monoattn::cli
