// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen, train, eval, analyze, sweep and replay.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "monoattn/attention.hpp"
#include "monoattn/keyvalue.hpp"
#include "monoattn/monoloss.hpp"

namespace monoattn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

const char* version();

/// Runs one invocation; `args` excludes the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Executes a command from fully resolved settings, the form stored in run
/// manifests. Throws on failure.
void execute(const std::string& command, const KeyValues& settings, std::ostream& out);

/// One example of a JSON Lines attention dump.
struct DumpRecord {
  std::size_t id = 0;
  std::vector<std::string> source;  ///< eos included
  std::vector<std::string> target;  ///< decoded tokens, eos included when produced
  std::optional<std::size_t> separator;
  std::vector<attention::AttentionWeights> heads;
};

std::string dump_line(const DumpRecord& record);
/// Throws ParseError naming the record index on malformed content.
std::vector<DumpRecord> read_dump(const std::filesystem::path& path);
std::vector<DumpRecord> read_dump(std::istream& in);

/// Report over a dump, identical to scoring the same weights in memory.
mono::MonoReport score_dump(const std::vector<DumpRecord>& records, const mono::MonoConfig& config);

/// ASCII PGM (P2), one pixel per weight, 255 for weight 1.
std::string heatmap_pgm(const nd::Array& weights);

}  // namespace monoattn::cli
