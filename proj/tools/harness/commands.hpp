#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace exgrpo::harness {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // checks failed or invariants violated
  kExitUsage = 2,    // malformed input: spec, snapshot, arguments
  kExitIo = 3,       // unreadable input or unwritable output
};

/// Runs every arm x seed of the spec. Writes `<arm>_seed<n>.jsonl`,
/// `<arm>_seed<n>.csv`, `<arm>_seed<n>.buffer` and `summary.json` into `out`
/// and prints the summary table.
int cmd_train(const std::string& spec_path, const std::filesystem::path& out,
              std::optional<std::uint64_t> seed_override, std::ostream& log);

/// tier is "fast" or "full". Prints one row per check.
int cmd_verify(const std::string& tier, std::uint64_t seed, std::ostream& log);

/// Bucket histogram, retired count and per-bucket mean cached metric of a
/// snapshot; invariant violations make the exit code nonzero.
int cmd_inspect_buffer(const std::string& snapshot_path, std::ostream& log);

}  // namespace exgrpo::harness
