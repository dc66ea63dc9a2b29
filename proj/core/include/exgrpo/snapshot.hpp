#pragma once

#include <cstdint>
#include <iosfwd>

#include "exgrpo/experience.hpp"

namespace exgrpo {

inline constexpr int kSnapshotFormatVersion = 1;

/// Replay buffer + retired set at a given training step. Text encoding with
/// hex floats so a save/load cycle is bit-exact.
struct BufferSnapshot {
  int format_version = kSnapshotFormatVersion;
  std::size_t group_size = 8;
  std::uint64_t step = 0;
  ReplayBuffer buffer;
  RetiredSet retired;

  bool operator==(const BufferSnapshot& other) const = default;
};

void write_snapshot(std::ostream& out, const BufferSnapshot& snapshot);

/// Throws Error("snapshot line L (byte B): ...") on malformed input.
/// Structural parsing only; use validate_buffer for the invariants.
BufferSnapshot read_snapshot(std::istream& in);

}  // namespace exgrpo
