#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eventmatch/tensor.hpp"

namespace eventmatch {

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 or -1

  bool operator==(const Event&) const = default;
};

// Events sorted non-decreasing by timestamp, all inside [t_start, t_end] and
// inside the sensor.
struct EventStream {
  std::vector<Event> events;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
  // Set by the parser when the input was not time ordered and had to be sorted.
  bool was_unsorted = false;

  // Throws BoundsError / DomainError if an invariant is broken.
  void validate() const;
};

enum class EventFormat { Text, Binary };

inline constexpr std::size_t kBinaryEventHeaderSize = 4 + 4 + 4 + 8 + 8 + 8;
inline constexpr std::size_t kBinaryEventRecordSize = 8 + 2 + 2 + 1;

// Text: "# evt v1 <width> <height> <t_start_us> <t_end_us>" followed by one
// "<t_us> <x> <y> <p>" line per event, p in {-1, 0, 1} with 0 read as -1.
// Binary: "EVT1", u32 width, u32 height, u64 t_start, u64 t_end, u64 count,
// then count packed (u64 t, u16 x, u16 y, i8 p) records, little-endian.
EventStream parse_events(std::span<const std::uint8_t> bytes, EventFormat format);
Bytes write_events(const EventStream& stream, EventFormat format);

// Binary when the content starts with the EVT1 magic, otherwise text.
EventFormat detect_event_format(std::span<const std::uint8_t> bytes);

struct NormalizedEvent {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  double t_norm = 0.0;  // in [0, bins - 1]
  double weight = 1.0;  // |p|
};

// t_norm = (t - t_start) / (t_end - t_start) * (bins - 1).
std::vector<NormalizedEvent> normalize_timestamps(const EventStream& stream, std::size_t bins);

// H x W x B grid of temporally bilinear event mass. Polarity is collapsed.
struct VoxelGrid {
  Tensor data;
  std::size_t bins = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

inline constexpr std::size_t kDefaultBins = 5;

// Each event deposits (1 - |b - t_norm|) into the integer bins b within one
// bin of t_norm; accumulation runs in double and is stored as float. With more
// than one worker thread events are split into partitions whose grids are
// summed, which is not bitwise stable; deterministic mode keeps one partition.
VoxelGrid build_voxel_grid(const EventStream& stream, std::size_t bins = kDefaultBins);

double voxel_mass(const VoxelGrid& v);

}  // namespace eventmatch
