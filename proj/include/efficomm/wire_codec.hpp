#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "efficomm/grid.hpp"

namespace efficomm {

// Sparse payload of one vehicle's reduced map. Layout (little-endian):
//
//   offset  size  field
//   0       4     magic "EFCM"
//   4       1     version (1)
//   5       1     vehicle id
//   6       1     scale (1 = finest)
//   7       2     channels L
//   9       2     height H
//   11      2     width W
//   13      4     cell count n
//   17      ...   n records: row u16, col u16, L x binary32
//
// Records are sorted by row-major cell index with no repeats. A cell is
// shipped whole when any of its channels is nonzero.

inline constexpr std::uint8_t kPayloadVersion = 1;
inline constexpr std::size_t kPayloadHeaderBytes = 17;

struct PayloadMeta {
  std::uint32_t vehicle_id = 0;  // must fit in one byte on the wire
  std::uint8_t scale = 1;

  bool operator==(const PayloadMeta&) const = default;
};

struct DecodedPayload {
  FeatureTensor features;
  PayloadMeta meta;
  std::uint32_t cell_count = 0;
};

/// 17 + cells * (4 + 4 * channels)
constexpr std::size_t payload_size(int channels, std::size_t cells) {
  return kPayloadHeaderBytes + cells * (4 + 4 * static_cast<std::size_t>(channels));
}

std::vector<std::uint8_t> encode_sparse(const FeatureTensor& features, const PayloadMeta& meta);

/// Throws DecodeError naming the byte offset on bad magic, version,
/// truncation, out-of-range or non-increasing cell indices, or trailing bytes.
DecodedPayload decode_sparse(std::span<const std::uint8_t> bytes);

/// log2 of the nonzero element count (times 4 bytes when `times_bytes`).
/// A zero count maps to 0.
double comm_log2(std::uint64_t nonzero_elements, bool times_bytes = false);
double comm_log2(std::span<const FeatureTensor> remote_maps, bool times_bytes = false);

struct BandwidthStats {
  double mean = 0.0;  // MB per frame, 1 MB = 1e6 bytes
  double std = 0.0;   // population standard deviation
  double max = 0.0;
  double min = 0.0;
};

/// Summary of per-frame byte totals. Throws ReportError on an empty series.
BandwidthStats bandwidth_stats(std::span<const double> bytes_per_frame);

}  // namespace efficomm
