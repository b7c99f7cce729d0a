#include "efficomm/wire_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "efficomm/bytes.hpp"

namespace efficomm {

namespace {
constexpr char kMagic[4] = {'E', 'F', 'C', 'M'};
}

std::vector<std::uint8_t> encode_sparse(const FeatureTensor& features, const PayloadMeta& meta) {
  const GridShape& s = features.shape();
  if (s.channels > 0xffff || s.height > 0xffff || s.width > 0xffff)
    throw EncodeError("grid " + to_string(s) + " exceeds the 16-bit index range");
  if (meta.vehicle_id > 0xff) throw EncodeError("vehicle id " + std::to_string(meta.vehicle_id) + " exceeds one byte");
  if (!features.all_finite()) throw EncodeError("features contain non-finite values");

  std::vector<Index> cells;
  for (Index c = 0; c < s.cells(); ++c)
    if ((features.column(c).array() != 0.0).any()) cells.push_back(c);
  if (cells.size() > 0xffffffffu) throw EncodeError("cell count exceeds 32 bits");

  ByteWriter out;
  out.reserve(payload_size(s.channels, cells.size()));
  out.raw(std::string_view(kMagic, 4));
  out.u8(kPayloadVersion);
  out.u8(static_cast<std::uint8_t>(meta.vehicle_id));
  out.u8(meta.scale);
  out.u16(static_cast<std::uint16_t>(s.channels));
  out.u16(static_cast<std::uint16_t>(s.height));
  out.u16(static_cast<std::uint16_t>(s.width));
  out.u32(static_cast<std::uint32_t>(cells.size()));
  for (Index c : cells) {
    out.u16(static_cast<std::uint16_t>(c / s.width));
    out.u16(static_cast<std::uint16_t>(c % s.width));
    const auto col = features.column(c);
    for (Index ch = 0; ch < s.channels; ++ch) out.f32(static_cast<float>(col(ch)));
  }
  return out.take();
}

DecodedPayload decode_sparse(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.need(4, "magic");
  if (in.raw(4, "magic") != std::string_view(kMagic, 4)) throw DecodeError(0, "bad magic");
  const std::size_t version_at = in.offset();
  if (const auto v = in.u8("version"); v != kPayloadVersion)
    throw DecodeError(version_at, "unsupported version " + std::to_string(v));

  DecodedPayload out;
  out.meta.vehicle_id = in.u8("vehicle id");
  out.meta.scale = in.u8("scale");
  const std::size_t dims_at = in.offset();
  GridShape s;
  s.channels = in.u16("channels");
  s.height = in.u16("height");
  s.width = in.u16("width");
  if (!s.valid()) throw DecodeError(dims_at, "zero grid dimension in " + to_string(s));
  const std::size_t count_at = in.offset();
  out.cell_count = in.u32("cell count");
  if (static_cast<Index>(out.cell_count) > s.cells())
    throw DecodeError(count_at, "cell count " + std::to_string(out.cell_count) + " exceeds grid " + to_string(s));

  out.features = FeatureTensor(s);
  Index previous = -1;
  for (std::uint32_t i = 0; i < out.cell_count; ++i) {
    const std::size_t at = in.offset();
    const int row = in.u16("cell row");
    const int col = in.u16("cell col");
    if (row >= s.height || col >= s.width)
      throw DecodeError(at, "cell (" + std::to_string(row) + ", " + std::to_string(col) + ") outside grid");
    const Index cell = Index(row) * s.width + col;
    if (cell <= previous) throw DecodeError(at, "cell indices not strictly increasing");
    previous = cell;
    auto column = out.features.column(cell);
    for (Index ch = 0; ch < s.channels; ++ch) {
      const float v = in.f32("cell value");
      if (!std::isfinite(v)) throw DecodeError(in.offset() - 4, "non-finite value");
      column(ch) = v;
    }
  }
  if (!in.done()) throw DecodeError(in.offset(), std::to_string(in.remaining()) + " trailing bytes");
  return out;
}

double comm_log2(std::uint64_t nonzero_elements, bool times_bytes) {
  if (nonzero_elements == 0) return 0.0;
  const double count = double(nonzero_elements) * (times_bytes ? 4.0 : 1.0);
  return std::log2(count);
}

double comm_log2(std::span<const FeatureTensor> remote_maps, bool times_bytes) {
  std::uint64_t total = 0;
  for (const auto& m : remote_maps) total += count_nonzero(m);
  return comm_log2(total, times_bytes);
}

BandwidthStats bandwidth_stats(std::span<const double> bytes_per_frame) {
  if (bytes_per_frame.empty()) throw ReportError("bandwidth statistics of an empty series");
  BandwidthStats st;
  double sum = 0.0;
  st.max = st.min = bytes_per_frame.front() / 1e6;
  for (double b : bytes_per_frame) {
    const double mb = b / 1e6;
    sum += mb;
    st.max = std::max(st.max, mb);
    st.min = std::min(st.min, mb);
  }
  const double n = double(bytes_per_frame.size());
  st.mean = std::clamp(sum / n, st.min, st.max);
  double sq = 0.0;
  for (double b : bytes_per_frame) {
    const double d = b / 1e6 - st.mean;
    sq += d * d;
  }
  st.std = std::sqrt(sq / n);
  return st;
}

}  // namespace efficomm
