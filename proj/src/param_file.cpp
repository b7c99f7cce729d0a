#include "efficomm/param_file.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>

#include "efficomm/bytes.hpp"

namespace efficomm {

std::size_t ParamRecord::expected_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> write_params(std::string_view magic, std::span<const ParamRecord> records) {
  if (magic.size() != 4) throw EncodeError("parameter magic must be 4 bytes");
  ByteWriter out;
  out.raw(magic);
  out.u16(kParamFileVersion);
  for (const auto& r : records) {
    if (r.name.size() > 0xffff) throw EncodeError("parameter name too long: " + r.name.substr(0, 32));
    if (r.dims.size() > 0xff) throw EncodeError("parameter rank too large: " + r.name);
    if (r.values.size() != r.expected_count())
      throw EncodeError("parameter " + r.name + " holds " + std::to_string(r.values.size()) +
                        " values for its dims");
    out.u16(static_cast<std::uint16_t>(r.name.size()));
    out.raw(r.name);
    out.u8(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) out.u32(d);
    for (float v : r.values) out.f32(v);
  }
  return out.take();
}

std::vector<ParamRecord> read_params(std::span<const std::uint8_t> bytes, std::string_view magic) {
  ByteReader in(bytes);
  if (in.raw(4, "magic") != magic) throw DecodeError(0, "bad magic, expected " + std::string(magic));
  const std::size_t version_at = in.offset();
  if (const auto v = in.u16("version"); v != kParamFileVersion)
    throw DecodeError(version_at, "unsupported version " + std::to_string(v));

  std::vector<ParamRecord> records;
  std::set<std::string> names;
  while (!in.done()) {
    const std::size_t start = in.offset();
    ParamRecord r;
    const auto len = in.u16("name length");
    r.name = in.raw(len, "name");
    const auto rank = in.u8("rank");
    std::uint64_t count = 1;
    for (int i = 0; i < rank; ++i) {
      r.dims.push_back(in.u32("dimension"));
      count *= r.dims.back();
    }
    if (count > in.remaining() / 4) in.need(static_cast<std::size_t>(count) * 4, "values");
    r.values.resize(static_cast<std::size_t>(count));
    for (auto& v : r.values) v = in.f32("value");
    if (!names.insert(r.name).second) throw DecodeError(start, "duplicate parameter " + r.name);
    records.push_back(std::move(r));
  }
  return records;
}

ParamRecord make_record(std::string name, const MatrixXr& m) {
  ParamRecord r{std::move(name), {std::uint32_t(m.rows()), std::uint32_t(m.cols())}, {}};
  r.values.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) r.values.push_back(float(m(i, j)));
  return r;
}

ParamRecord make_record(std::string name, const VectorXr& v) {
  ParamRecord r{std::move(name), {std::uint32_t(v.size())}, {}};
  for (Index i = 0; i < v.size(); ++i) r.values.push_back(float(v(i)));
  return r;
}

ParamRecord make_scalar_record(std::string name, double value) {
  return ParamRecord{std::move(name), {}, {float(value)}};
}

const ParamRecord& require_record(std::span<const ParamRecord> records, std::string_view name,
                                  std::vector<std::uint32_t> dims) {
  auto it = std::find_if(records.begin(), records.end(), [&](const ParamRecord& r) { return r.name == name; });
  if (it == records.end()) throw ConfigError(std::string(name), "missing from parameter file");
  if (it->dims != dims) {
    auto fmt = [](const std::vector<std::uint32_t>& d) {
      std::string s = "[";
      for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
      return s + "]";
    };
    throw ConfigError(std::string(name), "dims " + fmt(it->dims) + " do not match architecture " + fmt(dims));
  }
  return *it;
}

MatrixXr to_matrix(const ParamRecord& r, Index rows, Index cols) {
  MatrixXr m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = r.values[static_cast<std::size_t>(i * cols + j)];
  return m;
}

VectorXr to_vector(const ParamRecord& r) {
  VectorXr v(static_cast<Index>(r.values.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = r.values[static_cast<std::size_t>(i)];
  return v;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace efficomm
