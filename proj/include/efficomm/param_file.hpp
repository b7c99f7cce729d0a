#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "efficomm/grid.hpp"

namespace efficomm {

/// One named parameter array. Values are row-major over `dims`; an empty
/// `dims` denotes a scalar.
struct ParamRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t expected_count() const;
};

inline constexpr std::uint16_t kParamFileVersion = 1;

/// Serialized layout:
///   magic[4] | version u16 | records...
///   record = name_len u16 | name | rank u8 | dims u32[rank] | values f32[prod(dims)]
/// All integers and floats little-endian.
std::vector<std::uint8_t> write_params(std::string_view magic, std::span<const ParamRecord> records);

/// Parses a parameter stream, checking magic, version and per-record sizes.
std::vector<ParamRecord> read_params(std::span<const std::uint8_t> bytes, std::string_view magic);

ParamRecord make_record(std::string name, const MatrixXr& m);
ParamRecord make_record(std::string name, const VectorXr& v);
ParamRecord make_scalar_record(std::string name, double value);

/// Looks up `name` and checks it has exactly `dims`; throws ConfigError otherwise.
const ParamRecord& require_record(std::span<const ParamRecord> records, std::string_view name,
                                  std::vector<std::uint32_t> dims);

MatrixXr to_matrix(const ParamRecord& r, Index rows, Index cols);
VectorXr to_vector(const ParamRecord& r);

std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace efficomm
