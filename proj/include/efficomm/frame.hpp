#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "efficomm/grid.hpp"

namespace efficomm {

enum class VehicleRole { Ego, Remote };

inline std::string_view to_string(VehicleRole role) {
  return role == VehicleRole::Ego ? "ego" : "remote";
}

struct CellCoord {
  int row = 0;
  int col = 0;
  auto operator<=>(const CellCoord&) const = default;
};

struct VehicleEntry {
  std::uint32_t id = 0;
  VehicleRole role = VehicleRole::Remote;
  FeatureTensor features;
  ConfidenceMap confidence;
};

/// What one vehicle can sense: its position, per-cell visibility and the
/// objects it has at least one visible cell of.
struct VehicleView {
  std::uint32_t vehicle_id = 0;
  CellCoord position;
  CellMask visible_cells;
  std::vector<bool> sees_object;
};

/// Simulator-side truth; never consulted by the reduction or fusion stages.
struct GroundTruth {
  std::vector<std::vector<CellCoord>> objects;
  std::vector<int> object_classes;
  std::vector<VehicleView> views;

  /// Distinct occupied cells across all objects, sorted row-major.
  std::vector<CellCoord> occupied_cells() const;
};

struct Frame {
  std::int64_t id = 0;
  std::vector<VehicleEntry> vehicles;
  GroundTruth truth;

  /// The single Ego entry; throws FrameError if there is not exactly one.
  const VehicleEntry& ego() const;
};

struct Violation {
  enum class Kind { EmptyFrame, DuplicateId, MissingEgo, MultipleEgo, ShapeMismatch, NonFinite, TruthOutOfBounds };

  Kind kind;
  std::optional<std::uint32_t> vehicle_id;
  std::string message;
  /// (channel, row, col) of the first offending value, when applicable.
  std::optional<std::array<int, 3>> location;
};

std::string_view to_string(Violation::Kind kind);

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(Violation::Kind kind) const;
};

/// Collects every structural problem in `frame`; never throws on bad input.
ValidationReport validate_frame(const Frame& frame);

}  // namespace efficomm
