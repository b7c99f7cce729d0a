#include "efficomm/frame.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace efficomm {

std::vector<CellCoord> GroundTruth::occupied_cells() const {
  std::vector<CellCoord> cells;
  for (const auto& obj : objects) cells.insert(cells.end(), obj.begin(), obj.end());
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

const VehicleEntry& Frame::ego() const {
  const VehicleEntry* found = nullptr;
  for (const auto& v : vehicles) {
    if (v.role != VehicleRole::Ego) continue;
    if (found) throw FrameError("frame " + std::to_string(id) + ": multiple ego vehicles");
    found = &v;
  }
  if (!found) throw FrameError("frame " + std::to_string(id) + ": no ego vehicle");
  return *found;
}

std::string_view to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::EmptyFrame: return "empty frame";
    case Violation::Kind::DuplicateId: return "duplicate id";
    case Violation::Kind::MissingEgo: return "missing ego";
    case Violation::Kind::MultipleEgo: return "multiple ego";
    case Violation::Kind::ShapeMismatch: return "shape mismatch";
    case Violation::Kind::NonFinite: return "non-finite value";
    case Violation::Kind::TruthOutOfBounds: return "truth out of bounds";
  }
  return "unknown";
}

bool ValidationReport::has(Violation::Kind kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [kind](const Violation& v) { return v.kind == kind; });
}

namespace {

template <typename Grid>
std::optional<std::array<int, 3>> first_non_finite(const Grid& grid) {
  const auto& vals = grid.values();
  for (Index cell = 0; cell < vals.cols(); ++cell)
    for (Index ch = 0; ch < vals.rows(); ++ch)
      if (!std::isfinite(vals(ch, cell)))
        return std::array<int, 3>{int(ch), int(cell / grid.width()), int(cell % grid.width())};
  return std::nullopt;
}

std::string describe(const std::array<int, 3>& loc) {
  return "(" + std::to_string(loc[0]) + ", " + std::to_string(loc[1]) + ", " +
         std::to_string(loc[2]) + ")";
}

}  // namespace

ValidationReport validate_frame(const Frame& frame) {
  using Kind = Violation::Kind;
  ValidationReport report;
  auto add = [&](Kind kind, std::optional<std::uint32_t> id, std::string msg,
                 std::optional<std::array<int, 3>> loc = std::nullopt) {
    report.violations.push_back({kind, id, std::move(msg), loc});
  };

  if (frame.vehicles.empty()) {
    add(Kind::EmptyFrame, std::nullopt, "frame has no vehicles");
    return report;
  }

  std::set<std::uint32_t> seen;
  int egos = 0;
  const GridShape& ref = frame.vehicles.front().features.shape();
  for (const auto& v : frame.vehicles) {
    if (!seen.insert(v.id).second) add(Kind::DuplicateId, v.id, "vehicle id " + std::to_string(v.id) + " repeats");
    if (v.role == VehicleRole::Ego) ++egos;

    const GridShape& fs = v.features.shape();
    const GridShape& cs = v.confidence.shape();
    if (!fs.same_plane(cs))
      add(Kind::ShapeMismatch, v.id, "features " + to_string(fs) + " vs confidence " + to_string(cs));
    if (!(fs == ref))
      add(Kind::ShapeMismatch, v.id, "features " + to_string(fs) + " differ from first vehicle " + to_string(ref));

    if (auto loc = first_non_finite(v.features))
      add(Kind::NonFinite, v.id, "non-finite feature at " + describe(*loc), loc);
    if (auto loc = first_non_finite(v.confidence))
      add(Kind::NonFinite, v.id, "non-finite confidence at " + describe(*loc), loc);
  }
  if (egos == 0) add(Kind::MissingEgo, std::nullopt, "no ego vehicle");
  if (egos > 1) add(Kind::MultipleEgo, std::nullopt, std::to_string(egos) + " ego vehicles");

  for (std::size_t o = 0; o < frame.truth.objects.size(); ++o)
    for (const auto& cell : frame.truth.objects[o])
      if (cell.row < 0 || cell.row >= ref.height || cell.col < 0 || cell.col >= ref.width) {
        add(Kind::TruthOutOfBounds, std::nullopt,
            "object " + std::to_string(o) + " cell (" + std::to_string(cell.row) + ", " +
                std::to_string(cell.col) + ") outside grid");
        break;
      }
  return report;
}

}  // namespace efficomm
