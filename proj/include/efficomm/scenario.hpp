#pragma once

#include <cstdint>
#include <span>

#include "efficomm/frame.hpp"
#include "efficomm/grid.hpp"

namespace efficomm {

/// Synthetic scene parameters. The confidence defaults put roughly 10-40% of
/// cells above the default gate threshold.
struct ScenarioConfig {
  std::uint64_t seed = 0;
  int vehicles = 4;
  int objects = 12;
  int classes = 3;
  GridShape grid{64, 48, 176};
  double sensing_radius = 48.0;  // cells
  bool occlusion = true;
  double noise_scale = 0.5;  // stddev of the logit noise
  double peak_logit = 6.0;
  double floor_logit = -8.0;
  double decay = 0.15;        // per cell of distance to the nearest visible object
  double feature_noise = 1.0;  // amplitude of the feature noise before smoothing
  int max_retries = 1000;

  void validate() const;
};

/// -1 for free cells, otherwise the index of the occupying object.
using Occupancy = RowMajorMatrixX<int>;

Occupancy occupancy_of(const GroundTruth& truth, int height, int width);

/// Integer ray walk from `from` to `to`: step t of n = max(|dr|, |dc|) visits
/// (r0 + round(t dr / n), c0 + round(t dc / n)), halves rounding up. The
/// target is hidden when a strictly intermediate cell belongs to an object
/// other than the target's own.
bool line_of_sight(CellCoord from, CellCoord to, const Occupancy& occupancy);

/// Cells within `radius` of `position` (and, with occlusion, in line of sight).
CellMask visibility_map(CellCoord position, const Occupancy& occupancy, double radius, bool occlusion);

/// Deterministic in (cfg.seed, frame_id). Vehicle 0 is the ego.
Frame gen_frame(const ScenarioConfig& cfg, std::int64_t frame_id);

/// Fraction of occupied truth cells whose fused feature column has norm
/// above `threshold`. A frame without objects scores 1.
double proxy_recall(const FeatureTensor& fused, const GroundTruth& truth, double threshold);

/// Nonzero elements over total elements across the remote reduced maps;
/// 0 when there are none.
double bandwidth_loss(std::span<const FeatureTensor> remote_maps);

}  // namespace efficomm
