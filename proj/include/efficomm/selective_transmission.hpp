#pragma once

#include <cstdint>
#include <span>

#include "efficomm/frame.hpp"
#include "efficomm/grid.hpp"
#include "efficomm/random.hpp"

namespace efficomm {

enum class StMode { Inference, Training };

struct StConfig {
  double threshold = 0.01;
  StMode mode = StMode::Inference;
  std::uint64_t seed = 0;  // Training mode only

  /// Throws ConfigError unless 0 < threshold < 1.
  void validate() const;
};

struct StResult {
  CellMask mask;
  double rate = 0.0;
  FeatureTensor masked;
};

/// mask = sigmoid(img) > mu, strictly.
CellMask threshold_mask(const ImportanceImage& img, double mu);

/// Exactly `k` cells: the highest scores, ties to the lower row-major index.
CellMask topk_mask(const ImportanceImage& img, Index k);

/// Uniform draw on [0, height*width] inclusive.
Index sample_k(Rng& rng, int height, int width);

/// Fraction of retained cells.
double transmission_rate(const CellMask& mask);

/// Gates one vehicle. The ego map is never transmitted, so its mask is
/// all-ones. In Training mode the generator is derived from
/// (seed, frame id, vehicle id) and a sampled top-K replaces the threshold.
StResult apply_st(const VehicleEntry& vehicle, const StConfig& cfg, std::int64_t frame_id = 0);

/// Congestion signal passed to grid reduction: mean rate over Remote
/// vehicles, 0 when the frame has none.
double frame_rate(std::span<const VehicleEntry> vehicles, std::span<const StResult> results);

}  // namespace efficomm
