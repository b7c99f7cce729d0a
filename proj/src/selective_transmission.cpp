#include "efficomm/selective_transmission.hpp"

#include <cmath>
#include <string>

#include "efficomm/nn.hpp"

namespace efficomm {

void StConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("st.threshold", "must lie in (0, 1), got " + std::to_string(threshold));
}

CellMask threshold_mask(const ImportanceImage& img, double mu) {
  if (!(mu > 0.0 && mu < 1.0)) throw PreconditionError("threshold must lie in (0, 1)");
  CellMask mask(img.height(), img.width());
  for (Index c = 0; c < img.cells(); ++c)
    if (sigmoid(img.at(c)) > mu) mask.set(c);
  return mask;
}

CellMask topk_mask(const ImportanceImage& img, Index k) { return top_k_cells(img, k); }

Index sample_k(Rng& rng, int height, int width) {
  return static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(Index(height) * width) + 1));
}

double transmission_rate(const CellMask& mask) {
  return double(mask.popcount()) / double(mask.cells());
}

StResult apply_st(const VehicleEntry& vehicle, const StConfig& cfg, std::int64_t frame_id) {
  const int h = vehicle.features.height();
  const int w = vehicle.features.width();
  if (vehicle.role == VehicleRole::Ego) {
    CellMask all = CellMask::ones(h, w);
    return {all, 1.0, vehicle.features};
  }
  const ImportanceImage img = importance_image(vehicle.confidence);
  CellMask mask;
  if (cfg.mode == StMode::Training) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(frame_id), vehicle.id}));
    mask = topk_mask(img, sample_k(rng, h, w));
  } else {
    mask = threshold_mask(img, cfg.threshold);
  }
  const double rate = transmission_rate(mask);
  FeatureTensor masked = apply_mask(vehicle.features, mask);
  return {std::move(mask), rate, std::move(masked)};
}

double frame_rate(std::span<const VehicleEntry> vehicles, std::span<const StResult> results) {
  if (vehicles.size() != results.size())
    throw FrameError("frame_rate: " + std::to_string(vehicles.size()) + " vehicles but " +
                     std::to_string(results.size()) + " gate results");
  double sum = 0.0;
  int remotes = 0;
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    if (vehicles[i].role != VehicleRole::Remote) continue;
    sum += results[i].rate;
    ++remotes;
  }
  return remotes == 0 ? 0.0 : sum / remotes;
}

}  // namespace efficomm
