#include "efficomm/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "efficomm/nn.hpp"
#include "efficomm/random.hpp"

namespace efficomm {

void ScenarioConfig::validate() const {
  if (vehicles < 1 || vehicles > 16) throw ConfigError("scenario.vehicles", "must lie in [1, 16]");
  if (objects < 0) throw ConfigError("scenario.objects", "must be >= 0");
  if (classes < 1 || classes > grid.channels)
    throw ConfigError("scenario.classes", "must lie in [1, channels]");
  if (!grid.valid()) throw ConfigError("scenario.grid", "every dimension must be >= 1");
  if (grid.height > 0xffff || grid.width > 0xffff || grid.channels > 0xffff)
    throw ConfigError("scenario.grid", "dimensions must fit in 16 bits");
  if (!(sensing_radius > 0.0)) throw ConfigError("scenario.sensing_radius", "must be positive");
  if (!(noise_scale >= 0.0)) throw ConfigError("scenario.noise_scale", "must be >= 0");
  if (!(peak_logit > floor_logit)) throw ConfigError("scenario.peak_logit", "must exceed floor_logit");
  if (!std::isfinite(floor_logit)) throw ConfigError("scenario.floor_logit", "must be finite");
  if (!(decay > 0.0)) throw ConfigError("scenario.decay", "must be positive");
  if (!(feature_noise > 0.0)) throw ConfigError("scenario.feature_noise", "must be positive");
  if (max_retries < 1) throw ConfigError("scenario.max_retries", "must be >= 1");
}

Occupancy occupancy_of(const GroundTruth& truth, int height, int width) {
  Occupancy occ = Occupancy::Constant(height, width, -1);
  for (std::size_t o = 0; o < truth.objects.size(); ++o)
    for (const auto& c : truth.objects[o]) occ(c.row, c.col) = int(o);
  return occ;
}

namespace {

long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

bool line_of_sight(CellCoord from, CellCoord to, const Occupancy& occupancy) {
  const long long dr = to.row - from.row;
  const long long dc = to.col - from.col;
  const long long n = std::max(std::llabs(dr), std::llabs(dc));
  const int target = occupancy(to.row, to.col);
  for (long long t = 1; t < n; ++t) {
    const int r = from.row + int(floor_div(2 * t * dr + n, 2 * n));
    const int c = from.col + int(floor_div(2 * t * dc + n, 2 * n));
    const int occ = occupancy(r, c);
    if (occ >= 0 && occ != target) return false;
  }
  return true;
}

CellMask visibility_map(CellCoord position, const Occupancy& occupancy, double radius, bool occlusion) {
  const int h = int(occupancy.rows()), w = int(occupancy.cols());
  CellMask mask(h, w);
  const double r2 = radius * radius;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double dr = r - position.row, dc = c - position.col;
      if (dr * dr + dc * dc > r2) continue;
      if (occlusion && !line_of_sight(position, {r, c}, occupancy)) continue;
      mask.set(r, c, true);
    }
  return mask;
}

namespace {

/// 3x3 mean over in-bounds neighbours, per channel, as two separable passes.
MatrixXr box_blur(const MatrixXr& in, int h, int w) {
  MatrixXr across(in.rows(), in.cols());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const Index lo = Index(r) * w + std::max(0, c - 1), hi = Index(r) * w + std::min(w - 1, c + 1);
      auto dst = across.col(Index(r) * w + c);
      dst = in.col(lo);
      for (Index k = lo + 1; k <= hi; ++k) dst += in.col(k);
      dst /= double(hi - lo + 1);
    }
  MatrixXr out(in.rows(), in.cols());
  for (int r = 0; r < h; ++r) {
    const int lo = std::max(0, r - 1), hi = std::min(h - 1, r + 1);
    for (int c = 0; c < w; ++c) {
      auto dst = out.col(Index(r) * w + c);
      dst = across.col(Index(lo) * w + c);
      for (int y = lo + 1; y <= hi; ++y) dst += across.col(Index(y) * w + c);
      dst /= double(hi - lo + 1);
    }
  }
  return out;
}

}  // namespace

Frame gen_frame(const ScenarioConfig& cfg, std::int64_t frame_id) {
  cfg.validate();
  const int H = cfg.grid.height, W = cfg.grid.width;
  const auto fid = static_cast<std::uint64_t>(frame_id);
  Rng rng(derive_seed(cfg.seed, {fid}));

  Frame frame;
  frame.id = frame_id;
  Occupancy occ = Occupancy::Constant(H, W, -1);

  // Rectangular objects with a one-cell gap between them.
  for (int o = 0; o < cfg.objects; ++o) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const int oh = int(rng.integer(2, 4)), ow = int(rng.integer(3, 6));
      if (oh > H || ow > W) continue;
      const int r0 = int(rng.integer(0, H - oh)), c0 = int(rng.integer(0, W - ow));
      bool free = true;
      for (int r = std::max(0, r0 - 1); r <= std::min(H - 1, r0 + oh) && free; ++r)
        for (int c = std::max(0, c0 - 1); c <= std::min(W - 1, c0 + ow) && free; ++c) free = occ(r, c) < 0;
      if (!free) continue;
      std::vector<CellCoord> cells;
      for (int r = r0; r < r0 + oh; ++r)
        for (int c = c0; c < c0 + ow; ++c) {
          occ(r, c) = o;
          cells.push_back({r, c});
        }
      frame.truth.objects.push_back(std::move(cells));
      frame.truth.object_classes.push_back(int(rng.integer(0, cfg.classes - 1)));
      placed = true;
    }
    if (!placed)
      throw GenerationError("frame " + std::to_string(frame_id) + ": could not place object " + std::to_string(o) +
                            " after " + std::to_string(cfg.max_retries) + " attempts");
  }

  std::vector<CellCoord> positions;
  for (int v = 0; v < cfg.vehicles; ++v) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const CellCoord p{int(rng.integer(0, H - 1)), int(rng.integer(0, W - 1))};
      if (occ(p.row, p.col) >= 0 || std::find(positions.begin(), positions.end(), p) != positions.end()) continue;
      positions.push_back(p);
      placed = true;
    }
    if (!placed)
      throw GenerationError("frame " + std::to_string(frame_id) + ": could not place vehicle " + std::to_string(v));
  }

  const GridShape shape = cfg.grid;
  const double inf = std::numeric_limits<double>::infinity();
  for (int v = 0; v < cfg.vehicles; ++v) {
    const auto vid = static_cast<std::uint32_t>(v);
    VehicleView view;
    view.vehicle_id = vid;
    view.position = positions[std::size_t(v)];
    view.visible_cells = visibility_map(view.position, occ, cfg.sensing_radius, cfg.occlusion);
    view.sees_object.assign(frame.truth.objects.size(), false);

    // Squared distance to the nearest visible cell of an object, per class.
    std::vector<RowMajorMatrixX<double>> dist2(std::size_t(cfg.classes), RowMajorMatrixX<double>::Constant(H, W, inf));
    for (std::size_t o = 0; o < frame.truth.objects.size(); ++o) {
      auto& d2 = dist2[std::size_t(frame.truth.object_classes[o])];
      for (const auto& cell : frame.truth.objects[o]) {
        if (!view.visible_cells(cell.row, cell.col)) continue;
        view.sees_object[o] = true;
        for (int r = 0; r < H; ++r)
          for (int c = 0; c < W; ++c) {
            const double dr = r - cell.row, dc = c - cell.col;
            d2(r, c) = std::min(d2(r, c), dr * dr + dc * dc);
          }
      }
    }

    Rng noise(derive_seed(cfg.seed, {fid, vid, 1}));
    ConfidenceMap conf(shape);
    auto& logits = conf.values();
    for (Index cell = 0; cell < shape.cells(); ++cell)
      for (int ch = 0; ch < shape.channels; ++ch) {
        double base = cfg.floor_logit;
        if (ch < cfg.classes) {
          const double d2 = dist2[std::size_t(ch)].data()[cell];
          if (d2 < inf) base += (cfg.peak_logit - cfg.floor_logit) * std::exp(-cfg.decay * std::sqrt(d2));
        }
        logits(ch, cell) = base + cfg.noise_scale * noise.normal();
      }

    Rng texture(derive_seed(cfg.seed, {fid, vid, 2}));
    MatrixXr raw(shape.channels, shape.cells());
    for (Index cell = 0; cell < shape.cells(); ++cell)
      for (int ch = 0; ch < shape.channels; ++ch) raw(ch, cell) = texture.uniform(-cfg.feature_noise, cfg.feature_noise);
    MatrixXr feats = box_blur(raw, H, W);
    const ImportanceImage img = importance_image(conf);
    for (Index cell = 0; cell < shape.cells(); ++cell) feats.col(cell) *= sigmoid(img.at(cell));

    VehicleEntry entry;
    entry.id = vid;
    entry.role = v == 0 ? VehicleRole::Ego : VehicleRole::Remote;
    entry.features = FeatureTensor(shape, std::move(feats));
    entry.confidence = std::move(conf);
    frame.vehicles.push_back(std::move(entry));
    frame.truth.views.push_back(std::move(view));
  }
  return frame;
}

double proxy_recall(const FeatureTensor& fused, const GroundTruth& truth, double threshold) {
  const auto cells = truth.occupied_cells();
  if (cells.empty()) return 1.0;
  std::size_t hit = 0;
  for (const auto& c : cells) {
    if (c.row < 0 || c.row >= fused.height() || c.col < 0 || c.col >= fused.width())
      throw FrameError("truth cell outside the fused grid");
    if (fused.column(fused.cell_index(c.row, c.col)).norm() > threshold) ++hit;
  }
  return double(hit) / double(cells.size());
}

double bandwidth_loss(std::span<const FeatureTensor> remote_maps) {
  std::uint64_t nonzero = 0, total = 0;
  for (const auto& m : remote_maps) {
    nonzero += count_nonzero(m);
    total += static_cast<std::uint64_t>(m.shape().size());
  }
  return total == 0 ? 0.0 : double(nonzero) / double(total);
}

}  // namespace efficomm
