#pragma once

#include <cstdint>
#include <vector>

#include "efficomm/frame.hpp"
#include "efficomm/grid_reduction.hpp"
#include "efficomm/moe_fusion.hpp"
#include "efficomm/random.hpp"
#include "oracles.hpp"

namespace testing {

using namespace efficomm;

inline oracle::Mat to_rows(const MatrixXr& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), oracle::Vec(static_cast<std::size_t>(m.cols())));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out[std::size_t(r)][std::size_t(c)] = m(r, c);
  return out;
}

inline oracle::Vec to_vec(const VectorXr& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

inline oracle::Vec column_of(const MatrixXr& m, Index c) {
  oracle::Vec out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) out[std::size_t(r)] = m(r, c);
  return out;
}

inline double max_abs_diff(const oracle::Vec& a, const VectorXr& b) {
  double d = 0.0;
  for (Index i = 0; i < b.size(); ++i) d = std::max(d, std::abs(a[std::size_t(i)] - b(i)));
  return d;
}

inline MatrixXr random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  MatrixXr m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(lo, hi);
  return m;
}

/// Features with roughly `density` of the cells nonzero.
inline FeatureTensor random_features(Rng& rng, GridShape s, double density = 1.0) {
  FeatureTensor f(s, random_matrix(rng, s.channels, s.cells()));
  for (Index c = 0; c < s.cells(); ++c)
    if (rng.uniform() >= density) f.column(c).setZero();
  return f;
}

inline ConfidenceMap random_confidence(Rng& rng, GridShape s) {
  return ConfidenceMap(s, random_matrix(rng, s.channels, s.cells(), -6.0, 6.0));
}

/// Scores drawn from a handful of levels so that ties are common.
inline ImportanceImage tied_scores(Rng& rng, int h, int w, int levels) {
  ImportanceImage img(h, w);
  for (Index c = 0; c < img.cells(); ++c) img.values.data()[c] = double(rng.integer(0, levels - 1)) - levels / 2;
  return img;
}

inline VehicleEntry random_vehicle(Rng& rng, std::uint32_t id, VehicleRole role, GridShape features,
                                   int classes = 2) {
  return {id, role, random_features(rng, features),
          random_confidence(rng, {classes, features.height, features.width})};
}

inline AgrArchitecture small_agr() {
  AgrArchitecture a;
  a.conv = {{4, 3, 2, 1}, {6, 3, 2, 1}};
  a.embed_dim = 5;
  a.gat_hidden = 4;
  a.adjust_hidden = 3;
  return a;
}

inline MoeArchitecture small_moe(int experts = 3) {
  MoeArchitecture a;
  a.model_dim = 8;
  a.key_dim = 4;
  a.experts = experts;
  a.router_hidden = 5;
  return a;
}

inline std::vector<VehicleMapView> views_of(const std::vector<VehicleEntry>& vehicles) {
  std::vector<VehicleMapView> out;
  for (const auto& v : vehicles) out.push_back({v.id, v.role, std::cref(v.features)});
  return out;
}

}  // namespace testing
