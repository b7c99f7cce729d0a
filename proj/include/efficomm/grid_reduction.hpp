#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "efficomm/frame.hpp"
#include "efficomm/grid.hpp"
#include "efficomm/nn.hpp"

namespace efficomm {

// Adaptive grid reduction: a graph-attention policy assigns each vehicle a
// keep ratio, and each (already gated) map is pruned to its top-K cells.

struct ConvSpec {
  int out_channels = 1;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
};

/// Layer sizes of the keep-ratio policy. The confidence encoder reads the
/// single-channel importance image and global-average-pools the last stage.
struct AgrArchitecture {
  std::vector<ConvSpec> conv{{32, 3, 2, 1}, {64, 3, 2, 1}};
  int embed_dim = 16;
  int gat_hidden = 16;
  int adjust_hidden = 8;
  double leaky_slope = 0.2;

  int feature_dim() const { return conv.empty() ? 1 : conv.back().out_channels; }
  int node_dim() const { return embed_dim + 2; }
  void validate() const;
};

struct AgrWeights {
  AgrArchitecture arch;
  std::vector<Conv2d<Real>> conv;
  Affine<Real> embed;
  MatrixXr gat_weight;     // gat_hidden x node_dim
  VectorXr gat_attention;  // 2 * gat_hidden; first half scores the neighbour
  double leaky_slope = 0.2;
  Affine<Real> adjust_hidden;
  Affine<Real> adjust_out;

  static AgrWeights random(const AgrArchitecture& arch, std::uint64_t seed);
  static AgrWeights zeros(const AgrArchitecture& arch);

  /// Throws ConfigError if any parameter disagrees with `arch` or is non-finite.
  void validate() const;
};

inline constexpr char kAgrMagic[] = "AGRW";

std::vector<std::uint8_t> save_agr_weights(const AgrWeights& w);
AgrWeights load_agr_weights(std::span<const std::uint8_t> bytes, const AgrArchitecture& arch);

/// n_v = [embedding, ego flag, rate]
struct NodeFeature {
  VectorXr embedding;
  double ego_flag = 0.0;
  double rate = 0.0;

  VectorXr assemble() const;
};

struct VehicleGraph {
  std::vector<NodeFeature> nodes;
  RowMajorMatrixX<std::uint8_t> adjacency;

  /// All-ones adjacency including self loops.
  static VehicleGraph fully_connected(std::vector<NodeFeature> nodes);
};

struct GatOutput {
  std::vector<VectorXr> z;
  /// attention(v, u): weight node v places on neighbour u. Rows sum to 1.
  MatrixXr attention;
};

struct KeepRatioBases {
  double ego = 0.9;
  double remote = 0.5;
};

struct ClampBounds {
  double lo = 0.1;
  double hi = 0.95;
};

struct KeepRatio {
  double raw = 0.0;
  double clamped = 0.0;
};

struct KeepRatioDecision {
  std::uint32_t vehicle_id = 0;
  VehicleRole role = VehicleRole::Remote;
  double rate = 0.0;  // congestion input
  double alpha = 0.0;
  double k_raw = 0.0;
  double k_clamped = 0.0;
  Index cells = 0;
};

/// Confidence encoder: importance image -> conv stack -> global mean pool.
VectorXr conf_features(const ConfidenceMap& conf, const AgrWeights& w);

/// Lower-dimensional embedding of the encoder output (affine + rectifier).
VectorXr embed(const VectorXr& features, const AgrWeights& w);

/// Single-head graph attention. For target v and neighbour u:
///   e_vu = LeakyReLU(a^T [W n_u || W n_v]),  z_v = ELU(sum_u softmax_u(e_vu) W n_u)
GatOutput gat_forward(const VehicleGraph& graph, const AgrWeights& w);

/// alpha = sigmoid(MLP(z)).
double adjustment_factor(const VectorXr& z, const AgrWeights& w);

/// k = base(role) * (0.5 + 0.5 alpha) * (0.7 + 0.3 (1 - tau)), then clamped.
/// alpha and tau must lie in [0, 1].
KeepRatio keep_ratio(VehicleRole role, double alpha, double tau, const KeepRatioBases& bases = {},
                     const ClampBounds& clamp = {});

/// max(1, floor(H * W * k)) evaluated exactly on the binary value of k.
Index cells_to_keep(double k, const GridShape& shape);

/// Top-`k` cells of the importance image of `conf`; 1 <= k <= H*W.
CellMask importance_mask(const ConfidenceMap& conf, Index k);

/// Features zeroed outside `mask`.
FeatureTensor reduce(const FeatureTensor& features, const CellMask& mask);

struct AgrResult {
  std::vector<FeatureTensor> reduced;
  std::vector<CellMask> masks;
  std::vector<KeepRatioDecision> decisions;
  GatOutput gat;
};

/// Full reduction pass. `gated[i]` is the gated tensor of `vehicles[i]`; the
/// importance masks are computed from the ungated confidence maps.
AgrResult agr_pipeline(std::span<const VehicleEntry> vehicles, std::span<const FeatureTensor> gated,
                       double tau, const AgrWeights& w, const KeepRatioBases& bases = {},
                       const ClampBounds& clamp = {});

}  // namespace efficomm
