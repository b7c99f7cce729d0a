#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "efficomm/frame.hpp"
#include "efficomm/grid.hpp"
#include "efficomm/nn.hpp"

namespace efficomm {

// Soft-gated mixture of scaled dot-product attention experts. At every cell
// the ego feature column is the query and all vehicles' columns are keys and
// values; a router over pooled features mixes the expert outputs.

enum class GatingMode { PerFrame, PerCell };

struct MoeArchitecture {
  int model_dim = 64;  // feature channels L
  int key_dim = 32;
  int experts = 3;
  int router_hidden = 16;

  void validate() const;
};

/// Query/key/value projections, each key_dim x model_dim, no bias.
struct ExpertWeights {
  MatrixXr query;
  MatrixXr key;
  MatrixXr value;
};

struct MoeWeights {
  MoeArchitecture arch;
  std::vector<ExpertWeights> experts;
  Affine<Real> router_hidden;
  Affine<Real> router_out;

  static MoeWeights random(const MoeArchitecture& arch, std::uint64_t seed);
  static MoeWeights zeros(const MoeArchitecture& arch);

  void validate() const;
};

inline constexpr char kMoeMagic[] = "MOEW";

std::vector<std::uint8_t> save_moe_weights(const MoeWeights& w);
MoeWeights load_moe_weights(std::span<const std::uint8_t> bytes, const MoeArchitecture& arch);

struct GateRecord {
  VectorXr weights;
  VectorXr logits;
};

struct FusedMap {
  FeatureTensor fused;
  std::vector<GateRecord> gates;  // one per frame, or one per cell
  VectorXr utilization;           // mean norm of each expert's gated contribution
};

/// A vehicle's (reduced) map as seen by the fusion stage.
struct VehicleMapView {
  std::uint32_t vehicle_id = 0;
  VehicleRole role = VehicleRole::Remote;
  std::reference_wrapper<const FeatureTensor> features;
};

/// Ego first, then remotes by ascending id. Every summation over vehicles
/// follows this order, so the result does not depend on input order.
std::vector<VehicleMapView> canonical_order(std::span<const VehicleMapView> views);

/// Attention at one cell. Column 0 of `stacked` is the ego (query) vector,
/// every column is a key/value source. Returns softmax(q K^T / sqrt(d_k)) V.
VectorXr sdpa_expert(const MatrixXr& stacked, const ExpertWeights& w);

/// Grid-wide single-expert attention; key_dim x cells.
MatrixXr attention_fuse(std::span<const VehicleMapView> views, const ExpertWeights& w);

/// attention_fuse for every expert.
std::vector<MatrixXr> expert_outputs(std::span<const VehicleMapView> views, const MoeWeights& w);

VectorXr router_logits(const VectorXr& context, const MoeWeights& w);

/// softmax(logits) with max subtraction.
GateRecord gate_weights(const VectorXr& logits);

/// X = sum_i G_i * expert_i. `gates` has one record (applied to every cell)
/// or one record per cell.
FeatureTensor mix_experts(std::span<const MatrixXr> outputs, std::span<const GateRecord> gates,
                          const GridShape& plane);

FusedMap moe_fuse(std::span<const VehicleMapView> views, const MoeWeights& w,
                  GatingMode mode = GatingMode::PerFrame);

/// Mean Shannon entropy (nats) of the gate vectors, with 0 ln 0 = 0.
double gating_entropy(std::span<const GateRecord> records);

/// Entropy regulariser: the negated mean gate entropy, so minimising it
/// spreads routing across experts.
double entropy_loss(std::span<const GateRecord> records);

/// Fuses each scale independently, upsamples coarser scales to the finest
/// grid by nearest replication and concatenates channels. Scale s must be
/// the finest grid halved s-1 times; at most two scales.
FusedMap multiscale_fuse(std::span<const std::vector<VehicleMapView>> per_scale,
                         std::span<const MoeWeights> weights, GatingMode mode = GatingMode::PerFrame);

}  // namespace efficomm
