#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "efficomm/frame.hpp"
#include "efficomm/grid_reduction.hpp"
#include "efficomm/moe_fusion.hpp"
#include "efficomm/selective_transmission.hpp"
#include "efficomm/wire_codec.hpp"

namespace efficomm {

struct LossWeights {
  double bandwidth = 0.05;
  double entropy = 1e-4;
};

struct PipelineConfig {
  StConfig st;
  KeepRatioBases bases;
  ClampBounds clamp;
  std::optional<double> congestion;  // replaces the measured remote rate when set
  GatingMode gating = GatingMode::PerFrame;
  int scales = 1;
  LossWeights loss;
  bool comm_times_bytes = false;
  double recall_threshold = 0.05;
  bool keep_payloads = false;

  void validate() const;
};

/// Policy weights plus one fusion weight set per scale.
struct ModelWeights {
  AgrWeights agr;
  std::vector<MoeWeights> moe;

  static ModelWeights random(const AgrArchitecture& agr, const MoeArchitecture& moe, int scales,
                             std::uint64_t seed);
};

struct EncodedPayload {
  std::uint32_t vehicle_id = 0;
  std::uint8_t scale = 1;
  std::vector<std::uint8_t> bytes;
};

struct VehicleTrace {
  std::uint32_t vehicle_id = 0;
  VehicleRole role = VehicleRole::Remote;
  double st_rate = 0.0;
  Index st_cells = 0;
  KeepRatioDecision decision;
  Index transmitted_cells = 0;  // finest scale; 0 for the ego
  std::uint64_t nonzero_elements = 0;
  std::size_t payload_bytes = 0;
};

/// Stage names in execution order, as recorded in FrameMetrics::stages.
inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages{"generate_transmission_mask", "mask_multiply", "reduce_features",
                                               "group_by_vehicle", "fuse_features", "metrics"};
  return stages;
}

struct FrameMetrics {
  std::int64_t frame_id = 0;
  GridShape grid;
  std::vector<VehicleTrace> vehicles;
  double tau = 0.0;
  std::size_t payload_bytes = 0;
  std::uint64_t nonzero_elements = 0;
  double comm_log2 = 0.0;
  double recall = 0.0;
  VectorXr mean_gate;
  std::size_t gate_records = 0;
  double gating_entropy = 0.0;
  VectorXr utilization;
  double l_bw = 0.0;
  double l_reg = 0.0;
  double l_partial = 0.0;  // bandwidth and entropy terms only; no detection loss
  std::vector<std::string> stages;
};

struct FrameResult {
  FrameMetrics metrics;
  std::vector<EncodedPayload> payloads;  // filled when keep_payloads is set
  FusedMap fused;
};

/// Gate, reduce, encode and fuse one frame, in that order.
FrameResult run_frame(const Frame& frame, const ModelWeights& weights, const PipelineConfig& cfg);

/// Empty when every FrameMetrics invariant holds; otherwise one message per failure.
std::vector<std::string> check_frame_metrics(const FrameMetrics& m, const PipelineConfig& cfg);

}  // namespace efficomm
