#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "efficomm/pipeline.hpp"
#include "efficomm/wire_codec.hpp"

namespace efficomm {

/// One (frame, vehicle) row of metrics.csv.
struct DecisionRow {
  std::int64_t frame_id = 0;
  std::uint32_t vehicle_id = 0;
  VehicleRole role = VehicleRole::Remote;
  double tau = 0.0;
  double alpha = 0.0;
  double k_raw = 0.0;
  double k_clamped = 0.0;
  Index cells = 0;  // K_v
  std::size_t payload_bytes = 0;
  double comm_log2 = 0.0;  // this vehicle's nonzero elements; 0 for the ego
  double recall = 0.0;     // frame level
  double l_bw = 0.0;       // frame level
  double l_reg = 0.0;      // frame level

  bool operator==(const DecisionRow&) const = default;
};

/// Everything aggregate() reads from one frame; one row of frames.csv.
struct FrameSummary {
  std::int64_t frame_id = 0;
  GridShape grid;
  double tau = 0.0;
  std::size_t payload_bytes = 0;
  std::uint64_t nonzero_elements = 0;
  double comm_log2 = 0.0;
  double recall = 0.0;
  double gating_entropy = 0.0;
  double l_bw = 0.0;
  double l_reg = 0.0;
  double l_partial = 0.0;
  double max_remote_cell_fraction = 0.0;
  VectorXr mean_gate;
  VectorXr utilization;
  std::vector<DecisionRow> decisions;

  bool operator==(const FrameSummary& o) const;
};

FrameSummary summarize(const FrameMetrics& m);

/// Counts of clamped keep ratios in 50 bins of width 0.02 over [0, 1]; a
/// ratio k lands in bin min(49, floor(50 k)).
struct KeepRatioHistogram {
  static constexpr int kBins = 50;
  static constexpr double kBinWidth = 0.02;
  std::vector<std::uint64_t> counts = std::vector<std::uint64_t>(kBins, 0);
  std::uint64_t total = 0;
  double mean = 0.0;
  double std = 0.0;  // population

  static int bin_of(double k);
  bool operator==(const KeepRatioHistogram&) const = default;
};

struct RunReport {
  std::size_t frames = 0;
  GridShape grid;
  std::size_t decisions = 0;
  BandwidthStats bandwidth;  // MB per frame
  double mean_comm_log2 = 0.0;
  KeepRatioHistogram keep_ratio;
  double remote_keep_ratio_mean = 0.0;
  VectorXr expert_utilization;
  VectorXr mean_gate;
  double mean_gating_entropy = 0.0;
  double mean_recall = 0.0;
  double mean_l_bw = 0.0;
  double max_remote_cell_fraction = 0.0;
  double mean_l_partial = 0.0;
  std::string fingerprint;

  bool operator==(const RunReport& o) const;
};

/// Folds frames in frame-id order, so the result does not depend on input
/// order. Throws ReportError on an empty list, duplicate frame ids or frames
/// that disagree on grid or expert count.
RunReport aggregate(std::span<const FrameSummary> frames, std::string fingerprint = {});
RunReport aggregate(std::span<const FrameMetrics> frames, std::string fingerprint = {});

struct MetricDelta {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double abs_delta = 0.0;              // b - a
  std::optional<double> rel_delta;     // (b - a) / a; empty when a == 0
};

/// Throws ReportError unless both runs share grid, frame count and expert count.
std::vector<MetricDelta> compare_runs(const RunReport& a, const RunReport& b);

nlohmann::json to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

std::vector<std::string> metrics_csv_header();
std::vector<std::string> frames_csv_header(int experts);
std::string metrics_csv(std::span<const FrameSummary> frames);
std::string frames_csv(std::span<const FrameSummary> frames);

/// Rebuilds summaries from the two CSV files; throws ReportError with the
/// line number on malformed input.
std::vector<FrameSummary> summaries_from_csv(std::string_view metrics, std::string_view frames);
RunReport report_from_csv(const std::filesystem::path& run_dir, std::string fingerprint = {});

}  // namespace efficomm
