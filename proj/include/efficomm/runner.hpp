#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "efficomm/config.hpp"
#include "efficomm/report.hpp"

namespace efficomm {

/// Worker count from EFFICOMM_THREADS, else the hardware concurrency.
/// Throws ConfigError on a value that is not a positive integer.
int thread_budget();

/// Keeps large matrix buffers on the heap between frames instead of
/// returning them to the kernel after every free. Call once from main().
void tune_allocator();

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Per-frame record kept for trace.json and `inspect`.
struct FrameTrace {
  FrameMetrics metrics;
  VectorXr gate_logits;  // per-frame gating only; empty otherwise
};

nlohmann::json trace_to_json(const FrameTrace& t, GatingMode mode);

struct RunOutcome {
  RunReport report;
  std::vector<FrameSummary> frames;
  std::vector<FrameTrace> traces;
};

/// Simulates frames 0..frames-1 on up to `threads` workers (0: thread_budget())
/// and writes metrics.csv, frames.csv, report.json, trace.json and the
/// payload dumps into cfg.output_dir. Outputs do not depend on the worker count.
RunOutcome run_simulation(const CliConfig& cfg, int threads = 0);

std::string payload_file_name(std::int64_t frame_id, std::uint32_t vehicle_id, int scale);

}  // namespace efficomm
