#include "efficomm/runner.hpp"

#include <malloc.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

namespace efficomm {

int thread_budget() {
  if (const char* env = std::getenv("EFFICOMM_THREADS"); env && *env) {
    const std::string_view s(env);
    int n = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), n);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || n < 1)
      throw ConfigError("EFFICOMM_THREADS", "expected a positive integer, got '" + std::string(s) + "'");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string payload_file_name(std::int64_t frame_id, std::uint32_t vehicle_id, int scale) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "frame_%06lld_vehicle_%03u_scale_%d.bin", static_cast<long long>(frame_id),
                vehicle_id, scale);
  return buf;
}

nlohmann::json trace_to_json(const FrameTrace& t, GatingMode mode) {
  const auto& m = t.metrics;
  nlohmann::json j;
  j["frame_id"] = m.frame_id;
  j["tau"] = m.tau;
  j["gating"] = std::string(to_string(mode));
  j["gate_records"] = m.gate_records;
  j["mean_gate"] = std::vector<double>(m.mean_gate.data(), m.mean_gate.data() + m.mean_gate.size());
  if (t.gate_logits.size() > 0)
    j["gate_logits"] = std::vector<double>(t.gate_logits.data(), t.gate_logits.data() + t.gate_logits.size());
  j["payload_bytes"] = m.payload_bytes;
  j["recall"] = m.recall;
  j["l_bw"] = m.l_bw;
  j["stages"] = m.stages;
  auto vs = nlohmann::json::array();
  for (const auto& v : m.vehicles) {
    vs.push_back({{"vehicle_id", v.vehicle_id},
                  {"role", std::string(to_string(v.role))},
                  {"st_rate", v.st_rate},
                  {"st_cells", v.st_cells},
                  {"alpha", v.decision.alpha},
                  {"k_raw", v.decision.k_raw},
                  {"k_clamped", v.decision.k_clamped},
                  {"K_v", v.decision.cells},
                  {"transmitted_cells", v.transmitted_cells},
                  {"nonzero_elements", v.nonzero_elements},
                  {"payload_bytes", v.payload_bytes}});
  }
  j["vehicles"] = std::move(vs);
  return j;
}

RunOutcome run_simulation(const CliConfig& cfg, int threads) {
  cfg.validate();
  if (cfg.output_dir.empty()) throw ConfigError("output.dir", "no output directory given");
  if (threads <= 0) threads = thread_budget();
  const ModelWeights weights = cfg.load_weights();
  const std::string fingerprint = run_fingerprint(cfg, weights);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path payload_dir = cfg.output_dir / "payloads";
  if (cfg.dump_payloads) fs::create_directories(payload_dir);

  PipelineConfig pc = cfg.pipeline;
  pc.keep_payloads = cfg.dump_payloads;
  const auto n = static_cast<std::size_t>(cfg.frames);
  std::vector<FrameTrace> traces(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const Frame frame = gen_frame(cfg.scenario, std::int64_t(i));
        FrameResult r = run_frame(frame, weights, pc);
        for (const auto& p : r.payloads)
          write_file_atomic(payload_dir / payload_file_name(frame.id, p.vehicle_id, p.scale), p.bytes);
        traces[i].metrics = std::move(r.metrics);
        if (pc.gating == GatingMode::PerFrame) traces[i].gate_logits = r.fused.gates.front().logits;
      } catch (...) {
        errors[i] = std::current_exception();
        next = n;
      }
    }
  };
  const int workers = static_cast<int>(std::min<std::size_t>(std::size_t(threads), n));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  RunOutcome out;
  for (const auto& t : traces) out.frames.push_back(summarize(t.metrics));
  out.report = aggregate(std::span<const FrameSummary>(out.frames), fingerprint);

  write_file_atomic(cfg.output_dir / "metrics.csv", metrics_csv(out.frames));
  write_file_atomic(cfg.output_dir / "frames.csv", frames_csv(out.frames));
  write_file_atomic(cfg.output_dir / "report.json", to_json(out.report).dump(2) + "\n");
  write_file_atomic(cfg.output_dir / "config.ini", cfg.canonical_text());
  if (cfg.trace) {
    nlohmann::json j;
    j["fingerprint"] = fingerprint;
    j["frames"] = nlohmann::json::array();
    for (const auto& t : traces) j["frames"].push_back(trace_to_json(t, pc.gating));
    write_file_atomic(cfg.output_dir / "trace.json", j.dump(1) + "\n");
  }
  out.traces = std::move(traces);
  return out;
}

}  // namespace efficomm
