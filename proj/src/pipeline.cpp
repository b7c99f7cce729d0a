#include "efficomm/pipeline.hpp"

#include <cmath>
#include <string>

#include "efficomm/random.hpp"
#include "efficomm/scenario.hpp"

namespace efficomm {

void PipelineConfig::validate() const {
  st.validate();
  if (!(bases.ego > 0.0 && bases.ego <= 1.0)) throw ConfigError("agr.k_ego", "must lie in (0, 1]");
  if (!(bases.remote > 0.0 && bases.remote <= 1.0)) throw ConfigError("agr.k_remote", "must lie in (0, 1]");
  if (!(clamp.lo > 0.0 && clamp.lo <= 1.0)) throw ConfigError("agr.clamp_min", "must lie in (0, 1]");
  if (!(clamp.hi >= clamp.lo && clamp.hi <= 1.0)) throw ConfigError("agr.clamp_max", "must lie in [clamp_min, 1]");
  if (congestion && !(*congestion >= 0.0 && *congestion <= 1.0))
    throw ConfigError("agr.congestion", "must lie in [0, 1]");
  if (scales < 1 || scales > 2) throw ConfigError("moe.scales", "must be 1 or 2");
  if (!(loss.bandwidth >= 0.0) || !std::isfinite(loss.bandwidth))
    throw ConfigError("loss.lambda_bandwidth", "must be finite and >= 0");
  if (!(loss.entropy >= 0.0) || !std::isfinite(loss.entropy))
    throw ConfigError("loss.mu_entropy", "must be finite and >= 0");
  if (!(recall_threshold >= 0.0) || !std::isfinite(recall_threshold))
    throw ConfigError("metrics.recall_threshold", "must be finite and >= 0");
}

ModelWeights ModelWeights::random(const AgrArchitecture& agr, const MoeArchitecture& moe, int scales,
                                  std::uint64_t seed) {
  ModelWeights w;
  w.agr = AgrWeights::random(agr, derive_seed(seed, {fnv1a64("agr")}));
  for (int s = 1; s <= scales; ++s)
    w.moe.push_back(MoeWeights::random(moe, derive_seed(seed, {fnv1a64("moe"), std::uint64_t(s)})));
  return w;
}

namespace {

std::string frame_context(const Frame& f) { return "frame " + std::to_string(f.id) + ": "; }

}  // namespace

FrameResult run_frame(const Frame& frame, const ModelWeights& weights, const PipelineConfig& cfg) {
  if (const auto report = validate_frame(frame); !report.ok()) {
    std::string msg = frame_context(frame) + "invalid frame";
    for (const auto& v : report.violations) msg += "; " + std::string(to_string(v.kind)) + ": " + v.message;
    throw FrameError(msg);
  }
  if (weights.moe.size() != static_cast<std::size_t>(cfg.scales))
    throw ConfigError("moe.scales", std::to_string(weights.moe.size()) + " weight sets for " +
                                        std::to_string(cfg.scales) + " scales");

  FrameResult result;
  FrameMetrics& m = result.metrics;
  m.frame_id = frame.id;
  const auto& vehicles = frame.vehicles;
  const GridShape shape = vehicles.front().features.shape();
  m.grid = shape;

  try {
    // Selective transmission: mask, then mask multiply.
    m.stages.push_back("generate_transmission_mask");
    std::vector<StResult> st;
    st.reserve(vehicles.size());
    for (const auto& v : vehicles) st.push_back(apply_st(v, cfg.st, frame.id));
    m.stages.push_back("mask_multiply");
    std::vector<FeatureTensor> gated;
    gated.reserve(vehicles.size());
    for (auto& r : st) gated.push_back(std::move(r.masked));
    m.tau = cfg.congestion ? *cfg.congestion : frame_rate(vehicles, st);

    m.stages.push_back("reduce_features");
    AgrResult agr = agr_pipeline(vehicles, gated, m.tau, weights.agr, cfg.bases, cfg.clamp);

    m.stages.push_back("group_by_vehicle");
    std::vector<std::vector<FeatureTensor>> scale_maps(static_cast<std::size_t>(cfg.scales));
    scale_maps[0] = std::move(agr.reduced);
    if (cfg.scales == 2) {
      for (std::size_t i = 0; i < vehicles.size(); ++i) {
        const CellMask kept = downsample_any(st[i].mask & agr.masks[i]);
        scale_maps[1].push_back(apply_mask(downsample_mean(vehicles[i].features), kept));
      }
    }
    std::vector<std::vector<VehicleMapView>> views(scale_maps.size());
    for (std::size_t s = 0; s < scale_maps.size(); ++s)
      for (std::size_t i = 0; i < vehicles.size(); ++i)
        views[s].push_back({vehicles[i].id, vehicles[i].role, std::cref(scale_maps[s][i])});

    std::vector<FeatureTensor> remote_maps;
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      VehicleTrace t;
      t.vehicle_id = vehicles[i].id;
      t.role = vehicles[i].role;
      t.st_rate = st[i].rate;
      t.st_cells = st[i].mask.popcount();
      t.decision = agr.decisions[i];
      if (t.role == VehicleRole::Remote) {
        t.transmitted_cells = support(scale_maps[0][i]).popcount();
        for (std::size_t s = 0; s < scale_maps.size(); ++s) {
          const FeatureTensor& map = scale_maps[s][i];
          t.nonzero_elements += count_nonzero(map);
          auto bytes = encode_sparse(map, PayloadMeta{t.vehicle_id, std::uint8_t(s + 1)});
          t.payload_bytes += bytes.size();
          if (cfg.keep_payloads) result.payloads.push_back({t.vehicle_id, std::uint8_t(s + 1), std::move(bytes)});
          remote_maps.push_back(map);
        }
      }
      m.payload_bytes += t.payload_bytes;
      m.nonzero_elements += t.nonzero_elements;
      m.vehicles.push_back(t);
    }

    m.stages.push_back("fuse_features");
    result.fused = multiscale_fuse(views, weights.moe, cfg.gating);

    m.stages.push_back("metrics");
    m.comm_log2 = comm_log2(m.nonzero_elements, cfg.comm_times_bytes);
    m.l_bw = bandwidth_loss(remote_maps);
    m.gate_records = result.fused.gates.size();
    m.gating_entropy = gating_entropy(result.fused.gates);
    m.l_reg = -m.gating_entropy;
    m.l_partial = cfg.loss.bandwidth * m.l_bw + cfg.loss.entropy * m.l_reg;
    m.mean_gate = VectorXr::Zero(result.fused.gates.front().weights.size());
    for (const auto& g : result.fused.gates) m.mean_gate += g.weights;
    m.mean_gate /= double(result.fused.gates.size());
    m.utilization = result.fused.utilization;
    m.recall = proxy_recall(result.fused.fused, frame.truth, cfg.recall_threshold);
  } catch (const FrameError& e) {
    throw FrameError(frame_context(frame) + e.what());
  }
  return result;
}

std::vector<std::string> check_frame_metrics(const FrameMetrics& m, const PipelineConfig& cfg) {
  std::vector<std::string> errs;
  auto fail = [&](const std::string& s) { errs.push_back("frame " + std::to_string(m.frame_id) + ": " + s); };
  auto finite = [&](double v, const char* name) {
    if (!std::isfinite(v)) fail(std::string(name) + " is not finite");
  };
  finite(m.tau, "tau");
  finite(m.comm_log2, "comm_log2");
  finite(m.recall, "recall");
  finite(m.gating_entropy, "gating_entropy");
  finite(m.l_bw, "l_bw");
  finite(m.l_reg, "l_reg");
  finite(m.l_partial, "l_partial");
  if (!(m.l_bw >= 0.0 && m.l_bw <= 1.0)) fail("l_bw outside [0, 1]");
  if (!(m.recall >= 0.0 && m.recall <= 1.0)) fail("recall outside [0, 1]");
  if (!(m.tau >= 0.0 && m.tau <= 1.0)) fail("tau outside [0, 1]");
  if (m.stages != pipeline_stages()) fail("stage order differs from the pipeline order");
  if (std::abs(m.mean_gate.sum() - 1.0) > 1e-9 || (m.mean_gate.array() < 0.0).any()) fail("mean gate is not a probability vector");
  if ((m.utilization.array() < 0.0).any() || !m.utilization.allFinite()) fail("negative or non-finite utilisation");
  if (std::abs(m.comm_log2 - comm_log2(m.nonzero_elements, cfg.comm_times_bytes)) > 1e-12) fail("comm_log2 disagrees with nonzero count");

  const Index cells = m.grid.cells();
  std::size_t bytes = 0;
  int egos = 0;
  for (const auto& v : m.vehicles) {
    const auto& d = v.decision;
    const std::string who = "vehicle " + std::to_string(v.vehicle_id) + " ";
    if (!(d.alpha >= 0.0 && d.alpha <= 1.0)) fail(who + "alpha outside [0, 1]");
    if (!(d.k_clamped >= cfg.clamp.lo && d.k_clamped <= cfg.clamp.hi)) fail(who + "clamped keep ratio out of bounds");
    if (d.k_clamped != std::max(std::min(d.k_raw, cfg.clamp.hi), cfg.clamp.lo)) fail(who + "clamp mismatch");
    if (d.cells != cells_to_keep(d.k_clamped, m.grid)) fail(who + "cell count mismatch");
    if (d.cells < 1 || d.cells > cells) fail(who + "cell count out of range");
    if (!(v.st_rate >= 0.0 && v.st_rate <= 1.0)) fail(who + "gate rate outside [0, 1]");
    if (v.role == VehicleRole::Ego) {
      ++egos;
      if (v.payload_bytes != 0 || v.transmitted_cells != 0) fail(who + "ego map was transmitted");
      if (v.st_rate != 1.0) fail(who + "ego gate is not all-ones");
    } else {
      if (d.k_raw > cfg.bases.remote) fail(who + "remote raw keep ratio above its base");
      if (v.transmitted_cells > d.cells || v.transmitted_cells > v.st_cells) fail(who + "transmitted cells exceed a mask");
      if (cfg.scales == 1 && v.payload_bytes != payload_size(m.grid.channels, std::size_t(v.transmitted_cells)))
        fail(who + "payload size disagrees with the closed form");
    }
    bytes += v.payload_bytes;
  }
  if (egos != 1) fail("expected one ego trace");
  if (bytes != m.payload_bytes) fail("payload byte total mismatch");
  return errs;
}

}  // namespace efficomm
