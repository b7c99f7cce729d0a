#include "efficomm/moe_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "efficomm/param_file.hpp"

namespace efficomm {

void MoeArchitecture::validate() const {
  if (model_dim < 1) throw ConfigError("moe.model_dim", "must be >= 1");
  if (key_dim < 1) throw ConfigError("moe.key_dim", "must be >= 1");
  if (experts < 1) throw ConfigError("moe.experts", "must be >= 1");
  if (router_hidden < 1) throw ConfigError("moe.router_hidden", "must be >= 1");
}

namespace {

std::string expert_name(std::size_t i, const char* part) {
  return "expert" + std::to_string(i) + "." + part;
}

}  // namespace

MoeWeights MoeWeights::random(const MoeArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  MoeWeights w;
  w.arch = arch;
  for (int i = 0; i < arch.experts; ++i) {
    const auto e = static_cast<std::size_t>(i);
    w.experts.push_back({init_uniform<Real>(arch.key_dim, arch.model_dim, arch.model_dim, seed, expert_name(e, "query")),
                         init_uniform<Real>(arch.key_dim, arch.model_dim, arch.model_dim, seed, expert_name(e, "key")),
                         init_uniform<Real>(arch.key_dim, arch.model_dim, arch.model_dim, seed, expert_name(e, "value"))});
  }
  w.router_hidden = Affine<Real>::random(arch.model_dim, arch.router_hidden, seed, "router.fc0");
  w.router_out = Affine<Real>::random(arch.router_hidden, arch.experts, seed, "router.fc1");
  return w;
}

MoeWeights MoeWeights::zeros(const MoeArchitecture& arch) {
  arch.validate();
  MoeWeights w;
  w.arch = arch;
  const MatrixXr z = MatrixXr::Zero(arch.key_dim, arch.model_dim);
  w.experts.assign(static_cast<std::size_t>(arch.experts), ExpertWeights{z, z, z});
  w.router_hidden = Affine<Real>::zeros(arch.model_dim, arch.router_hidden);
  w.router_out = Affine<Real>::zeros(arch.router_hidden, arch.experts);
  return w;
}

void MoeWeights::validate() const {
  arch.validate();
  if (experts.size() != static_cast<std::size_t>(arch.experts))
    throw ConfigError("moe.experts", "holds " + std::to_string(experts.size()) + " experts, architecture says " +
                                         std::to_string(arch.experts));
  for (std::size_t i = 0; i < experts.size(); ++i)
    for (const auto* m : {&experts[i].query, &experts[i].key, &experts[i].value})
      if (m->rows() != arch.key_dim || m->cols() != arch.model_dim || !m->allFinite())
        throw ConfigError("expert" + std::to_string(i), "projection must be finite " +
                                                            std::to_string(arch.key_dim) + "x" +
                                                            std::to_string(arch.model_dim));
  if (router_hidden.in_dim() != arch.model_dim || router_hidden.out_dim() != arch.router_hidden ||
      router_hidden.bias.size() != arch.router_hidden || !router_hidden.weight.allFinite() ||
      !router_hidden.bias.allFinite())
    throw ConfigError("router.fc0", "shape or values disagree with architecture");
  if (router_out.in_dim() != arch.router_hidden || router_out.out_dim() != arch.experts ||
      router_out.bias.size() != arch.experts || !router_out.weight.allFinite() || !router_out.bias.allFinite())
    throw ConfigError("router.fc1", "shape or values disagree with architecture");
}

std::vector<std::uint8_t> save_moe_weights(const MoeWeights& w) {
  w.validate();
  std::vector<ParamRecord> records;
  for (std::size_t i = 0; i < w.experts.size(); ++i) {
    records.push_back(make_record(expert_name(i, "query"), w.experts[i].query));
    records.push_back(make_record(expert_name(i, "key"), w.experts[i].key));
    records.push_back(make_record(expert_name(i, "value"), w.experts[i].value));
  }
  records.push_back(make_record("router.fc0.weight", w.router_hidden.weight));
  records.push_back(make_record("router.fc0.bias", w.router_hidden.bias));
  records.push_back(make_record("router.fc1.weight", w.router_out.weight));
  records.push_back(make_record("router.fc1.bias", w.router_out.bias));
  return write_params(std::string_view(kMoeMagic, 4), records);
}

MoeWeights load_moe_weights(std::span<const std::uint8_t> bytes, const MoeArchitecture& arch) {
  arch.validate();
  const auto records = read_params(bytes, std::string_view(kMoeMagic, 4));
  using D = std::vector<std::uint32_t>;
  const auto kd = std::uint32_t(arch.key_dim), md = std::uint32_t(arch.model_dim);
  const auto rh = std::uint32_t(arch.router_hidden), ne = std::uint32_t(arch.experts);
  MoeWeights w = MoeWeights::zeros(arch);
  for (std::size_t i = 0; i < w.experts.size(); ++i) {
    w.experts[i].query = to_matrix(require_record(records, expert_name(i, "query"), D{kd, md}), kd, md);
    w.experts[i].key = to_matrix(require_record(records, expert_name(i, "key"), D{kd, md}), kd, md);
    w.experts[i].value = to_matrix(require_record(records, expert_name(i, "value"), D{kd, md}), kd, md);
  }
  w.router_hidden.weight = to_matrix(require_record(records, "router.fc0.weight", D{rh, md}), rh, md);
  w.router_hidden.bias = to_vector(require_record(records, "router.fc0.bias", D{rh}));
  w.router_out.weight = to_matrix(require_record(records, "router.fc1.weight", D{ne, rh}), ne, rh);
  w.router_out.bias = to_vector(require_record(records, "router.fc1.bias", D{ne}));
  if (records.size() != 3 * w.experts.size() + 4)
    throw ConfigError("moe.weights", "file holds " + std::to_string(records.size()) +
                                         " records, architecture expects " + std::to_string(3 * w.experts.size() + 4));
  w.validate();
  return w;
}

std::vector<VehicleMapView> canonical_order(std::span<const VehicleMapView> views) {
  if (views.empty()) throw FrameError("fusion needs at least one vehicle map");
  std::vector<VehicleMapView> out(views.begin(), views.end());
  const auto egos = std::count_if(out.begin(), out.end(), [](const auto& v) { return v.role == VehicleRole::Ego; });
  if (egos != 1) throw FrameError("fusion needs exactly one ego map, got " + std::to_string(egos));
  std::stable_sort(out.begin(), out.end(), [](const VehicleMapView& a, const VehicleMapView& b) {
    if (a.role != b.role) return a.role == VehicleRole::Ego;
    return a.vehicle_id < b.vehicle_id;
  });
  const GridShape& shape = out.front().features.get().shape();
  for (const auto& v : out)
    if (!(v.features.get().shape() == shape))
      throw FrameError("vehicle " + std::to_string(v.vehicle_id) + " map " + to_string(v.features.get().shape()) +
                       " differs from ego grid " + to_string(shape));
  return out;
}

VectorXr sdpa_expert(const MatrixXr& stacked, const ExpertWeights& w) {
  if (stacked.cols() < 1) throw FrameError("attention needs at least one vehicle vector");
  if (stacked.rows() != w.query.cols())
    throw ConfigError("expert", "vector dimension " + std::to_string(stacked.rows()) + ", expected " +
                                    std::to_string(w.query.cols()));
  const VectorXr q = w.query * stacked.col(0);
  const MatrixXr keys = w.key * stacked;
  const MatrixXr values = w.value * stacked;
  const VectorXr logits = (keys.transpose() * q) / std::sqrt(double(w.key.rows()));
  return values * softmax(logits);
}

namespace {

/// Stacked projections of one vehicle's nonzero columns. `slot[c]` is the
/// column of `proj` holding cell c, or -1 where the input column is zero.
struct Projected {
  std::vector<Index> slot;
  MatrixXr proj;
};

Projected project(const MatrixXr& weight, const FeatureTensor& f) {
  const Index cells = f.shape().cells();
  Projected out;
  out.slot.assign(static_cast<std::size_t>(cells), -1);
  Index n = 0;
  for (Index c = 0; c < cells; ++c)
    if ((f.column(c).array() != 0.0).any()) out.slot[static_cast<std::size_t>(c)] = n++;
  if (n == cells) {
    out.proj.noalias() = weight * f.values();
    return out;
  }
  MatrixXr gathered(f.channels(), n);
  for (Index c = 0; c < cells; ++c)
    if (const Index j = out.slot[static_cast<std::size_t>(c)]; j >= 0) gathered.col(j) = f.column(c);
  out.proj.noalias() = weight * gathered;
  return out;
}

/// One output matrix per expert. The score between the ego query and vehicle
/// j is x_j . (K^T Q x_ego) / sqrt(d_k), and the output is V applied to the
/// score-weighted mix of raw vehicle columns; both are the usual scaled
/// dot-product attention with the products reassociated.
std::vector<MatrixXr> attention_ordered(const std::vector<VehicleMapView>& order,
                                        std::span<const ExpertWeights* const> experts) {
  const FeatureTensor& ego = order.front().features.get();
  for (const auto* w : experts)
    if (ego.channels() != w->query.cols())
      throw ConfigError("expert", "feature channels " + std::to_string(ego.channels()) + ", expected " +
                                      std::to_string(w->query.cols()));
  const Index cells = ego.shape().cells();
  const Index md = ego.channels();
  const std::size_t n = order.size();

  MatrixXr bilinear(md * Index(experts.size()), md);
  for (std::size_t e = 0; e < experts.size(); ++e)
    bilinear.middleRows(md * Index(e), md).noalias() =
        experts[e]->key.transpose() * experts[e]->query / std::sqrt(double(experts[e]->key.rows()));
  const Projected q = project(bilinear, ego);

  std::vector<std::vector<Index>> slots(n);
  slots[0] = q.slot;
  for (std::size_t j = 1; j < n; ++j) {
    const FeatureTensor& f = order[j].features.get();
    slots[j].assign(static_cast<std::size_t>(cells), -1);
    for (Index c = 0; c < cells; ++c)
      if ((f.column(c).array() != 0.0).any()) slots[j][static_cast<std::size_t>(c)] = c;
  }

  std::vector<MatrixXr> outs;
  VectorXr logits(static_cast<Index>(n));
  MatrixXr mix(md, cells);
  for (std::size_t e = 0; e < experts.size(); ++e) {
    for (Index c = 0; c < cells; ++c) {
      const auto cs = static_cast<std::size_t>(c);
      const Index qs = q.slot[cs];
      for (std::size_t j = 0; j < n; ++j)
        logits(Index(j)) = (qs < 0 || slots[j][cs] < 0)
                               ? 0.0
                               : order[j].features.get().column(c).dot(q.proj.col(qs).segment(md * Index(e), md));
      const double top = logits.maxCoeff();
      logits = (logits.array() - top).exp();
      logits /= logits.sum();
      auto col = mix.col(c);
      col.setZero();
      for (std::size_t j = 0; j < n; ++j)
        if (slots[j][cs] >= 0) col += logits(Index(j)) * order[j].features.get().column(c);
    }
    outs.push_back(experts[e]->value * mix);
  }
  return outs;
}

std::vector<const ExpertWeights*> expert_ptrs(const MoeWeights& w) {
  std::vector<const ExpertWeights*> out;
  for (const auto& e : w.experts) out.push_back(&e);
  return out;
}

}  // namespace

MatrixXr attention_fuse(std::span<const VehicleMapView> views, const ExpertWeights& w) {
  const auto order = canonical_order(views);
  const ExpertWeights* one[] = {&w};
  return std::move(attention_ordered(order, one).front());
}

std::vector<MatrixXr> expert_outputs(std::span<const VehicleMapView> views, const MoeWeights& w) {
  return attention_ordered(canonical_order(views), expert_ptrs(w));
}

VectorXr router_logits(const VectorXr& context, const MoeWeights& w) {
  if (context.size() != w.router_hidden.in_dim())
    throw ConfigError("router.fc0", "context dimension " + std::to_string(context.size()) + ", expected " +
                                        std::to_string(w.router_hidden.in_dim()));
  return w.router_out(relu(w.router_hidden(context)));
}

GateRecord gate_weights(const VectorXr& logits) {
  if (logits.size() < 1) throw FrameError("gate needs at least one logit");
  return {softmax(logits), logits};
}

FeatureTensor mix_experts(std::span<const MatrixXr> outputs, std::span<const GateRecord> gates,
                          const GridShape& plane) {
  if (outputs.empty()) throw FrameError("no expert outputs to mix");
  const Index cells = plane.cells();
  const bool per_cell = gates.size() != 1;
  if (per_cell && static_cast<Index>(gates.size()) != cells)
    throw FrameError("expected 1 or " + std::to_string(cells) + " gate records, got " + std::to_string(gates.size()));
  for (const auto& g : gates)
    if (g.weights.size() != static_cast<Index>(outputs.size()))
      throw FrameError("gate width differs from expert count");
  MatrixXr x(outputs.front().rows(), cells);
  for (Index c = 0; c < cells; ++c) {
    const VectorXr& g = gates[per_cell ? static_cast<std::size_t>(c) : 0].weights;
    auto col = x.col(c);
    col = g(0) * outputs[0].col(c);
    for (std::size_t i = 1; i < outputs.size(); ++i) col += g(Index(i)) * outputs[i].col(c);
  }
  const GridShape shape{int(x.rows()), plane.height, plane.width};
  return FeatureTensor(shape, std::move(x));
}

FusedMap moe_fuse(std::span<const VehicleMapView> views, const MoeWeights& w, GatingMode mode) {
  const auto order = canonical_order(views);
  const FeatureTensor& ego = order.front().features.get();
  const GridShape& shape = ego.shape();
  if (shape.channels != w.arch.model_dim)
    throw FrameError("maps carry " + std::to_string(shape.channels) + " channels, fusion expects " +
                     std::to_string(w.arch.model_dim));
  const std::vector<MatrixXr> outs = attention_ordered(order, expert_ptrs(w));

  // Mean over vehicles, in canonical order.
  MatrixXr pooled = order.front().features.get().values();
  for (std::size_t j = 1; j < order.size(); ++j) pooled += order[j].features.get().values();
  pooled /= double(order.size());

  FusedMap result;
  if (mode == GatingMode::PerFrame) {
    const VectorXr context = pooled.rowwise().mean();
    result.gates.push_back(gate_weights(router_logits(context, w)));
  } else {
    const MatrixXr logits = w.router_out(relu(w.router_hidden(pooled)));
    result.gates.reserve(static_cast<std::size_t>(shape.cells()));
    for (Index c = 0; c < shape.cells(); ++c) result.gates.push_back(gate_weights(logits.col(c)));
  }
  result.fused = mix_experts(outs, result.gates, shape);

  result.utilization = VectorXr::Zero(w.arch.experts);
  const bool per_cell = result.gates.size() != 1;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    double sum = 0.0;
    for (Index c = 0; c < shape.cells(); ++c) {
      const double g = result.gates[per_cell ? static_cast<std::size_t>(c) : 0].weights(Index(i));
      sum += (g * outs[i].col(c)).norm();
    }
    result.utilization(Index(i)) = sum / double(shape.cells());
  }
  return result;
}

double gating_entropy(std::span<const GateRecord> records) {
  if (records.empty()) throw ReportError("gating entropy of an empty record list");
  double total = 0.0;
  for (const auto& r : records) {
    double h = 0.0;
    for (Index i = 0; i < r.weights.size(); ++i) {
      const double g = r.weights(i);
      if (g > 0.0) h -= g * std::log(g);
    }
    total += h;
  }
  return total / double(records.size());
}

double entropy_loss(std::span<const GateRecord> records) { return -gating_entropy(records); }

FusedMap multiscale_fuse(std::span<const std::vector<VehicleMapView>> per_scale,
                         std::span<const MoeWeights> weights, GatingMode mode) {
  const std::size_t scales = per_scale.size();
  if (scales < 1 || scales > 2) throw ConfigError("moe.scales", "must be 1 or 2, got " + std::to_string(scales));
  if (weights.size() != scales)
    throw ConfigError("moe.weights", std::to_string(weights.size()) + " weight sets for " +
                                         std::to_string(scales) + " scales");
  std::vector<FusedMap> fused;
  for (std::size_t s = 0; s < scales; ++s) fused.push_back(moe_fuse(per_scale[s], weights[s], mode));
  if (scales == 1) return std::move(fused.front());

  const GridShape fine = fused[0].fused.shape();
  const GridShape coarse = fused[1].fused.shape();
  if (fine.height % 2 != 0 || fine.width % 2 != 0 || coarse.height * 2 != fine.height ||
      coarse.width * 2 != fine.width)
    throw ConfigError("moe.scales", "coarse grid " + to_string(coarse) + " is not the fine grid " +
                                        to_string(fine) + " halved");
  if (fused[0].utilization.size() != fused[1].utilization.size())
    throw ConfigError("moe.experts", "scales must share the expert count");

  const FeatureTensor up = upsample_nearest(fused[1].fused, 2);
  MatrixXr stacked(fine.channels + up.channels(), fine.cells());
  stacked << fused[0].fused.values(), up.values();

  FusedMap out;
  const GridShape shape{int(stacked.rows()), fine.height, fine.width};
  out.fused = FeatureTensor(shape, std::move(stacked));
  out.gates = std::move(fused[0].gates);
  out.gates.insert(out.gates.end(), fused[1].gates.begin(), fused[1].gates.end());
  out.utilization = 0.5 * (fused[0].utilization + fused[1].utilization);
  return out;
}

}  // namespace efficomm
