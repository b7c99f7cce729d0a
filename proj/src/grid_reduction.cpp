#include "efficomm/grid_reduction.hpp"

#include <cmath>
#include <string>

#include "efficomm/param_file.hpp"

namespace efficomm {

void AgrArchitecture::validate() const {
  if (conv.empty()) throw ConfigError("agr.conv", "at least one conv stage is required");
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& c = conv[i];
    const std::string f = "agr.conv" + std::to_string(i);
    if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1 || c.padding < 0)
      throw ConfigError(f, "channels, kernel and stride must be >= 1, padding >= 0");
  }
  if (embed_dim < 1 || embed_dim >= feature_dim())
    throw ConfigError("agr.embed_dim", "must satisfy 1 <= embed_dim < " + std::to_string(feature_dim()));
  if (gat_hidden < 1) throw ConfigError("agr.gat_hidden", "must be >= 1");
  if (adjust_hidden < 1) throw ConfigError("agr.adjust_hidden", "must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("agr.leaky_slope", "must lie in [0, 1)");
}

namespace {

Conv2d<Real> make_conv(const ConvSpec& spec, int in_channels) {
  Conv2d<Real> c;
  c.in_channels = in_channels;
  c.out_channels = spec.out_channels;
  c.kernel = spec.kernel;
  c.stride = spec.stride;
  c.padding = spec.padding;
  return c;
}

std::string conv_name(std::size_t i) { return "phi.conv" + std::to_string(i); }

}  // namespace

AgrWeights AgrWeights::random(const AgrArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  AgrWeights w;
  w.arch = arch;
  int in = 1;
  for (std::size_t i = 0; i < arch.conv.size(); ++i) {
    Conv2d<Real> c = make_conv(arch.conv[i], in);
    c.weight = init_uniform<Real>(c.out_channels, c.patch_size(), c.patch_size(), seed, conv_name(i) + ".weight");
    c.bias = init_uniform<Real>(c.out_channels, 1, c.patch_size(), seed, conv_name(i) + ".bias");
    in = c.out_channels;
    w.conv.push_back(std::move(c));
  }
  w.embed = Affine<Real>::random(arch.feature_dim(), arch.embed_dim, seed, "psi");
  w.gat_weight = init_uniform<Real>(arch.gat_hidden, arch.node_dim(), arch.node_dim(), seed, "gat.weight");
  w.gat_attention = init_uniform<Real>(2 * arch.gat_hidden, 1, 2 * arch.gat_hidden, seed, "gat.attention");
  w.leaky_slope = arch.leaky_slope;
  w.adjust_hidden = Affine<Real>::random(arch.gat_hidden, arch.adjust_hidden, seed, "adjust.fc0");
  w.adjust_out = Affine<Real>::random(arch.adjust_hidden, 1, seed, "adjust.fc1");
  return w;
}

AgrWeights AgrWeights::zeros(const AgrArchitecture& arch) {
  arch.validate();
  AgrWeights w;
  w.arch = arch;
  int in = 1;
  for (const auto& spec : arch.conv) {
    Conv2d<Real> c = make_conv(spec, in);
    c.weight = MatrixXr::Zero(c.out_channels, c.patch_size());
    c.bias = VectorXr::Zero(c.out_channels);
    in = c.out_channels;
    w.conv.push_back(std::move(c));
  }
  w.embed = Affine<Real>::zeros(arch.feature_dim(), arch.embed_dim);
  w.gat_weight = MatrixXr::Zero(arch.gat_hidden, arch.node_dim());
  w.gat_attention = VectorXr::Zero(2 * arch.gat_hidden);
  w.leaky_slope = arch.leaky_slope;
  w.adjust_hidden = Affine<Real>::zeros(arch.gat_hidden, arch.adjust_hidden);
  w.adjust_out = Affine<Real>::zeros(arch.adjust_hidden, 1);
  return w;
}

void AgrWeights::validate() const {
  if (conv.size() != arch.conv.size()) throw ConfigError("agr.conv", "stage count differs from architecture");
  int in = 1;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& c = conv[i];
    const auto& s = arch.conv[i];
    if (c.in_channels != in || c.out_channels != s.out_channels || c.kernel != s.kernel ||
        c.stride != s.stride || c.padding != s.padding || !c.consistent())
      throw ConfigError(conv_name(i), "parameters disagree with architecture");
    if (!c.weight.allFinite() || !c.bias.allFinite()) throw ConfigError(conv_name(i), "non-finite parameter");
    in = c.out_channels;
  }
  auto check_affine = [](const Affine<Real>& a, Index in_dim, Index out_dim, const char* name) {
    if (a.in_dim() != in_dim || a.out_dim() != out_dim || a.bias.size() != out_dim)
      throw ConfigError(name, "expected " + std::to_string(out_dim) + "x" + std::to_string(in_dim));
    if (!a.weight.allFinite() || !a.bias.allFinite()) throw ConfigError(name, "non-finite parameter");
  };
  check_affine(embed, arch.feature_dim(), arch.embed_dim, "psi");
  check_affine(adjust_hidden, arch.gat_hidden, arch.adjust_hidden, "adjust.fc0");
  check_affine(adjust_out, arch.adjust_hidden, 1, "adjust.fc1");
  if (gat_weight.rows() != arch.gat_hidden || gat_weight.cols() != arch.node_dim() || !gat_weight.allFinite())
    throw ConfigError("gat.weight", "expected finite " + std::to_string(arch.gat_hidden) + "x" +
                                        std::to_string(arch.node_dim()));
  if (gat_attention.size() != 2 * arch.gat_hidden || !gat_attention.allFinite())
    throw ConfigError("gat.attention", "expected finite vector of " + std::to_string(2 * arch.gat_hidden));
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("gat.leaky_slope", "must lie in [0, 1)");
}

std::vector<std::uint8_t> save_agr_weights(const AgrWeights& w) {
  w.validate();
  std::vector<ParamRecord> records;
  for (std::size_t i = 0; i < w.conv.size(); ++i) {
    const auto& c = w.conv[i];
    ParamRecord r = make_record(conv_name(i) + ".weight", c.weight);
    r.dims = {std::uint32_t(c.out_channels), std::uint32_t(c.in_channels), std::uint32_t(c.kernel),
              std::uint32_t(c.kernel)};
    records.push_back(std::move(r));
    records.push_back(make_record(conv_name(i) + ".bias", c.bias));
  }
  records.push_back(make_record("psi.weight", w.embed.weight));
  records.push_back(make_record("psi.bias", w.embed.bias));
  records.push_back(make_record("gat.weight", w.gat_weight));
  records.push_back(make_record("gat.attention", w.gat_attention));
  records.push_back(make_scalar_record("gat.leaky_slope", w.leaky_slope));
  records.push_back(make_record("adjust.fc0.weight", w.adjust_hidden.weight));
  records.push_back(make_record("adjust.fc0.bias", w.adjust_hidden.bias));
  records.push_back(make_record("adjust.fc1.weight", w.adjust_out.weight));
  records.push_back(make_record("adjust.fc1.bias", w.adjust_out.bias));
  return write_params(std::string_view(kAgrMagic, 4), records);
}

AgrWeights load_agr_weights(std::span<const std::uint8_t> bytes, const AgrArchitecture& arch) {
  arch.validate();
  const auto records = read_params(bytes, std::string_view(kAgrMagic, 4));
  using D = std::vector<std::uint32_t>;
  auto u = [](int v) { return std::uint32_t(v); };
  AgrWeights w = AgrWeights::zeros(arch);
  for (std::size_t i = 0; i < w.conv.size(); ++i) {
    auto& c = w.conv[i];
    const auto& rw = require_record(records, conv_name(i) + ".weight",
                                    D{u(c.out_channels), u(c.in_channels), u(c.kernel), u(c.kernel)});
    c.weight = to_matrix(rw, c.out_channels, c.patch_size());
    c.bias = to_vector(require_record(records, conv_name(i) + ".bias", D{u(c.out_channels)}));
  }
  w.embed.weight = to_matrix(require_record(records, "psi.weight", D{u(arch.embed_dim), u(arch.feature_dim())}),
                             arch.embed_dim, arch.feature_dim());
  w.embed.bias = to_vector(require_record(records, "psi.bias", D{u(arch.embed_dim)}));
  w.gat_weight = to_matrix(require_record(records, "gat.weight", D{u(arch.gat_hidden), u(arch.node_dim())}),
                           arch.gat_hidden, arch.node_dim());
  w.gat_attention = to_vector(require_record(records, "gat.attention", D{u(2 * arch.gat_hidden)}));
  w.leaky_slope = require_record(records, "gat.leaky_slope", D{}).values[0];
  w.adjust_hidden.weight = to_matrix(
      require_record(records, "adjust.fc0.weight", D{u(arch.adjust_hidden), u(arch.gat_hidden)}),
      arch.adjust_hidden, arch.gat_hidden);
  w.adjust_hidden.bias = to_vector(require_record(records, "adjust.fc0.bias", D{u(arch.adjust_hidden)}));
  w.adjust_out.weight =
      to_matrix(require_record(records, "adjust.fc1.weight", D{1, u(arch.adjust_hidden)}), 1, arch.adjust_hidden);
  w.adjust_out.bias = to_vector(require_record(records, "adjust.fc1.bias", D{1}));
  if (records.size() != 2 * w.conv.size() + 9)
    throw ConfigError("agr.weights", "file holds " + std::to_string(records.size()) +
                                         " records, architecture expects " + std::to_string(2 * w.conv.size() + 9));
  w.validate();
  return w;
}

VectorXr NodeFeature::assemble() const {
  VectorXr n(embedding.size() + 2);
  n << embedding, ego_flag, rate;
  return n;
}

VehicleGraph VehicleGraph::fully_connected(std::vector<NodeFeature> nodes) {
  VehicleGraph g;
  const Index n = static_cast<Index>(nodes.size());
  g.nodes = std::move(nodes);
  g.adjacency = RowMajorMatrixX<std::uint8_t>::Ones(n, n);
  return g;
}

VectorXr conf_features(const ConfidenceMap& conf, const AgrWeights& w) {
  if (w.conv.empty() || w.conv.front().in_channels != 1)
    throw ConfigError("agr.conv", "encoder must read a single-channel importance image");
  const ImportanceImage img = importance_image(conf);
  MatrixXr act = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(img.values.data(), img.cells());
  int h = img.height(), wd = img.width();
  for (const auto& c : w.conv) {
    int oh = 0, ow = 0;
    act = relu(c.forward(act, h, wd, oh, ow));
    h = oh;
    wd = ow;
  }
  return act.rowwise().mean();
}

VectorXr embed(const VectorXr& features, const AgrWeights& w) {
  if (features.size() != w.embed.in_dim())
    throw ConfigError("psi", "input dimension " + std::to_string(features.size()) + ", expected " +
                                 std::to_string(w.embed.in_dim()));
  return relu(w.embed(features));
}

GatOutput gat_forward(const VehicleGraph& graph, const AgrWeights& w) {
  const Index n = static_cast<Index>(graph.nodes.size());
  if (n < 1) throw FrameError("graph attention needs at least one node");
  if (graph.adjacency.rows() != n || graph.adjacency.cols() != n)
    throw FrameError("adjacency is not " + std::to_string(n) + "x" + std::to_string(n));
  const Index hidden = w.gat_weight.rows();

  MatrixXr nodes(w.gat_weight.cols(), n);
  for (Index v = 0; v < n; ++v) {
    VectorXr nv = graph.nodes[static_cast<std::size_t>(v)].assemble();
    if (nv.size() != w.gat_weight.cols())
      throw ConfigError("gat.weight", "node dimension " + std::to_string(nv.size()) + ", expected " +
                                          std::to_string(w.gat_weight.cols()));
    nodes.col(v) = nv;
  }
  const MatrixXr h = w.gat_weight * nodes;  // hidden x n
  const VectorXr neigh_score = h.transpose() * w.gat_attention.head(hidden);
  const VectorXr self_score = h.transpose() * w.gat_attention.tail(hidden);

  GatOutput out;
  out.attention = MatrixXr::Zero(n, n);
  for (Index v = 0; v < n; ++v) {
    VectorXr logits(n);
    Index count = 0;
    std::vector<Index> neighbours;
    for (Index u = 0; u < n; ++u) {
      if (!graph.adjacency(v, u)) continue;
      logits(count++) = leaky_relu(neigh_score(u) + self_score(v), w.leaky_slope);
      neighbours.push_back(u);
    }
    if (count == 0) throw FrameError("node " + std::to_string(v) + " has no neighbours");
    const VectorXr coef = softmax(logits.head(count));
    VectorXr agg = VectorXr::Zero(hidden);
    for (Index k = 0; k < count; ++k) {
      out.attention(v, neighbours[static_cast<std::size_t>(k)]) = coef(k);
      agg += coef(k) * h.col(neighbours[static_cast<std::size_t>(k)]);
    }
    out.z.push_back(elu(agg));
  }
  return out;
}

double adjustment_factor(const VectorXr& z, const AgrWeights& w) {
  if (z.size() != w.adjust_hidden.in_dim())
    throw ConfigError("adjust.fc0", "input dimension " + std::to_string(z.size()) + ", expected " +
                                        std::to_string(w.adjust_hidden.in_dim()));
  const MatrixXr hidden = relu(w.adjust_hidden(z));
  return sigmoid(w.adjust_out(hidden)(0, 0));
}

KeepRatio keep_ratio(VehicleRole role, double alpha, double tau, const KeepRatioBases& bases,
                     const ClampBounds& clamp) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw PreconditionError("adjustment factor must lie in [0, 1], got " + std::to_string(alpha));
  if (!(tau >= 0.0 && tau <= 1.0))
    throw PreconditionError("transmission rate must lie in [0, 1], got " + std::to_string(tau));
  const double base = role == VehicleRole::Ego ? bases.ego : bases.remote;
  const double raw = base * (0.5 + 0.5 * alpha) * (0.7 + 0.3 * (1.0 - tau));
  return {raw, std::max(std::min(raw, clamp.hi), clamp.lo)};
}

Index cells_to_keep(double k, const GridShape& shape) {
  if (!(k >= 0.0 && k <= 1.0)) throw PreconditionError("keep ratio must lie in [0, 1], got " + std::to_string(k));
  const auto cells = static_cast<unsigned __int128>(shape.cells());
  Index kept = 0;
  if (k > 0.0) {
    int exp = 0;
    const double mant = std::frexp(k, &exp);  // k = mant * 2^exp, mant in [0.5, 1)
    const auto m = static_cast<std::uint64_t>(std::ldexp(mant, 53));
    const int shift = 53 - exp;  // >= 52 because k <= 1
    const unsigned __int128 prod = cells * m;
    kept = shift >= 128 ? 0 : static_cast<Index>(prod >> shift);
  }
  return std::max<Index>(1, kept);
}

CellMask importance_mask(const ConfidenceMap& conf, Index k) {
  if (k < 1 || k > conf.shape().cells())
    throw RangeError("importance mask size " + std::to_string(k) + " outside [1, " +
                     std::to_string(conf.shape().cells()) + "]");
  return top_k_cells(importance_image(conf), k);
}

FeatureTensor reduce(const FeatureTensor& features, const CellMask& mask) { return apply_mask(features, mask); }

AgrResult agr_pipeline(std::span<const VehicleEntry> vehicles, std::span<const FeatureTensor> gated,
                       double tau, const AgrWeights& w, const KeepRatioBases& bases, const ClampBounds& clamp) {
  if (vehicles.size() != gated.size())
    throw FrameError("grid reduction: " + std::to_string(vehicles.size()) + " vehicles but " +
                     std::to_string(gated.size()) + " gated maps");
  if (vehicles.empty()) throw FrameError("grid reduction: empty frame");

  std::vector<NodeFeature> nodes;
  nodes.reserve(vehicles.size());
  for (const auto& v : vehicles) {
    NodeFeature node;
    node.embedding = embed(conf_features(v.confidence, w), w);
    node.ego_flag = v.role == VehicleRole::Ego ? 1.0 : 0.0;
    node.rate = tau;
    nodes.push_back(std::move(node));
  }

  AgrResult result;
  result.gat = gat_forward(VehicleGraph::fully_connected(std::move(nodes)), w);
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    KeepRatioDecision d;
    d.vehicle_id = v.id;
    d.role = v.role;
    d.rate = tau;
    d.alpha = adjustment_factor(result.gat.z[i], w);
    const KeepRatio k = keep_ratio(v.role, d.alpha, tau, bases, clamp);
    d.k_raw = k.raw;
    d.k_clamped = k.clamped;
    d.cells = cells_to_keep(k.clamped, gated[i].shape());
    CellMask mask = importance_mask(v.confidence, d.cells);
    result.reduced.push_back(reduce(gated[i], mask));
    result.masks.push_back(std::move(mask));
    result.decisions.push_back(d);
  }
  return result;
}

}  // namespace efficomm
