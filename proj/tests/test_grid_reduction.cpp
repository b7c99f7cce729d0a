#include "doctest.h"

#include "efficomm/grid_reduction.hpp"
#include "efficomm/selective_transmission.hpp"
#include "support.hpp"

using namespace efficomm;

namespace {

std::vector<NodeFeature> random_nodes(Rng& rng, int n, int embed_dim) {
  std::vector<NodeFeature> nodes;
  for (int v = 0; v < n; ++v)
    nodes.push_back({testing::random_matrix(rng, embed_dim, 1), v == 0 ? 1.0 : 0.0, rng.uniform()});
  return nodes;
}

}  // namespace

TEST_CASE("conf_features") {
  const auto arch = testing::small_agr();
  SUBCASE("zero input, zero biases") {
    auto w = AgrWeights::random(arch, 1);
    for (auto& c : w.conv) c.bias.setZero();
    CHECK(conf_features(ConfidenceMap({2, 8, 8}), w).isZero(0.0));
  }
  SUBCASE("deterministic per seed") {
    Rng rng(3);
    const auto conf = testing::random_confidence(rng, {2, 8, 8});
    const auto a = conf_features(conf, AgrWeights::random(arch, 5));
    const auto b = conf_features(conf, AgrWeights::random(arch, 5));
    CHECK(a == b);
  }
  SUBCASE("1x1 identity kernel then mean pool") {
    AgrArchitecture one = arch;
    one.conv = {{2, 1, 1, 0}};
    one.embed_dim = 1;
    auto w = AgrWeights::zeros(one);
    w.conv[0].weight(0, 0) = 1.0;
    Rng rng(8);
    ConfidenceMap conf({1, 6, 5}, testing::random_matrix(rng, 1, 30, 0.0, 2.0));
    const auto out = conf_features(conf, w);
    REQUIRE(out.size() == 2);
    CHECK(out(1) == 0.0);
    double sum = 0.0;
    for (Index c = 0; c < 30; ++c) sum += conf.values()(0, c);
    CHECK(out(0) == doctest::Approx(sum / 30).epsilon(1e-14));
  }
}

TEST_CASE("embed") {
  const auto arch = testing::small_agr();
  auto w = AgrWeights::zeros(arch);
  CHECK(embed(VectorXr::Zero(arch.feature_dim()), w).isZero(0.0));

  w.embed.weight = MatrixXr::Identity(arch.feature_dim(), arch.feature_dim()).topRows(arch.embed_dim);
  Rng rng(2);
  const VectorXr e = testing::random_matrix(rng, arch.feature_dim(), 1, 0.1, 1.0);
  CHECK(embed(e, w) == e.head(arch.embed_dim));

  const auto r = AgrWeights::random(arch, 4);
  CHECK(embed(e, r) == embed(e, AgrWeights::random(arch, 4)));
}

TEST_CASE("gat_forward") {
  const auto arch = testing::small_agr();
  const auto w = AgrWeights::random(arch, 12);
  Rng rng(5);

  SUBCASE("singleton graph") {
    auto nodes = random_nodes(rng, 1, arch.embed_dim);
    const VectorXr n = nodes[0].assemble();
    const auto out = gat_forward(VehicleGraph::fully_connected(nodes), w);
    CHECK(out.attention(0, 0) == 1.0);
    CHECK((out.z[0] - elu(w.gat_weight * n)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identical nodes give identical outputs") {
    auto nodes = random_nodes(rng, 1, arch.embed_dim);
    nodes.push_back(nodes[0]);
    const auto out = gat_forward(VehicleGraph::fully_connected(nodes), w);
    CHECK(out.z[0] == out.z[1]);
  }
  SUBCASE("dense oracle") {
    for (int n = 1; n <= 8; ++n) {
      const auto nodes = random_nodes(rng, n, arch.embed_dim);
      oracle::Mat rows;
      for (const auto& node : nodes) rows.push_back(testing::to_vec(node.assemble()));
      oracle::Mat coef;
      const auto z = oracle::gat(rows, testing::to_rows(w.gat_weight), testing::to_vec(w.gat_attention),
                                 w.leaky_slope, &coef);
      const auto out = gat_forward(VehicleGraph::fully_connected(nodes), w);
      for (int v = 0; v < n; ++v) {
        CHECK(testing::max_abs_diff(z[std::size_t(v)], out.z[std::size_t(v)]) < 1e-12);
        CHECK(testing::max_abs_diff(coef[std::size_t(v)], out.attention.row(v).transpose()) < 1e-12);
        CHECK(out.attention.row(v).sum() == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
  SUBCASE("permuting nodes permutes outputs") {
    auto nodes = random_nodes(rng, 4, arch.embed_dim);
    const auto a = gat_forward(VehicleGraph::fully_connected(nodes), w);
    std::swap(nodes[1], nodes[3]);
    const auto b = gat_forward(VehicleGraph::fully_connected(nodes), w);
    CHECK((a.z[1] - b.z[3]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.z[0] - b.z[0]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("adjustment_factor") {
  const auto arch = testing::small_agr();
  auto w = AgrWeights::zeros(arch);
  CHECK(adjustment_factor(VectorXr::Ones(arch.gat_hidden), w) == 0.5);

  w.adjust_out.bias(0) = 10.0;
  CHECK(adjustment_factor(VectorXr::Ones(arch.gat_hidden), w) == doctest::Approx(0.99995).epsilon(1e-4));

  const auto r = AgrWeights::random(arch, 31);
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const VectorXr z = testing::random_matrix(rng, arch.gat_hidden, 1);
    oracle::Vec hidden = oracle::matvec(testing::to_rows(r.adjust_hidden.weight), testing::to_vec(z));
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = std::max(0.0, hidden[i] + r.adjust_hidden.bias(Index(i)));
    const double logit = oracle::dot(testing::to_vec(r.adjust_out.weight.row(0).transpose()), hidden) + r.adjust_out.bias(0);
    CHECK(std::abs(adjustment_factor(z, r) - oracle::sigmoid(logit)) < 1e-12);
  }
}

TEST_CASE("keep_ratio substitutions") {
  CHECK(std::abs(keep_ratio(VehicleRole::Ego, 0.5, 0.0).raw - 0.675) < 1e-12);
  CHECK(std::abs(keep_ratio(VehicleRole::Remote, 1.0, 0.0).raw - 0.5) < 1e-12);
  CHECK(std::abs(keep_ratio(VehicleRole::Remote, 0.0, 1.0).raw - 0.175) < 1e-12);
  CHECK(keep_ratio(VehicleRole::Ego, 1.0, 0.0).clamped == 0.9);
  CHECK(keep_ratio(VehicleRole::Remote, 0.0, 1.0, {0.9, 0.1}).clamped == 0.1);
  CHECK_THROWS_AS(keep_ratio(VehicleRole::Remote, 1.5, 0.0), PreconditionError);
  CHECK_THROWS_AS(keep_ratio(VehicleRole::Remote, 0.5, -0.1), PreconditionError);
}

TEST_CASE("cells_to_keep") {
  CHECK(cells_to_keep(0.175, {1, 10, 10}) == 17);
  CHECK(cells_to_keep(0.1, {1, 1, 1}) == 1);
  CHECK(cells_to_keep(0.346875, {1, 48, 176}) == 2930);
  CHECK_THROWS_AS(cells_to_keep(1.5, {1, 2, 2}), PreconditionError);
  Rng rng(77);
  for (int t = 0; t < 5000; ++t) {
    const int h = int(rng.integer(1, 300)), w = int(rng.integer(1, 300));
    const double k = rng.uniform(0.1, 0.95);
    CHECK(cells_to_keep(k, {1, h, w}) == oracle::cells_to_keep(k, std::int64_t(h) * w));
  }
}

TEST_CASE("importance_mask and reduce") {
  Rng rng(13);
  SUBCASE("all cells") {
    const auto conf = testing::random_confidence(rng, {2, 5, 5});
    CHECK(importance_mask(conf, 25).popcount() == 25);
  }
  SUBCASE("ordered input keeps the leading cells") {
    ConfidenceMap conf({1, 3, 4});
    for (Index c = 0; c < 12; ++c) conf.values()(0, c) = 12.0 - double(c);
    const auto m = importance_mask(conf, 3);
    for (Index c = 0; c < 12; ++c) CHECK(m.test(c) == (c < 3));
  }
  SUBCASE("tied scores match the sort oracle") {
    for (int t = 0; t < 100; ++t) {
      ConfidenceMap conf({2, 6, 7});
      for (Index i = 0; i < conf.values().size(); ++i) conf.values().data()[i] = double(rng.integer(-2, 2));
      const auto img = importance_image(conf);
      const Index k = rng.integer(1, 42);
      const auto want = oracle::topk(oracle::Vec(img.values.data(), img.values.data() + 42), std::size_t(k));
      const auto m = importance_mask(conf, k);
      for (Index c = 0; c < 42; ++c) REQUIRE(m.test(c) == bool(want[std::size_t(c)]));
    }
  }
  CHECK_THROWS_AS(importance_mask(ConfidenceMap({1, 2, 2}), 0), RangeError);

  const auto f = testing::random_features(rng, {3, 4, 4});
  CHECK(reduce(f, CellMask::ones(4, 4)) == f);
  CHECK(reduce(f, CellMask::zeros(4, 4)).values().isZero(0.0));
  CellMask m(4, 4);
  for (Index c = 0; c < 16; ++c) m.set(c, rng.uniform() < 0.5);
  const auto r = reduce(f, m);
  for (Index c = 0; c < 16; ++c)
    for (Index ch = 0; ch < 3; ++ch) CHECK(r.values()(ch, c) == (m.test(c) ? f.values()(ch, c) : 0.0));
}

TEST_CASE("agr_pipeline") {
  const auto arch = testing::small_agr();
  Rng rng(19);

  SUBCASE("ego only") {
    const auto w = AgrWeights::random(arch, 3);
    std::vector<VehicleEntry> vs{testing::random_vehicle(rng, 0, VehicleRole::Ego, {3, 8, 8})};
    std::vector<FeatureTensor> gated{vs[0].features};
    const auto r = agr_pipeline(vs, gated, 0.0, w);
    REQUIRE(r.decisions.size() == 1);
    const auto& d = r.decisions[0];
    CHECK(d.k_raw == doctest::Approx(oracle::keep_ratio_raw(true, d.alpha, 0.0)).epsilon(1e-15));
    CHECK(d.cells == oracle::cells_to_keep(d.k_clamped, 64));
  }
  SUBCASE("zeroed adjustment head on the default grid") {
    auto w = AgrWeights::random(arch, 3);
    w.adjust_hidden.weight.setZero();
    w.adjust_hidden.bias.setZero();
    w.adjust_out.weight.setZero();
    w.adjust_out.bias.setZero();
    std::vector<VehicleEntry> vs{testing::random_vehicle(rng, 0, VehicleRole::Ego, {2, 48, 176}, 1),
                                 testing::random_vehicle(rng, 1, VehicleRole::Remote, {2, 48, 176}, 1)};
    std::vector<FeatureTensor> gated{vs[0].features, vs[1].features};
    const auto r = agr_pipeline(vs, gated, 0.25, w);
    CHECK(r.decisions[1].alpha == 0.5);
    CHECK(std::abs(r.decisions[1].k_clamped - 0.346875) < 1e-15);
    CHECK(r.decisions[1].cells == 2930);
    CHECK(r.masks[1].popcount() == 2930);
  }
  SUBCASE("decision invariants over random frames") {
    const auto w = AgrWeights::random(arch, 8);
    for (int t = 0; t < 1000; ++t) {
      const int n = int(rng.integer(1, 5));
      const GridShape s{2, int(rng.integer(2, 9)), int(rng.integer(2, 9))};
      std::vector<VehicleEntry> vs;
      std::vector<FeatureTensor> gated;
      for (int v = 0; v < n; ++v) {
        vs.push_back(testing::random_vehicle(rng, std::uint32_t(v), v == 0 ? VehicleRole::Ego : VehicleRole::Remote, s));
        gated.push_back(apply_st(vs.back(), {}).masked);
      }
      const double tau = rng.uniform();
      const auto r = agr_pipeline(vs, gated, tau, w);
      REQUIRE(r.decisions.size() == std::size_t(n));
      for (int v = 0; v < n; ++v) {
        const auto& d = r.decisions[std::size_t(v)];
        REQUIRE(d.alpha >= 0.0);
        REQUIRE(d.alpha <= 1.0);
        REQUIRE(d.k_clamped >= 0.1);
        REQUIRE(d.k_clamped <= 0.95);
        REQUIRE(d.cells >= 1);
        REQUIRE(d.cells <= s.cells());
        REQUIRE(d.cells == oracle::cells_to_keep(d.k_clamped, s.cells()));
        REQUIRE(r.masks[std::size_t(v)].popcount() == d.cells);
        const CellMask kept = support(r.reduced[std::size_t(v)]);
        REQUIRE((kept & r.masks[std::size_t(v)]) == kept);
        REQUIRE((kept & support(gated[std::size_t(v)])) == kept);
        if (d.role == VehicleRole::Remote) REQUIRE(d.k_raw <= 0.5);
      }
    }
  }
}

TEST_CASE("AGR weight files round-trip") {
  const auto arch = testing::small_agr();
  const auto w = AgrWeights::random(arch, 44);
  const auto bytes = save_agr_weights(w);
  const auto back = load_agr_weights(bytes, arch);
  CHECK(back.gat_weight == w.gat_weight);
  CHECK(back.embed.weight == w.embed.weight);
  CHECK(back.conv[1].weight == w.conv[1].weight);
  CHECK(back.adjust_out.bias == w.adjust_out.bias);
  AgrArchitecture other = arch;
  other.embed_dim = 7;
  CHECK_THROWS_AS(load_agr_weights(bytes, other), ConfigError);
}
