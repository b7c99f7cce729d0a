#include "doctest.h"

#include <cmath>

#include "efficomm/pipeline.hpp"
#include "efficomm/scenario.hpp"
#include "efficomm/selective_transmission.hpp"
#include "support.hpp"

using namespace efficomm;

namespace {

ScenarioConfig small_scene() {
  ScenarioConfig c;
  c.grid = {8, 16, 24};
  c.objects = 4;
  c.sensing_radius = 14.0;
  return c;
}

}  // namespace

TEST_CASE("gen_frame") {
  SUBCASE("no objects leaves confidence at the floor") {
    ScenarioConfig c = small_scene();
    c.objects = 0;
    const Frame f = gen_frame(c, 0);
    CHECK(f.truth.objects.empty());
    const double cut = std::log(0.01 / 0.99);
    for (const auto& v : f.vehicles) {
      const auto img = importance_image(v.confidence);
      const auto m = threshold_mask(img, 0.01);
      for (Index cell = 0; cell < img.cells(); ++cell)
        if (m.test(cell)) CHECK(img.at(cell) > cut);
      CHECK(m.popcount() < img.cells() / 100 + 1);
    }
  }
  SUBCASE("same seed and id give the same frame") {
    const Frame a = gen_frame(small_scene(), 3), b = gen_frame(small_scene(), 3);
    REQUIRE(a.vehicles.size() == b.vehicles.size());
    for (std::size_t i = 0; i < a.vehicles.size(); ++i) {
      CHECK(a.vehicles[i].features == b.vehicles[i].features);
      CHECK(a.vehicles[i].confidence == b.vehicles[i].confidence);
    }
    CHECK(a.truth.occupied_cells() == b.truth.occupied_cells());
    CHECK_FALSE(gen_frame(small_scene(), 4).vehicles[0].features == a.vehicles[0].features);
  }
  SUBCASE("frames are well formed with one ego") {
    for (int id = 0; id < 10; ++id) {
      const Frame f = gen_frame(small_scene(), id);
      CHECK(validate_frame(f).ok());
      CHECK(f.ego().id == 0);
    }
  }
  SUBCASE("visibility follows the ray-walk oracle") {
    const ScenarioConfig c = small_scene();
    for (int id = 0; id < 5; ++id) {
      const Frame f = gen_frame(c, id);
      const Occupancy occ = occupancy_of(f.truth, c.grid.height, c.grid.width);
      std::vector<std::vector<int>> grid(std::size_t(c.grid.height), std::vector<int>(std::size_t(c.grid.width)));
      for (int r = 0; r < c.grid.height; ++r)
        for (int col = 0; col < c.grid.width; ++col) grid[std::size_t(r)][std::size_t(col)] = occ(r, col);
      for (const auto& view : f.truth.views)
        for (int r = 0; r < c.grid.height; ++r)
          for (int col = 0; col < c.grid.width; ++col) {
            const double dr = r - view.position.row, dc = col - view.position.col;
            const bool want = dr * dr + dc * dc <= c.sensing_radius * c.sensing_radius &&
                              oracle::visible(view.position.row, view.position.col, r, col, grid);
            REQUIRE(view.visible_cells(r, col) == want);
          }
    }
  }
  SUBCASE("a cell strictly behind an object is hidden") {
    Occupancy occ = Occupancy::Constant(5, 12, -1);
    occ(2, 5) = 0;
    CHECK_FALSE(line_of_sight({2, 0}, {2, 10}, occ));
    CHECK(line_of_sight({2, 0}, {2, 5}, occ));
    CHECK(line_of_sight({0, 0}, {0, 10}, occ));
    const auto vis = visibility_map({2, 0}, occ, 20.0, true);
    CHECK_FALSE(vis(2, 10));
    CHECK(visibility_map({2, 0}, occ, 20.0, false)(2, 10));
  }
  SUBCASE("bad configs") {
    ScenarioConfig c = small_scene();
    c.vehicles = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_scene();
    c.objects = 500;
    c.max_retries = 10;
    CHECK_THROWS_AS(gen_frame(c, 0), GenerationError);
  }
}

TEST_CASE("proxy_recall") {
  GroundTruth truth;
  truth.objects = {{{0, 0}, {0, 1}}, {{2, 2}}};
  FeatureTensor fused({2, 3, 3});
  CHECK(proxy_recall(fused, truth, 0.05) == 0.0);
  fused.values().setConstant(1.0);
  CHECK(proxy_recall(fused, truth, 0.05) == 1.0);
  CHECK(proxy_recall(fused, GroundTruth{}, 0.05) == 1.0);

  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto f = testing::random_features(rng, {3, 6, 6}, 0.5);
    GroundTruth g;
    g.objects.push_back({});
    for (int i = 0; i < 8; ++i) g.objects[0].push_back({int(rng.integer(0, 5)), int(rng.integer(0, 5))});
    const auto cells = g.occupied_cells();
    int hit = 0;
    for (const auto& c : cells) {
      double n2 = 0.0;
      for (int ch = 0; ch < 3; ++ch) n2 += f(ch, c.row, c.col) * f(ch, c.row, c.col);
      hit += std::sqrt(n2) > 0.3;
    }
    CHECK(proxy_recall(f, g, 0.3) == double(hit) / double(cells.size()));
  }
}

TEST_CASE("bandwidth_loss") {
  std::vector<FeatureTensor> zero{FeatureTensor({2, 3, 3}), FeatureTensor({2, 3, 3})};
  CHECK(bandwidth_loss(zero) == 0.0);
  CHECK(bandwidth_loss(std::span<const FeatureTensor>{}) == 0.0);
  std::vector<FeatureTensor> dense{FeatureTensor({2, 3, 3}, MatrixXr::Ones(2, 9))};
  CHECK(bandwidth_loss(dense) == 1.0);

  Rng rng(7);
  std::vector<FeatureTensor> maps;
  std::size_t nz = 0, total = 0;
  for (int i = 0; i < 3; ++i) {
    maps.push_back(testing::random_features(rng, {4, 5, 5}, 0.4));
    maps.back().values()(0, 0) = 0.0;
    for (Index k = 0; k < maps.back().values().size(); ++k) nz += maps.back().values().data()[k] != 0.0;
    total += 100;
  }
  CHECK(bandwidth_loss(maps) == double(nz) / double(total));
}

TEST_CASE("run_frame") {
  const ModelWeights weights = ModelWeights::random(AgrArchitecture{}, MoeArchitecture{}, 1, 0);
  PipelineConfig cfg;

  SUBCASE("ego only") {
    ScenarioConfig c;
    c.vehicles = 1;
    const auto r = run_frame(gen_frame(c, 0), weights, cfg);
    CHECK(r.metrics.payload_bytes == 0);
    CHECK(r.metrics.l_bw == 0.0);
    CHECK(r.metrics.tau == 0.0);
    CHECK(check_frame_metrics(r.metrics, cfg).empty());
  }
  SUBCASE("default scene, seeds 0 to 99") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      ScenarioConfig c;
      c.seed = seed;
      const Frame f = gen_frame(c, 0);
      PipelineConfig pc = cfg;
      pc.keep_payloads = true;
      const auto r = run_frame(f, weights, pc);
      const auto problems = check_frame_metrics(r.metrics, pc);
      for (const auto& p : problems) INFO(p);
      REQUIRE(problems.empty());

      std::size_t bytes = 0;
      std::uint64_t nz = 0;
      for (const auto& p : r.payloads) {
        bytes += p.bytes.size();
        const auto d = decode_sparse(p.bytes);
        nz += count_nonzero(d.features);
      }
      CHECK(bytes == r.metrics.payload_bytes);
      for (const auto& v : r.metrics.vehicles) {
        if (v.role == VehicleRole::Ego) {
          CHECK(v.payload_bytes == 0);
          continue;
        }
        CHECK(double(v.transmitted_cells) <= 0.5 * double(c.grid.cells()));
        CHECK(v.payload_bytes == payload_size(c.grid.channels, std::size_t(v.transmitted_cells)));
      }
      CHECK(std::abs(r.metrics.comm_log2 - (r.metrics.nonzero_elements ? std::log2(double(r.metrics.nonzero_elements)) : 0.0)) < 1e-9);
    }
  }
  SUBCASE("malformed frame") {
    Frame f = gen_frame(ScenarioConfig{}, 0);
    f.vehicles[1].role = VehicleRole::Ego;
    CHECK_THROWS_AS(run_frame(f, weights, cfg), FrameError);
  }
  SUBCASE("two scales") {
    ModelWeights w2 = ModelWeights::random(AgrArchitecture{}, MoeArchitecture{}, 2, 0);
    PipelineConfig pc = cfg;
    pc.scales = 2;
    pc.keep_payloads = true;
    const auto r = run_frame(gen_frame(ScenarioConfig{}, 1), w2, pc);
    CHECK(check_frame_metrics(r.metrics, pc).empty());
    CHECK(r.fused.fused.channels() == 2 * MoeArchitecture{}.key_dim);
    int coarse = 0;
    for (const auto& p : r.payloads) coarse += p.scale == 2;
    CHECK(coarse == 3);
  }
  SUBCASE("congestion override") {
    PipelineConfig pc = cfg;
    pc.congestion = 0.75;
    const auto r = run_frame(gen_frame(ScenarioConfig{}, 3), weights, pc);
    CHECK(r.metrics.tau == 0.75);
    CHECK(check_frame_metrics(r.metrics, pc).empty());
    pc.congestion = 1.5;
    CHECK_THROWS_AS(pc.validate(), ConfigError);
  }
  SUBCASE("per-cell gating") {
    PipelineConfig pc = cfg;
    pc.gating = GatingMode::PerCell;
    const auto r = run_frame(gen_frame(ScenarioConfig{}, 2), weights, pc);
    CHECK(r.metrics.gate_records == std::size_t(ScenarioConfig{}.grid.cells()));
    CHECK(check_frame_metrics(r.metrics, pc).empty());
  }
}
