#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "inasim/planner.hpp"

using namespace inasim;

namespace {

ModelSpec tiny_model() {
  ModelSpec m;
  m.name = "toy";
  m.param_bytes = 1 << 22;
  m.batch_size = 8;
  m.compute_mean_s = 1e-6;
  m.compute_sigma_s = 0.0;
  return m;
}

}  // namespace

TEST_CASE("switch ranking", "[planner]") {
  SECTION("leaves with workers precede the bare spine") {
    Topology t = gen_spine_leaf(1, 2, 4);
    auto order = rank_switches(t, 0);
    REQUIRE(order.size() == 3);
    CHECK(t.adjacency(order[0]).size() >= 4);  // a leaf
    CHECK(racks(t)[0].tor == order[0]);
    CHECK(racks(t)[1].tor == order[1]);
  }

  SECTION("fat-tree: all edge switches precede aggregation and core") {
    Topology t = gen_fattree(4);
    auto order = rank_switches(t, 0);
    REQUIRE(order.size() == 20);
    std::set<NodeId> tors;
    for (const Rack& r : racks(t)) tors.insert(r.tor);
    for (int i = 0; i < 8; i++) CHECK(tors.count(order[i]) == 1);
    // phase 2 is ordered by downstream worker count in the root-worker tree
    CHECK(order[8] == 24);  // the pod-0 aggregation switch carrying 14 workers
    CHECK(order[9] == 32);  // the core concentrating the other pods
  }

  SECTION("no switches yields an empty list") {
    // degenerate: a single host cannot exist alone (hosts need one link),
    // so use a host pair joined through one switch and strip it from racks
    Topology t = gen_dragonfly(1, 1, 1, 1);
    auto order = rank_switches(t, 0);
    CHECK(order.size() == 1);
  }

  SECTION("rankings are deterministic") {
    Topology t = gen_fattree(4);
    CHECK(rank_switches(t, 0) == rank_switches(t, 0));
    CHECK(rank_switches_edge_inward(t) == rank_switches_edge_inward(t));
  }

  SECTION("edge-inward ranking keeps concentrators last") {
    Topology t = gen_fattree(4);
    auto order = rank_switches_edge_inward(t);
    REQUIRE(order.size() == 20);
    std::set<NodeId> tors;
    for (const Rack& r : racks(t)) tors.insert(r.tor);
    for (int i = 0; i < 8; i++) CHECK(tors.count(order[i]) == 1);
    for (int i = 8; i < 16; i++) CHECK((order[i] >= 24 && order[i] < 32));  // aggregation
    for (int i = 16; i < 20; i++) CHECK(order[i] >= 32);                    // core last
  }
}

TEST_CASE("analytical ps-side curve", "[planner]") {
  Topology t = gen_fattree(4);
  Architecture arch;
  arch.kind = ArchKind::PSINA;
  arch.ps_node = 0;
  arch.ps_colocated = true;
  SimConfig cfg;

  DeploymentPlan plan = incremental_curve(t, arch, tiny_model(), CurveMode::Analytical, cfg);
  REQUIRE(plan.curve.size() == 21);

  SECTION("endpoints") {
    CHECK(plan.curve.back().normalized == 1.0);
    CHECK(plan.curve.front().normalized ==
          Catch::Approx(plan.curve.front().throughput / plan.curve.back().throughput));
    // baseline: 15 workers incast into the PS link
    CHECK(plan.curve.front().throughput == Catch::Approx(100e9 / 15));
  }

  SECTION("monotone non-decreasing") {
    for (std::size_t i = 1; i < plan.curve.size(); i++)
      CHECK(plan.curve[i].throughput >= plan.curve[i - 1].throughput * (1 - 1e-12));
  }

  SECTION("80% replacement still loses nearly half the throughput") {
    CHECK(plan.curve[16].normalized <= 0.55);
  }
}

TEST_CASE("simulated rina curve over the fat-tree ToRs", "[planner]") {
  Topology t = gen_fattree(4);
  Architecture arch;
  arch.kind = ArchKind::RINA;
  arch.rina_min_rack = 2;
  SimConfig cfg;
  cfg.iterations = 3;
  cfg.warmup_iterations = 1;
  cfg.ina_rate_cap_bps = 1e15;
  cfg.step_overhead_s = 5e-5;  // the per-round overhead abstraction removes

  DeploymentPlan plan = incremental_curve(t, arch, tiny_model(), CurveMode::Simulated, cfg);
  REQUIRE(plan.curve.size() == 21);

  // every ToR replacement strictly helps; afterwards the curve stays flat
  for (int i = 1; i <= 8; i++)
    CHECK(plan.curve[i].throughput > plan.curve[i - 1].throughput);
  for (std::size_t i = 9; i < plan.curve.size(); i++)
    CHECK(plan.curve[i].throughput >= plan.curve[i - 1].throughput * (1 - 1e-12));
  CHECK(plan.curve.back().normalized == 1.0);
}

TEST_CASE("curve mode validation", "[planner]") {
  Topology t = gen_spine_leaf(1, 2, 4);
  Architecture rina;
  rina.kind = ArchKind::RINA;
  SimConfig cfg;
  CHECK_THROWS_AS(incremental_curve(t, rina, tiny_model(), CurveMode::Analytical, cfg),
                  std::invalid_argument);

  Architecture rar;
  rar.kind = ArchKind::RAR;
  CHECK_THROWS_AS(incremental_curve(t, rar, tiny_model(), CurveMode::Simulated, cfg),
                  std::invalid_argument);
}
