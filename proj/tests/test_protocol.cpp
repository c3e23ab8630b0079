#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>
#include <tuple>

#include "helpers.hpp"
#include "inasim/protocol.hpp"

using namespace inasim;

namespace {

ModelSpec small_model(std::uint64_t bytes = 1 << 20) {
  ModelSpec m;
  m.name = "toy";
  m.param_bytes = bytes;
  m.batch_size = 8;
  m.compute_mean_s = 0.01;
  m.compute_sigma_s = 0.0;
  return m;
}

std::map<NodeId, std::vector<std::int64_t>> random_payloads(
    const std::vector<NodeId>& workers, int units, std::mt19937_64& rng) {
  std::map<NodeId, std::vector<std::int64_t>> init;
  std::uniform_int_distribution<std::int64_t> val(-1000000, 1000000);
  for (NodeId w : workers) {
    std::vector<std::int64_t> v(units);
    for (auto& x : v) x = val(rng);
    init[w] = v;
  }
  return init;
}

bool flows_equal(const SyncSchedule& a, const SyncSchedule& b) {
  if (a.steps.size() != b.steps.size() || a.units != b.units) return false;
  for (std::size_t s = 0; s < a.steps.size(); s++) {
    const Step& x = a.steps[s];
    const Step& y = b.steps[s];
    if (x.flows.size() != y.flows.size() || x.phase != y.phase) return false;
    for (std::size_t i = 0; i < x.flows.size(); i++) {
      const FlowSpec& f = x.flows[i];
      const FlowSpec& g = y.flows[i];
      if (f.src != g.src || f.dst != g.dst || f.bytes != g.bytes ||
          f.unit_begin != g.unit_begin || f.path != g.path)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("chunk plan", "[protocol]") {
  CHECK(chunk_plan(100, 4) == std::vector<std::uint64_t>{25, 25, 25, 25});
  CHECK(chunk_plan(103, 4) == std::vector<std::uint64_t>{25, 25, 25, 28});
  auto two = chunk_plan(98ull << 20, 2);
  CHECK(two == std::vector<std::uint64_t>{49ull << 20, 49ull << 20});
  CHECK_THROWS_AS(chunk_plan(10, 0), std::invalid_argument);
}

TEST_CASE("group formation", "[protocol]") {
  Architecture arch;
  arch.kind = ArchKind::RINA;
  arch.rina_min_rack = 3;

  SECTION("no INA switches: everyone autonomous") {
    Topology t = gen_spine_leaf(1, 2, 4);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    CHECK(g.size() == 8);
    CHECK(g.all_autonomous());
  }

  SECTION("both ToRs INA: two abstracted groups") {
    Topology t = gen_spine_leaf(1, 2, 4);
    for (const Rack& r : racks(t)) t.set_switch_kind(r.tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.size() == 2);
    for (const Group& grp : g.groups) {
      CHECK(grp.abstracted);
      CHECK(grp.members.size() == 4);
      CHECK(grp.agent == grp.members.front());  // lowest id leads
    }
  }

  SECTION("one INA rack plus standalone workers: G = 5") {
    Topology t = gen_spine_leaf(1, 2, 4);
    t.set_switch_kind(racks(t)[0].tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    CHECK(g.size() == 5);
    int abstracted = 0;
    std::set<NodeId> covered;
    for (const Group& grp : g.groups) {
      if (grp.abstracted) abstracted++;
      for (NodeId w : grp.members) CHECK(covered.insert(w).second);
    }
    CHECK(abstracted == 1);
    CHECK(covered.size() == 8);  // groups partition the worker set
  }

  SECTION("threshold: racks of two need the permissive setting") {
    Topology t = gen_fattree(4);
    for (const Rack& r : racks(t)) t.set_switch_kind(r.tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping strict = form_groups(t, t.hosts(), arch, ring);
    CHECK(strict.all_autonomous());  // racks of 2 don't exceed two nodes
    Architecture relaxed = arch;
    relaxed.rina_min_rack = 2;
    Grouping g = form_groups(t, t.hosts(), relaxed, ring);
    CHECK(g.size() == 8);
    for (const Group& grp : g.groups) CHECK(grp.abstracted);
  }
}

TEST_CASE("ring all-reduce schedule", "[protocol]") {
  ModelSpec m = small_model();

  SECTION("step and flow counts") {
    Topology t = gen_spine_leaf(1, 1, 4);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    SyncSchedule s = schedule_rar(ring, m);
    CHECK(s.steps.size() == 6);  // 2(N-1)
    for (const Step& st : s.steps) CHECK(st.flows.size() == 4);
    CHECK(s.units == 4);
  }

  SECTION("minimal ring") {
    Topology t = gen_spine_leaf(1, 1, 2);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    SyncSchedule s = schedule_rar(ring, m);
    CHECK(s.steps.size() == 2);

    Topology t1 = gen_spine_leaf(1, 1, 1);
    CHECK_THROWS_AS(schedule_rar(ring_embedding(t1, t1.hosts()), m), std::invalid_argument);
  }

  SECTION("full reduction on every worker") {
    std::mt19937_64 rng(3);
    for (int spines : {1, 2}) {
      Topology t = gen_spine_leaf(spines, 2, 4);
      RingEmbedding ring = ring_embedding(t, t.hosts());
      SyncSchedule s = schedule_rar(ring, m);
      auto init = random_payloads(s.workers, s.units, rng);
      CHECK(reduction_is_exact(t, s, init));
    }
  }
}

TEST_CASE("parameter-server schedule", "[protocol]") {
  ModelSpec m = small_model();

  SECTION("regular switch: incast of one flow per worker") {
    Topology t = gen_spine_leaf(1, 1, 4);
    std::vector<NodeId> workers{1, 2, 3};  // host 0 serves as the PS
    SyncSchedule s = schedule_ps(t, workers, 0, m, false);
    REQUIRE(s.steps.size() == 2);
    CHECK(s.steps[0].flows.size() == 3);  // uplink: one per worker
    CHECK(s.steps[1].flows.size() == 3);  // downlink: unicast fan-out
    CHECK(s.steps[0].relays.empty());
  }

  SECTION("INA ToR collapses the incast to one outbound flow") {
    Topology t = gen_spine_leaf(1, 2, 4);
    t.set_switch_kind(racks(t)[0].tor, SwitchKind::Ina);
    NodeId ps = 4;  // second rack, so rack-0 traffic crosses its INA ToR
    std::vector<NodeId> workers{0, 1, 2, 3};
    SyncSchedule s = schedule_ps(t, workers, ps, m, true);
    const Step& up = s.steps[0];
    REQUIRE(up.relays.size() == 1);
    CHECK(up.relays[0].feeders.size() == 4);
    int into_ps = 0;
    for (const FlowSpec& f : up.flows)
      if (f.dst == ps) into_ps++;
    CHECK(into_ps == 1);  // a single aggregated stream
  }

  SECTION("per-link uplink stream counts match the collapsed tree") {
    testutil::MixedInaFixture f = testutil::make_mixed_ina_fixture();
    SyncSchedule s = schedule_ps(f.topo, f.workers(), f.ps, m, true);
    const Step& up = s.steps[0];
    auto flows_on = [&](NodeId a, NodeId b) {
      int n = 0;
      for (const FlowSpec& fl : up.flows)
        for (const DirectedLink& e : fl.path)
          if (e.from == a && e.to == b) n++;
      return n;
    };
    CHECK(flows_on(f.sw4, f.ps) == 2);   // effective workers above the INA
    CHECK(flows_on(f.sw2, f.sw3) == 4);  // leaf sub-tree streams
    CHECK(flows_on(f.sw3, f.sw4) == 1);  // aggregated output
  }

  SECTION("reduction correctness, plain and in-network") {
    std::mt19937_64 rng(4);
    for (bool ina : {false, true}) {
      testutil::MixedInaFixture f = testutil::make_mixed_ina_fixture();
      SyncSchedule s = schedule_ps(f.topo, f.workers(), f.ps, m, ina);
      auto init = random_payloads(s.workers, s.units, rng);
      CHECK(reduction_is_exact(f.topo, s, init));
    }
  }

  SECTION("with no INA switches the in-network variant degenerates to plain ps") {
    Topology t = gen_spine_leaf(1, 2, 4);
    std::vector<NodeId> workers{0, 1, 2, 3, 5, 6, 7};
    SyncSchedule plain = schedule_ps(t, workers, 4, m, false);
    SyncSchedule ina = schedule_ps(t, workers, 4, m, true);
    REQUIRE(ina.steps.size() == plain.steps.size());
    for (std::size_t si = 0; si < plain.steps.size(); si++) {
      CHECK(ina.steps[si].relays.empty());
      // same flows; the broadcast builder walks the tree, so order may differ
      auto key = [](const FlowSpec& f) {
        return std::tuple(f.src, f.dst, f.bytes, f.path);
      };
      std::vector<std::tuple<NodeId, NodeId, std::uint64_t, std::vector<DirectedLink>>> a, b;
      for (const FlowSpec& f : plain.steps[si].flows) a.push_back(key(f));
      for (const FlowSpec& f : ina.steps[si].flows) b.push_back(key(f));
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
  }

  SECTION("best-effort remainder bypasses the switches") {
    Topology t = gen_spine_leaf(1, 2, 4);
    t.set_switch_kind(racks(t)[0].tor, SwitchKind::Ina);
    ProtocolOptions opt;
    opt.psina_passthrough_fraction = 0.25;
    std::vector<NodeId> workers{0, 1, 2, 3};
    SyncSchedule s = schedule_ps(t, workers, 4, m, true, opt);
    const Step& up = s.steps[0];
    int bypass = 0;
    for (const FlowSpec& f : up.flows)
      if (f.dst == 4 && !f.carries_units()) {
        bypass++;
        CHECK(f.bytes == m.param_bytes / 4);  // the remainder of each gradient
      }
    CHECK(bypass == 4);  // one unaggregated remainder per worker
  }
}

TEST_CASE("hierarchical all-reduce schedule", "[protocol]") {
  ModelSpec m = small_model();

  SECTION("one rack degenerates to the plain ring") {
    Topology t = gen_spine_leaf(1, 1, 4);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    SyncSchedule har = schedule_har(t, ring, m);
    SyncSchedule rar = schedule_rar(ring, m);
    CHECK(har.arch == ArchKind::HAR);
    CHECK(flows_equal(har, rar));
  }

  SECTION("2 racks x 4 workers: 2(R-1) + 2(K-1) rounds") {
    Topology t = gen_spine_leaf(1, 2, 4);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    SyncSchedule s = schedule_har(t, ring, m);
    CHECK(s.steps.size() == 2 * (4 - 1) + 2 * (2 - 1));
    // inter-rack rounds: one ring per shard position, K flows each
    const Step& inter = s.steps[3];
    CHECK(inter.flows.size() == 4 * 2);
  }

  SECTION("uniform rack size required") {
    Topology t;
    NodeId a = t.add_host(), b = t.add_host(), c = t.add_host();
    NodeId s1 = t.add_switch(), s2 = t.add_switch();
    t.add_link(a, s1, 1e9);
    t.add_link(b, s1, 1e9);
    t.add_link(c, s2, 1e9);
    t.add_link(s1, s2, 1e9);
    RingEmbedding ring = ring_embedding(t, {a, b, c});
    CHECK_THROWS_AS(schedule_har(t, ring, m), std::invalid_argument);
  }

  SECTION("full reduction") {
    std::mt19937_64 rng(5);
    for (int hosts_per_leaf : {2, 4}) {
      Topology t = gen_spine_leaf(1, 2, hosts_per_leaf);
      RingEmbedding ring = ring_embedding(t, t.hosts());
      SyncSchedule s = schedule_har(t, ring, m);
      auto init = random_payloads(s.workers, s.units, rng);
      CHECK(reduction_is_exact(t, s, init));
    }
  }

  SECTION("single-worker racks: only the inter-rack rings remain") {
    Topology t = gen_spine_leaf(1, 3, 1);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    SyncSchedule s = schedule_har(t, ring, m);
    CHECK(s.steps.size() == 2 * (3 - 1));
    std::mt19937_64 rng(8);
    auto init = random_payloads(s.workers, s.units, rng);
    CHECK(reduction_is_exact(t, s, init));
  }
}

TEST_CASE("rina schedule", "[protocol]") {
  ModelSpec m = small_model();
  Architecture arch;
  arch.kind = ArchKind::RINA;
  arch.rina_min_rack = 2;

  SECTION("all-autonomous grouping produces exactly the ring schedule") {
    Topology t = gen_spine_leaf(1, 2, 4);  // no INA anywhere
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.all_autonomous());
    SyncSchedule rina = schedule_rina(t, g, ring, m);
    SyncSchedule rar = schedule_rar(ring, m);
    CHECK(flows_equal(rina, rar));
  }

  SECTION("two abstracted racks: dataflow of one round") {
    Topology t = gen_spine_leaf(1, 2, 4);
    for (const Rack& r : racks(t)) t.set_switch_kind(r.tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.size() == 2);
    SyncSchedule s = schedule_rina(t, g, ring, m);
    CHECK(s.steps.size() == 2 * (2 - 1));

    const Step& sr = s.steps[0];
    int pushes = 0, inter = 0;
    for (const FlowSpec& f : sr.flows) {
      if (f.role == FlowRole::GradientPush) pushes++;
      if (f.role == FlowRole::AggregatedChunk) inter++;
    }
    // each rack: 4 pushes for its outgoing chunk + 4 pushes into the
    // completing merge of the chunk it owns
    CHECK(pushes == 16);
    CHECK(inter == 2);  // exactly one chunk per group boundary
  }

  SECTION("round counts: 2(G-1)") {
    Topology t = gen_spine_leaf(1, 2, 4);
    t.set_switch_kind(racks(t)[0].tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.size() == 5);  // 1 abstracted + 4 autonomous
    SyncSchedule s = schedule_rina(t, g, ring, m);
    CHECK(s.steps.size() == 8);
    CHECK(s.units == 5);
  }

  SECTION("full reduction across group mixes") {
    std::mt19937_64 rng(6);
    for (int ina_tors : {1, 2}) {
      Topology t = gen_spine_leaf(1, 2, 4);
      auto rk = racks(t);
      for (int i = 0; i < ina_tors; i++) t.set_switch_kind(rk[i].tor, SwitchKind::Ina);
      RingEmbedding ring = ring_embedding(t, t.hosts());
      Grouping g = form_groups(t, t.hosts(), arch, ring);
      SyncSchedule s = schedule_rina(t, g, ring, m);
      auto init = random_payloads(s.workers, s.units, rng);
      CHECK(reduction_is_exact(t, s, init));
    }
    // mixed rack sizes with autonomous workers in between
    Topology t = gen_spine_leaf(2, 3, 3);
    auto rk = racks(t);
    t.set_switch_kind(rk[1].tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.size() == 7);  // 1 abstracted rack of 3, 6 autonomous
    SyncSchedule s = schedule_rina(t, g, ring, m);
    auto init = random_payloads(s.workers, s.units, rng);
    CHECK(reduction_is_exact(t, s, init));
  }

  SECTION("reduction holds on a meshy dragonfly with INA routers") {
    Topology t = gen_dragonfly(2, 3, 1, 2);
    auto rk = racks(t);
    t.set_switch_kind(rk[0].tor, SwitchKind::Ina);
    t.set_switch_kind(rk[3].tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.size() >= 2);
    SyncSchedule s = schedule_rina(t, g, ring, m);
    std::mt19937_64 rng(13);
    auto init = random_payloads(s.workers, s.units, rng);
    CHECK(reduction_is_exact(t, s, init));
  }

  SECTION("prologue spreads partition info to every group head") {
    Topology t = gen_spine_leaf(1, 2, 4);
    for (const Rack& r : racks(t)) t.set_switch_kind(r.tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    SyncSchedule s = schedule_rina(t, g, ring, m);
    REQUIRE(s.prologue.size() == 1);
    CHECK(s.prologue[0].flows.size() == g.groups.size() - 1);
    for (const FlowSpec& f : s.prologue[0].flows)
      CHECK(f.role == FlowRole::PartitionInfo);
  }

  SECTION("fewer than two groups is an error") {
    Topology t = gen_spine_leaf(1, 1, 4);
    t.set_switch_kind(racks(t)[0].tor, SwitchKind::Ina);
    RingEmbedding ring = ring_embedding(t, t.hosts());
    Grouping g = form_groups(t, t.hosts(), arch, ring);
    REQUIRE(g.size() == 1);
    CHECK_THROWS_AS(schedule_rina(t, g, ring, m), std::invalid_argument);
  }
}

TEST_CASE("failure handling", "[protocol]") {
  Architecture arch;
  arch.kind = ArchKind::RINA;
  arch.rina_min_rack = 3;

  Topology t = gen_spine_leaf(1, 2, 4);
  for (const Rack& r : racks(t)) t.set_switch_kind(r.tor, SwitchKind::Ina);
  RingEmbedding ring = ring_embedding(t, t.hosts());

  JobState state;
  state.workers = t.hosts();
  Grouping g = form_groups(t, state.workers, arch, ring, state.broken_tors);
  REQUIRE(g.size() == 2);

  SECTION("agent failure: rack survivors become autonomous, G grows by 2") {
    FailureEvent ev{FailureKind::AgentFail, g.groups[0].agent, 1.0};
    apply_failure(state, g, ev);
    Grouping after = form_groups(t, state.workers, arch,
                                 ring_embedding(t, state.workers), state.broken_tors);
    CHECK(after.size() == 4);  // 1 abstracted + 3 autonomous survivors
    CHECK(state.workers.size() == 7);
  }

  SECTION("rack worker failure: agent drops it from the fan-out") {
    NodeId member = g.groups[0].members[2];
    apply_failure(state, g, FailureEvent{FailureKind::WorkerFail, member, 1.0});
    Grouping after = form_groups(t, state.workers, arch,
                                 ring_embedding(t, state.workers), state.broken_tors);
    CHECK(after.size() == 2);
    const Group& shrunk =
        after.groups[0].tor == g.groups[0].tor ? after.groups[0] : after.groups[1];
    CHECK(shrunk.members.size() == 3);
  }

  SECTION("slowdown is a pure state change") {
    apply_failure(state, g, FailureEvent{FailureKind::Slowdown, 3, 1.0});
    CHECK(state.workers.size() == 8);
    CHECK(state.slowdown.at(3) == 1.0);
    apply_failure(state, g, FailureEvent{FailureKind::Slowdown, 3, 2.5});
    CHECK(state.slowdown.at(3) == 2.5);
  }

  SECTION("cannot fail the last worker") {
    Topology t1 = gen_spine_leaf(1, 1, 2);
    JobState s1;
    s1.workers = t1.hosts();
    Grouping none;
    apply_failure(s1, none, FailureEvent{FailureKind::WorkerFail, 0, 1.0});
    CHECK_THROWS_AS(apply_failure(s1, none, FailureEvent{FailureKind::WorkerFail, 1, 1.0}),
                    std::invalid_argument);
  }

  SECTION("agent-fail on a non-agent is rejected") {
    CHECK_THROWS_AS(
        apply_failure(state, g,
                      FailureEvent{FailureKind::AgentFail, g.groups[0].members[1], 1.0}),
        std::invalid_argument);
  }
}

TEST_CASE("reduction is exact for every architecture on random instances",
          "[protocol][property]") {
  std::mt19937_64 rng(77);
  ModelSpec m = small_model(999983);  // prime size: uneven chunking everywhere

  int done = 0;
  while (done < 30) {
    Topology t = testutil::random_tree_topology(rng, 5, 10);
    auto hosts = t.hosts();
    if (hosts.size() < 3) continue;
    for (NodeId s : t.switches())
      if (rng() % 2 == 0) t.set_switch_kind(s, SwitchKind::Ina);

    RingEmbedding ring = ring_embedding(t, hosts);

    // ps-style
    {
      NodeId ps = hosts[0];
      std::vector<NodeId> workers(hosts.begin() + 1, hosts.end());
      for (bool ina : {false, true}) {
        SyncSchedule s = schedule_ps(t, workers, ps, m, ina);
        auto wi = random_payloads(workers, 1, rng);
        CHECK(reduction_is_exact(t, s, wi));
      }
    }
    // ring
    {
      SyncSchedule s = schedule_rar(ring, m);
      auto wi = random_payloads(hosts, s.units, rng);
      CHECK(reduction_is_exact(t, s, wi));
    }
    // rina over whatever grouping emerges
    {
      Architecture arch;
      arch.kind = ArchKind::RINA;
      arch.rina_min_rack = 2;
      Grouping g = form_groups(t, hosts, arch, ring);
      if (g.size() >= 2) {
        SyncSchedule s = schedule_rina(t, g, ring, m);
        auto wi = random_payloads(hosts, s.units, rng);
        CHECK(reduction_is_exact(t, s, wi));
      }
    }
    done++;
  }
}
