#pragma once

#include <map>
#include <random>
#include <set>
#include <vector>

#include "inasim/topology.hpp"

namespace testutil {

using namespace inasim;

/// Random connected topology: a random switch tree with a few extra
/// switch-switch links, hosts attached to random switches.
inline Topology random_topology(std::mt19937_64& rng, int max_switches = 8,
                                int max_hosts = 12, double bandwidth = 100e9) {
  std::uniform_int_distribution<int> sw_count(1, max_switches);
  std::uniform_int_distribution<int> host_count(1, max_hosts);
  int ns = sw_count(rng);
  int nh = host_count(rng);

  Topology t;
  std::vector<NodeId> hosts, switches;
  for (int i = 0; i < nh; i++) hosts.push_back(t.add_host());
  for (int i = 0; i < ns; i++) switches.push_back(t.add_switch());

  for (int i = 1; i < ns; i++) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    t.add_link(switches[i], switches[pick(rng)], bandwidth);
  }
  // a few extra links to create alternative routes
  if (ns > 2) {
    std::uniform_int_distribution<int> extra(0, ns - 1);
    int tries = static_cast<int>(rng() % 3);
    for (int e = 0; e < tries; e++) {
      NodeId a = switches[extra(rng)], b = switches[extra(rng)];
      if (a != b && !t.link_index(a, b)) t.add_link(a, b, bandwidth);
    }
  }
  std::uniform_int_distribution<int> attach(0, ns - 1);
  for (NodeId h : hosts) t.add_link(h, switches[attach(rng)], bandwidth);
  t.validate();
  return t;
}

/// Random tree-only topology (single path guaranteed).
inline Topology random_tree_topology(std::mt19937_64& rng, int max_switches = 6,
                                     int max_hosts = 12, double bandwidth = 100e9) {
  std::uniform_int_distribution<int> sw_count(1, max_switches);
  std::uniform_int_distribution<int> host_count(2, max_hosts);
  int ns = sw_count(rng);
  int nh = host_count(rng);

  Topology t;
  std::vector<NodeId> hosts, switches;
  for (int i = 0; i < nh; i++) hosts.push_back(t.add_host());
  for (int i = 0; i < ns; i++) switches.push_back(t.add_switch());
  for (int i = 1; i < ns; i++) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    t.add_link(switches[i], switches[pick(rng)], bandwidth);
  }
  std::uniform_int_distribution<int> attach(0, ns - 1);
  for (NodeId h : hosts) t.add_link(h, switches[attach(rng)], bandwidth);
  t.validate();
  return t;
}

/// Mixed regular/INA reference fixture: two leaf switches carrying four
/// workers feed an INA switch that also serves two direct workers; a regular
/// switch above it serves one more worker and the PS.
///
///   ps, w3 - sw4 - sw3(INA) - {w1, w2, sw2}
///                  sw2 - {t3, t4, sw1}
///                  sw1 - {t1, t2}
struct MixedInaFixture {
  Topology topo;
  NodeId ps, w1, w2, w3, t1, t2, t3, t4, sw1, sw2, sw3, sw4;
  std::vector<NodeId> workers() const { return {w1, w2, w3, t1, t2, t3, t4}; }
};

inline MixedInaFixture make_mixed_ina_fixture(double b0 = 100e9) {
  MixedInaFixture f;
  Topology& t = f.topo;
  f.ps = t.add_host();
  f.w1 = t.add_host();
  f.w2 = t.add_host();
  f.w3 = t.add_host();
  f.t1 = t.add_host();
  f.t2 = t.add_host();
  f.t3 = t.add_host();
  f.t4 = t.add_host();
  f.sw1 = t.add_switch();
  f.sw2 = t.add_switch();
  f.sw3 = t.add_switch(SwitchKind::Ina);
  f.sw4 = t.add_switch();
  t.add_link(f.t1, f.sw1, b0);
  t.add_link(f.t2, f.sw1, b0);
  t.add_link(f.t3, f.sw2, b0);
  t.add_link(f.t4, f.sw2, b0);
  t.add_link(f.sw1, f.sw2, b0);
  t.add_link(f.sw2, f.sw3, b0);
  t.add_link(f.w1, f.sw3, b0);
  t.add_link(f.w2, f.sw3, b0);
  t.add_link(f.sw3, f.sw4, b0);
  t.add_link(f.w3, f.sw4, b0);
  t.add_link(f.ps, f.sw4, b0);
  t.validate();
  return f;
}

/// True when every hop path connects consecutive ring positions and no
/// directed link is used twice across the whole embedding.
inline bool embedding_is_edge_disjoint(const RingEmbedding& ring) {
  std::set<std::pair<NodeId, NodeId>> used;
  const std::size_t n = ring.order.size();
  for (std::size_t i = 0; i < n; i++) {
    const auto& hop = ring.hop_paths[i];
    if (hop.empty()) return false;
    if (hop.front().from != ring.order[i]) return false;
    if (hop.back().to != ring.order[(i + 1) % n]) return false;
    for (std::size_t k = 0; k + 1 < hop.size(); k++)
      if (hop[k].to != hop[k + 1].from) return false;
    for (const DirectedLink& e : hop)
      if (!used.insert({e.from, e.to}).second) return false;
  }
  return true;
}

}  // namespace testutil
