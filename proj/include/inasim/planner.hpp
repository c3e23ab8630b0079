#pragma once

#include <algorithm>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "inasim/bom.hpp"
#include "inasim/engine.hpp"
#include "inasim/topology.hpp"

namespace inasim {

struct DeploymentPlan {
  struct Point {
    int num_ina = 0;
    NodeId replaced = 0;  // switch replaced at this step; unused for the baseline
    double throughput = 0.0;
    double normalized = 0.0;
  };
  std::vector<NodeId> order;
  std::vector<Point> curve;  // order.size() + 1 points, baseline first
};

/// Deployment ranking: ToR switches by attached-worker count (descending,
/// ties by id), then the remaining switches by the number of workers
/// downstream of them in the shortest-path tree rooted at `root_worker`
/// (descending, ties by id).
inline std::vector<NodeId> rank_switches(const Topology& topo, NodeId root_worker) {
  if (!topo.is_host(root_worker))
    throw std::invalid_argument("rank_switches requires a host as root");
  std::vector<Rack> rk = racks(topo);
  std::vector<std::pair<std::size_t, NodeId>> tors;
  for (const Rack& r : rk) tors.emplace_back(r.workers.size(), r.tor);
  std::sort(tors.begin(), tors.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });

  std::vector<NodeId> out;
  std::map<NodeId, char> placed;
  for (const auto& [cnt, id] : tors) {
    out.push_back(id);
    placed[id] = 1;
  }

  std::map<NodeId, std::size_t> downstream;
  for (NodeId s : topo.switches())
    if (!placed.count(s)) downstream[s] = 0;
  for (NodeId h : topo.hosts()) {
    if (h == root_worker) continue;
    for (const DirectedLink& e : path(topo, h, root_worker)) {
      auto it = downstream.find(e.from);
      if (it != downstream.end()) it->second++;
    }
  }
  std::vector<std::pair<std::size_t, NodeId>> rest(downstream.size());
  std::size_t i = 0;
  for (const auto& [id, cnt] : downstream) rest[i++] = {cnt, id};
  std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (const auto& [cnt, id] : rest) out.push_back(id);
  return out;
}

/// PS-side deployment order: ToRs by attached-worker count first, then the
/// remaining switches from the worker side inward (ascending hop distance to
/// the nearest host, ties by id). Replacing from the edge inward reproduces
/// the poor incremental behavior of PS-side aggregation: the concentrating
/// switches near the sink stay regular until the very end.
inline std::vector<NodeId> rank_switches_edge_inward(const Topology& topo) {
  std::vector<Rack> rk = racks(topo);
  std::vector<std::pair<std::size_t, NodeId>> tors;
  for (const Rack& r : rk) tors.emplace_back(r.workers.size(), r.tor);
  std::sort(tors.begin(), tors.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });

  std::vector<NodeId> out;
  std::map<NodeId, char> placed;
  for (const auto& [cnt, id] : tors) {
    out.push_back(id);
    placed[id] = 1;
  }

  // BFS distance from the host layer
  std::vector<int> dist(topo.num_nodes(), -1);
  std::queue<NodeId> q;
  for (NodeId h : topo.hosts()) {
    dist[h] = 0;
    q.push(h);
  }
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    for (const auto& [v, li] : topo.adjacency(u)) {
      (void)li;
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  std::vector<std::pair<int, NodeId>> rest;
  for (NodeId s : topo.switches())
    if (!placed.count(s)) rest.emplace_back(dist[s], s);
  std::sort(rest.begin(), rest.end());
  for (const auto& [d, id] : rest) out.push_back(id);
  return out;
}

enum class CurveMode { Analytical, Simulated };

/// Incremental deployment sweep: mark the first i ranked switches as INA for
/// i = 0..num_switches, evaluate throughput (closed-form for PS-side
/// aggregation, engine run otherwise), and normalize against the all-INA
/// endpoint.
inline DeploymentPlan incremental_curve(const Topology& base, const Architecture& arch,
                                        const ModelSpec& model, CurveMode mode,
                                        const SimConfig& cfg) {
  if (arch.kind != ArchKind::PSINA && arch.kind != ArchKind::RINA)
    throw std::invalid_argument("incremental_curve applies to psina or rina");
  if (mode == CurveMode::Analytical && arch.kind != ArchKind::PSINA)
    throw std::invalid_argument(
        "analytical mode is PS-rooted; use simulated mode for rina");

  DeploymentPlan plan;
  if (arch.kind == ArchKind::PSINA) {
    plan.order = rank_switches_edge_inward(base);
  } else {
    std::vector<NodeId> hosts = base.hosts();
    if (hosts.empty()) throw std::invalid_argument("topology has no workers");
    plan.order = rank_switches(base, hosts.front());
  }

  auto evaluate = [&](const Topology& t) -> double {
    if (mode == CurveMode::Analytical) {
      std::vector<NodeId> workers = t.hosts();
      workers.erase(std::remove(workers.begin(), workers.end(), arch.ps_node), workers.end());
      AggTree tree = build_agg_tree(t, arch.ps_node, workers);
      double b0 = t.links().empty() ? 0.0 : t.links().front().bandwidth_bps;
      return worker_throughput(tree, b0).global_bps;
    }
    return run(t, arch, model, cfg).throughput_samples_per_s;
  };

  Topology t = base;
  for (NodeId s : t.switches()) t.set_switch_kind(s, SwitchKind::Regular);
  std::vector<double> values;
  values.push_back(evaluate(t));
  for (NodeId s : plan.order) {
    t.set_switch_kind(s, SwitchKind::Ina);
    values.push_back(evaluate(t));
  }

  const double endpoint = values.back();
  for (std::size_t i = 0; i < values.size(); i++) {
    DeploymentPlan::Point p;
    p.num_ina = static_cast<int>(i);
    p.replaced = i == 0 ? 0 : plan.order[i - 1];
    p.throughput = values[i];
    p.normalized = endpoint > 0.0 ? values[i] / endpoint : 0.0;
    plan.curve.push_back(p);
  }
  return plan;
}

}  // namespace inasim
