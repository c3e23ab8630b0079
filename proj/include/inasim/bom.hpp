#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "inasim/topology.hpp"

namespace inasim {

enum class AggNodeKind { Worker, RegularSwitch, InaSwitch };

/// PS-rooted aggregation tree: the union of every worker's single path to the
/// root. Carries per-edge bandwidth inherited from the topology (0 means
/// "use the homogeneous B0 passed at evaluation time").
struct AggTree {
  struct TreeNode {
    NodeId id = 0;
    AggNodeKind kind = AggNodeKind::Worker;
    int parent = -1;
    std::vector<int> children;
    double uplink_bps = 0.0;
    /// Original workers represented by this leaf after collapse_ina. Plain
    /// worker leaves represent themselves.
    std::vector<NodeId> represented;
  };

  std::vector<TreeNode> nodes;
  int root = -1;

  int index_of(NodeId id) const {
    for (std::size_t i = 0; i < nodes.size(); i++)
      if (nodes[i].id == id) return static_cast<int>(i);
    return -1;
  }

  std::size_t worker_count() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < nodes.size(); i++)
      if (static_cast<int>(i) != root && nodes[i].kind == AggNodeKind::Worker)
        c += std::max<std::size_t>(1, nodes[i].represented.size());
    return c;
  }
};

struct ThroughputReport {
  std::map<NodeId, double> per_worker_bps;
  double global_bps = 0.0;
  NodeId bottleneck = 0;  // tree node whose uplink is the binding constraint
};

/// Symbols of the dependency-chain time model: N workers, per-chunk fixed
/// overhead O_s, compute-scale constant k_s (per-step mean is k_s/N), and the
/// constant per-step standard deviation sigma_s.
struct DependencyChainParams {
  int workers = 1;          // N
  double overhead_s = 0.0;  // O_s
  double compute_scale_s = 0.0;  // k_s
  double sigma_s = 0.0;

  void validate() const {
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (overhead_s < 0 || compute_scale_s < 0 || sigma_s < 0)
      throw std::invalid_argument("dependency-chain parameters must be non-negative");
  }
};

/// Builds the aggregation tree from the union of worker->ps paths. Rejects
/// unions that are not a tree (multipath would violate the model's
/// single-path assumption).
inline AggTree build_agg_tree(const Topology& topo, NodeId ps,
                              const std::vector<NodeId>& workers) {
  if (workers.empty()) throw std::invalid_argument("build_agg_tree requires workers");
  for (NodeId w : workers) {
    if (w == ps) throw std::invalid_argument("ps cannot be a sender");
    if (!topo.is_host(w)) throw std::invalid_argument("workers must be hosts");
  }

  AggTree tree;
  std::map<NodeId, int> index;
  auto intern = [&](NodeId id) {
    auto it = index.find(id);
    if (it != index.end()) return it->second;
    AggTree::TreeNode n;
    n.id = id;
    n.kind = topo.is_host(id) ? AggNodeKind::Worker
             : topo.is_ina(id) ? AggNodeKind::InaSwitch
                               : AggNodeKind::RegularSwitch;
    tree.nodes.push_back(std::move(n));
    int idx = static_cast<int>(tree.nodes.size()) - 1;
    index[id] = idx;
    return idx;
  };

  tree.root = intern(ps);
  for (NodeId w : workers) {
    std::vector<DirectedLink> p = path(topo, w, ps);
    for (const DirectedLink& e : p) {
      int child = intern(e.from);
      int parent = intern(e.to);
      double bw = topo.link_bandwidth(e.from, e.to);
      if (tree.nodes[child].parent == -1) {
        tree.nodes[child].parent = parent;
        tree.nodes[child].uplink_bps = bw;
        tree.nodes[parent].children.push_back(child);
      } else if (tree.nodes[child].parent != parent) {
        throw std::invalid_argument("multipath detected at node " +
                                    std::to_string(e.from) +
                                    ": aggregation tree assumption violated");
      }
    }
  }
  for (std::size_t i = 0; i < tree.nodes.size(); i++) {
    if (static_cast<int>(i) == tree.root) continue;
    if (tree.nodes[i].kind == AggNodeKind::Worker && !tree.nodes[i].children.empty())
      throw std::invalid_argument("worker " + std::to_string(tree.nodes[i].id) +
                                  " is not a leaf of the aggregation tree");
  }
  return tree;
}

/// Replaces every maximal INA-rooted subtree (below the root) by a single
/// effective worker leaf that remembers the original workers it represents.
/// Idempotent: collapsed leaves are plain workers.
inline AggTree collapse_ina(const AggTree& tree) {
  AggTree out;
  if (tree.root < 0) return out;

  // Collect original workers under a subtree.
  auto collect = [&tree](int idx, auto&& self) -> std::vector<NodeId> {
    std::vector<NodeId> acc;
    const auto& n = tree.nodes[idx];
    if (n.kind == AggNodeKind::Worker) {
      if (n.represented.empty())
        acc.push_back(n.id);
      else
        acc.insert(acc.end(), n.represented.begin(), n.represented.end());
    }
    for (int c : n.children) {
      auto sub = self(c, self);
      acc.insert(acc.end(), sub.begin(), sub.end());
    }
    std::sort(acc.begin(), acc.end());
    return acc;
  };

  auto copy = [&](int idx, int parent_out, auto&& self) -> void {
    const auto& n = tree.nodes[idx];
    AggTree::TreeNode m;
    m.id = n.id;
    m.parent = parent_out;
    m.uplink_bps = n.uplink_bps;
    bool root_node = (idx == tree.root);
    if (!root_node && n.kind == AggNodeKind::InaSwitch) {
      m.kind = AggNodeKind::Worker;
      m.represented = collect(idx, collect);
      out.nodes.push_back(std::move(m));
      int me = static_cast<int>(out.nodes.size()) - 1;
      if (parent_out >= 0) out.nodes[parent_out].children.push_back(me);
      return;  // subtree swallowed
    }
    m.kind = n.kind;
    m.represented = n.represented;
    out.nodes.push_back(std::move(m));
    int me = static_cast<int>(out.nodes.size()) - 1;
    if (parent_out >= 0) out.nodes[parent_out].children.push_back(me);
    if (root_node) out.root = me;
    for (int c : n.children) self(c, me, self);
  };
  copy(tree.root, -1, copy);
  return out;
}

/// Recursive throughput evaluation. The number of distinct gradient streams
/// crossing a node's uplink is 1 for workers and INA switches (full
/// aggregation) and the sum over children for regular switches; equal sharing
/// gives each stream bandwidth/streams on that edge. A worker's rate is the
/// minimum share along its path to the root, and the global rate is the
/// minimum over workers. B0 substitutes for edges without an inherited
/// bandwidth and caps every rate.
inline ThroughputReport worker_throughput(const AggTree& tree, double b0) {
  if (tree.root < 0) throw std::invalid_argument("empty aggregation tree");
  if (b0 <= 0.0) throw std::invalid_argument("B0 must be positive");
  const std::size_t n = tree.nodes.size();

  std::vector<std::uint64_t> streams(n, 0);
  auto count = [&](int idx, auto&& self) -> std::uint64_t {
    const auto& node = tree.nodes[idx];
    std::uint64_t below = 0;
    for (int c : node.children) below += self(c, self);
    std::uint64_t s;
    if (node.kind == AggNodeKind::Worker || node.kind == AggNodeKind::InaSwitch)
      s = 1;  // full aggregation: one stream regardless of the subtree
    else
      s = below == 0 ? 1 : below;
    streams[idx] = s;
    return s;
  };
  for (int c : tree.nodes[tree.root].children) count(c, count);

  ThroughputReport rep;
  rep.global_bps = std::numeric_limits<double>::infinity();
  rep.bottleneck = tree.nodes[tree.root].id;

  auto walk = [&](int idx, double limit, NodeId limiter, auto&& self) -> void {
    const auto& node = tree.nodes[idx];
    double bw = node.uplink_bps > 0.0 ? node.uplink_bps : b0;
    double share = bw / static_cast<double>(streams[idx]);
    if (share < limit) {
      limit = share;
      limiter = node.id;
    }
    limit = std::min(limit, b0);
    if (node.kind == AggNodeKind::Worker) {
      std::vector<NodeId> ids = node.represented.empty()
                                    ? std::vector<NodeId>{node.id}
                                    : node.represented;
      for (NodeId w : ids) rep.per_worker_bps[w] = limit;
      if (limit < rep.global_bps) {
        rep.global_bps = limit;
        rep.bottleneck = limiter;
      }
      return;
    }
    for (int c : node.children) self(c, limit, limiter, self);
  };
  for (int c : tree.nodes[tree.root].children)
    walk(c, std::numeric_limits<double>::infinity(), tree.nodes[tree.root].id, walk);

  if (rep.per_worker_bps.empty()) {
    rep.global_bps = 0.0;
    rep.bottleneck = tree.nodes[tree.root].id;
  }
  return rep;
}

/// Share of a single node's uplink in isolation: bandwidth / streams. Exposes
/// the per-switch constraint the full evaluation takes the minimum over.
inline double uplink_share(const AggTree& tree, NodeId node, double b0) {
  int idx = tree.index_of(node);
  if (idx < 0 || idx == tree.root) throw std::invalid_argument("node has no uplink");
  // Recompute streams locally for the one subtree.
  auto count = [&tree](int i, auto&& self) -> std::uint64_t {
    const auto& nd = tree.nodes[i];
    if (nd.kind == AggNodeKind::Worker || nd.kind == AggNodeKind::InaSwitch) return 1;
    std::uint64_t s = 0;
    for (int c : nd.children) s += self(c, self);
    return s == 0 ? 1 : s;
  };
  double bw = tree.nodes[idx].uplink_bps > 0.0 ? tree.nodes[idx].uplink_bps : b0;
  return bw / static_cast<double>(count(idx, count));
}

/// E[max of n iid N(mu, sigma^2)] approximated as mu + sigma * sqrt(2 ln n).
inline double expected_max_normal(int n, double mu, double sigma) {
  if (n < 1) throw std::invalid_argument("expected_max_normal requires n >= 1");
  if (sigma < 0.0) throw std::invalid_argument("sigma must be non-negative");
  return mu + sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

/// Dependency-chain estimate of the ScatterReduce phase:
/// T = N*O_s + k_s + N*sigma_s*sqrt(2 ln N).
inline double rar_scatterreduce_time(const DependencyChainParams& p) {
  p.validate();
  double n = static_cast<double>(p.workers);
  return n * p.overhead_s + p.compute_scale_s +
         n * p.sigma_s * std::sqrt(2.0 * std::log(n));
}

}  // namespace inasim
