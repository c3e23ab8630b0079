#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace inasim {

using NodeId = std::uint32_t;

inline constexpr double kDefaultBandwidthBps = 100e9;  // 100 Gbps links

enum class NodeKind { Host, Switch };
enum class SwitchKind { Regular, Ina };

struct Node {
  NodeId id = 0;
  NodeKind kind = NodeKind::Host;
  SwitchKind switch_kind = SwitchKind::Regular;  // switches only
};

struct Link {
  NodeId a = 0;
  NodeId b = 0;
  double bandwidth_bps = 0.0;
};

/// One direction of a full-duplex link; each direction independently has the
/// full link bandwidth.
struct DirectedLink {
  NodeId from = 0;
  NodeId to = 0;
  friend bool operator==(const DirectedLink&, const DirectedLink&) = default;
  friend bool operator<(const DirectedLink& x, const DirectedLink& y) {
    return x.from != y.from ? x.from < y.from : x.to < y.to;
  }
};

/// Undirected graph of hosts and switches. Node ids are dense (0..n-1) and
/// double as indices. Immutable once built; sharing across threads is safe.
class Topology {
 public:
  NodeId add_host() {
    NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(Node{id, NodeKind::Host, SwitchKind::Regular});
    adj_.emplace_back();
    return id;
  }

  NodeId add_switch(SwitchKind sk = SwitchKind::Regular) {
    NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(Node{id, NodeKind::Switch, sk});
    adj_.emplace_back();
    return id;
  }

  void add_link(NodeId a, NodeId b, double bandwidth_bps) {
    if (a == b) throw std::invalid_argument("link endpoints must differ");
    check_node(a);
    check_node(b);
    if (bandwidth_bps <= 0.0) throw std::invalid_argument("bandwidth must be positive");
    if (link_index(a, b)) throw std::invalid_argument("duplicate link");
    std::size_t li = links_.size();
    links_.push_back(Link{std::min(a, b), std::max(a, b), bandwidth_bps});
    insert_adj(a, b, li);
    insert_adj(b, a, li);
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_links() const { return links_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }

  const Node& node(NodeId id) const {
    check_node(id);
    return nodes_[id];
  }

  bool is_host(NodeId id) const { return node(id).kind == NodeKind::Host; }
  bool is_switch(NodeId id) const { return node(id).kind == NodeKind::Switch; }
  bool is_ina(NodeId id) const {
    const Node& n = node(id);
    return n.kind == NodeKind::Switch && n.switch_kind == SwitchKind::Ina;
  }

  void set_switch_kind(NodeId id, SwitchKind sk) {
    check_node(id);
    if (nodes_[id].kind != NodeKind::Switch)
      throw std::invalid_argument("switch_kind applies to switches only");
    nodes_[id].switch_kind = sk;
  }

  /// Adjacency as (neighbor, link index), sorted by neighbor id.
  const std::vector<std::pair<NodeId, std::size_t>>& adjacency(NodeId id) const {
    check_node(id);
    return adj_[id];
  }

  std::optional<std::size_t> link_index(NodeId a, NodeId b) const {
    check_node(a);
    check_node(b);
    for (const auto& [v, li] : adj_[a])
      if (v == b) return li;
    return std::nullopt;
  }

  double link_bandwidth(NodeId a, NodeId b) const {
    auto li = link_index(a, b);
    if (!li) throw std::invalid_argument("no such link");
    return links_[*li].bandwidth_bps;
  }

  std::vector<NodeId> hosts() const {
    std::vector<NodeId> out;
    for (const Node& n : nodes_)
      if (n.kind == NodeKind::Host) out.push_back(n.id);
    return out;
  }

  std::vector<NodeId> switches() const {
    std::vector<NodeId> out;
    for (const Node& n : nodes_)
      if (n.kind == NodeKind::Switch) out.push_back(n.id);
    return out;
  }

  std::size_t num_ina_switches() const {
    std::size_t c = 0;
    for (const Node& n : nodes_)
      if (n.kind == NodeKind::Switch && n.switch_kind == SwitchKind::Ina) c++;
    return c;
  }

  bool connected() const {
    if (nodes_.empty()) return true;
    std::vector<char> seen(nodes_.size(), 0);
    std::queue<NodeId> q;
    q.push(0);
    seen[0] = 1;
    std::size_t cnt = 1;
    while (!q.empty()) {
      NodeId u = q.front();
      q.pop();
      for (const auto& [v, li] : adj_[u]) {
        (void)li;
        if (!seen[v]) {
          seen[v] = 1;
          cnt++;
          q.push(v);
        }
      }
    }
    return cnt == nodes_.size();
  }

  /// Throws if a structural invariant is violated: connectivity, single-homed
  /// hosts, positive bandwidths.
  void validate() const {
    if (!connected()) throw std::invalid_argument("topology must be connected");
    for (const Node& n : nodes_) {
      if (n.kind == NodeKind::Host && adj_[n.id].size() != 1)
        throw std::invalid_argument("host " + std::to_string(n.id) +
                                    " must have exactly one link");
    }
    for (const Link& l : links_)
      if (l.bandwidth_bps <= 0.0) throw std::invalid_argument("bandwidth must be positive");
  }

 private:
  void check_node(NodeId id) const {
    if (id >= nodes_.size()) throw std::invalid_argument("unknown node id " + std::to_string(id));
  }

  void insert_adj(NodeId u, NodeId v, std::size_t li) {
    auto& vec = adj_[u];
    auto it = std::lower_bound(vec.begin(), vec.end(), v,
                               [](const auto& p, NodeId x) { return p.first < x; });
    vec.insert(it, {v, li});
  }

  std::vector<Node> nodes_;
  std::vector<Link> links_;
  std::vector<std::vector<std::pair<NodeId, std::size_t>>> adj_;
};

struct Rack {
  NodeId tor = 0;
  std::vector<NodeId> workers;  // hosts attached to tor, ascending
};

/// Cyclic worker order plus, per consecutive pair, the directed link sequence
/// connecting them. Hop paths partition the directed edges of the doubled
/// graph, so their union uses each directed link exactly once.
struct RingEmbedding {
  std::vector<NodeId> order;
  std::vector<std::vector<DirectedLink>> hop_paths;  // hop_paths[i]: order[i] -> order[(i+1)%n]
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Standard k-ary fat-tree: k pods of k/2 edge and k/2 aggregation switches,
/// (k/2)^2 cores, k^3/4 hosts. Ids: hosts, then edge, aggregation, core.
inline Topology gen_fattree(int k, double bandwidth_bps = kDefaultBandwidthBps) {
  if (k < 2 || k % 2 != 0) throw std::invalid_argument("fat-tree requires even k >= 2");
  const int half = k / 2;
  const int num_hosts = k * k * k / 4;
  Topology t;
  for (int i = 0; i < num_hosts; i++) t.add_host();
  std::vector<NodeId> edge(static_cast<std::size_t>(k) * half);
  std::vector<NodeId> agg(static_cast<std::size_t>(k) * half);
  std::vector<NodeId> core(static_cast<std::size_t>(half) * half);
  for (auto& id : edge) id = t.add_switch();
  for (auto& id : agg) id = t.add_switch();
  for (auto& id : core) id = t.add_switch();

  for (int p = 0; p < k; p++) {
    for (int e = 0; e < half; e++) {
      NodeId esw = edge[p * half + e];
      for (int s = 0; s < half; s++) {
        NodeId h = static_cast<NodeId>(p * half * half + e * half + s);
        t.add_link(h, esw, bandwidth_bps);
      }
      for (int a = 0; a < half; a++) t.add_link(esw, agg[p * half + a], bandwidth_bps);
    }
    for (int a = 0; a < half; a++) {
      NodeId asw = agg[p * half + a];
      for (int j = 0; j < half; j++) t.add_link(asw, core[a * half + j], bandwidth_bps);
    }
  }
  t.validate();
  return t;
}

/// Standard dragonfly: g groups of a routers (full intra-group mesh), p hosts
/// per router, one global link per group pair assigned to router channels in
/// order (router r owns channels r*h .. r*h+h-1). Requires a*h >= g-1.
inline Topology gen_dragonfly(int a, int g, int h, int p,
                              double bandwidth_bps = kDefaultBandwidthBps) {
  if (a < 1 || g < 1 || h < 1 || p < 1)
    throw std::invalid_argument("dragonfly parameters must be >= 1");
  if (static_cast<long long>(a) * h < g - 1)
    throw std::invalid_argument("dragonfly infeasible: a*h must be >= g-1");
  Topology t;
  const int num_hosts = a * g * p;
  for (int i = 0; i < num_hosts; i++) t.add_host();
  std::vector<NodeId> router(static_cast<std::size_t>(a) * g);
  for (auto& id : router) id = t.add_switch();

  for (int grp = 0; grp < g; grp++) {
    for (int r = 0; r < a; r++) {
      NodeId rt = router[grp * a + r];
      for (int i = 0; i < p; i++)
        t.add_link(static_cast<NodeId>(grp * a * p + r * p + i), rt, bandwidth_bps);
      for (int r2 = r + 1; r2 < a; r2++) t.add_link(rt, router[grp * a + r2], bandwidth_bps);
    }
    // global channels: channel c of group grp reaches group (grp + c + 1) % g
    for (int c = 0; c < g - 1; c++) {
      int peer = (grp + c + 1) % g;
      if (peer <= grp) continue;  // materialize each pair once
      int r = c / h;
      int peer_c = (grp - peer - 1 + 2 * g) % g;
      int peer_r = peer_c / h;
      t.add_link(router[grp * a + r], router[peer * a + peer_r], bandwidth_bps);
    }
  }
  t.validate();
  return t;
}

/// Two-tier spine-leaf: every leaf connects to every spine; hosts attach to
/// leaves. Ids: hosts, then leaves, then spines.
inline Topology gen_spine_leaf(int spines, int leaves, int hosts_per_leaf,
                               double bandwidth_bps = kDefaultBandwidthBps) {
  if (spines < 1 || leaves < 1 || hosts_per_leaf < 1)
    throw std::invalid_argument("spine-leaf parameters must be >= 1");
  Topology t;
  const int num_hosts = leaves * hosts_per_leaf;
  for (int i = 0; i < num_hosts; i++) t.add_host();
  std::vector<NodeId> leaf(leaves), spine(spines);
  for (auto& id : leaf) id = t.add_switch();
  for (auto& id : spine) id = t.add_switch();
  for (int l = 0; l < leaves; l++) {
    for (int i = 0; i < hosts_per_leaf; i++)
      t.add_link(static_cast<NodeId>(l * hosts_per_leaf + i), leaf[l], bandwidth_bps);
    for (int s = 0; s < spines; s++) t.add_link(leaf[l], spine[s], bandwidth_bps);
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// One Rack per switch with at least one directly attached host, ordered by
/// ToR id. Workers are the attached hosts, ascending.
inline std::vector<Rack> racks(const Topology& t) {
  std::vector<Rack> out;
  for (const Node& n : t.nodes()) {
    if (n.kind != NodeKind::Switch) continue;
    Rack r{n.id, {}};
    for (const auto& [v, li] : t.adjacency(n.id)) {
      (void)li;
      if (t.is_host(v)) r.workers.push_back(v);
    }
    if (!r.workers.empty()) out.push_back(std::move(r));
  }
  return out;
}

namespace detail {

/// Lexicographically smallest shortest node sequence from src to dst:
/// BFS distances from dst, then a greedy walk picking the lowest-id neighbor
/// that decreases the distance.
inline std::vector<NodeId> lex_shortest_nodes(const Topology& t, NodeId src, NodeId dst) {
  constexpr std::uint32_t kUnreached = 0xffffffffu;
  std::vector<std::uint32_t> dist(t.num_nodes(), kUnreached);
  std::queue<NodeId> q;
  dist[dst] = 0;
  q.push(dst);
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    for (const auto& [v, li] : t.adjacency(u)) {
      (void)li;
      if (dist[v] == kUnreached) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  if (dist[src] == kUnreached)
    throw std::runtime_error("path: nodes " + std::to_string(src) + " and " +
                             std::to_string(dst) + " are not connected");
  std::vector<NodeId> out{src};
  NodeId cur = src;
  while (cur != dst) {
    NodeId next = cur;
    for (const auto& [v, li] : t.adjacency(cur)) {
      (void)li;
      if (dist[v] + 1 == dist[cur]) {
        next = v;
        break;  // adjacency is ascending, first hit is the lowest id
      }
    }
    cur = next;
    out.push_back(cur);
  }
  return out;
}

inline std::vector<DirectedLink> nodes_to_links(const std::vector<NodeId>& nodes) {
  std::vector<DirectedLink> out;
  out.reserve(nodes.size() - 1);
  for (std::size_t i = 0; i + 1 < nodes.size(); i++)
    out.push_back(DirectedLink{nodes[i], nodes[i + 1]});
  return out;
}

}  // namespace detail

/// Deterministic single path between two nodes: shortest, ties broken by the
/// lexicographically smallest node sequence seen from the lower-id endpoint.
/// The tie-break is symmetric: path(a,b) reversed equals path(b,a).
inline std::vector<DirectedLink> path(const Topology& t, NodeId src, NodeId dst) {
  if (src == dst) throw std::invalid_argument("path requires src != dst");
  if (src < dst) return detail::nodes_to_links(detail::lex_shortest_nodes(t, src, dst));
  std::vector<NodeId> nodes = detail::lex_shortest_nodes(t, dst, src);
  std::reverse(nodes.begin(), nodes.end());
  return detail::nodes_to_links(nodes);
}

/// Bottleneck-free ring embedding. Doubles every undirected link into two
/// directed edges (in-degree equals out-degree everywhere, so an Eulerian
/// circuit exists), walks the circuit with Hierholzer's algorithm starting at
/// the lowest-id worker and always taking the lowest-id unused out-edge,
/// orders workers by first appearance along the circuit, and cuts the circuit
/// into hop paths at those first appearances.
inline RingEmbedding ring_embedding(const Topology& t, const std::vector<NodeId>& workers) {
  if (workers.empty()) throw std::invalid_argument("ring_embedding requires workers");
  for (NodeId w : workers)
    if (!t.is_host(w))
      throw std::invalid_argument("ring_embedding workers must be hosts");
  {
    std::vector<NodeId> sorted = workers;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("ring_embedding workers must be distinct");
  }
  if (!t.connected()) throw std::invalid_argument("ring_embedding requires a connected topology");

  const NodeId start = *std::min_element(workers.begin(), workers.end());

  // out[u] is ascending by construction (adjacency is sorted).
  std::vector<std::vector<NodeId>> out(t.num_nodes());
  for (NodeId u = 0; u < t.num_nodes(); u++)
    for (const auto& [v, li] : t.adjacency(u)) {
      (void)li;
      out[u].push_back(v);
    }
  std::vector<std::size_t> cursor(t.num_nodes(), 0);

  std::vector<NodeId> stack{start};
  std::vector<NodeId> circuit;
  circuit.reserve(2 * t.num_links() + 1);
  while (!stack.empty()) {
    NodeId u = stack.back();
    if (cursor[u] < out[u].size()) {
      stack.push_back(out[u][cursor[u]++]);
    } else {
      circuit.push_back(u);
      stack.pop_back();
    }
  }
  std::reverse(circuit.begin(), circuit.end());
  if (circuit.size() != 2 * t.num_links() + 1)
    throw std::runtime_error("Euler circuit did not cover all directed edges");

  // First appearance of each worker along the circuit.
  std::vector<char> is_worker(t.num_nodes(), 0);
  for (NodeId w : workers) is_worker[w] = 1;
  std::vector<std::pair<std::size_t, NodeId>> first_pos;
  {
    std::vector<char> seen(t.num_nodes(), 0);
    for (std::size_t i = 0; i < circuit.size(); i++) {
      NodeId u = circuit[i];
      if (is_worker[u] && !seen[u]) {
        seen[u] = 1;
        first_pos.emplace_back(i, u);
      }
    }
  }
  if (first_pos.size() != workers.size())
    throw std::runtime_error("Euler circuit missed a worker");

  RingEmbedding ring;
  for (const auto& [pos, w] : first_pos) ring.order.push_back(w);
  for (std::size_t i = 0; i < first_pos.size(); i++) {
    std::size_t from = first_pos[i].first;
    std::size_t to = (i + 1 < first_pos.size()) ? first_pos[i + 1].first : circuit.size() - 1;
    std::vector<DirectedLink> hop;
    hop.reserve(to - from);
    for (std::size_t p = from; p < to; p++)
      hop.push_back(DirectedLink{circuit[p], circuit[p + 1]});
    ring.hop_paths.push_back(std::move(hop));
  }
  return ring;
}

}  // namespace inasim
