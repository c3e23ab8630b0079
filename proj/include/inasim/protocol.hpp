#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "inasim/topology.hpp"
#include "inasim/workload.hpp"

namespace inasim {

enum class ArchKind { PS, RAR, HAR, PSINA, RINA };

inline const char* arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::PS: return "ps";
    case ArchKind::RAR: return "rar";
    case ArchKind::HAR: return "har";
    case ArchKind::PSINA: return "psina";
    case ArchKind::RINA: return "rina";
  }
  return "?";
}

inline ArchKind arch_from_name(const std::string& s) {
  if (s == "ps") return ArchKind::PS;
  if (s == "rar") return ArchKind::RAR;
  if (s == "har") return ArchKind::HAR;
  if (s == "psina") return ArchKind::PSINA;
  if (s == "rina") return ArchKind::RINA;
  throw std::invalid_argument("unknown architecture: " + s);
}

struct Architecture {
  ArchKind kind = ArchKind::RAR;
  NodeId ps_node = 0;       // PS / PSINA
  bool ps_colocated = false;
  /// A rack becomes an abstracted group when its INA ToR has at least this
  /// many workers. 3 matches the "more than two nodes" deployment rule; 2 is
  /// the permissive setting used on small racks.
  int rina_min_rack = 3;
};

struct Group {
  bool abstracted = false;
  NodeId tor = 0;                // abstracted only
  NodeId agent = 0;              // abstracted: lowest-id member; autonomous: the worker
  std::vector<NodeId> members;   // ascending; autonomous: {agent}
};

struct Grouping {
  std::vector<Group> groups;
  int size() const { return static_cast<int>(groups.size()); }
  bool all_autonomous() const {
    for (const Group& g : groups)
      if (g.abstracted) return false;
    return true;
  }
};

/// Floor-even split with the remainder on the last chunk.
inline std::vector<std::uint64_t> chunk_plan(std::uint64_t param_bytes, int units) {
  if (units < 1) throw std::invalid_argument("chunk_plan requires units >= 1");
  std::vector<std::uint64_t> sizes(units, param_bytes / units);
  sizes.back() += param_bytes - (param_bytes / units) * units;
  return sizes;
}

enum class Phase { ScatterReduce, AllGather, PsUp, PsDown, Control };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::ScatterReduce: return "scatter_reduce";
    case Phase::AllGather: return "all_gather";
    case Phase::PsUp: return "ps_up";
    case Phase::PsDown: return "ps_down";
    case Phase::Control: return "control";
  }
  return "?";
}

enum class FlowRole {
  RingGradient,     // ScatterReduce hop, receiver accumulates
  RingReduced,      // AllGather hop, receiver stores
  TaskInfo,         // agent -> ToR aggregation task metadata
  PullRequest,      // ToR -> rack worker pull trigger
  GradientPush,     // rack worker -> ToR chunk payload
  AggregatedChunk,  // ToR aggregate -> next group
  MulticastCopy,    // switch replication toward rack workers
  PsGradient,       // worker/INA -> PS uplink payload
  PsModel,          // PS -> workers model broadcast
  PartitionInfo,    // one-time job setup message
};

inline const char* role_name(FlowRole r) {
  switch (r) {
    case FlowRole::RingGradient: return "ring_gradient";
    case FlowRole::RingReduced: return "ring_reduced";
    case FlowRole::TaskInfo: return "task_info";
    case FlowRole::PullRequest: return "pull_request";
    case FlowRole::GradientPush: return "gradient_push";
    case FlowRole::AggregatedChunk: return "aggregated_chunk";
    case FlowRole::MulticastCopy: return "multicast_copy";
    case FlowRole::PsGradient: return "ps_gradient";
    case FlowRole::PsModel: return "ps_model";
    case FlowRole::PartitionInfo: return "partition_info";
  }
  return "?";
}

enum class Delivery { None, Accumulate, Store };

/// A unidirectional byte transfer with a fixed path. `unit_begin/unit_end`
/// give the gradient slice it carries ([0,0) for control traffic). `after`
/// lists same-step flows that must complete before this one may start.
struct FlowSpec {
  int id = -1;
  NodeId src = 0;
  NodeId dst = 0;
  std::vector<DirectedLink> path;
  std::uint64_t bytes = 0;
  int unit_begin = 0;
  int unit_end = 0;
  FlowRole role = FlowRole::RingGradient;
  Phase phase = Phase::ScatterReduce;
  Delivery delivery = Delivery::None;
  std::vector<int> after;
  int relay = -1;             // relay this flow is an OUTPUT of; feeders are listed in RelaySpec
  bool relay_output = false;

  bool carries_units() const { return unit_end > unit_begin; }
};

/// In-switch coupling of flows: `aggregate` sums the feeders into each output
/// (INA aggregation), otherwise each output replicates the single feeder
/// (switch multicast). Outputs stream concurrently with feeders; the engine
/// caps an output's rate by the slowest live feeder.
struct RelaySpec {
  NodeId sw = 0;
  bool aggregate = true;
  std::vector<int> feeders;
  std::vector<int> outputs;
  bool store_at_switch = true;
};

struct Step {
  int round = 0;
  Phase phase = Phase::ScatterReduce;
  bool barrier = true;  // BSP: every round ends in a global barrier
  /// Charge each host sending payload this step O_s + N(k_s*frac, sigma_s)
  /// before its flows may start (frac = flow bytes / model bytes).
  bool sr_processing = false;
  /// Extra O_s + max-over-workers compute charge after the barrier; models
  /// the final local merge closing a ScatterReduce phase.
  bool trailing_processing = false;
  double trailing_frac = 0.0;
  std::vector<FlowSpec> flows;
  std::vector<RelaySpec> relays;
};

struct SyncSchedule {
  ArchKind arch = ArchKind::RAR;
  int units = 1;
  std::vector<std::uint64_t> unit_bytes;
  std::vector<NodeId> workers;
  std::vector<Step> prologue;  // once per job
  std::vector<Step> steps;     // per iteration

  std::uint64_t bytes_of_range(int begin, int end) const {
    std::uint64_t b = 0;
    for (int u = begin; u < end; u++) b += unit_bytes[u];
    return b;
  }
  int barrier_rounds() const { return static_cast<int>(steps.size()); }
};

struct ProtocolOptions {
  std::uint64_t control_bytes = 256;
  double psina_passthrough_fraction = 0.0;  // share of bytes bypassing switch aggregation
};

// ---------------------------------------------------------------------------
// Grouping
// ---------------------------------------------------------------------------

/// Rina grouping: racks whose INA ToR holds enough job workers become
/// abstracted groups led by their lowest-id worker; everything else runs
/// autonomous. Group order follows the ring embedding of the group heads.
/// Non-RINA architectures yield the trivial all-autonomous grouping.
inline Grouping form_groups(const Topology& topo, const std::vector<NodeId>& workers,
                            const Architecture& arch, const RingEmbedding& ring,
                            const std::set<NodeId>& broken_tors = {}) {
  std::map<NodeId, std::size_t> pos;
  for (std::size_t i = 0; i < ring.order.size(); i++) pos[ring.order[i]] = i;
  for (NodeId w : workers)
    if (!pos.count(w))
      throw std::invalid_argument("worker " + std::to_string(w) + " missing from ring");

  std::set<NodeId> pool(workers.begin(), workers.end());
  std::vector<Group> groups;
  if (arch.kind == ArchKind::RINA) {
    int min_rack = std::max(2, arch.rina_min_rack);
    for (const Rack& r : racks(topo)) {
      if (!topo.is_ina(r.tor) || broken_tors.count(r.tor)) continue;
      std::vector<NodeId> members;
      for (NodeId w : r.workers)
        if (pool.count(w)) members.push_back(w);
      if (static_cast<int>(members.size()) < min_rack) continue;
      Group g;
      g.abstracted = true;
      g.tor = r.tor;
      g.members = members;
      g.agent = members.front();
      for (NodeId w : members) pool.erase(w);
      groups.push_back(std::move(g));
    }
  }
  for (NodeId w : pool) {
    Group g;
    g.abstracted = false;
    g.agent = w;
    g.members = {w};
    groups.push_back(std::move(g));
  }
  std::sort(groups.begin(), groups.end(),
            [&](const Group& a, const Group& b) { return pos[a.agent] < pos[b.agent]; });
  return Grouping{std::move(groups)};
}

// ---------------------------------------------------------------------------
// Schedule builders
// ---------------------------------------------------------------------------

/// Ring AllReduce: N-1 ScatterReduce rounds then N-1 AllGather rounds over N
/// chunks. In ScatterReduce round t, the worker at ring position i forwards
/// chunk (i - t) mod N to its successor (each round forwards the chunk
/// received in the previous one); in AllGather round t it forwards chunk
/// (i + 1 - t) mod N. Flows follow the embedding hop paths, which are
/// directed-edge-disjoint, so rounds are contention-free.
inline SyncSchedule schedule_rar(const RingEmbedding& ring, const ModelSpec& model) {
  const int n = static_cast<int>(ring.order.size());
  if (n < 2) throw std::invalid_argument("ring all-reduce requires at least 2 workers");
  SyncSchedule s;
  s.arch = ArchKind::RAR;
  s.units = n;
  s.unit_bytes = chunk_plan(model.param_bytes, n);
  s.workers = ring.order;

  for (int t = 0; t < n - 1; t++) {
    Step st;
    st.round = t;
    st.phase = Phase::ScatterReduce;
    st.sr_processing = true;
    for (int i = 0; i < n; i++) {
      int c = ((i - t) % n + n) % n;
      FlowSpec f;
      f.id = i;
      f.src = ring.order[i];
      f.dst = ring.order[(i + 1) % n];
      f.path = ring.hop_paths[i];
      f.bytes = s.unit_bytes[c];
      f.unit_begin = c;
      f.unit_end = c + 1;
      f.role = FlowRole::RingGradient;
      f.phase = Phase::ScatterReduce;
      f.delivery = Delivery::Accumulate;
      st.flows.push_back(std::move(f));
    }
    if (t == n - 2) {
      st.trailing_processing = true;
      st.trailing_frac = 1.0 / n;
    }
    s.steps.push_back(std::move(st));
  }
  for (int t = 0; t < n - 1; t++) {
    Step st;
    st.round = n - 1 + t;
    st.phase = Phase::AllGather;
    for (int i = 0; i < n; i++) {
      int c = ((i + 1 - t) % n + n) % n;
      FlowSpec f;
      f.id = i;
      f.src = ring.order[i];
      f.dst = ring.order[(i + 1) % n];
      f.path = ring.hop_paths[i];
      f.bytes = s.unit_bytes[c];
      f.unit_begin = c;
      f.unit_end = c + 1;
      f.role = FlowRole::RingReduced;
      f.phase = Phase::AllGather;
      f.delivery = Delivery::Store;
      st.flows.push_back(std::move(f));
    }
    s.steps.push_back(std::move(st));
  }
  return s;
}

namespace detail {

/// INA switches along a worker->ps path, in path order, ps excluded.
inline std::vector<NodeId> ina_on_path(const Topology& topo,
                                       const std::vector<DirectedLink>& p) {
  std::vector<NodeId> out;
  for (const DirectedLink& e : p)
    if (topo.is_ina(e.to)) out.push_back(e.to);
  return out;
}

/// Removes every cycle from a directed walk, leaving a simple path over a
/// subset of the walk's edges. Interior hosts always vanish (a visit to a
/// single-homed host is a cycle through its only link), so erased circuit
/// segments never touch rack-internal links.
inline std::vector<DirectedLink> loop_erase(const std::vector<DirectedLink>& walk) {
  if (walk.empty()) return {};
  std::vector<NodeId> out{walk.front().from};
  std::map<NodeId, std::size_t> at{{walk.front().from, 0}};
  for (const DirectedLink& e : walk) {
    NodeId n = e.to;
    auto it = at.find(n);
    if (it != at.end()) {
      while (out.back() != n) {
        at.erase(out.back());
        out.pop_back();
      }
    } else {
      at[n] = out.size();
      out.push_back(n);
    }
  }
  std::vector<DirectedLink> edges;
  for (std::size_t i = 0; i + 1 < out.size(); i++)
    edges.push_back(DirectedLink{out[i], out[i + 1]});
  return edges;
}

}  // namespace detail

/// Parameter-server synchronization. Uplink: every worker pushes its full
/// gradient toward the PS concurrently; with `ina_enabled` each INA switch on
/// a path fully aggregates its inbound streams into one outbound stream.
/// Downlink: the PS multicasts the model back, replicated at INA switches
/// when enabled, plain unicast fan-out otherwise. One barrier between phases.
inline SyncSchedule schedule_ps(const Topology& topo, std::vector<NodeId> workers,
                                NodeId ps, const ModelSpec& model, bool ina_enabled,
                                const ProtocolOptions& opt = {}) {
  std::sort(workers.begin(), workers.end());
  if (workers.empty()) throw std::invalid_argument("schedule_ps requires workers");
  if (!topo.is_host(ps)) throw std::invalid_argument("ps must be a host");
  for (NodeId w : workers)
    if (w == ps) throw std::invalid_argument("ps gradient is local; exclude it from senders");

  SyncSchedule s;
  s.arch = ina_enabled ? ArchKind::PSINA : ArchKind::PS;
  s.units = 1;
  s.unit_bytes = {model.param_bytes};
  s.workers = workers;

  const double keep = 1.0 - opt.psina_passthrough_fraction;
  if (keep <= 0.0 || keep > 1.0)
    throw std::invalid_argument("psina_passthrough_fraction must be in [0,1)");
  const std::uint64_t agg_bytes =
      static_cast<std::uint64_t>(static_cast<double>(model.param_bytes) * keep + 0.5);
  const std::uint64_t direct_bytes = model.param_bytes - agg_bytes;

  // ---- uplink ----
  Step up;
  up.round = 0;
  up.phase = Phase::PsUp;
  up.sr_processing = true;

  struct RelayDraft {
    NodeId next = 0;  // next INA switch toward ps, or ps
    std::vector<int> feeders;
    int depth = 0;  // hops to ps, for topological ordering
  };
  std::map<NodeId, RelayDraft> drafts;
  int next_id = 0;

  for (NodeId w : workers) {
    std::vector<DirectedLink> full = path(topo, w, ps);
    std::vector<NodeId> cuts =
        ina_enabled ? detail::ina_on_path(topo, full) : std::vector<NodeId>{};
    NodeId first_stop = cuts.empty() ? ps : cuts.front();

    FlowSpec f;
    f.id = next_id++;
    f.src = w;
    f.dst = first_stop;
    f.path = first_stop == ps ? full : path(topo, w, first_stop);
    f.bytes = cuts.empty() ? model.param_bytes : agg_bytes;
    f.unit_begin = 0;
    f.unit_end = 1;
    f.role = FlowRole::PsGradient;
    f.phase = Phase::PsUp;
    f.delivery = first_stop == ps ? Delivery::Accumulate : Delivery::None;
    int fid = f.id;
    up.flows.push_back(std::move(f));

    for (std::size_t i = 0; i < cuts.size(); i++) {
      NodeId sw = cuts[i];
      NodeId nxt = (i + 1 < cuts.size()) ? cuts[i + 1] : ps;
      auto [it, fresh] = drafts.try_emplace(sw);
      if (fresh) {
        it->second.next = nxt;
        it->second.depth = static_cast<int>(path(topo, sw, ps).size());
      } else if (it->second.next != nxt) {
        throw std::runtime_error("inconsistent aggregation next-hop (multipath?)");
      }
      if (i == 0) it->second.feeders.push_back(fid);
    }
    if (direct_bytes > 0 && !cuts.empty()) {
      FlowSpec d;
      d.id = next_id++;
      d.src = w;
      d.dst = ps;
      d.path = full;
      d.bytes = direct_bytes;  // best-effort remainder relayed to the PS unaggregated
      d.role = FlowRole::PsGradient;
      d.phase = Phase::PsUp;
      d.delivery = Delivery::None;
      up.flows.push_back(std::move(d));
    }
  }

  // Relay outputs, farthest switch first so feeders precede consumers.
  std::vector<NodeId> relay_order;
  for (const auto& [sw, d] : drafts) relay_order.push_back(sw);
  std::sort(relay_order.begin(), relay_order.end(), [&](NodeId a, NodeId b) {
    if (drafts[a].depth != drafts[b].depth) return drafts[a].depth > drafts[b].depth;
    return a < b;
  });
  std::map<NodeId, int> relay_index;
  for (NodeId sw : relay_order) {
    RelayDraft& d = drafts[sw];
    FlowSpec f;
    f.id = next_id++;
    f.src = sw;
    f.dst = d.next;
    f.path = path(topo, sw, d.next);
    f.bytes = agg_bytes;
    f.unit_begin = 0;
    f.unit_end = 1;
    f.role = FlowRole::PsGradient;
    f.phase = Phase::PsUp;
    f.delivery = d.next == ps ? Delivery::Accumulate : Delivery::None;
    f.relay_output = true;
    int out_id = f.id;
    up.flows.push_back(std::move(f));
    if (d.next != ps) drafts[d.next].feeders.push_back(out_id);

    RelaySpec r;
    r.sw = sw;
    r.aggregate = true;
    r.outputs = {out_id};
    relay_index[sw] = static_cast<int>(up.relays.size());
    up.relays.push_back(std::move(r));
  }
  for (NodeId sw : relay_order) {
    up.relays[relay_index[sw]].feeders = drafts[sw].feeders;
    for (int oid : up.relays[relay_index[sw]].outputs)
      for (FlowSpec& f : up.flows)
        if (f.id == oid) f.relay = relay_index[sw];
  }
  s.steps.push_back(std::move(up));

  // ---- downlink ----
  Step down;
  down.round = 1;
  down.phase = Phase::PsDown;
  int down_id = 0;

  if (ina_enabled) {
    // Reverse tree of the uplink paths.
    std::map<NodeId, std::set<NodeId>> children;
    for (NodeId w : workers)
      for (const DirectedLink& e : path(topo, w, ps)) children[e.to].insert(e.from);

    auto serve = [&](NodeId src, NodeId at, auto&& self) -> void {
      if (!children.count(at)) return;
      for (NodeId c : children[at]) {
        if (topo.is_host(c)) {
          FlowSpec f;
          f.id = down_id++;
          f.src = src;
          f.dst = c;
          f.path = path(topo, src, c);
          f.bytes = model.param_bytes;
          f.unit_begin = 0;
          f.unit_end = 1;
          f.role = FlowRole::PsModel;
          f.phase = Phase::PsDown;
          f.delivery = Delivery::Store;
          down.flows.push_back(std::move(f));
        } else if (topo.is_ina(c)) {
          FlowSpec f;
          f.id = down_id++;
          f.src = src;
          f.dst = c;
          f.path = path(topo, src, c);
          f.bytes = model.param_bytes;
          f.unit_begin = 0;
          f.unit_end = 1;
          f.role = FlowRole::PsModel;
          f.phase = Phase::PsDown;
          f.delivery = Delivery::None;
          int feeder = f.id;
          down.flows.push_back(std::move(f));
          RelaySpec r;
          r.sw = c;
          r.aggregate = false;
          r.feeders = {feeder};
          int ridx = static_cast<int>(down.relays.size());
          down.relays.push_back(std::move(r));
          std::size_t before = down.flows.size();
          self(c, c, self);
          for (std::size_t i = before; i < down.flows.size(); i++) {
            if (down.flows[i].src == c && down.flows[i].relay < 0) {
              down.flows[i].relay = ridx;
              down.flows[i].relay_output = true;
              down.relays[ridx].outputs.push_back(down.flows[i].id);
            }
          }
        } else {
          self(src, c, self);  // regular switch: streams pass through
        }
      }
    };
    serve(ps, ps, serve);
  } else {
    for (NodeId w : workers) {
      FlowSpec f;
      f.id = down_id++;
      f.src = ps;
      f.dst = w;
      f.path = path(topo, ps, w);
      f.bytes = model.param_bytes;
      f.unit_begin = 0;
      f.unit_end = 1;
      f.role = FlowRole::PsModel;
      f.phase = Phase::PsDown;
      f.delivery = Delivery::Store;
      down.flows.push_back(std::move(f));
    }
  }
  s.steps.push_back(std::move(down));
  return s;
}

/// Hierarchical AllReduce over uniform racks: intra-rack ScatterReduce,
/// inter-rack rings (one per shard position, run in parallel) doing a full
/// AllReduce over the rack-count partition, then intra-rack AllGather.
/// Emits 2(R-1) + 2(K-1) barrier rounds for K racks of R workers.
inline SyncSchedule schedule_har(const Topology& topo, const RingEmbedding& ring,
                                 const ModelSpec& model) {
  std::set<NodeId> pool(ring.order.begin(), ring.order.end());
  std::vector<std::vector<NodeId>> rk;  // members per rack, ascending
  for (const Rack& r : racks(topo)) {
    std::vector<NodeId> members;
    for (NodeId w : r.workers)
      if (pool.count(w)) members.push_back(w);
    if (!members.empty()) rk.push_back(std::move(members));
  }
  if (rk.empty()) throw std::invalid_argument("schedule_har requires at least one rack");
  const int R = static_cast<int>(rk[0].size());
  for (const auto& m : rk)
    if (static_cast<int>(m.size()) != R)
      throw std::invalid_argument("hierarchical all-reduce requires uniform rack sizes");
  const int K = static_cast<int>(rk.size());

  if (K == 1) {
    if (R == 1) {  // single worker: nothing to synchronize
      SyncSchedule s;
      s.arch = ArchKind::HAR;
      s.units = 1;
      s.unit_bytes = {model.param_bytes};
      s.workers = ring.order;
      return s;
    }
    SyncSchedule s = schedule_rar(ring, model);
    s.arch = ArchKind::HAR;
    return s;
  }

  // Rack ring order: position of each rack's representative along the embedding.
  std::map<NodeId, std::size_t> pos;
  for (std::size_t i = 0; i < ring.order.size(); i++) pos[ring.order[i]] = i;
  std::sort(rk.begin(), rk.end(), [&](const auto& a, const auto& b) {
    return pos[a.front()] < pos[b.front()];
  });

  SyncSchedule s;
  s.arch = ArchKind::HAR;
  s.units = R * K;
  s.unit_bytes = chunk_plan(model.param_bytes, R * K);
  s.workers = ring.order;
  int round = 0;

  auto add_ring_step = [&](Phase phase, bool sr, int t, bool intra) {
    Step st;
    st.round = round++;
    st.phase = phase;
    st.sr_processing = sr;
    int id = 0;
    if (intra) {
      for (const auto& members : rk) {
        for (int j = 0; j < R; j++) {
          int shard = phase == Phase::ScatterReduce ? ((j - t) % R + R) % R
                                                    : ((j + 1 - t) % R + R) % R;
          FlowSpec f;
          f.id = id++;
          f.src = members[j];
          f.dst = members[(j + 1) % R];
          f.path = path(topo, f.src, f.dst);
          f.unit_begin = shard * K;
          f.unit_end = (shard + 1) * K;
          f.bytes = s.bytes_of_range(f.unit_begin, f.unit_end);
          f.role = phase == Phase::ScatterReduce ? FlowRole::RingGradient
                                                 : FlowRole::RingReduced;
          f.phase = phase;
          f.delivery = phase == Phase::ScatterReduce ? Delivery::Accumulate
                                                     : Delivery::Store;
          st.flows.push_back(std::move(f));
        }
      }
    } else {
      for (int shard = 0; shard < R; shard++) {
        int holder = ((shard - 1) % R + R) % R;  // owner of shard after intra SR
        for (int q = 0; q < K; q++) {
          int m = phase == Phase::ScatterReduce ? ((q - t) % K + K) % K
                                                : ((q + 1 - t) % K + K) % K;
          FlowSpec f;
          f.id = id++;
          f.src = rk[q][holder];
          f.dst = rk[(q + 1) % K][holder];
          f.path = path(topo, f.src, f.dst);
          f.unit_begin = shard * K + m;
          f.unit_end = shard * K + m + 1;
          f.bytes = s.bytes_of_range(f.unit_begin, f.unit_end);
          f.role = phase == Phase::ScatterReduce ? FlowRole::RingGradient
                                                 : FlowRole::RingReduced;
          f.phase = phase;
          f.delivery = phase == Phase::ScatterReduce ? Delivery::Accumulate
                                                     : Delivery::Store;
          st.flows.push_back(std::move(f));
        }
      }
    }
    s.steps.push_back(std::move(st));
  };

  for (int t = 0; t < R - 1; t++) add_ring_step(Phase::ScatterReduce, true, t, true);
  for (int t = 0; t < K - 1; t++) add_ring_step(Phase::ScatterReduce, true, t, false);
  for (int t = 0; t < K - 1; t++) add_ring_step(Phase::AllGather, false, t, false);
  for (int t = 0; t < R - 1; t++) add_ring_step(Phase::AllGather, false, t, true);
  return s;
}

/// Rina: G groups in ring order over G chunks. ScatterReduce round t: every
/// group forwards chunk (q - t) mod G to its successor. Abstracted groups run
/// the agent-driven pipeline: task info to the ToR, pull multicast to the
/// rack, parallel gradient pushes, in-switch aggregation, and one aggregated
/// chunk out to the next group; autonomous groups send plain ring traffic.
/// The last transfer of each chunk terminates at the owning group; an
/// abstracted owner's ToR merges the incoming aggregate with its own rack's
/// pushes and multicasts the finished chunk to its members. AllGather round
/// t: finished chunks move group-to-group, replicated to rack workers by the
/// receiving ToR (which retains a copy and forwards it the following round).
/// An all-autonomous grouping degenerates to exactly schedule_rar.
inline SyncSchedule schedule_rina(const Topology& topo, const Grouping& grouping,
                                  const RingEmbedding& ring, const ModelSpec& model,
                                  const ProtocolOptions& opt = {}) {
  if (grouping.all_autonomous()) return schedule_rar(ring, model);
  const int g_count = grouping.size();
  if (g_count < 2)
    throw std::invalid_argument("rina requires at least 2 groups");

  SyncSchedule s;
  s.arch = ArchKind::RINA;
  s.units = g_count;
  s.unit_bytes = chunk_plan(model.param_bytes, g_count);
  for (const Group& g : grouping.groups)
    for (NodeId w : g.members) s.workers.push_back(w);
  std::sort(s.workers.begin(), s.workers.end());

  const auto& groups = grouping.groups;
  auto recv_entity = [&](int q) { return groups[q].agent; };
  auto send_entity = [&](int q) { return groups[q].abstracted ? groups[q].tor : groups[q].agent; };

  // Inter-group hop paths: the embedding's circuit segments between
  // consecutive group heads, loop-erased. Segments of distinct groups stay
  // directed-edge-disjoint (subsets of a partition of the doubled graph), so
  // concurrent rounds keep the ring's contention-freedom; erasing the host
  // detours keeps rack links free for the pull/push traffic.
  std::map<NodeId, std::size_t> ring_idx;
  for (std::size_t i = 0; i < ring.order.size(); i++) ring_idx[ring.order[i]] = i;
  const std::size_t n_ring = ring.order.size();
  std::vector<std::vector<DirectedLink>> segment(g_count);
  for (int q = 0; q < g_count; q++) {
    auto ia = ring_idx.find(groups[q].agent);
    auto ib = ring_idx.find(groups[(q + 1) % g_count].agent);
    if (ia == ring_idx.end() || ib == ring_idx.end())
      throw std::invalid_argument("group head missing from the ring embedding");
    std::vector<DirectedLink> walk;
    for (std::size_t i = ia->second; i != ib->second; i = (i + 1) % n_ring)
      walk.insert(walk.end(), ring.hop_paths[i].begin(), ring.hop_paths[i].end());
    segment[q] = detail::loop_erase(walk);
  }
  // from_tor: the sending entity is the ToR, drop the leading agent->ToR link;
  // to_tor: the flow terminates at the receiving ToR, drop the trailing link.
  auto inter_path = [&](int q, bool from_tor, bool to_tor) {
    const auto& seg = segment[q];
    std::size_t lo = from_tor ? 1 : 0;
    std::size_t hi = seg.size() - (to_tor ? 1 : 0);
    if (lo >= hi) throw std::runtime_error("degenerate inter-group segment");
    return std::vector<DirectedLink>(seg.begin() + lo, seg.begin() + hi);
  };

  // Prologue: the control node spreads partition info to every group head.
  {
    Step st;
    st.round = 0;
    st.phase = Phase::Control;
    NodeId ctrl = recv_entity(0);
    int id = 0;
    for (int q = 1; q < g_count; q++) {
      FlowSpec f;
      f.id = id++;
      f.src = ctrl;
      f.dst = recv_entity(q);
      f.path = path(topo, ctrl, f.dst);
      f.bytes = opt.control_bytes;
      f.role = FlowRole::PartitionInfo;
      f.phase = Phase::Control;
      st.flows.push_back(std::move(f));
    }
    s.prologue.push_back(std::move(st));
  }

  // ---- ScatterReduce ----
  for (int t = 0; t < g_count - 1; t++) {
    Step st;
    st.round = t;
    st.phase = Phase::ScatterReduce;
    st.sr_processing = true;
    const bool final_round = (t == g_count - 2);
    int id = 0;

    // Per receiving abstracted group in the final round: a completing merge
    // relay that folds the rack's own contributions into the arriving chunk.
    std::map<int, int> merge_relay;  // group index -> relay index

    auto make_merge_relay = [&](int q, int chunk) {
      Step& step = st;
      const Group& grp = groups[q];
      RelaySpec r;
      r.sw = grp.tor;
      r.aggregate = true;
      int ridx = static_cast<int>(step.relays.size());
      // pull + push cycle for the rack's own share of the owned chunk
      for (NodeId m : grp.members) {
        FlowSpec pull;
        pull.id = id++;
        pull.src = grp.tor;
        pull.dst = m;
        pull.path = path(topo, grp.tor, m);
        pull.bytes = opt.control_bytes;
        pull.role = FlowRole::PullRequest;
        pull.phase = Phase::ScatterReduce;
        int pull_id = pull.id;
        step.flows.push_back(std::move(pull));

        FlowSpec push;
        push.id = id++;
        push.src = m;
        push.dst = grp.tor;
        push.path = path(topo, m, grp.tor);
        push.bytes = s.unit_bytes[chunk];
        push.unit_begin = chunk;
        push.unit_end = chunk + 1;
        push.role = FlowRole::GradientPush;
        push.phase = Phase::ScatterReduce;
        push.after = {pull_id};
        r.feeders.push_back(push.id);
        step.flows.push_back(std::move(push));
      }
      // finished chunk multicast to every member
      for (NodeId m : grp.members) {
        FlowSpec out;
        out.id = id++;
        out.src = grp.tor;
        out.dst = m;
        out.path = path(topo, grp.tor, m);
        out.bytes = s.unit_bytes[chunk];
        out.unit_begin = chunk;
        out.unit_end = chunk + 1;
        out.role = FlowRole::MulticastCopy;
        out.phase = Phase::ScatterReduce;
        out.delivery = Delivery::Store;
        out.relay = ridx;
        out.relay_output = true;
        r.outputs.push_back(out.id);
        step.flows.push_back(std::move(out));
      }
      step.relays.push_back(std::move(r));
      return ridx;
    };

    // First pass: senders; inter-group flows routed to the receiver (agent),
    // or into the receiver's ToR merge relay in the final round.
    for (int q = 0; q < g_count; q++) {
      const int chunk = ((q - t) % g_count + g_count) % g_count;
      const int nxt = (q + 1) % g_count;
      const bool merge_at_next = final_round && groups[nxt].abstracted;
      NodeId dst = merge_at_next ? groups[nxt].tor : recv_entity(nxt);

      int inter_flow_id;
      if (groups[q].abstracted) {
        const Group& grp = groups[q];
        FlowSpec info;
        info.id = id++;
        info.src = grp.agent;
        info.dst = grp.tor;
        info.path = path(topo, grp.agent, grp.tor);
        info.bytes = opt.control_bytes;
        info.role = FlowRole::TaskInfo;
        info.phase = Phase::ScatterReduce;
        int info_id = info.id;
        st.flows.push_back(std::move(info));

        RelaySpec r;
        r.sw = grp.tor;
        r.aggregate = true;
        int ridx = static_cast<int>(st.relays.size());
        for (NodeId m : grp.members) {
          FlowSpec pull;
          pull.id = id++;
          pull.src = grp.tor;
          pull.dst = m;
          pull.path = path(topo, grp.tor, m);
          pull.bytes = opt.control_bytes;
          pull.role = FlowRole::PullRequest;
          pull.phase = Phase::ScatterReduce;
          pull.after = {info_id};
          int pull_id = pull.id;
          st.flows.push_back(std::move(pull));

          FlowSpec push;
          push.id = id++;
          push.src = m;
          push.dst = grp.tor;
          push.path = path(topo, m, grp.tor);
          push.bytes = s.unit_bytes[chunk];
          push.unit_begin = chunk;
          push.unit_end = chunk + 1;
          push.role = FlowRole::GradientPush;
          push.phase = Phase::ScatterReduce;
          push.after = {pull_id};
          r.feeders.push_back(push.id);
          st.flows.push_back(std::move(push));
        }
        FlowSpec out;
        out.id = id++;
        out.src = grp.tor;
        out.dst = dst;
        out.path = inter_path(q, true, merge_at_next);
        out.bytes = s.unit_bytes[chunk];
        out.unit_begin = chunk;
        out.unit_end = chunk + 1;
        out.role = FlowRole::AggregatedChunk;
        out.phase = Phase::ScatterReduce;
        out.delivery = merge_at_next ? Delivery::None : Delivery::Accumulate;
        out.relay = ridx;
        out.relay_output = true;
        r.outputs = {out.id};
        inter_flow_id = out.id;
        st.flows.push_back(std::move(out));
        st.relays.push_back(std::move(r));
      } else {
        FlowSpec f;
        f.id = id++;
        f.src = groups[q].agent;
        f.dst = dst;
        f.path = inter_path(q, false, merge_at_next);
        const int chunk_q = chunk;
        f.bytes = s.unit_bytes[chunk_q];
        f.unit_begin = chunk_q;
        f.unit_end = chunk_q + 1;
        f.role = FlowRole::RingGradient;
        f.phase = Phase::ScatterReduce;
        f.delivery = merge_at_next ? Delivery::None : Delivery::Accumulate;
        inter_flow_id = f.id;
        st.flows.push_back(std::move(f));
      }

      if (merge_at_next) {
        auto it = merge_relay.find(nxt);
        int ridx = it != merge_relay.end()
                       ? it->second
                       : (merge_relay[nxt] = make_merge_relay(nxt, chunk));
        st.relays[ridx].feeders.push_back(inter_flow_id);
      }
    }
    if (final_round) {
      st.trailing_processing = true;
      st.trailing_frac = 1.0 / g_count;
    }
    s.steps.push_back(std::move(st));
  }

  // ---- AllGather ----
  for (int t = 0; t < g_count - 1; t++) {
    Step st;
    st.round = g_count - 1 + t;
    st.phase = Phase::AllGather;
    int id = 0;
    for (int q = 0; q < g_count; q++) {
      const int chunk = ((q + 1 - t) % g_count + g_count) % g_count;
      const int nxt = (q + 1) % g_count;
      NodeId src = send_entity(q);
      if (groups[nxt].abstracted) {
        const Group& grp = groups[nxt];
        FlowSpec in;
        in.id = id++;
        in.src = src;
        in.dst = grp.tor;
        in.path = inter_path(q, groups[q].abstracted, true);
        in.bytes = s.unit_bytes[chunk];
        in.unit_begin = chunk;
        in.unit_end = chunk + 1;
        in.role = FlowRole::RingReduced;
        in.phase = Phase::AllGather;
        int in_id = in.id;
        st.flows.push_back(std::move(in));

        RelaySpec r;
        r.sw = grp.tor;
        r.aggregate = false;
        r.feeders = {in_id};
        int ridx = static_cast<int>(st.relays.size());
        for (NodeId m : grp.members) {
          FlowSpec cp;
          cp.id = id++;
          cp.src = grp.tor;
          cp.dst = m;
          cp.path = path(topo, grp.tor, m);
          cp.bytes = s.unit_bytes[chunk];
          cp.unit_begin = chunk;
          cp.unit_end = chunk + 1;
          cp.role = FlowRole::MulticastCopy;
          cp.phase = Phase::AllGather;
          cp.delivery = Delivery::Store;
          cp.relay = ridx;
          cp.relay_output = true;
          r.outputs.push_back(cp.id);
          st.flows.push_back(std::move(cp));
        }
        st.relays.push_back(std::move(r));
      } else {
        FlowSpec f;
        f.id = id++;
        f.src = src;
        f.dst = groups[nxt].agent;
        f.path = inter_path(q, groups[q].abstracted, false);
        f.bytes = s.unit_bytes[chunk];
        f.unit_begin = chunk;
        f.unit_end = chunk + 1;
        f.role = FlowRole::RingReduced;
        f.phase = Phase::AllGather;
        f.delivery = Delivery::Store;
        st.flows.push_back(std::move(f));
      }
    }
    s.steps.push_back(std::move(st));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Failures
// ---------------------------------------------------------------------------

enum class FailureKind { AgentFail, WorkerFail, Slowdown };

struct FailureEvent {
  FailureKind kind = FailureKind::WorkerFail;
  NodeId node = 0;
  double factor = 1.0;  // Slowdown multiplier
};

/// Mutable per-job view the engine keeps across failures: surviving workers,
/// racks whose agent died (their members default to plain ring participants),
/// and compute slowdown factors.
struct JobState {
  std::vector<NodeId> workers;
  std::set<NodeId> broken_tors;
  std::map<NodeId, double> slowdown;

  void remove_worker(NodeId w) {
    auto it = std::find(workers.begin(), workers.end(), w);
    if (it == workers.end())
      throw std::invalid_argument("failure targets unknown worker " + std::to_string(w));
    if (workers.size() == 1)
      throw std::invalid_argument("cannot fail the last worker of the job");
    workers.erase(it);
  }
};

/// Applies a failure to the job state. AgentFail removes the agent and breaks
/// its rack (survivors rejoin as autonomous workers); WorkerFail removes the
/// node (rack membership shrinks, autonomous rings splice around it);
/// Slowdown only scales the node's compute times.
inline void apply_failure(JobState& state, const Grouping& current,
                          const FailureEvent& ev) {
  switch (ev.kind) {
    case FailureKind::Slowdown: {
      if (ev.factor <= 0.0) throw std::invalid_argument("slowdown factor must be positive");
      double& f = state.slowdown[ev.node];
      f = (f == 0.0 ? 1.0 : f) * ev.factor;
      return;
    }
    case FailureKind::AgentFail: {
      for (const Group& g : current.groups) {
        if (g.abstracted && g.agent == ev.node) {
          state.broken_tors.insert(g.tor);
          state.remove_worker(ev.node);
          return;
        }
      }
      throw std::invalid_argument("node " + std::to_string(ev.node) + " is not an agent");
    }
    case FailureKind::WorkerFail: {
      for (const Group& g : current.groups) {
        if (g.abstracted && g.agent == ev.node) {
          // losing the agent is an agent failure regardless of how it is reported
          state.broken_tors.insert(g.tor);
          break;
        }
      }
      state.remove_worker(ev.node);
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Symbolic execution
// ---------------------------------------------------------------------------

/// Executes a schedule over integer payloads: every node holds one int64 per
/// unit, flows snapshot the sender's state at step start, relays sum or copy,
/// and deliveries apply at step end. Returns the final state of every node.
/// With worker w initialized to its quantized gradient, a correct schedule
/// leaves every worker holding the exact all-to-all sum in every unit.
inline std::map<NodeId, std::vector<std::int64_t>> symbolic_run(
    const Topology& topo, const SyncSchedule& sched,
    const std::map<NodeId, std::vector<std::int64_t>>& initial) {
  const int units = sched.units;
  std::map<NodeId, std::vector<std::int64_t>> state;
  for (const Node& n : topo.nodes()) state[n.id] = std::vector<std::int64_t>(units, 0);
  for (const auto& [w, v] : initial) {
    if (static_cast<int>(v.size()) != units)
      throw std::invalid_argument("initial payload has wrong unit count");
    state[w] = v;
  }

  auto run_step = [&](const Step& st) {
    const auto snapshot = state;
    std::map<int, std::vector<std::int64_t>> payload;  // flow id -> values

    for (const FlowSpec& f : st.flows) {
      if (f.relay_output || !f.carries_units()) continue;
      const auto& src_vals = snapshot.at(f.src);
      payload[f.id] = std::vector<std::int64_t>(src_vals.begin() + f.unit_begin,
                                                src_vals.begin() + f.unit_end);
    }
    for (const RelaySpec& r : st.relays) {
      std::vector<std::int64_t> value;
      for (int fid : r.feeders) {
        auto it = payload.find(fid);
        if (it == payload.end()) throw std::runtime_error("relay feeder has no payload");
        if (value.empty())
          value = it->second;
        else if (r.aggregate)
          for (std::size_t i = 0; i < value.size(); i++) value[i] += it->second[i];
        else
          throw std::runtime_error("replicate relay expects one feeder");
      }
      for (int oid : r.outputs) payload[oid] = value;
      if (r.store_at_switch && !r.outputs.empty()) {
        // record at the switch using the outputs' unit range
        for (const FlowSpec& f : st.flows) {
          if (f.id == r.outputs.front()) {
            auto& sv = state[r.sw];
            for (int u = f.unit_begin; u < f.unit_end; u++)
              sv[u] = value[u - f.unit_begin];
            break;
          }
        }
      }
    }
    // Deliveries, applied after all payloads are resolved.
    std::vector<std::pair<const FlowSpec*, std::vector<std::int64_t>>> mail;
    for (const FlowSpec& f : st.flows) {
      if (f.delivery == Delivery::None || !f.carries_units()) continue;
      auto it = payload.find(f.id);
      if (it == payload.end()) throw std::runtime_error("flow has no payload");
      mail.emplace_back(&f, it->second);
    }
    for (auto& [f, vals] : mail) {
      auto& dv = state[f->dst];
      for (int u = f->unit_begin; u < f->unit_end; u++) {
        if (f->delivery == Delivery::Accumulate)
          dv[u] += vals[u - f->unit_begin];
        else
          dv[u] = vals[u - f->unit_begin];
      }
    }
  };

  for (const Step& st : sched.prologue) run_step(st);
  for (const Step& st : sched.steps) run_step(st);
  return state;
}

/// True when every worker ends holding the exact all-to-all sum of the given
/// integer gradients under the schedule.
inline bool reduction_is_exact(const Topology& topo, const SyncSchedule& sched,
                               const std::map<NodeId, std::vector<std::int64_t>>& initial) {
  std::vector<std::int64_t> want(sched.units, 0);
  for (const auto& [w, v] : initial)
    for (int u = 0; u < sched.units; u++) want[u] += v[u];
  auto finals = symbolic_run(topo, sched, initial);
  for (NodeId w : sched.workers)
    if (finals.at(w) != want) return false;
  return true;
}

}  // namespace inasim
