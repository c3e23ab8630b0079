#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "inasim/protocol.hpp"
#include "inasim/topology.hpp"
#include "inasim/workload.hpp"

namespace inasim {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct SimConfig {
  std::uint64_t seed = 42;
  double rtt_s = 50e-6;
  /// Effective aggregation speed of an INA switch; aggregated output flows
  /// never exceed it. Defaults to the ~20 Gbps a programmable switch reaches
  /// on 100 Gbps ports.
  double ina_rate_cap_bps = 20e9;
  std::uint64_t ina_memory_bytes = std::numeric_limits<std::uint64_t>::max();
  double aimd_increase_bps_per_rtt = 2e9;
  double aimd_decrease_factor = 0.5;
  /// When false the engine runs the pure fluid max-min model and window
  /// state is not simulated. Analytical comparisons use this mode.
  bool aimd_enabled = false;
  int iterations = 10;
  int warmup_iterations = 2;
  /// Dependency-chain parameters wired into the dynamic model. Every
  /// ScatterReduce-type round charges each sending worker
  /// O_s + N(k_s * frac, sigma_s^2) before its flows start (frac = chunk
  /// bytes / model bytes); other rounds charge O_s alone.
  double step_overhead_s = 0.0;       // O_s
  double step_compute_scale_s = 0.0;  // k_s
  double step_compute_sigma_s = 0.0;  // sigma_s
  std::uint64_t control_bytes = 256;
  double psina_passthrough_fraction = 0.0;
  bool record_event_log = false;

  void validate() const {
    if (rtt_s <= 0) throw std::invalid_argument("rtt_s must be positive");
    if (ina_rate_cap_bps <= 0) throw std::invalid_argument("ina_rate_cap_bps must be positive");
    if (aimd_decrease_factor <= 0.0 || aimd_decrease_factor >= 1.0)
      throw std::invalid_argument("aimd_decrease_factor must be in (0,1)");
    if (aimd_increase_bps_per_rtt < 0)
      throw std::invalid_argument("aimd_increase_bps_per_rtt must be non-negative");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (warmup_iterations < 0 || warmup_iterations >= iterations)
      throw std::invalid_argument("warmup_iterations must be in [0, iterations)");
    if (step_overhead_s < 0 || step_compute_scale_s < 0 || step_compute_sigma_s < 0)
      throw std::invalid_argument("step charge parameters must be non-negative");
    if (psina_passthrough_fraction < 0 || psina_passthrough_fraction >= 1)
      throw std::invalid_argument("psina_passthrough_fraction must be in [0,1)");
  }
};

struct SimResult {
  std::vector<double> iteration_times_s;
  std::vector<double> sync_times_s;
  /// Per-iteration time spent per phase ("scatter_reduce", "all_gather", ...).
  std::vector<std::map<std::string, double>> phase_seconds;
  double throughput_samples_per_s = 0.0;
  int num_workers = 0;
  int batch_size = 0;
  int warmup_iterations = 0;
  bool ring_contention_violated = false;
  std::vector<std::string> event_log;  // time_s,event_kind,node,flow_id,detail

  double mean_iteration_s() const {
    double sum = 0;
    int n = 0;
    for (std::size_t i = warmup_iterations; i < iteration_times_s.size(); i++) {
      sum += iteration_times_s[i];
      n++;
    }
    if (n == 0) throw std::runtime_error("no post-warmup iterations");
    return sum / n;
  }

  double mean_phase_s(const std::string& phase) const {
    double sum = 0;
    int n = 0;
    for (std::size_t i = warmup_iterations; i < phase_seconds.size(); i++) {
      auto it = phase_seconds[i].find(phase);
      sum += it == phase_seconds[i].end() ? 0.0 : it->second;
      n++;
    }
    if (n == 0) throw std::runtime_error("no post-warmup iterations");
    return sum / n;
  }
};

// ---------------------------------------------------------------------------
// AIMD
// ---------------------------------------------------------------------------

enum class AimdSignal { AckProgress, LossOrEcn };

/// Window ceiling: pushes toward an aggregation point saturate at the INA
/// full-speed cap, everything else at its path line rate.
inline double aimd_ceiling(Phase phase, bool toward_aggregation, const SimConfig& cfg,
                           double line_rate_bps) {
  if ((phase == Phase::ScatterReduce || phase == Phase::PsUp) && toward_aggregation)
    return std::min(cfg.ina_rate_cap_bps, line_rate_bps);
  return line_rate_bps;
}

/// ScatterReduce-side flows start at full speed; AllGather flows start from
/// zero and ramp additively.
inline double aimd_init_window(Phase phase, bool toward_aggregation, const SimConfig& cfg,
                               double line_rate_bps) {
  if (phase == Phase::AllGather) return 0.0;
  return aimd_ceiling(phase, toward_aggregation, cfg, line_rate_bps);
}

inline double aimd_step(double window, AimdSignal sig, Phase phase, bool toward_aggregation,
                        const SimConfig& cfg, double line_rate_bps) {
  if (sig == AimdSignal::LossOrEcn) return window * cfg.aimd_decrease_factor;
  return std::min(window + cfg.aimd_increase_bps_per_rtt,
                  aimd_ceiling(phase, toward_aggregation, cfg, line_rate_bps));
}

// ---------------------------------------------------------------------------
// Max-min allocation
// ---------------------------------------------------------------------------

/// Progressive filling with per-flow ceilings: a common water level rises
/// until a flow hits its ceiling or a resource saturates, freezing the flows
/// involved; repeats until every flow is frozen. Yields the max-min fair
/// allocation: no rate can grow without shrinking an equal-or-smaller one.
inline void max_min_rates(const std::vector<std::vector<int>>& flow_resources,
                      const std::vector<double>& ceilings,
                      const std::vector<double>& resource_caps,
                      std::vector<double>& rates) {
  const std::size_t nf = flow_resources.size();
  rates.assign(nf, 0.0);
  std::vector<char> frozen(nf, 0);
  std::size_t remaining = nf;

  std::vector<double> frozen_load(resource_caps.size(), 0.0);
  std::vector<int> unfrozen_count(resource_caps.size(), 0);
  for (std::size_t f = 0; f < nf; f++)
    for (int r : flow_resources[f]) unfrozen_count[r]++;

  auto freeze = [&](std::size_t f, double rate) {
    frozen[f] = 1;
    remaining--;
    rates[f] = rate;
    for (int r : flow_resources[f]) {
      unfrozen_count[r]--;
      frozen_load[r] += rate;
    }
  };

  double level = 0.0;
  while (remaining > 0) {
    double next_ceil = kInf;
    for (std::size_t f = 0; f < nf; f++)
      if (!frozen[f] && ceilings[f] < next_ceil) next_ceil = ceilings[f];
    double next_res = kInf;
    for (std::size_t r = 0; r < resource_caps.size(); r++)
      if (unfrozen_count[r] > 0)
        next_res = std::min(next_res,
                            (resource_caps[r] - frozen_load[r]) / unfrozen_count[r]);

    double lambda = std::max(level, std::min(next_ceil, next_res));
    const double tol = 1e-9 * std::max(1.0, lambda);
    bool any = false;

    if (next_ceil <= next_res) {
      for (std::size_t f = 0; f < nf; f++)
        if (!frozen[f] && ceilings[f] <= lambda + tol) {
          freeze(f, ceilings[f]);
          any = true;
        }
    } else {
      for (std::size_t r = 0; r < resource_caps.size(); r++) {
        if (unfrozen_count[r] == 0) continue;
        double lr = (resource_caps[r] - frozen_load[r]) / unfrozen_count[r];
        if (lr > lambda + tol) continue;
        for (std::size_t f = 0; f < nf; f++) {
          if (frozen[f]) continue;
          bool uses = false;
          for (int rr : flow_resources[f])
            if (rr == static_cast<int>(r)) uses = true;
          if (uses) {
            freeze(f, lambda);
            any = true;
          }
        }
      }
    }
    if (!any) {
      // no finite constraint remains; freeze everything at the current level
      for (std::size_t f = 0; f < nf; f++)
        if (!frozen[f]) freeze(f, std::isinf(lambda) ? 0.0 : lambda);
    }
    level = lambda;
  }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct FailureInjection {
  double t_s = 0.0;
  FailureEvent event;
};

/// Deterministic flow-level execution of synchronization schedules over a
/// topology: per-event max-min reallocation, streaming in-switch
/// aggregation/replication with rate coupling, optional AIMD windows,
/// per-round barriers, failure injection. One engine instance runs one job
/// on a single logical timeline; distinct instances share nothing.
class Engine {
 public:
  Engine(Topology topo, Architecture arch, ModelSpec model, SimConfig cfg)
      : topo_(std::move(topo)), arch_(arch), model_(std::move(model)), cfg_(cfg) {
    cfg_.validate();
    model_.validate();
    topo_.validate();
    if ((arch_.kind == ArchKind::PS || arch_.kind == ArchKind::PSINA) &&
        !topo_.is_host(arch_.ps_node))
      throw std::invalid_argument("ps_node must be a host");
  }

  void inject(double t_s, FailureEvent ev) {
    if (t_s < 0) throw std::invalid_argument("injection time must be non-negative");
    injections_.push_back(FailureInjection{t_s, ev});
    std::stable_sort(injections_.begin(), injections_.end(),
                     [](const FailureInjection& a, const FailureInjection& b) {
                       return a.t_s < b.t_s;
                     });
  }

  SimResult run() {
    rng_.seed(cfg_.seed);
    result_ = SimResult{};
    result_.batch_size = model_.batch_size;
    result_.warmup_iterations = cfg_.warmup_iterations;

    state_ = JobState{};
    state_.workers = initial_workers();
    next_injection_ = 0;
    schedule_dirty_ = true;
    build_schedule();
    result_.num_workers = num_training_workers();

    double t = 0.0;
    for (const Step& st : schedule_.prologue) t = exec_step(st, t, {});

    for (int iter = 0; iter < cfg_.iterations; iter++) {
      consume_failures(t, nullptr);
      if (schedule_dirty_) build_schedule();
      std::vector<Step> steps = schedule_.steps;  // failures may prune the copy

      const double iter_start = t;
      std::map<NodeId, double> compute;
      double max_compute = 0.0;
      for (NodeId w : compute_participants()) {
        double c = sample_compute_time(model_, rng_) * slowdown(w);
        compute[w] = c;
        max_compute = std::max(max_compute, c);
      }
      phase_acc_.clear();
      phase_acc_["compute"] = max_compute;

      double barrier = iter_start;
      for (std::size_t si = 0; si < steps.size(); si++) {
        consume_failures(barrier, &steps);
        double step_start = barrier;
        barrier =
            exec_step(steps[si], barrier, si == 0 ? compute : std::map<NodeId, double>{});
        phase_acc_[phase_name(steps[si].phase)] += barrier - step_start;
      }
      t = std::max(barrier, iter_start + max_compute);

      result_.iteration_times_s.push_back(t - iter_start);
      result_.sync_times_s.push_back(t - (iter_start + max_compute));
      result_.phase_seconds.push_back(phase_acc_);
      log(t, "iteration_end", 0, -1, std::to_string(iter));
    }

    result_.throughput_samples_per_s =
        static_cast<double>(result_.batch_size) * result_.num_workers /
        result_.mean_iteration_s();
    return result_;
  }

  const SyncSchedule& schedule() const { return schedule_; }
  const Grouping& grouping() const { return grouping_; }

 private:
  // ---- job composition ----

  std::vector<NodeId> initial_workers() const {
    std::vector<NodeId> hosts = topo_.hosts();
    if (arch_.kind == ArchKind::PS || arch_.kind == ArchKind::PSINA) {
      hosts.erase(std::remove(hosts.begin(), hosts.end(), arch_.ps_node), hosts.end());
      if (hosts.empty()) throw std::invalid_argument("ps topology needs at least one worker");
    }
    return hosts;
  }

  int num_training_workers() const {
    int senders = static_cast<int>(state_.workers.size());
    if (arch_.kind == ArchKind::PS || arch_.kind == ArchKind::PSINA)
      return arch_.ps_colocated ? senders + 1 : senders;
    return senders;
  }

  std::vector<NodeId> compute_participants() const {
    std::vector<NodeId> w = state_.workers;
    if ((arch_.kind == ArchKind::PS || arch_.kind == ArchKind::PSINA) && arch_.ps_colocated)
      w.push_back(arch_.ps_node);
    std::sort(w.begin(), w.end());
    return w;
  }

  double slowdown(NodeId w) const {
    auto it = state_.slowdown.find(w);
    return it == state_.slowdown.end() ? 1.0 : it->second;
  }

  void build_schedule() {
    ProtocolOptions opt;
    opt.control_bytes = cfg_.control_bytes;
    opt.psina_passthrough_fraction = cfg_.psina_passthrough_fraction;

    if (state_.workers.size() < 2 && arch_.kind != ArchKind::PS &&
        arch_.kind != ArchKind::PSINA) {
      schedule_ = SyncSchedule{};  // single worker: compute only
      schedule_.arch = arch_.kind;
      schedule_.workers = state_.workers;
      grouping_ = Grouping{};
      schedule_dirty_ = false;
      return;
    }

    switch (arch_.kind) {
      case ArchKind::PS:
      case ArchKind::PSINA:
        grouping_ = Grouping{};
        schedule_ = schedule_ps(topo_, state_.workers, arch_.ps_node, model_,
                                arch_.kind == ArchKind::PSINA, opt);
        break;
      case ArchKind::RAR: {
        grouping_ = Grouping{};
        schedule_ = schedule_rar(ring_embedding(topo_, state_.workers), model_);
        break;
      }
      case ArchKind::HAR: {
        grouping_ = Grouping{};
        RingEmbedding ring = ring_embedding(topo_, state_.workers);
        schedule_ = schedule_har(topo_, ring, model_);
        break;
      }
      case ArchKind::RINA: {
        RingEmbedding ring = ring_embedding(topo_, state_.workers);
        grouping_ = form_groups(topo_, state_.workers, arch_, ring, state_.broken_tors);
        if (grouping_.size() == 1) {
          // a single surviving group synchronizes as a plain local ring
          schedule_ = schedule_rar(ring, model_);
        } else {
          schedule_ = schedule_rina(topo_, grouping_, ring, model_, opt);
        }
        break;
      }
    }
    schedule_dirty_ = false;
  }

  // ---- failures ----

  void consume_failures(double now, std::vector<Step>* remaining_steps) {
    while (next_injection_ < injections_.size() && injections_[next_injection_].t_s <= now) {
      const FailureEvent& ev = injections_[next_injection_].event;
      bool rack_member_loss = false;
      if (ev.kind == FailureKind::WorkerFail) {
        for (const Group& g : grouping_.groups)
          if (g.abstracted && g.agent != ev.node &&
              std::find(g.members.begin(), g.members.end(), ev.node) != g.members.end())
            rack_member_loss = true;
      }
      apply_failure(state_, grouping_, ev);
      if (ev.kind != FailureKind::Slowdown) schedule_dirty_ = true;
      // A lost rack member drops out of the pulls of the very next round;
      // agent and autonomous losses re-plan at the next iteration boundary.
      if (rack_member_loss && remaining_steps) prune_node(*remaining_steps, ev.node);
      log(now, "failure", ev.node, -1,
          ev.kind == FailureKind::Slowdown    ? "slowdown"
          : ev.kind == FailureKind::AgentFail ? "agent_fail"
                                              : "worker_fail");
      next_injection_++;
    }
  }

  static void prune_node(std::vector<Step>& steps, NodeId dead) {
    for (Step& st : steps) {
      std::set<int> removed;
      for (const FlowSpec& f : st.flows)
        if (f.src == dead || f.dst == dead) removed.insert(f.id);
      if (removed.empty()) continue;
      st.flows.erase(std::remove_if(st.flows.begin(), st.flows.end(),
                                    [&](const FlowSpec& f) { return removed.count(f.id); }),
                     st.flows.end());
      for (FlowSpec& f : st.flows)
        f.after.erase(std::remove_if(f.after.begin(), f.after.end(),
                                     [&](int id) { return removed.count(id) > 0; }),
                      f.after.end());
      for (RelaySpec& r : st.relays) {
        r.feeders.erase(std::remove_if(r.feeders.begin(), r.feeders.end(),
                                       [&](int id) { return removed.count(id) > 0; }),
                        r.feeders.end());
        r.outputs.erase(std::remove_if(r.outputs.begin(), r.outputs.end(),
                                       [&](int id) { return removed.count(id) > 0; }),
                        r.outputs.end());
      }
    }
  }

  // ---- step execution ----

  struct RtFlow {
    const FlowSpec* spec = nullptr;
    std::vector<int> resources;
    double line_rate = kInf;
    bool toward_agg = false;
    bool agg_output = false;
    int feeds_relay = -1;
    double ready_t = 0.0;
    int after_remaining = 0;
    bool released = false;
    bool done = false;
    double bytes_done = 0.0;
    double rate = 0.0;
    double window = kInf;
    double coupling = kInf;
  };

  int resource_of(const DirectedLink& e) const {
    auto li = topo_.link_index(e.from, e.to);
    if (!li) throw std::runtime_error("flow path uses a missing link");
    return static_cast<int>(2 * *li + (e.from < e.to ? 0 : 1));
  }

  double exec_step(const Step& st, double t0, const std::map<NodeId, double>& extra_delay) {
    double floor_end = t0;
    for (const auto& [w, d] : extra_delay) floor_end = std::max(floor_end, t0 + d);
    if (st.flows.empty())
      return floor_end + (st.trailing_processing ? trailing_charge(st) : 0.0);

    const std::size_t nf = st.flows.size();
    std::vector<RtFlow> fl(nf);
    std::map<int, std::size_t> by_id;
    for (std::size_t i = 0; i < nf; i++) by_id[st.flows[i].id] = i;

    // per-host readiness: overhead plus (in ScatterReduce rounds) a sampled
    // per-chunk processing time, plus any iteration-compute delay
    std::map<NodeId, double> ready;
    for (const FlowSpec& f : st.flows)
      if (topo_.is_host(f.src)) ready.emplace(f.src, 0.0);
    for (auto& [h, r] : ready) {
      double frac = 0.0;
      bool payload = false;
      for (const FlowSpec& f : st.flows)
        if (f.src == h && f.bytes > 0 && f.carries_units()) {
          payload = true;
          frac = std::max(frac, static_cast<double>(f.bytes) /
                                    static_cast<double>(model_.param_bytes));
        }
      double charge = 0.0;
      if (payload) {
        charge = cfg_.step_overhead_s;
        if (st.sr_processing &&
            (cfg_.step_compute_scale_s > 0.0 || cfg_.step_compute_sigma_s > 0.0))
          charge += std::max(0.0, normal_sample(rng_, cfg_.step_compute_scale_s * frac,
                                                cfg_.step_compute_sigma_s)) *
                    slowdown(h);
      }
      auto it = extra_delay.find(h);
      r = t0 + charge + (it != extra_delay.end() ? it->second : 0.0);
    }

    for (std::size_t i = 0; i < nf; i++) {
      const FlowSpec& f = st.flows[i];
      RtFlow& rt = fl[i];
      rt.spec = &f;
      for (const DirectedLink& e : f.path) {
        rt.resources.push_back(resource_of(e));
        rt.line_rate = std::min(rt.line_rate, topo_.link_bandwidth(e.from, e.to));
      }
      rt.after_remaining = static_cast<int>(f.after.size());
      rt.ready_t = t0;
      if (topo_.is_host(f.src)) {
        auto it = ready.find(f.src);
        if (it != ready.end()) rt.ready_t = it->second;
      }
    }
    for (std::size_t ri = 0; ri < st.relays.size(); ri++) {
      const RelaySpec& r = st.relays[ri];
      for (int fid : r.feeders) {
        auto it = by_id.find(fid);
        if (it != by_id.end()) fl[it->second].feeds_relay = static_cast<int>(ri);
      }
      for (int oid : r.outputs) {
        auto it = by_id.find(oid);
        if (it != by_id.end()) fl[it->second].agg_output = r.aggregate;
      }
    }
    for (std::size_t i = 0; i < nf; i++)
      fl[i].toward_agg =
          fl[i].agg_output ||
          (fl[i].feeds_relay >= 0 && st.relays[fl[i].feeds_relay].aggregate);

    // INA memory admission, FIFO by relay index per switch
    std::vector<char> relay_admitted(st.relays.size(), 0);
    auto relay_footprint = [&](const RelaySpec& r) -> std::uint64_t {
      for (int oid : r.outputs) {
        auto it = by_id.find(oid);
        if (it != by_id.end()) return st.flows[it->second].bytes;
      }
      return 0;
    };
    auto relay_finished = [&](std::size_t ri) {
      for (int oid : st.relays[ri].outputs) {
        auto it = by_id.find(oid);
        if (it != by_id.end() && !fl[it->second].done) return false;
      }
      return true;
    };
    auto admit_relays = [&]() {
      std::map<NodeId, std::uint64_t> used;
      for (std::size_t ri = 0; ri < st.relays.size(); ri++)
        if (relay_admitted[ri] && !relay_finished(ri))
          used[st.relays[ri].sw] += relay_footprint(st.relays[ri]);
      for (std::size_t ri = 0; ri < st.relays.size(); ri++) {
        if (relay_admitted[ri]) continue;
        std::uint64_t fp = relay_footprint(st.relays[ri]);
        std::uint64_t& u = used[st.relays[ri].sw];
        // an idle switch always takes the next task, even an oversized one
        if (u == 0 || u + fp <= cfg_.ina_memory_bytes) {
          relay_admitted[ri] = 1;
          u += fp;
        }
      }
    };

    double t = t0;
    double next_tick = cfg_.aimd_enabled ? t0 + cfg_.rtt_s : kInf;

    std::vector<std::size_t> completed_now;
    auto complete_flow = [&](std::size_t i) {
      RtFlow& rt = fl[i];
      rt.done = true;
      rt.rate = 0.0;
      for (std::size_t j = 0; j < nf; j++)
        if (fl[j].after_remaining > 0)
          for (int aid : st.flows[j].after)
            if (aid == rt.spec->id) fl[j].after_remaining--;
      log(t, "flow_completed", rt.spec->dst, rt.spec->id, role_name(rt.spec->role));
    };

    auto releasable = [&](std::size_t i) {
      const RtFlow& rt = fl[i];
      if (rt.released || rt.done) return false;
      if (rt.ready_t > t + 1e-15) return false;
      if (rt.after_remaining > 0) return false;
      const FlowSpec& f = *rt.spec;
      if (f.relay_output) {
        if (f.relay < 0 || !relay_admitted[f.relay]) return false;
        for (int fid : st.relays[f.relay].feeders) {
          auto it = by_id.find(fid);
          if (it != by_id.end() && !fl[it->second].released && !fl[it->second].done)
            return false;
        }
      }
      if (rt.feeds_relay >= 0 && !relay_admitted[rt.feeds_relay]) return false;
      return true;
    };

    auto release_pass = [&]() {
      bool any = true;
      while (any) {
        any = false;
        admit_relays();
        for (std::size_t i = 0; i < nf; i++) {
          if (!releasable(i)) continue;
          RtFlow& rt = fl[i];
          rt.released = true;
          any = true;
          rt.window = cfg_.aimd_enabled
                          ? aimd_init_window(rt.spec->phase, rt.toward_agg, cfg_, rt.line_rate)
                          : kInf;
          log(t, "flow_released", rt.spec->src, rt.spec->id, role_name(rt.spec->role));
          if (rt.spec->bytes == 0) complete_flow(i);
        }
      }
    };

    auto allocate = [&]() {
      std::vector<std::size_t> active;
      for (std::size_t i = 0; i < nf; i++)
        if (fl[i].released && !fl[i].done) active.push_back(i);
      if (active.empty()) return;

      std::map<int, int> res_map;
      std::vector<double> caps;
      std::vector<std::vector<int>> fres(active.size());
      for (std::size_t ai = 0; ai < active.size(); ai++) {
        for (int r : fl[active[ai]].resources) {
          auto [it, fresh] = res_map.try_emplace(r, static_cast<int>(caps.size()));
          if (fresh)
            caps.push_back(topo_.links()[static_cast<std::size_t>(r) / 2].bandwidth_bps);
          fres[ai].push_back(it->second);
        }
      }

      for (std::size_t ai = 0; ai < active.size(); ai++) fl[active[ai]].coupling = kInf;
      std::vector<double> rates;
      const int max_pass = static_cast<int>(st.relays.size()) + 2;
      for (int pass = 0; pass < max_pass; pass++) {
        std::vector<double> ceil(active.size());
        for (std::size_t ai = 0; ai < active.size(); ai++) {
          const RtFlow& rt = fl[active[ai]];
          double c = std::min(rt.window, rt.coupling);
          if (rt.agg_output) c = std::min(c, cfg_.ina_rate_cap_bps);
          ceil[ai] = c;
        }
        max_min_rates(fres, ceil, caps, rates);
        for (std::size_t ai = 0; ai < active.size(); ai++) fl[active[ai]].rate = rates[ai];

        bool changed = false;
        for (const RelaySpec& r : st.relays) {
          double m = kInf;
          for (int fid : r.feeders) {
            auto it = by_id.find(fid);
            if (it == by_id.end()) continue;
            const RtFlow& frt = fl[it->second];
            if (frt.done) continue;
            m = std::min(m, frt.released ? frt.rate : 0.0);
          }
          for (int oid : r.outputs) {
            auto it = by_id.find(oid);
            if (it == by_id.end()) continue;
            RtFlow& ort = fl[it->second];
            if (!ort.released || ort.done) continue;
            bool same = (std::isinf(m) && std::isinf(ort.coupling)) ||
                        (!std::isinf(m) && !std::isinf(ort.coupling) &&
                         std::abs(m - ort.coupling) <= 1e-6 * std::max(1.0, ort.coupling));
            if (!same) {
              ort.coupling = m;
              changed = true;
            }
          }
        }
        if (!changed) break;
      }

      // conservation: per direction, allocated rates never exceed capacity
      std::vector<double> load(caps.size(), 0.0);
      for (std::size_t ai = 0; ai < active.size(); ai++)
        for (int r : fres[ai]) load[r] += rates[ai];
      for (std::size_t r = 0; r < caps.size(); r++)
        if (load[r] > caps[r] * (1.0 + 1e-6))
          throw std::runtime_error("allocation exceeded a link capacity");

      if (schedule_.arch == ArchKind::RAR) {
        std::map<int, int> per_link;
        for (std::size_t ai = 0; ai < active.size(); ai++) {
          const FlowSpec& f = *fl[active[ai]].spec;
          if (f.role != FlowRole::RingGradient && f.role != FlowRole::RingReduced) continue;
          for (int r : fl[active[ai]].resources)
            if (++per_link[r] > 1) result_.ring_contention_violated = true;
        }
      }
    };

    release_pass();
    allocate();

    const double bytes_tol = 0.5;  // half a byte of fluid slack
    while (true) {
      bool all_done = true;
      for (std::size_t i = 0; i < nf; i++)
        if (!fl[i].done) {
          all_done = false;
          break;
        }
      if (all_done) break;

      double t_complete = kInf;
      for (std::size_t i = 0; i < nf; i++) {
        const RtFlow& rt = fl[i];
        if (!rt.released || rt.done || rt.rate <= 0.0) continue;
        double remaining_bits = (static_cast<double>(rt.spec->bytes) - rt.bytes_done) * 8.0;
        t_complete = std::min(t_complete, t + std::max(0.0, remaining_bits) / rt.rate);
      }
      double t_release = kInf;
      for (std::size_t i = 0; i < nf; i++)
        if (!fl[i].released && !fl[i].done && fl[i].after_remaining == 0 &&
            fl[i].ready_t > t + 1e-15)
          t_release = std::min(t_release, fl[i].ready_t);

      double t_next = std::min({t_complete, t_release, next_tick});
      if (std::isinf(t_next)) {
        std::ostringstream oss;
        oss << "deadlock at t=" << t << ": stuck flows";
        for (std::size_t i = 0; i < nf; i++)
          if (!fl[i].done)
            oss << " [id=" << fl[i].spec->id << " " << fl[i].spec->src << "->"
                << fl[i].spec->dst << (fl[i].released ? " released" : " waiting") << "]";
        throw std::runtime_error(oss.str());
      }

      double dt = t_next - t;
      for (std::size_t i = 0; i < nf; i++)
        if (fl[i].released && !fl[i].done) fl[i].bytes_done += fl[i].rate * dt / 8.0;
      t = t_next;

      for (std::size_t i = 0; i < nf; i++) {
        RtFlow& rt = fl[i];
        if (!rt.released || rt.done) continue;
        if (static_cast<double>(rt.spec->bytes) - rt.bytes_done <= bytes_tol)
          complete_flow(i);
      }
      if (cfg_.aimd_enabled && t >= next_tick - 1e-15) {
        for (std::size_t i = 0; i < nf; i++) {
          RtFlow& rt = fl[i];
          if (!rt.released || rt.done) continue;
          bool under = rt.rate < rt.window * 0.999 - 1.0;
          rt.window = aimd_step(rt.window,
                                under ? AimdSignal::LossOrEcn : AimdSignal::AckProgress,
                                rt.spec->phase, rt.toward_agg, cfg_, rt.line_rate);
        }
        next_tick += cfg_.rtt_s;
      }
      release_pass();
      allocate();
    }

    double barrier = std::max(t, floor_end);
    if (st.trailing_processing) barrier += trailing_charge(st);
    log(barrier, "step_barrier", 0, -1, phase_name(st.phase));
    return barrier;
  }

  double trailing_charge(const Step& st) {
    double mx = 0.0;
    for (NodeId w : compute_participants()) {
      double c = cfg_.step_overhead_s;
      if (cfg_.step_compute_scale_s > 0.0 || cfg_.step_compute_sigma_s > 0.0)
        c += std::max(0.0, normal_sample(rng_, cfg_.step_compute_scale_s * st.trailing_frac,
                                         cfg_.step_compute_sigma_s)) *
             slowdown(w);
      mx = std::max(mx, c);
    }
    return mx;
  }

  void log(double t, const char* kind, NodeId node, int flow, const std::string& detail) {
    if (!cfg_.record_event_log) return;
    std::ostringstream oss;
    oss << t << "," << kind << "," << node << "," << flow << "," << detail;
    result_.event_log.push_back(oss.str());
  }

  Topology topo_;
  Architecture arch_;
  ModelSpec model_;
  SimConfig cfg_;
  std::vector<FailureInjection> injections_;
  std::size_t next_injection_ = 0;

  std::mt19937_64 rng_;
  JobState state_;
  Grouping grouping_;
  SyncSchedule schedule_;
  bool schedule_dirty_ = true;
  SimResult result_;
  std::map<std::string, double> phase_acc_;
};

/// Single-call convenience wrapper.
inline SimResult run(const Topology& topo, const Architecture& arch, const ModelSpec& model,
                     const SimConfig& cfg,
                     const std::vector<FailureInjection>& failures = {}) {
  Engine e(topo, arch, model, cfg);
  for (const FailureInjection& fi : failures) e.inject(fi.t_s, fi.event);
  return e.run();
}

}  // namespace inasim
