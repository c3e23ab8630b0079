#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "inasim/json_io.hpp"

namespace inasim {

/// Fully describes one reproducible run: topology source, architecture,
/// workload, simulator knobs, INA placement, and failure injections.
/// Parsed strictly; unknown fields are rejected.
struct ExperimentConfig {
  json topology_spec;
  Architecture arch;
  ModelSpec model;
  SimConfig sim;
  json ina_spec;  // {"mode": none|all|list|count|fraction, ...}
  std::vector<FailureInjection> failures;
  std::string topology_label;
  json raw;  // canonical parsed config (hash source)
};

inline Topology build_topology_from_spec(const json& spec, std::string* label = nullptr) {
  if (spec.contains("file")) {
    reject_unknown_keys(spec, {"file"}, "topology");
    std::string p = spec.at("file").get<std::string>();
    if (label) {
      std::size_t slash = p.find_last_of('/');
      *label = slash == std::string::npos ? p : p.substr(slash + 1);
    }
    return load_topology(p);
  }
  std::string gen = spec.at("generator").get<std::string>();
  double bw = spec.value("bandwidth_bps", kDefaultBandwidthBps);
  if (gen == "fattree") {
    reject_unknown_keys(spec, {"generator", "k", "bandwidth_bps"}, "topology");
    int k = spec.at("k").get<int>();
    if (label) *label = "fattree_k" + std::to_string(k);
    return gen_fattree(k, bw);
  }
  if (gen == "dragonfly") {
    reject_unknown_keys(spec, {"generator", "a", "g", "h", "p", "bandwidth_bps"}, "topology");
    int a = spec.at("a").get<int>();
    int g = spec.at("g").get<int>();
    int h = spec.at("h").get<int>();
    int p = spec.value("p", 2);  // hosts per router; 2 matches the 72-worker layout
    if (label)
      *label = "dragonfly_a" + std::to_string(a) + "g" + std::to_string(g) + "h" +
               std::to_string(h) + "p" + std::to_string(p);
    return gen_dragonfly(a, g, h, p, bw);
  }
  if (gen == "spineleaf") {
    reject_unknown_keys(spec, {"generator", "spines", "leaves", "hosts_per_leaf", "bandwidth_bps"},
                        "topology");
    int s = spec.at("spines").get<int>();
    int l = spec.at("leaves").get<int>();
    int h = spec.at("hosts_per_leaf").get<int>();
    if (label)
      *label = "spineleaf_s" + std::to_string(s) + "l" + std::to_string(l) + "h" +
               std::to_string(h);
    return gen_spine_leaf(s, l, h, bw);
  }
  throw std::invalid_argument("unknown topology generator: " + gen);
}

inline Architecture architecture_from_json(const json& j) {
  reject_unknown_keys(j, {"kind", "ps", "colocated", "rina_min_rack"}, "architecture");
  Architecture a;
  a.kind = arch_from_name(j.at("kind").get<std::string>());
  a.ps_node = j.value("ps", 0u);
  a.ps_colocated = j.value("colocated", false);
  a.rina_min_rack = j.value("rina_min_rack", 3);
  return a;
}

inline ModelSpec model_from_json(const json& j,
                                 const std::vector<ModelSpec>& extra_models = {}) {
  auto lookup = [&](const std::string& name, ModelSpec& out) {
    for (const ModelSpec& m : extra_models)
      if (m.name == name) {
        out = m;
        return true;
      }
    for (const ModelSpec& m : catalog())
      if (m.name == name) {
        out = m;
        return true;
      }
    return false;
  };
  if (j.is_string()) {
    ModelSpec m;
    if (!lookup(j.get<std::string>(), m))
      throw std::invalid_argument("unknown model: " + j.get<std::string>());
    return m;
  }
  reject_unknown_keys(
      j, {"name", "param_bytes", "batch_size", "compute_mean_s", "compute_sigma_s"}, "model");
  ModelSpec base;
  if (j.contains("name")) {
    std::string name = j.at("name").get<std::string>();
    if (!lookup(name, base)) base.name = name;
  }
  if (j.contains("param_bytes")) base.param_bytes = j.at("param_bytes").get<std::uint64_t>();
  if (j.contains("batch_size")) base.batch_size = j.at("batch_size").get<int>();
  if (j.contains("compute_mean_s")) base.compute_mean_s = j.at("compute_mean_s").get<double>();
  if (j.contains("compute_sigma_s"))
    base.compute_sigma_s = j.at("compute_sigma_s").get<double>();
  base.validate();
  return base;
}

inline SimConfig sim_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"seed", "rtt_s", "ina_rate_cap_bps", "ina_memory_bytes",
                       "aimd_increase_bps_per_rtt", "aimd_decrease_factor", "aimd_enabled",
                       "iterations", "warmup_iterations", "step_overhead_s",
                       "step_compute_scale_s", "step_compute_sigma_s", "control_bytes",
                       "psina_passthrough_fraction", "record_event_log"},
                      "sim");
  SimConfig c;
  c.seed = j.value("seed", c.seed);
  c.rtt_s = j.value("rtt_s", c.rtt_s);
  c.ina_rate_cap_bps = j.value("ina_rate_cap_bps", c.ina_rate_cap_bps);
  c.ina_memory_bytes = j.value("ina_memory_bytes", c.ina_memory_bytes);
  c.aimd_increase_bps_per_rtt = j.value("aimd_increase_bps_per_rtt", c.aimd_increase_bps_per_rtt);
  c.aimd_decrease_factor = j.value("aimd_decrease_factor", c.aimd_decrease_factor);
  c.aimd_enabled = j.value("aimd_enabled", c.aimd_enabled);
  c.iterations = j.value("iterations", c.iterations);
  c.warmup_iterations = j.value("warmup_iterations", c.warmup_iterations);
  c.step_overhead_s = j.value("step_overhead_s", c.step_overhead_s);
  c.step_compute_scale_s = j.value("step_compute_scale_s", c.step_compute_scale_s);
  c.step_compute_sigma_s = j.value("step_compute_sigma_s", c.step_compute_sigma_s);
  c.control_bytes = j.value("control_bytes", c.control_bytes);
  c.psina_passthrough_fraction =
      j.value("psina_passthrough_fraction", c.psina_passthrough_fraction);
  c.record_event_log = j.value("record_event_log", c.record_event_log);
  c.validate();
  return c;
}

inline FailureInjection failure_from_json(const json& j) {
  reject_unknown_keys(j, {"t_s", "kind", "node", "factor"}, "failure");
  FailureInjection fi;
  fi.t_s = j.at("t_s").get<double>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "agent_fail")
    fi.event.kind = FailureKind::AgentFail;
  else if (kind == "worker_fail")
    fi.event.kind = FailureKind::WorkerFail;
  else if (kind == "slowdown")
    fi.event.kind = FailureKind::Slowdown;
  else
    throw std::invalid_argument("unknown failure kind: " + kind);
  fi.event.node = j.at("node").get<NodeId>();
  fi.event.factor = j.value("factor", 1.0);
  return fi;
}

/// Marks switches INA per the placement spec. `count` and `fraction` use the
/// deployment ranking of the architecture (worker-rooted for ring-side,
/// edge-inward for PS-side); `fraction` resolves to ceil(fraction * total).
inline std::vector<NodeId> resolve_ina_placement(const Topology& topo, const json& spec,
                                                 const Architecture& arch) {
  if (spec.is_null() || spec.empty()) return {};
  reject_unknown_keys(spec, {"mode", "switches", "count", "fraction"}, "ina");
  std::string mode = spec.value("mode", "none");
  if (mode == "none") return {};
  if (mode == "all") return topo.switches();
  if (mode == "list") {
    std::vector<NodeId> out;
    for (const auto& v : spec.at("switches")) {
      NodeId s = v.get<NodeId>();
      if (!topo.is_switch(s))
        throw std::invalid_argument("ina list entry " + std::to_string(s) + " is not a switch");
      out.push_back(s);
    }
    return out;
  }
  std::size_t count = 0;
  if (mode == "count") {
    count = spec.at("count").get<std::size_t>();
  } else if (mode == "fraction") {
    double f = spec.at("fraction").get<double>();
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("ina fraction must be in [0,1]");
    count = static_cast<std::size_t>(
        std::ceil(f * static_cast<double>(topo.switches().size())));
  } else {
    throw std::invalid_argument("unknown ina mode: " + mode);
  }
  count = std::min(count, topo.switches().size());
  std::vector<NodeId> order;
  if (arch.kind == ArchKind::PS || arch.kind == ArchKind::PSINA) {
    order = rank_switches_edge_inward(topo);
  } else {
    std::vector<NodeId> hosts = topo.hosts();
    order = rank_switches(topo, hosts.front());
  }
  order.resize(count);
  return order;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
  reject_unknown_keys(
      j, {"topology", "architecture", "model", "models", "sim", "ina", "failures", "output"},
      "experiment");
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.topology_spec = j.at("topology");
  cfg.arch = architecture_from_json(j.at("architecture"));
  // optional catalog override/extension, consulted before the built-ins
  std::vector<ModelSpec> extra;
  if (j.contains("models"))
    for (const json& m : j.at("models")) extra.push_back(model_from_json(m));
  cfg.model = model_from_json(j.at("model"), extra);
  cfg.sim = j.contains("sim") ? sim_config_from_json(j.at("sim")) : SimConfig{};
  cfg.ina_spec = j.value("ina", json::object());
  if (j.contains("failures"))
    for (const json& f : j.at("failures")) cfg.failures.push_back(failure_from_json(f));
  build_topology_from_spec(cfg.topology_spec, &cfg.topology_label);  // validates early
  return cfg;
}

struct ExperimentRun {
  Topology topo;
  std::size_t num_ina = 0;
  SimResult result;
};

inline ExperimentRun run_experiment(const ExperimentConfig& cfg) {
  ExperimentRun out;
  out.topo = build_topology_from_spec(cfg.topology_spec);
  for (NodeId s : resolve_ina_placement(out.topo, cfg.ina_spec, cfg.arch))
    out.topo.set_switch_kind(s, SwitchKind::Ina);
  out.num_ina = out.topo.num_ina_switches();
  out.result = run(out.topo, cfg.arch, cfg.model, cfg.sim, cfg.failures);
  return out;
}

}  // namespace inasim
