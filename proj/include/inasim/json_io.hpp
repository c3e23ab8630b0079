#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "inasim/bom.hpp"
#include "inasim/engine.hpp"
#include "inasim/planner.hpp"
#include "inasim/protocol.hpp"
#include "inasim/topology.hpp"
#include "inasim/workload.hpp"

namespace inasim {

using nlohmann::json;

/// FNV-1a over the canonical serialization; embedded in every output so runs
/// are traceable to their exact configuration.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash(const json& j) {
  std::ostringstream oss;
  oss << std::hex << fnv1a64(j.dump());
  return oss.str();
}

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const std::string& k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw std::invalid_argument("unknown field '" + it.key() + "' in " + where);
  }
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

inline json topology_to_json(const Topology& t) {
  json nodes = json::array();
  for (const Node& n : t.nodes()) {
    json jn{{"id", n.id}, {"kind", n.kind == NodeKind::Host ? "host" : "switch"}};
    if (n.kind == NodeKind::Switch)
      jn["switch_kind"] = n.switch_kind == SwitchKind::Ina ? "ina" : "regular";
    nodes.push_back(std::move(jn));
  }
  json links = json::array();
  for (const Link& l : t.links())
    links.push_back(json{{"a", l.a}, {"b", l.b}, {"bandwidth_bps", l.bandwidth_bps}});
  return json{{"nodes", std::move(nodes)}, {"links", std::move(links)}};
}

inline Topology topology_from_json(const json& j) {
  reject_unknown_keys(j, {"nodes", "links"}, "topology");
  Topology t;
  std::vector<json> nodes = j.at("nodes").get<std::vector<json>>();
  std::sort(nodes.begin(), nodes.end(),
            [](const json& a, const json& b) { return a.at("id") < b.at("id"); });
  for (std::size_t i = 0; i < nodes.size(); i++) {
    const json& n = nodes[i];
    reject_unknown_keys(n, {"id", "kind", "switch_kind"}, "node");
    if (n.at("id").get<std::size_t>() != i)
      throw std::invalid_argument("node ids must be dense starting at 0");
    std::string kind = n.at("kind").get<std::string>();
    if (kind == "host") {
      t.add_host();
    } else if (kind == "switch") {
      SwitchKind sk = SwitchKind::Regular;
      if (n.contains("switch_kind") && n.at("switch_kind").get<std::string>() == "ina")
        sk = SwitchKind::Ina;
      t.add_switch(sk);
    } else {
      throw std::invalid_argument("node kind must be host or switch");
    }
  }
  for (const json& l : j.at("links")) {
    reject_unknown_keys(l, {"a", "b", "bandwidth_bps"}, "link");
    t.add_link(l.at("a").get<NodeId>(), l.at("b").get<NodeId>(),
               l.at("bandwidth_bps").get<double>());
  }
  t.validate();
  return t;
}

inline Topology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open topology file: " + path);
  json j;
  in >> j;
  return topology_from_json(j);
}

// ---------------------------------------------------------------------------
// Schedules, reports, results
// ---------------------------------------------------------------------------

inline json schedule_to_json(const SyncSchedule& s) {
  auto steps_json = [&](const std::vector<Step>& steps) {
    json arr = json::array();
    for (const Step& st : steps) {
      json flows = json::array();
      for (const FlowSpec& f : st.flows) {
        json jf{{"src", f.src}, {"dst", f.dst},     {"bytes", f.bytes},
                {"chunk", f.carries_units() ? json(f.unit_begin) : json(nullptr)},
                {"role", role_name(f.role)}};
        if (f.unit_end - f.unit_begin > 1) jf["chunks"] = f.unit_end - f.unit_begin;
        flows.push_back(std::move(jf));
      }
      arr.push_back(json{{"round", st.round},
                         {"phase", phase_name(st.phase)},
                         {"barrier", st.barrier},
                         {"flows", std::move(flows)}});
    }
    return arr;
  };
  json j{{"arch", arch_name(s.arch)},
         {"units", s.units},
         {"rounds", static_cast<int>(s.steps.size())},
         {"steps", steps_json(s.steps)}};
  if (!s.prologue.empty()) j["prologue"] = steps_json(s.prologue);
  if (s.arch == ArchKind::RINA) {
    // an alternative step-count convention reads 2G-1 per phase; the
    // ring-consistent 2(G-1) is used here; expose both for comparison
    j["rounds_alt_2g_minus_1"] = 2 * s.units - 1;
  }
  return j;
}

inline json throughput_report_to_json(const ThroughputReport& r) {
  json per = json::object();
  for (const auto& [w, bps] : r.per_worker_bps) per[std::to_string(w)] = bps;
  return json{{"per_worker_bps", std::move(per)},
              {"global_bps", r.global_bps},
              {"bottleneck", r.bottleneck}};
}

inline json sim_result_to_json(const SimResult& r) {
  json phases = json::array();
  for (const auto& m : r.phase_seconds) phases.push_back(m);
  return json{{"iteration_times_s", r.iteration_times_s},
              {"sync_times_s", r.sync_times_s},
              {"phase_seconds", std::move(phases)},
              {"throughput_samples_per_s", r.throughput_samples_per_s},
              {"num_workers", r.num_workers},
              {"batch_size", r.batch_size},
              {"warmup_iterations", r.warmup_iterations},
              {"ring_contention_violated", r.ring_contention_violated}};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string plan_to_csv(const DeploymentPlan& plan, const std::string& arch,
                               const std::string& topology, const std::string& hash) {
  std::ostringstream oss;
  oss << "# config_hash=" << hash << "\n";
  oss << "arch,topology,num_ina,replaced_switch_id,throughput,normalized\n";
  oss.precision(17);
  for (const auto& p : plan.curve) {
    oss << arch << "," << topology << "," << p.num_ina << ",";
    if (p.num_ina > 0) oss << p.replaced;
    oss << "," << p.throughput << "," << p.normalized << "\n";
  }
  return oss.str();
}

inline std::string bom_csv_row(const std::string& topology_id, NodeId ps,
                               std::size_t num_ina, double global_bps,
                               const std::string& hash) {
  std::ostringstream oss;
  oss << "# config_hash=" << hash << "\n";
  oss << "topology_id,ps_node,num_ina,global_bps\n";
  oss.precision(17);
  oss << topology_id << "," << ps << "," << num_ina << "," << global_bps << "\n";
  return oss.str();
}

inline std::string sim_csv_row(const std::string& arch, const std::string& topology,
                               std::size_t num_ina, const SimResult& r,
                               const std::string& hash) {
  std::ostringstream oss;
  oss << "# config_hash=" << hash << "\n";
  oss << "arch,topology,num_ina,num_workers,throughput_samples_per_s,mean_iteration_s\n";
  oss.precision(17);
  oss << arch << "," << topology << "," << num_ina << "," << r.num_workers << ","
      << r.throughput_samples_per_s << "," << r.mean_iteration_s() << "\n";
  return oss.str();
}

inline std::string event_log_csv(const SimResult& r, const std::string& hash) {
  std::ostringstream oss;
  oss << "# config_hash=" << hash << "\n";
  oss << "time_s,event_kind,node,flow_id,detail\n";
  for (const std::string& line : r.event_log) oss << line << "\n";
  return oss.str();
}

}  // namespace inasim
