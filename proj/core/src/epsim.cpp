#include "evomoe/epsim.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>

#include "evomoe/error.hpp"

namespace evomoe {

void Topology::validate() const {
  if (nodes == 0 || gpus_per_node == 0 || nics_per_node == 0) {
    throw ParameterError("topology counts must be positive");
  }
  if (!(intra_bw > 0.0) || !(inter_bw > 0.0)) throw ParameterError("topology bandwidths must be positive");
  if (!(intra_latency >= 0.0) || !(inter_latency >= 0.0)) {
    throw ParameterError("topology latencies must be non-negative");
  }
}

Assignment Assignment::uniform(std::size_t workers, std::uint64_t tokens_per_pair, std::uint64_t bytes_per_token) {
  Assignment a;
  a.workers = workers;
  a.bytes_per_token = bytes_per_token;
  a.counts.assign(workers, std::vector<std::uint64_t>(workers, tokens_per_pair));
  return a;
}

std::uint64_t Assignment::total_bytes() const {
  std::uint64_t tokens = 0;
  for (const auto& row : counts)
    for (auto c : row) tokens += c;
  return tokens * bytes_per_token;
}

Assignment assignment_from_trace(const RoutingTrace& trace, const Topology& topology,
                                 std::size_t experts_per_worker, std::uint64_t bytes_per_token) {
  topology.validate();
  const std::size_t w = topology.workers();
  Assignment a;
  a.workers = w;
  a.bytes_per_token = bytes_per_token;
  a.counts.assign(w, std::vector<std::uint64_t>(w, 0));
  for (const auto& rec : trace.records()) {
    const std::size_t n = rec.expert_counts.size();
    const std::size_t per = experts_per_worker == 0 ? n / w : experts_per_worker;
    if (n == 0 || n % w != 0 || per * w != n) {
      throw ParameterError("cannot place " + std::to_string(n) + " experts on " + std::to_string(w) +
                           " workers with " + std::to_string(per) + " experts each");
    }
    for (std::size_t e = 0; e < n; ++e) {
      const std::size_t dst = e % w;
      const std::uint64_t c = rec.expert_counts[e];
      for (std::size_t src = 0; src < w; ++src) a.counts[src][dst] += c / w + (src < c % w ? 1 : 0);
    }
  }
  return a;
}

std::string to_string(Tier tier) {
  switch (tier) {
    case Tier::kLocal: return "local";
    case Tier::kIntra: return "intra";
    case Tier::kInter: return "inter";
  }
  return "?";
}

std::uint64_t CommPlan::payload_bytes() const {
  std::uint64_t total = 0;
  for (const auto& p : phases)
    for (const auto& m : p.messages)
      if (m.hop == Hop::kDirect || m.hop == Hop::kExchange) total += m.bytes;
  return total;
}

std::size_t CommPlan::message_count(Tier tier) const {
  std::size_t n = 0;
  for (const auto& p : phases)
    for (const auto& m : p.messages) n += m.tier == tier;
  return n;
}

std::uint64_t CommPlan::bytes(Tier tier) const {
  std::uint64_t n = 0;
  for (const auto& p : phases)
    for (const auto& m : p.messages)
      if (m.tier == tier) n += m.bytes;
  return n;
}

std::size_t CommPlan::message_count() const {
  std::size_t n = 0;
  for (const auto& p : phases) n += p.messages.size();
  return n;
}

namespace {

void check_shape(const Assignment& a, const Topology& t) {
  t.validate();
  if (a.workers != t.workers() || a.counts.size() != a.workers) {
    throw DimensionError("assignment has " + std::to_string(a.workers) + " workers, topology " +
                         std::to_string(t.workers()));
  }
  for (const auto& row : a.counts)
    if (row.size() != a.workers) throw DimensionError("assignment rows must have one entry per worker");
}

Tier tier_of(const Topology& t, std::size_t src, std::size_t dst) {
  if (src == dst) return Tier::kLocal;
  return t.node_of(src) == t.node_of(dst) ? Tier::kIntra : Tier::kInter;
}

}  // namespace

CommPlan plan_naive(const Assignment& a, const Topology& t) {
  check_shape(a, t);
  CommPhase phase{"all-to-all", {}};
  for (std::size_t s = 0; s < a.workers; ++s)
    for (std::size_t d = 0; d < a.workers; ++d)
      if (a.counts[s][d] > 0) phase.messages.push_back({s, d, a.counts[s][d] * a.bytes_per_token, tier_of(t, s, d), Hop::kDirect});
  CommPlan plan;
  plan.phases.push_back(std::move(phase));
  return plan;
}

CommPlan plan_hierarchical(const Assignment& a, const Topology& t) {
  check_shape(a, t);
  const std::size_t g = t.gpus_per_node;
  auto leader = [g](std::size_t node) { return node * g; };

  CommPhase gather{"gather", {}}, inter{"inter-node", {}}, scatter{"scatter", {}};
  // node_pair[A][B]: bytes from node A to node B; inbound[d]: remote bytes for worker d.
  std::vector<std::vector<std::uint64_t>> node_pair(t.nodes, std::vector<std::uint64_t>(t.nodes, 0));
  std::vector<std::uint64_t> inbound(a.workers, 0);

  for (std::size_t s = 0; s < a.workers; ++s) {
    std::uint64_t outbound = 0;
    for (std::size_t d = 0; d < a.workers; ++d) {
      const std::uint64_t bytes = a.counts[s][d] * a.bytes_per_token;
      if (bytes == 0) continue;
      if (t.node_of(s) == t.node_of(d)) {
        gather.messages.push_back({s, d, bytes, tier_of(t, s, d), Hop::kDirect});
      } else {
        outbound += bytes;
        node_pair[t.node_of(s)][t.node_of(d)] += bytes;
        inbound[d] += bytes;
      }
    }
    if (outbound > 0) {
      const auto l = leader(t.node_of(s));
      gather.messages.push_back({s, l, outbound, tier_of(t, s, l), Hop::kRelayIn});
    }
  }
  for (std::size_t na = 0; na < t.nodes; ++na)
    for (std::size_t nb = 0; nb < t.nodes; ++nb)
      if (na != nb && node_pair[na][nb] > 0) {
        inter.messages.push_back({leader(na), leader(nb), node_pair[na][nb], Tier::kInter, Hop::kExchange});
      }
  for (std::size_t d = 0; d < a.workers; ++d)
    if (inbound[d] > 0) {
      const auto l = leader(t.node_of(d));
      scatter.messages.push_back({l, d, inbound[d], tier_of(t, l, d), Hop::kRelayOut});
    }

  CommPlan plan;
  plan.phases.push_back(std::move(gather));
  plan.phases.push_back({"layout", {}});
  plan.phases.push_back(std::move(inter));
  plan.phases.push_back({"layout", {}});
  plan.phases.push_back(std::move(scatter));
  return plan;
}

SimResult simulate_time(const CommPlan& plan, const Topology& t) {
  t.validate();
  SimResult r;
  for (const auto& phase : plan.phases) {
    // Busy time per serialized resource, keyed (kind, index).
    std::map<std::pair<int, std::size_t>, double> busy;
    for (const auto& m : phase.messages) {
      if (m.tier == Tier::kLocal) continue;
      if (m.tier == Tier::kIntra) {
        const double c = t.intra_latency + static_cast<double>(m.bytes) / t.intra_bw;
        busy[{0, m.src}] += c;
        busy[{1, m.dst}] += c;
        r.intra_seconds += c;
      } else {
        const double c = t.inter_latency + static_cast<double>(m.bytes) / t.inter_bw;
        const auto nic_out = t.node_of(m.src) * t.nics_per_node + m.src % t.gpus_per_node % t.nics_per_node;
        const auto nic_in = t.node_of(m.dst) * t.nics_per_node + m.dst % t.gpus_per_node % t.nics_per_node;
        busy[{2, nic_out}] += c;
        busy[{3, nic_in}] += c;
        r.inter_seconds += c;
      }
    }
    double phase_time = 0.0;
    for (const auto& [key, secs] : busy) phase_time = std::max(phase_time, secs);
    r.phase_seconds.push_back(phase_time);
    r.total_seconds += phase_time;
  }
  return r;
}

Makespan straggler_makespan(std::span<const std::uint64_t> loads, double per_token_cost, std::size_t workers) {
  if (!(per_token_cost > 0.0)) throw ParameterError("per_token_cost must be positive");
  if (workers == 0) throw ParameterError("workers must be positive");
  std::vector<std::uint64_t> per_worker(workers, 0);
  for (std::size_t e = 0; e < loads.size(); ++e) per_worker[e % workers] += loads[e];
  const auto max_load = *std::max_element(per_worker.begin(), per_worker.end());
  double mean = 0.0;
  for (auto l : per_worker) mean += static_cast<double>(l);
  mean /= static_cast<double>(workers);
  Makespan m;
  m.seconds = static_cast<double>(max_load) * per_token_cost;
  m.utilization = max_load == 0 ? 1.0 : mean / static_cast<double>(max_load);
  return m;
}

std::string sim_report_json(const Assignment& assignment, const Topology& topology) {
  const CommPlan naive = plan_naive(assignment, topology);
  const CommPlan hier = plan_hierarchical(assignment, topology);
  const SimResult tn = simulate_time(naive, topology);
  const SimResult th = simulate_time(hier, topology);

  auto summary = [](const CommPlan& p, const SimResult& s) {
    nlohmann::ordered_json j;
    j["msgs"] = p.message_count() - p.message_count(Tier::kLocal);
    j["inter_msgs"] = p.message_count(Tier::kInter);
    j["bytes"] = p.payload_bytes();
    j["inter_bytes"] = p.bytes(Tier::kInter);
    j["time"] = s.total_seconds;
    j["phase_times"] = s.phase_seconds;
    return j;
  };
  auto mean_inter_size = [](const CommPlan& p) {
    const auto n = p.message_count(Tier::kInter);
    return n == 0 ? 0.0 : static_cast<double>(p.bytes(Tier::kInter)) / static_cast<double>(n);
  };

  nlohmann::ordered_json j;
  j["topology"] = {{"nodes", topology.nodes},
                   {"gpus_per_node", topology.gpus_per_node},
                   {"nics_per_node", topology.nics_per_node},
                   {"intra_bw", topology.intra_bw},
                   {"inter_bw", topology.inter_bw},
                   {"intra_latency", topology.intra_latency},
                   {"inter_latency", topology.inter_latency}};
  j["naive"] = summary(naive, tn);
  j["hierarchical"] = summary(hier, th);
  double speedup = 1.0;
  if (th.total_seconds > 0.0) speedup = tn.total_seconds / th.total_seconds;
  else if (tn.total_seconds > 0.0) speedup = std::numeric_limits<double>::infinity();
  j["speedup"] = speedup;
  const double naive_size = mean_inter_size(naive);
  j["inter_message_size_ratio"] = naive_size > 0.0 ? mean_inter_size(hier) / naive_size : 1.0;
  return j.dump(2);
}

}  // namespace evomoe
