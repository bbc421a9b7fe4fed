#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evomoe/routing.hpp"

namespace evomoe {

struct Topology {
  std::size_t nodes = 1;
  std::size_t gpus_per_node = 8;
  double intra_bw = 150e9;       // bytes/s per GPU link
  double inter_bw = 12.5e9;      // bytes/s per NIC
  double intra_latency = 5e-6;   // s per message
  double inter_latency = 1e-4;   // s per message
  std::size_t nics_per_node = 1;

  std::size_t workers() const { return nodes * gpus_per_node; }
  std::size_t node_of(std::size_t worker) const { return worker / gpus_per_node; }
  void validate() const;
};

// counts[src][dst]: tokens that worker src sends to experts hosted on dst.
struct Assignment {
  std::size_t workers = 0;
  std::vector<std::vector<std::uint64_t>> counts;
  std::uint64_t bytes_per_token = 0;

  static Assignment uniform(std::size_t workers, std::uint64_t tokens_per_pair, std::uint64_t bytes_per_token);
  std::uint64_t total_bytes() const;
};

// Experts are striped round-robin over workers (expert e lives on e % W);
// tokens are assumed to originate evenly across workers, remainders going to
// lower source indices. All records of the trace are summed.
Assignment assignment_from_trace(const RoutingTrace& trace, const Topology& topology,
                                 std::size_t experts_per_worker, std::uint64_t bytes_per_token);

enum class Tier { kLocal, kIntra, kInter };
enum class Hop { kDirect, kRelayIn, kExchange, kRelayOut };

struct Message {
  std::size_t src = 0, dst = 0;
  std::uint64_t bytes = 0;
  Tier tier = Tier::kLocal;
  Hop hop = Hop::kDirect;
};

struct CommPhase {
  std::string name;
  std::vector<Message> messages;
};

struct CommPlan {
  std::vector<CommPhase> phases;

  // Bytes of original payload: direct deliveries plus aggregated exchanges.
  std::uint64_t payload_bytes() const;
  std::size_t message_count(Tier tier) const;
  std::uint64_t bytes(Tier tier) const;
  std::size_t message_count() const;
};

std::string to_string(Tier tier);

CommPlan plan_naive(const Assignment& assignment, const Topology& topology);
// gather to the node leader (lowest GPU index) -> layout -> one message per
// ordered node pair -> layout -> scatter from the destination leader.
CommPlan plan_hierarchical(const Assignment& assignment, const Topology& topology);

struct SimResult {
  std::vector<double> phase_seconds;
  double total_seconds = 0.0;
  double intra_seconds = 0.0;  // summed per-message link time, by tier
  double inter_seconds = 0.0;
};

// Alpha-beta cost: each message costs latency + bytes / bandwidth on its tier.
// Messages sharing a GPU port (intra) or a NIC (inter) serialize; disjoint
// resources run in parallel. Local messages cost nothing; phases are sequential.
SimResult simulate_time(const CommPlan& plan, const Topology& topology);

struct Makespan {
  double seconds = 0.0;
  double utilization = 1.0;  // mean / max worker load
};

// loads are per expert, striped over `workers` round-robin.
Makespan straggler_makespan(std::span<const std::uint64_t> loads, double per_token_cost, std::size_t workers);

// {topology, naive: {msgs, inter_msgs, bytes, inter_bytes, time}, hierarchical: {...},
//  speedup, inter_message_size_ratio}
std::string sim_report_json(const Assignment& assignment, const Topology& topology);

}  // namespace evomoe
