#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evomoe/gating.hpp"

namespace evomoe {

struct Batch;

// Expert choices of one tracked token id within a logged batch.
struct TrackedChoice {
  std::int32_t token = 0;
  std::vector<std::uint64_t> expert_counts;
};

struct RoutingRecord {
  std::int64_t iter = 0;
  std::size_t layer = 0;
  std::vector<std::uint64_t> expert_counts;  // load histogram
  std::vector<TrackedChoice> tracked;
};

// Population coefficient of variation (stddev / mean); 0 for an all-zero load.
double coefficient_of_variation(std::span<const std::uint64_t> loads);

// Append-only log of expert loads plus running per-expert counts of the token
// preceding every routed token.
class RoutingTrace {
 public:
  RoutingTrace() = default;
  explicit RoutingTrace(std::size_t vocab) : vocab_(vocab) {}

  // Records the load histogram and tracked-token choices for one layer.
  const RoutingRecord& append(std::int64_t iter, std::size_t layer, const GateDecision& decision,
                              const Batch& batch, std::span<const std::int32_t> tracked_tokens = {});
  // Adds the batch to the running preceding-token counts (no-op when vocab is 0).
  void count_preceding(std::size_t layer, const GateDecision& decision, const Batch& batch);
  void add_record(RoutingRecord record);

  const std::vector<RoutingRecord>& records() const { return records_; }
  std::size_t vocab() const { return vocab_; }

  // Most frequent preceding tokens for (layer, expert): (token, count) pairs,
  // count descending, lower token id first on ties.
  std::vector<std::pair<std::int32_t, std::uint64_t>> top_preceding(std::size_t layer, std::size_t expert,
                                                                    std::size_t k = 5) const;
  std::vector<std::size_t> layers_with_tokens() const;
  std::size_t experts_in_layer(std::size_t layer) const;

  // CSV with header "iter,layer,expert,token_count", one row per expert.
  void write_csv(std::ostream& out) const;
  // Throws ParseError naming the offending line.
  static RoutingTrace read_csv(std::istream& in);
  // {"top_preceding": {layer: {expert: [[token, count], ...]}}, "tracked": [...]}
  std::string top_tokens_json(std::size_t k = 5) const;

 private:
  std::size_t vocab_ = 0;
  std::vector<RoutingRecord> records_;
  // layer -> expert -> token -> count
  std::map<std::size_t, std::vector<std::vector<std::uint64_t>>> preceding_;
};

}  // namespace evomoe
