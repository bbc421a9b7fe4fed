#pragma once

#include <cstdint>
#include <string>

#include "evomoe/config.hpp"

namespace evomoe {

// How MoE layers are counted.
//  kDense:  every MoE slot is a plain FFN, no gate (the dense backbone).
//  kTopK:   `active_experts` experts run per token (Top-1 for Switch/DTS end state).
//  kAll:    all N experts run (dense-phase upper bound of the DTS gate).
enum class FlopsMode { kDense, kTopK, kAll };

struct ComponentCount {
  std::uint64_t params = 0;
  std::uint64_t activated_params = 0;
  std::uint64_t flops = 0;  // forward, per token, 2 per multiply-add
};

struct FlopsReport {
  ComponentCount attention;  // projections, score/value products, layer norms
  ComponentCount ffn;        // dense FFNs and experts
  ComponentCount gate;
  ComponentCount embedding;  // token/position tables and output head

  std::uint64_t total_params = 0;
  std::uint64_t activated_params_per_token = 0;
  std::uint64_t forward_flops_per_token = 0;
};

FlopsReport flops_count(const ModelConfig& config, FlopsMode mode, std::size_t active_experts = 1);

// JSON document with the totals and the four breakdown keys.
std::string to_json(const FlopsReport& report);

}  // namespace evomoe
