#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "evomoe/config.hpp"
#include "evomoe/tensor.hpp"

namespace evomoe {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.1;  // decoupled
  double clip_norm = 0.0;     // 0 disables clipping

  static AdamConfig from(const ModelConfig& config);
};

struct AdamMoments {
  std::vector<double> m, v;
  std::int64_t steps = 0;  // per parameter, so bias correction restarts for new params
};

// Optimizer state keyed by parameter name.
struct AdamState {
  std::map<std::string, AdamMoments> moments;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// One AdamW update in place. Parameters without an accumulated gradient are
// treated as having a zero gradient. Returns the global gradient norm.
double adam_step(NamedParams& params, AdamState& state, const AdamConfig& config, double lr);

// Drop moments whose parameter no longer exists.
void prune_moments(AdamState& state, const NamedParams& params);

// Linear warm-up to config.lr, then polynomial decay (power lr_power) to 0 at total_iters.
double learning_rate_at(const ModelConfig& config, std::int64_t iter);

}  // namespace evomoe
