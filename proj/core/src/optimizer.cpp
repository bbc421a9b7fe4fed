#include "evomoe/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace evomoe {

AdamConfig AdamConfig::from(const ModelConfig& config) {
  return {config.beta1, config.beta2, config.adam_eps, config.weight_decay, config.clip_norm};
}

double adam_step(NamedParams& params, AdamState& state, const AdamConfig& config, double lr) {
  double sq = 0.0;
  for (auto& [name, p] : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = config.clip_norm > 0.0 && norm > config.clip_norm ? config.clip_norm / norm : 1.0;

  for (auto& [name, p] : params) {
    auto& mom = state.moments[name];
    const std::size_t n = p.size();
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
      mom.steps = 0;
    }
    ++mom.steps;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(mom.steps));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(mom.steps));
    const auto grad = p.grad();
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * clip;
      mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * g;
      mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      data[i] -= lr * (mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * data[i]);
    }
  }
  return norm;
}

void prune_moments(AdamState& state, const NamedParams& params) {
  std::set<std::string> live;
  for (const auto& [name, p] : params) live.insert(name);
  std::erase_if(state.moments, [&live](const auto& kv) { return !live.contains(kv.first); });
}

double learning_rate_at(const ModelConfig& config, std::int64_t iter) {
  if (config.warmup_iters > 0 && iter < config.warmup_iters) {
    return config.lr * static_cast<double>(iter + 1) / static_cast<double>(config.warmup_iters);
  }
  const double span = static_cast<double>(std::max<std::int64_t>(config.total_iters - config.warmup_iters, 1));
  const double progress = std::clamp(static_cast<double>(iter - config.warmup_iters) / span, 0.0, 1.0);
  return config.lr * std::pow(1.0 - progress, config.lr_power);
}

}  // namespace evomoe
