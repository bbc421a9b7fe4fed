#include "evomoe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "evomoe/error.hpp"
#include "evomoe/ops.hpp"

namespace evomoe {

namespace {

std::size_t row_argmax(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

GateDecision assemble(const Tensor& combine, const Tensor& dense_probs,
                      std::vector<std::vector<std::size_t>> ids) {
  GateDecision d;
  d.tokens = combine.rows();
  d.experts = combine.cols();
  d.ids = std::move(ids);
  d.weights.assign(d.tokens * d.experts, 0.0);
  const auto cv = combine.data();
  for (std::size_t s = 0; s < d.tokens; ++s)
    for (std::size_t i : d.ids[s]) d.weights[s * d.experts + i] = cv[s * d.experts + i];
  d.combine = combine;
  d.dense_probs = dense_probs;
  return d;
}

}  // namespace

std::size_t GateDecision::selected_total() const {
  std::size_t total = 0;
  for (const auto& row : ids) total += row.size();
  return total;
}

double GateDecision::mean_selected() const {
  return tokens == 0 ? 0.0 : static_cast<double>(selected_total()) / static_cast<double>(tokens);
}

std::vector<std::size_t> GateDecision::expert_counts() const {
  std::vector<std::size_t> counts(experts, 0);
  for (const auto& row : ids)
    for (std::size_t i : row) ++counts[i];
  return counts;
}

void GateDecision::check() const {
  if (ids.size() != tokens || weights.size() != tokens * experts) {
    throw InvariantError("gate decision size mismatch");
  }
  for (std::size_t s = 0; s < tokens; ++s) {
    if (ids[s].empty()) throw InvariantError("token " + std::to_string(s) + " routed to no expert");
    std::size_t next = 0;
    for (std::size_t i = 0; i < experts; ++i) {
      const bool selected = next < ids[s].size() && ids[s][next] == i;
      if (selected) ++next;
      const double w = weights[s * experts + i];
      if (selected != (w != 0.0)) {
        throw InvariantError("weight/id mismatch for token " + std::to_string(s) + ", expert " +
                             std::to_string(i));
      }
      if (selected && !(w > 0.0 && w <= 1.0)) {
        throw InvariantError("combine weight outside (0, 1] for token " + std::to_string(s));
      }
    }
    if (next != ids[s].size()) throw InvariantError("unsorted or out-of-range expert ids");
  }
}

void TemperatureSchedule::validate() const {
  if (!(min_temp > 0.0) || !(max_temp >= min_temp)) {
    throw ConfigError("temperature schedule needs max_temp >= min_temp > 0");
  }
  if (decay_iters < 0) throw ConfigError("decay_iters must be non-negative");
  if (dense_iters < 0) throw ConfigError("dense_iters must be non-negative");
}

double temperature_at(const TemperatureSchedule& schedule, std::int64_t iter) {
  if (iter < 0) throw ParameterError("temperature_at: negative iteration");
  if (schedule.decay_iters == 0 || iter >= schedule.decay_iters) return schedule.min_temp;
  const double frac = static_cast<double>(iter) / static_cast<double>(schedule.decay_iters);
  if (schedule.shape == ScheduleShape::kExponential) {
    return schedule.max_temp * std::pow(schedule.min_temp / schedule.max_temp, frac);
  }
  return schedule.max_temp - (schedule.max_temp - schedule.min_temp) * frac;
}

void GateParams::validate() const {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ConfigError("gate threshold c must lie in [0, 1)");
  if (!(alpha >= 0.0)) throw ConfigError("balance coefficient alpha must be non-negative");
}

GateDecision topk_from_logits(const Tensor& logits, std::size_t k, bool renormalize) {
  const std::size_t s_count = logits.rows(), n = logits.cols();
  if (k < 1 || k > n) {
    throw ParameterError("top-k gate needs 1 <= k <= " + std::to_string(n) + ", got " + std::to_string(k));
  }
  std::vector<std::vector<std::size_t>> ids(s_count);
  std::vector<double> mask(logits.size(), kMaskedLogit);
  std::vector<std::size_t> order(n);
  const auto lv = logits.data();
  for (std::size_t s = 0; s < s_count; ++s) {
    const double* row = lv.data() + s * n;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    ids[s].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(ids[s].begin(), ids[s].end());
    for (std::size_t i : ids[s]) mask[s * n + i] = 0.0;
  }
  const Tensor dense = softmax_temp(logits, 1.0);
  if (!renormalize) return assemble(dense, dense, std::move(ids));
  const Tensor selected = softmax_temp(add(logits, Tensor::constant(logits.shape(), std::move(mask))), 1.0);
  return assemble(selected, dense, std::move(ids));
}

GateDecision topk_gate(const Tensor& x, const Tensor& w_g, std::size_t k, bool renormalize) {
  return topk_from_logits(matmul(x, w_g), k, renormalize);
}

std::size_t hash_expert(std::int64_t token_id, std::size_t experts) {
  if (experts == 0) throw ParameterError("hash gate needs at least one expert");
  if (token_id < 0) throw ParameterError("hash gate needs a non-negative token id");
  return static_cast<std::size_t>(mix_seed(static_cast<std::uint64_t>(token_id)) % experts);
}

GateDecision hash_gate(std::int64_t token_id, std::size_t experts) {
  const std::int32_t id = static_cast<std::int32_t>(token_id);
  if (static_cast<std::int64_t>(id) != token_id) throw ParameterError("token id out of range");
  return hash_gate(std::span<const std::int32_t>(&id, 1), experts);
}

GateDecision hash_gate(std::span<const std::int32_t> token_ids, std::size_t experts) {
  std::vector<double> onehot(token_ids.size() * experts, 0.0);
  std::vector<std::vector<std::size_t>> ids(token_ids.size());
  for (std::size_t s = 0; s < token_ids.size(); ++s) {
    const std::size_t e = hash_expert(token_ids[s], experts);
    ids[s] = {e};
    onehot[s * experts + e] = 1.0;
  }
  const Tensor weights = Tensor::constant({token_ids.size(), experts}, std::move(onehot));
  return assemble(weights, weights, std::move(ids));
}

Tensor gumbel_sample(const Shape& shape, Rng& rng, bool enabled) {
  std::vector<double> values(numel(shape), 0.0);
  if (enabled) {
    for (auto& v : values) v = -std::log(-std::log(uniform_open01(rng)));
  }
  return Tensor::constant(shape, std::move(values));
}

std::vector<std::vector<std::size_t>> threshold_select(const Tensor& probs, double c) {
  const std::size_t s_count = probs.rows(), n = probs.cols();
  std::vector<std::vector<std::size_t>> ids(s_count);
  const auto pv = probs.data();
  for (std::size_t s = 0; s < s_count; ++s) {
    const double* row = pv.data() + s * n;
    const std::size_t best = row_argmax(row, n);
    for (std::size_t i = 0; i < n; ++i)
      if (row[i] > c || i == best) ids[s].push_back(i);
  }
  return ids;
}

std::vector<std::vector<std::size_t>> argmax_select(const Tensor& probs) {
  const std::size_t s_count = probs.rows(), n = probs.cols();
  std::vector<std::vector<std::size_t>> ids(s_count);
  for (std::size_t s = 0; s < s_count; ++s) ids[s] = {row_argmax(probs.data().data() + s * n, n)};
  return ids;
}

GateDecision decide_from_probs(const Tensor& probs, double c, bool top1) {
  return assemble(probs, probs, top1 ? argmax_select(probs) : threshold_select(probs, c));
}

GateDecision dts_from_logits(const Tensor& logits, const GateParams& params, double tau,
                             std::int64_t iter, std::int64_t dense_iters, Rng* noise_rng) {
  if (!(tau > 0.0)) throw ParameterError("dts gate temperature must be positive");
  Tensor noisy = logits;
  if (params.noise_enabled && noise_rng != nullptr) {
    noisy = add(logits, gumbel_sample(logits.shape(), *noise_rng));
  }
  const Tensor probs = softmax_temp(noisy, tau);
  return decide_from_probs(probs, params.threshold, iter >= dense_iters);
}

GateDecision dts_gate(const Tensor& x, const GateParams& params, double tau, std::int64_t iter,
                      std::int64_t dense_iters, Rng* noise_rng) {
  return dts_from_logits(matmul(x, params.w_g), params, tau, iter, dense_iters, noise_rng);
}

Tensor balance_loss(const GateDecision& decision, double alpha) {
  const std::size_t batch = decision.tokens, n = decision.experts;
  if (batch == 0) throw ParameterError("balance loss over an empty batch");
  const auto counts = decision.expert_counts();
  const double b2 = static_cast<double>(batch) * static_cast<double>(batch);
  std::vector<double> coef(batch * n);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < n; ++i)
      coef[s * n + i] = static_cast<double>(counts[i]) / b2;
  // alpha applied last: the balanced optimum N * (1/N) = 1 then scales to alpha without rounding.
  return scale(scale(weighted_sum(decision.dense_probs, coef), static_cast<double>(n)), alpha);
}

}  // namespace evomoe
