#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "evomoe/random.hpp"
#include "evomoe/tensor.hpp"

namespace evomoe {

// Routing result for a group of S tokens over N experts.
//
//  - ids[s]: selected expert indices for token s, ascending.
//  - weights: [S x N] combine weights, zero off ids[s]; never renormalised
//    after thresholding.
//  - combine: differentiable tensor whose entries at (s, ids[s]) equal the
//    weights (the expert mixer gathers from it).
//  - dense_probs: the full pre-threshold distribution, consumed by the
//    balance loss.
struct GateDecision {
  std::size_t tokens = 0;
  std::size_t experts = 0;
  std::vector<std::vector<std::size_t>> ids;
  std::vector<double> weights;
  Tensor combine;
  Tensor dense_probs;

  double weight(std::size_t token, std::size_t expert) const { return weights[token * experts + expert]; }
  std::size_t selected_total() const;
  double mean_selected() const;
  // Tokens per expert: count_i = #{s : i in ids[s]}.
  std::vector<std::size_t> expert_counts() const;
  // Throws InvariantError if weights and ids disagree.
  void check() const;
};

enum class ScheduleShape { kLinear, kExponential };

struct TemperatureSchedule {
  double max_temp = 2.0;
  double min_temp = 0.3;
  std::int64_t decay_iters = 15000;
  // Iterations (counted like decay_iters) before the gate switches to Top-1.
  std::int64_t dense_iters = 15000;
  ScheduleShape shape = ScheduleShape::kLinear;

  void validate() const;
};

// Temperature after `iter` scheduler steps; min_temp once iter >= decay_iters.
double temperature_at(const TemperatureSchedule& schedule, std::int64_t iter);

struct GateParams {
  Tensor w_g;                 // [D x N]
  double threshold = 0.001;   // c
  double alpha = 0.1;         // balance coefficient
  bool noise_enabled = true;  // Gumbel noise during training

  void validate() const;
};

// Keep the k largest logits per token, softmax over exactly those. Ties go to
// the lower expert index. With renormalize=false the selected weights are the
// full-softmax probabilities instead (Switch Transformer convention).
GateDecision topk_gate(const Tensor& x, const Tensor& w_g, std::size_t k, bool renormalize = true);
GateDecision topk_from_logits(const Tensor& logits, std::size_t k, bool renormalize = true);

// Deterministic expert for a token id.
std::size_t hash_expert(std::int64_t token_id, std::size_t experts);
GateDecision hash_gate(std::int64_t token_id, std::size_t experts);
GateDecision hash_gate(std::span<const std::int32_t> token_ids, std::size_t experts);

// Standard Gumbel(0,1) samples -log(-log(u)), u in (0,1); zeros when disabled.
Tensor gumbel_sample(const Shape& shape, Rng& rng, bool enabled = true);

// Experts whose probability strictly exceeds c; the argmax (lowest index on
// ties) is always kept so every token has at least one expert.
std::vector<std::vector<std::size_t>> threshold_select(const Tensor& probs, double c);
std::vector<std::vector<std::size_t>> argmax_select(const Tensor& probs);

// Dense-to-sparse selection on an already computed distribution g'.
GateDecision decide_from_probs(const Tensor& probs, double c, bool top1);

// Dense-to-Sparse gate: g' = softmax((x W_g + zeta) / tau) over experts; dense
// threshold selection while iter < dense_iters, Top-1 afterwards. Noise is
// drawn from `noise_rng` when params.noise_enabled and the rng is non-null.
GateDecision dts_gate(const Tensor& x, const GateParams& params, double tau, std::int64_t iter,
                      std::int64_t dense_iters, Rng* noise_rng);
GateDecision dts_from_logits(const Tensor& logits, const GateParams& params, double tau,
                             std::int64_t iter, std::int64_t dense_iters, Rng* noise_rng);

// alpha * N * sum_i (count_i / |B|^2) * sum_s dense_probs[s][i]; counts are
// constants, gradient flows through dense_probs only.
Tensor balance_loss(const GateDecision& decision, double alpha);

}  // namespace evomoe
