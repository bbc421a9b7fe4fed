#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "evomoe/gating.hpp"
#include "evomoe/ops.hpp"
#include "evomoe/random.hpp"
#include "evomoe/tensor.hpp"

namespace evomoe {

// One FFN expert: x -> act(x W1 + b1) W2 + b2, with W1 [D x D_ff], W2 [D_ff x D].
struct Expert {
  Tensor w1, b1, w2, b2;

  static Expert init(std::size_t d_model, std::size_t d_ff, Rng& rng, double stddev = 0.02);
  std::size_t d_model() const { return w1.shape()[0]; }
  std::size_t d_ff() const { return w1.shape()[1]; }
  Tensor forward(const Tensor& x, Activation act = Activation::kRelu) const;
  // Deep copy into fresh leaf parameters.
  Expert clone() const;
};

// Copies of `shared`, each with its own Bernoulli(mask_ratio) zero mask over
// the weight matrices (biases untouched). Expert i's mask is seeded by
// derive_seed(seed, i).
std::vector<Expert> spawn_diverse(const Expert& shared, std::size_t n, double mask_ratio,
                                  std::uint64_t seed);

// Tokens grouped by expert. groups[i] lists token indices routed to expert i in
// ascending order; slots[s] lists (expert, row within group) for token s, so
// the two form a permutation and its inverse.
struct DispatchPlan {
  std::size_t tokens = 0;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> slots;
};

DispatchPlan dispatch(const GateDecision& decision);
// Per-expert input batches (an empty tensor for experts with no tokens).
std::vector<Tensor> gather_groups(const Tensor& x, const DispatchPlan& plan);
// Inverse of gather_groups: sums each token's rows, ascending expert order.
Tensor combine_groups(const std::vector<Tensor>& parts, const DispatchPlan& plan, std::size_t width);

struct MoeStats {
  // Number of (token, expert) evaluations actually performed.
  std::size_t expert_calls = 0;
};

// y_s = sum_{i in ids[s]} G[s,i] * e_i(x_s); unselected experts are not run.
Tensor moe_forward(const Tensor& x, const GateDecision& decision, const std::vector<Expert>& experts,
                   Activation act = Activation::kRelu, MoeStats* stats = nullptr);

enum class LayerMode { kShared, kSparse };

// An FFN slot that starts as a single shared expert and, after diversify(),
// holds N experts plus a gate.
class MoELayer {
 public:
  explicit MoELayer(Expert shared);
  MoELayer(std::vector<Expert> experts, GateParams gate);

  LayerMode mode() const { return mode_; }
  const Expert& shared_expert() const;
  const std::vector<Expert>& experts() const { return experts_; }
  const GateParams& gate() const { return gate_; }
  GateParams& gate() { return gate_; }

  // Plain FFN forward through the shared expert; only valid in shared mode.
  Tensor shared_forward(const Tensor& x, Activation act = Activation::kRelu) const;
  Tensor sparse_forward(const Tensor& x, const GateDecision& decision, Activation act,
                        MoeStats* stats = nullptr) const;

  // Shared -> sparse: spawn experts from the shared one and attach `gate`.
  void diversify(std::size_t n, double mask_ratio, std::uint64_t seed, GateParams gate);

 private:
  LayerMode mode_;
  std::vector<Expert> experts_;
  GateParams gate_;
};

}  // namespace evomoe
