#include "evomoe/moe_layer.hpp"

#include <string>

#include "evomoe/error.hpp"
#include "evomoe/nn.hpp"

namespace evomoe {

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = normal(rng, 0.0, stddev);
  return Tensor::parameter({rows, cols}, std::move(v));
}

Tensor copy_param(const Tensor& t) {
  return Tensor::parameter(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor masked_copy(const Tensor& t, double ratio, Rng& rng) {
  std::vector<double> v(t.data().begin(), t.data().end());
  for (auto& x : v)
    if (uniform01(rng) < ratio) x = 0.0;
  return Tensor::parameter(t.shape(), std::move(v));
}

}  // namespace

Expert Expert::init(std::size_t d_model, std::size_t d_ff, Rng& rng, double stddev) {
  Expert e;
  e.w1 = random_matrix(d_model, d_ff, rng, stddev);
  e.b1 = Tensor::parameter({d_ff}, std::vector<double>(d_ff, 0.0));
  e.w2 = random_matrix(d_ff, d_model, rng, stddev);
  e.b2 = Tensor::parameter({d_model}, std::vector<double>(d_model, 0.0));
  return e;
}

Tensor Expert::forward(const Tensor& x, Activation act) const { return ffn(x, w1, b1, w2, b2, act); }

Expert Expert::clone() const { return {copy_param(w1), copy_param(b1), copy_param(w2), copy_param(b2)}; }

std::vector<Expert> spawn_diverse(const Expert& shared, std::size_t n, double mask_ratio,
                                  std::uint64_t seed) {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ParameterError("mask_ratio must lie in [0, 1]");
  if (n < 2) throw ParameterError("diversify needs at least 2 experts");
  std::vector<Expert> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    Expert e;
    e.w1 = masked_copy(shared.w1, mask_ratio, rng);
    e.b1 = copy_param(shared.b1);
    e.w2 = masked_copy(shared.w2, mask_ratio, rng);
    e.b2 = copy_param(shared.b2);
    out.push_back(std::move(e));
  }
  return out;
}

DispatchPlan dispatch(const GateDecision& decision) {
  DispatchPlan plan;
  plan.tokens = decision.tokens;
  plan.groups.resize(decision.experts);
  plan.slots.resize(decision.tokens);
  for (std::size_t s = 0; s < decision.tokens; ++s) {
    for (std::size_t i : decision.ids[s]) {
      if (i >= decision.experts) throw InvariantError("expert id out of range in gate decision");
      plan.slots[s].emplace_back(i, plan.groups[i].size());
      plan.groups[i].push_back(s);
    }
  }
  return plan;
}

std::vector<Tensor> gather_groups(const Tensor& x, const DispatchPlan& plan) {
  if (x.rows() != plan.tokens) {
    throw DimensionError("dispatch: plan covers " + std::to_string(plan.tokens) + " tokens, input has " +
                         std::to_string(x.rows()));
  }
  std::vector<Tensor> parts(plan.groups.size());
  for (std::size_t i = 0; i < plan.groups.size(); ++i)
    if (!plan.groups[i].empty()) parts[i] = gather_rows(x, plan.groups[i]);
  return parts;
}

Tensor combine_groups(const std::vector<Tensor>& parts, const DispatchPlan& plan, std::size_t width) {
  std::vector<Tensor> used;
  std::vector<std::vector<std::size_t>> idx;
  for (std::size_t i = 0; i < plan.groups.size(); ++i) {
    if (plan.groups[i].empty()) continue;
    used.push_back(parts[i]);
    idx.push_back(plan.groups[i]);
  }
  if (used.empty()) return Tensor::zeros({plan.tokens, width});
  return scatter_add_rows(used, idx, plan.tokens);
}

Tensor moe_forward(const Tensor& x, const GateDecision& decision, const std::vector<Expert>& experts,
                   Activation act, MoeStats* stats) {
  if (decision.tokens != x.rows()) {
    throw DimensionError("moe_forward: decision covers " + std::to_string(decision.tokens) +
                         " tokens, input has " + std::to_string(x.rows()));
  }
  if (decision.experts != experts.size()) {
    throw DimensionError("moe_forward: decision over " + std::to_string(decision.experts) +
                         " experts, layer has " + std::to_string(experts.size()));
  }
  // Weight mass may only sit on selected experts.
  for (std::size_t s = 0; s < decision.tokens; ++s) {
    std::size_t next = 0;
    for (std::size_t i = 0; i < decision.experts; ++i) {
      const bool selected = next < decision.ids[s].size() && decision.ids[s][next] == i;
      if (selected) {
        ++next;
      } else if (decision.weight(s, i) != 0.0) {
        throw InvariantError("non-zero combine weight on unselected expert " + std::to_string(i) +
                             " for token " + std::to_string(s));
      }
    }
  }
  const DispatchPlan plan = dispatch(decision);
  const auto inputs = gather_groups(x, plan);
  std::vector<Tensor> outputs(experts.size());
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const auto& group = plan.groups[i];
    if (group.empty()) continue;
    const std::vector<std::size_t> cols(group.size(), i);
    const Tensor w = gather_entries(decision.combine, group, cols);
    outputs[i] = row_scale(experts[i].forward(inputs[i], act), w);
    if (stats) stats->expert_calls += group.size();
  }
  return combine_groups(outputs, plan, experts.front().d_model());
}

MoELayer::MoELayer(Expert shared) : mode_(LayerMode::kShared) { experts_.push_back(std::move(shared)); }

MoELayer::MoELayer(std::vector<Expert> experts, GateParams gate)
    : mode_(LayerMode::kSparse), experts_(std::move(experts)), gate_(std::move(gate)) {
  if (experts_.size() < 2) throw ConfigError("a sparse MoE layer needs at least 2 experts");
}

const Expert& MoELayer::shared_expert() const {
  if (mode_ != LayerMode::kShared) throw InvariantError("shared expert requested from a sparse layer");
  return experts_.front();
}

Tensor MoELayer::shared_forward(const Tensor& x, Activation act) const {
  return shared_expert().forward(x, act);
}

Tensor MoELayer::sparse_forward(const Tensor& x, const GateDecision& decision, Activation act,
                                MoeStats* stats) const {
  if (mode_ != LayerMode::kSparse) throw InvariantError("sparse forward on a layer in shared mode");
  return moe_forward(x, decision, experts_, act, stats);
}

void MoELayer::diversify(std::size_t n, double mask_ratio, std::uint64_t seed, GateParams gate) {
  if (mode_ != LayerMode::kShared) throw InvariantError("diversify on a layer that is already sparse");
  experts_ = spawn_diverse(experts_.front(), n, mask_ratio, seed);
  gate_ = std::move(gate);
  mode_ = LayerMode::kSparse;
}

}  // namespace evomoe
