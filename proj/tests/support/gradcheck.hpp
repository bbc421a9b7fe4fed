#pragma once

// Central finite-difference checks shared by the unit suite and the
// acceptance gate. Each case owns its parameters and rebuilds the loss from
// scratch on every call, so perturbing a parameter in place is enough.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "evomoe/gating.hpp"
#include "evomoe/model.hpp"
#include "evomoe/moe_layer.hpp"
#include "evomoe/nn.hpp"
#include "evomoe/ops.hpp"
#include "oracles.hpp"

namespace evomoe::testing {

struct GradCase {
  std::string name;
  std::vector<Tensor> params;
  std::function<Tensor()> loss;
  // Discrete structure (routing ids) that must not change under a probe;
  // probes that flip it are redrawn.
  std::function<std::string()> structure;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t redrawn = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / (std::fabs(numeric) + 1e-8);
}

// Fourth-order central stencil (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h: O(h^4)
// truncation lets h stay large enough that roundoff does not swamp tiny
// gradient entries.
inline GradCheckResult gradcheck(const GradCase& c, std::size_t probes, std::uint64_t seed, double eps = 1e-3) {
  for (auto p : c.params) p.zero_grad();
  const Tensor loss = c.loss();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : c.params) {
    const auto g = p.grad();
    analytic.emplace_back(g.empty() ? std::vector<double>(p.size(), 0.0) : std::vector<double>(g.begin(), g.end()));
  }
  const std::string base_key = c.structure ? c.structure() : std::string();

  std::size_t total = 0;
  for (const auto& p : c.params) total += p.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  GradCheckResult r;
  NoGradGuard no_grad;
  while (r.probes < probes) {
    if (r.redrawn > 50 * probes) throw std::runtime_error(c.name + ": too many probes change routing");
    std::size_t flat = pick(rng), which = 0;
    while (flat >= c.params[which].size()) flat -= c.params[which++].size();
    Tensor p = c.params[which];
    double& slot = p.mutable_data()[flat];
    const double saved = slot;
    double f[4];
    bool same = true;
    const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
    for (int i = 0; i < 4; ++i) {
      slot = saved + offsets[i] * eps;
      f[i] = c.loss().item();
      same = same && (!c.structure || c.structure() == base_key);
    }
    slot = saved;
    if (!same) {
      ++r.redrawn;
      continue;
    }
    const double numeric = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * eps);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[which][flat], numeric));
    ++r.probes;
  }
  return r;
}

inline std::string ids_key(const GateDecision& d) {
  std::string key;
  for (const auto& row : d.ids) {
    for (auto i : row) key += std::to_string(i) + ",";
    key += ";";
  }
  return key;
}

// Random fixed coefficients turn any tensor into a scalar with O(1) gradients.
inline Tensor probe_loss(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto coef = random_values(t.size(), rng, -1.0, 1.0);
  return weighted_sum(t, coef);
}

inline ModelConfig small_moe_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.heads = 2;
  cfg.vocab = 8;
  cfg.n_experts = 3;
  cfg.moe_every = 2;
  cfg.seq_len = 5;
  cfg.dropout = 0.0;
  cfg.activation = Activation::kGelu;  // smooth, so probes never straddle a kink
  cfg.shared_iters = 0;
  cfg.dense_iters = 100;
  cfg.total_iters = 200;
  cfg.decay_iters = 100;
  cfg.threshold = 0.2;
  cfg.corpus = CorpusKind::kMarkov;
  cfg.corpus_tokens = 2000;
  cfg.track_tokens = {};
  return cfg;
}

inline std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  std::mt19937_64 rng(20240611);
  auto P = [&](Shape s) { return random_param(s, rng); };
  auto add_case = [&](std::string name, std::vector<Tensor> params, std::function<Tensor()> loss,
                      std::function<std::string()> structure = {}) {
    cases.push_back({std::move(name), std::move(params), std::move(loss), std::move(structure)});
  };

  {
    auto a = P({4, 5}), b = P({5, 3});
    add_case("matmul", {a, b}, [=] { return probe_loss(matmul(a, b), 1); });
  }
  {
    auto a = P({3, 4}), b = P({3, 4});
    add_case("add", {a, b}, [=] { return probe_loss(add(a, b), 2); });
    add_case("sub", {a, b}, [=] { return probe_loss(sub(a, b), 3); });
    add_case("mul", {a, b}, [=] { return probe_loss(mul(a, b), 4); });
    add_case("scale", {a}, [=] { return probe_loss(scale(a, -1.7), 5); });
  }
  {
    auto x = P({4, 3}), bias = P({3});
    add_case("add_bias", {x, bias}, [=] { return probe_loss(add_bias(x, bias), 6); });
  }
  {
    auto x = Tensor::parameter({5, 4}, random_nonzero(20, rng));
    add_case("relu", {x}, [=] { return probe_loss(relu(x), 7); });
    auto g = Tensor::parameter({5, 4}, random_values(20, rng, -3.0, 3.0));
    add_case("gelu", {g}, [=] { return probe_loss(gelu(g), 8); });
  }
  {
    auto x = P({3, 5}), y = P({3, 5});
    add_case("sum", {x, y}, [=] { return sum(mul(x, y)); });
    add_case("mean", {x, y}, [=] { return mean(mul(x, x)); });
    const auto coef = random_values(15, rng);
    add_case("weighted_sum", {x}, [=] { return weighted_sum(mul(x, x), coef); });
  }
  {
    auto logits = P({6, 4});
    Rng noise_rng(99);
    const Tensor zeta = gumbel_sample({6, 4}, noise_rng);
    add_case("softmax_temp+gumbel", {logits}, [=] { return probe_loss(softmax_temp(add(logits, zeta), 0.7), 9); });
  }
  {
    auto x = P({4, 6}), gain = random_param({6}, rng, 0.5, 1.5), bias = P({6});
    add_case("layer_norm", {x, gain, bias}, [=] { return probe_loss(layer_norm(x, gain, bias), 10); });
  }
  {
    auto logits = P({5, 7});
    const std::vector<std::int32_t> targets = {0, 3, 6, 3, 1};
    add_case("cross_entropy", {logits}, [=] { return cross_entropy(logits, targets, 0.0); });
    add_case("cross_entropy+smoothing", {logits}, [=] { return cross_entropy(logits, targets, 0.1); });
  }
  {
    auto x = P({2, 6});
    add_case("reshape", {x}, [=] { return probe_loss(mul(reshape(x, {3, 4}), reshape(x, {3, 4})), 11); });
    auto table = P({5, 3});
    const std::vector<std::int32_t> ids = {4, 0, 4, 2, 2, 2};
    add_case("embedding", {table}, [=] { return probe_loss(embedding(table, ids), 12); });
    auto rows = P({4, 3});
    const std::vector<std::size_t> pick = {3, 1, 3, 0};
    add_case("gather_rows", {rows}, [=] { return probe_loss(gather_rows(rows, pick), 13); });
    auto p0 = P({2, 3}), p1 = P({3, 3});
    const std::vector<std::vector<std::size_t>> idx = {{1, 3}, {0, 1, 4}};
    add_case("scatter_add_rows", {p0, p1}, [=] { return probe_loss(scatter_add_rows({p0, p1}, idx, 5), 14); });
    auto m = P({4, 3});
    const std::vector<std::size_t> er = {0, 2, 2, 3}, ec = {1, 0, 2, 1};
    add_case("gather_entries", {m}, [=] { return probe_loss(gather_entries(m, er, ec), 15); });
    auto w = P({4, 1});
    add_case("row_scale", {m, w}, [=] { return probe_loss(row_scale(m, w), 16); });
    auto wide = P({3, 7});
    add_case("slice_cols", {wide}, [=] { return probe_loss(slice_cols(wide, 2, 4), 17); });
    auto narrow = P({3, 2});
    add_case("concat_cols", {narrow, wide}, [=] {
      return probe_loss(concat_cols({slice_cols(wide, 0, 3), narrow, wide}), 18);
    });
  }
  {
    auto q = P({5, 4}), k = P({5, 4}), v = P({5, 3});
    add_case("attention", {q, k, v}, [=] { return probe_loss(attention(q, k, v, false), 19); });
    add_case("attention+causal", {q, k, v}, [=] { return probe_loss(attention(q, k, v, true), 20); });
    auto q2 = P({8, 6}), k2 = P({8, 6}), v2 = P({8, 6});
    add_case("attention_heads", {q2, k2, v2},
             [=] { return probe_loss(attention_heads(q2, k2, v2, 3, 4, 4, true), 21); });
  }
  {
    auto x = P({6, 4});
    AttentionWeights w{P({4, 4}), P({4, 4}), P({4, 4}), P({4, 4})};
    add_case("multi_head", {x, w.wq, w.wk, w.wv, w.wo},
             [=] { return probe_loss(multi_head(x, x, x, w, 2, 3, true), 22); });
  }
  {
    auto x = P({4, 3}), w1 = P({3, 5}), b1 = P({5}), w2 = P({5, 3}), b2 = P({3});
    // Pre-activations near zero would make relu non-differentiable at a probe.
    add_case("ffn+relu", {x, w1, b1, w2, b2}, [=] { return probe_loss(ffn(x, w1, b1, w2, b2, Activation::kRelu), 23); },
             [=] {
               const Tensor h = add_bias(matmul(x, w1), b1);
               std::string key;
               for (double z : h.data()) key += z > 0 ? '+' : '-';
               return key;
             });
    add_case("ffn+gelu", {x, w1, b1, w2, b2},
             [=] { return probe_loss(ffn(x, w1, b1, w2, b2, Activation::kGelu), 24); });
    add_case("dropout", {x}, [=] {
      Rng mask_rng(7);
      return probe_loss(dropout(mul(x, x), 0.3, mask_rng), 25);
    });
  }
  {
    auto x = P({6, 4}), wg = P({4, 3});
    add_case("topk_gate", {x, wg}, [=] { return probe_loss(topk_gate(x, wg, 2).combine, 26); },
             [=] { return ids_key(topk_gate(x, wg, 2)); });
    GateParams gp;
    gp.w_g = wg;
    gp.threshold = 0.2;
    auto dts = [=] {
      Rng noise(11);
      return dts_gate(x, gp, 0.8, 0, 10, &noise);
    };
    add_case("dts_gate+gumbel", {x, wg}, [=] { return probe_loss(dts().combine, 27); },
             [=] { return ids_key(dts()); });
    add_case("balance_loss", {x, wg}, [=] { return balance_loss(dts(), 0.1); }, [=] { return ids_key(dts()); });
  }
  {
    auto x = P({7, 4}), wg = P({4, 3});
    Rng init(5);
    std::vector<Expert> experts;
    for (int i = 0; i < 3; ++i) experts.push_back(Expert::init(4, 6, init, 0.5));
    std::vector<Tensor> params = {x, wg};
    for (const auto& e : experts) params.insert(params.end(), {e.w1, e.b1, e.w2, e.b2});
    GateParams gp;
    gp.w_g = wg;
    gp.threshold = 0.25;
    auto decide = [=] { return dts_gate(x, gp, 1.0, 0, 10, nullptr); };
    add_case("moe_forward", params,
             [=] { return probe_loss(moe_forward(x, decide(), experts, Activation::kGelu), 28); },
             [=] { return ids_key(decide()); });
  }
  {
    const ModelConfig cfg = small_moe_config();
    auto model = std::make_shared<TransformerLM>(cfg);
    std::vector<Tensor> params;
    for (const auto& [name, t] : model->parameters()) params.push_back(t);
    Batch batch;
    batch.sequences = 2;
    batch.seq_len = cfg.seq_len;
    batch.inputs = {1, 4, 2, 7, 0, 3, 3, 5, 6, 2};
    batch.targets = {4, 2, 7, 0, 1, 3, 5, 6, 2, 4};
    ForwardContext ctx;
    ctx.tau = 1.5;
    ctx.dense_until = cfg.dense_iters;
    add_case("transformer_2layer_moe", params,
             [=] {
               const ForwardResult r = model->forward(batch, ctx);
               return add(r.task_loss, r.balance_loss);
             },
             [=] {
               const ForwardResult r = model->forward(batch, ctx);
               std::string key;
               for (const auto& route : r.routes) key += ids_key(route.decision) + "|";
               return key;
             });
  }
  return cases;
}

}  // namespace evomoe::testing
