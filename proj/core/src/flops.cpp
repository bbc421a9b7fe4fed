#include "evomoe/flops.hpp"

#include <nlohmann/json.hpp>

#include "evomoe/error.hpp"

namespace evomoe {

FlopsReport flops_count(const ModelConfig& config, FlopsMode mode, std::size_t active_experts) {
  using u64 = std::uint64_t;
  const u64 d = config.d_model, dff = config.d_ff, v = config.vocab, s = config.seq_len;
  const u64 n = config.n_experts;
  const u64 table_rows = v + (config.arch == Arch::kEncoderOnly ? 1 : 0);
  if (mode == FlopsMode::kTopK && (active_experts < 1 || active_experts > n)) {
    throw ParameterError("active experts must lie in [1, n_experts]");
  }
  const u64 k = mode == FlopsMode::kAll ? n : static_cast<u64>(active_experts);

  FlopsReport r;
  r.embedding.params = table_rows * d + s * d + d * v + v;
  r.embedding.activated_params = r.embedding.params;
  r.embedding.flops = 2 * d * v;

  const u64 attn_params = 4 * d * d + 4 * d;
  const u64 attn_flops = 2 * 4 * d * d + 2 * 2 * s * d;
  const u64 expert_params = 2 * d * dff + dff + d;
  const u64 expert_flops = 2 * 2 * d * dff;

  for (std::size_t l = 0; l < config.layers; ++l) {
    r.attention.params += attn_params;
    r.attention.activated_params += attn_params;
    r.attention.flops += attn_flops;
    if (!config.is_moe_layer(l) || mode == FlopsMode::kDense) {
      r.ffn.params += expert_params;
      r.ffn.activated_params += expert_params;
      r.ffn.flops += expert_flops;
      continue;
    }
    r.ffn.params += n * expert_params;
    r.ffn.activated_params += k * expert_params;
    r.ffn.flops += k * expert_flops;
    r.gate.params += d * n;
    r.gate.activated_params += d * n;
    r.gate.flops += 2 * d * n;
  }

  for (const auto* c : {&r.attention, &r.ffn, &r.gate, &r.embedding}) {
    r.total_params += c->params;
    r.activated_params_per_token += c->activated_params;
    r.forward_flops_per_token += c->flops;
  }
  return r;
}

std::string to_json(const FlopsReport& report) {
  auto component = [](const ComponentCount& c) {
    return nlohmann::json{{"params", c.params}, {"activated_params", c.activated_params}, {"flops", c.flops}};
  };
  nlohmann::json j;
  j["total_params"] = report.total_params;
  j["activated_params_per_token"] = report.activated_params_per_token;
  j["forward_flops_per_token"] = report.forward_flops_per_token;
  j["breakdown"] = {{"attention", component(report.attention)},
                    {"ffn", component(report.ffn)},
                    {"gate", component(report.gate)},
                    {"embedding", component(report.embedding)}};
  return j.dump(2);
}

}  // namespace evomoe
