#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evomoe/config.hpp"
#include "evomoe/corpus.hpp"
#include "evomoe/gating.hpp"
#include "evomoe/moe_layer.hpp"
#include "evomoe/nn.hpp"

namespace evomoe {

// A batch of equal-length sequences laid out row-major.
struct Batch {
  std::size_t sequences = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> inputs;
  // One target per scored row; `scored` lists those rows (empty = every row).
  std::vector<std::int32_t> targets;
  std::vector<std::size_t> scored;
  std::size_t rows() const { return sequences * seq_len; }
};

// Next-token batch from whole documents.
Batch make_lm_batch(const Corpus& corpus, Split split, std::span<const std::size_t> docs, std::size_t seq_len);
// Masked-token batch: ~15% of positions replaced by the mask id (= vocab).
// With rng == nullptr the mask pattern is a fixed function of document index.
Batch make_mlm_batch(const Corpus& corpus, Split split, std::span<const std::size_t> docs,
                     std::size_t seq_len, Rng* rng);
Batch make_batch(const ModelConfig& config, const Corpus& corpus, Split split,
                 std::span<const std::size_t> docs, Rng* rng);

struct ForwardContext {
  bool training = false;
  // Dropout and gate noise; only consulted when training.
  Rng* rng = nullptr;
  std::int64_t iter = 0;
  double tau = 1.0;
  // DTS gate uses threshold selection while iter < dense_until, Top-1 after.
  std::int64_t dense_until = std::numeric_limits<std::int64_t>::max();
};

struct LayerRoute {
  std::size_t layer = 0;
  GateDecision decision;
};

struct ForwardResult {
  Tensor logits;
  Tensor task_loss;
  Tensor balance_loss;  // empty when no learned gate is active
  std::vector<LayerRoute> routes;
  MoeStats moe;
  double mean_selected() const;
};

struct TransformerBlock {
  AttentionWeights attn;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::optional<Expert> ffn;
  std::optional<MoELayer> moe;
};

// Post-LN transformer language model with optional MoE FFN slots.
class TransformerLM {
 public:
  explicit TransformerLM(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ForwardResult forward(const Batch& batch, const ForwardContext& ctx) const;

  // Shared -> sparse for every MoE slot (spawn experts, attach fresh gates).
  void diversify();
  // True once any MoE slot holds multiple experts.
  bool sparse() const;
  bool has_gate() const;

  // Stable, named parameter list.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  void zero_grad();

  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

 private:
  GateParams fresh_gate(std::size_t layer) const;

  ModelConfig config_;
  Tensor tok_emb_, pos_emb_, head_w_, head_b_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace evomoe
