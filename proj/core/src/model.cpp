#include "evomoe/model.hpp"

#include <numeric>
#include <string>

#include "evomoe/error.hpp"
#include "evomoe/ops.hpp"

namespace evomoe {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskProb = 0.15;

Tensor normal_param(Shape shape, Rng& rng, double stddev = kInitStd) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = normal(rng, 0.0, stddev);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor filled_param(std::size_t n, double value) {
  return Tensor::parameter({n}, std::vector<double>(n, value));
}

}  // namespace

double ForwardResult::mean_selected() const {
  if (routes.empty()) return 1.0;
  double total = 0.0;
  for (const auto& r : routes) total += r.decision.mean_selected();
  return total / static_cast<double>(routes.size());
}

Batch make_lm_batch(const Corpus& corpus, Split split, std::span<const std::size_t> docs, std::size_t seq_len) {
  if (corpus.doc_len < seq_len + 1) throw ConfigError("documents are shorter than seq_len + 1");
  Batch b;
  b.sequences = docs.size();
  b.seq_len = seq_len;
  b.inputs.reserve(docs.size() * seq_len);
  b.targets.reserve(docs.size() * seq_len);
  for (std::size_t d : docs) {
    const auto doc = corpus.document(split, d);
    b.inputs.insert(b.inputs.end(), doc.begin(), doc.begin() + static_cast<std::ptrdiff_t>(seq_len));
    b.targets.insert(b.targets.end(), doc.begin() + 1, doc.begin() + static_cast<std::ptrdiff_t>(seq_len + 1));
  }
  return b;
}

Batch make_mlm_batch(const Corpus& corpus, Split split, std::span<const std::size_t> docs, std::size_t seq_len,
                     Rng* rng) {
  if (corpus.doc_len < seq_len) throw ConfigError("documents are shorter than seq_len");
  const auto mask_id = static_cast<std::int32_t>(corpus.vocab);
  Batch b;
  b.sequences = docs.size();
  b.seq_len = seq_len;
  for (std::size_t row = 0; row < docs.size(); ++row) {
    const auto doc = corpus.document(split, docs[row]);
    bool any = false;
    for (std::size_t t = 0; t < seq_len; ++t) {
      const bool masked = rng ? uniform01(*rng) < kMaskProb
                              : (mix_seed(docs[row] * 1315423911ULL + t) % 1000) < kMaskProb * 1000;
      const bool force = !any && t + 1 == seq_len;
      if (masked || force) {
        any = true;
        b.inputs.push_back(mask_id);
        b.targets.push_back(doc[t]);
        b.scored.push_back(row * seq_len + t);
      } else {
        b.inputs.push_back(doc[t]);
      }
    }
  }
  return b;
}

Batch make_batch(const ModelConfig& config, const Corpus& corpus, Split split, std::span<const std::size_t> docs,
                 Rng* rng) {
  if (config.arch == Arch::kEncoderOnly) return make_mlm_batch(corpus, split, docs, config.seq_len, rng);
  return make_lm_batch(corpus, split, docs, config.seq_len);
}

TransformerLM::TransformerLM(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t rows = config_.vocab + (config_.arch == Arch::kEncoderOnly ? 1 : 0);
  Rng rng(derive_seed(config_.seed, 0x1));
  tok_emb_ = normal_param({rows, d}, rng);
  pos_emb_ = normal_param({config_.seq_len, d}, rng);
  blocks_.resize(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto& blk = blocks_[l];
    blk.attn.wq = normal_param({d, d}, rng);
    blk.attn.wk = normal_param({d, d}, rng);
    blk.attn.wv = normal_param({d, d}, rng);
    blk.attn.wo = normal_param({d, d}, rng);
    blk.ln1_gain = filled_param(d, 1.0);
    blk.ln1_bias = filled_param(d, 0.0);
    blk.ln2_gain = filled_param(d, 1.0);
    blk.ln2_bias = filled_param(d, 0.0);
    Expert shared = Expert::init(d, config_.d_ff, rng, kInitStd);
    if (!config_.is_moe_layer(l)) {
      blk.ffn = std::move(shared);
    } else if (config_.shared_iters > 0) {
      blk.moe.emplace(std::move(shared));
    } else {
      // No shared phase: independently initialised experts from the start.
      Rng expert_rng(derive_seed(config_.seed, 3000 + l));
      std::vector<Expert> experts;
      for (std::size_t i = 0; i < config_.n_experts; ++i)
        experts.push_back(Expert::init(d, config_.d_ff, expert_rng, kInitStd));
      blk.moe.emplace(std::move(experts), fresh_gate(l));
    }
  }
  head_w_ = normal_param({d, config_.vocab}, rng);
  head_b_ = filled_param(config_.vocab, 0.0);
}

GateParams TransformerLM::fresh_gate(std::size_t layer) const {
  GateParams g;
  g.threshold = config_.threshold;
  g.alpha = config_.alpha;
  g.noise_enabled = config_.gate_noise;
  if (config_.gate != GateKind::kHash) {
    Rng rng(derive_seed(config_.seed, 1000 + layer));
    g.w_g = normal_param({config_.d_model, config_.n_experts}, rng);
  }
  return g;
}

void TransformerLM::diversify() {
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto& moe = blocks_[l].moe;
    if (!moe || moe->mode() == LayerMode::kSparse) continue;
    moe->diversify(config_.n_experts, config_.mask_ratio, derive_seed(config_.seed, 2000 + l), fresh_gate(l));
  }
}

bool TransformerLM::sparse() const {
  for (const auto& blk : blocks_)
    if (blk.moe && blk.moe->mode() == LayerMode::kSparse) return true;
  return false;
}

bool TransformerLM::has_gate() const {
  for (const auto& blk : blocks_)
    if (blk.moe && blk.moe->mode() == LayerMode::kSparse && blk.moe->gate().w_g) return true;
  return false;
}

std::vector<std::pair<std::string, Tensor>> TransformerLM::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add_expert = [&out](const std::string& prefix, const Expert& e) {
    out.emplace_back(prefix + ".w1", e.w1);
    out.emplace_back(prefix + ".b1", e.b1);
    out.emplace_back(prefix + ".w2", e.w2);
    out.emplace_back(prefix + ".b2", e.b2);
  };
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& blk = blocks_[l];
    const std::string p = "layer" + std::to_string(l);
    out.emplace_back(p + ".attn.wq", blk.attn.wq);
    out.emplace_back(p + ".attn.wk", blk.attn.wk);
    out.emplace_back(p + ".attn.wv", blk.attn.wv);
    out.emplace_back(p + ".attn.wo", blk.attn.wo);
    out.emplace_back(p + ".ln1.gain", blk.ln1_gain);
    out.emplace_back(p + ".ln1.bias", blk.ln1_bias);
    out.emplace_back(p + ".ln2.gain", blk.ln2_gain);
    out.emplace_back(p + ".ln2.bias", blk.ln2_bias);
    if (blk.ffn) add_expert(p + ".ffn", *blk.ffn);
    if (blk.moe) {
      if (blk.moe->mode() == LayerMode::kShared) {
        add_expert(p + ".moe.shared", blk.moe->shared_expert());
      } else {
        for (std::size_t i = 0; i < blk.moe->experts().size(); ++i)
          add_expert(p + ".moe.expert" + std::to_string(i), blk.moe->experts()[i]);
        if (blk.moe->gate().w_g) out.emplace_back(p + ".moe.gate", blk.moe->gate().w_g);
      }
    }
  }
  out.emplace_back("head.w", head_w_);
  out.emplace_back("head.b", head_b_);
  return out;
}

void TransformerLM::zero_grad() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

ForwardResult TransformerLM::forward(const Batch& batch, const ForwardContext& ctx) const {
  const std::size_t seq = batch.seq_len;
  if (seq != config_.seq_len) throw DimensionError("batch sequence length differs from model seq_len");
  if (batch.sequences == 0) throw DimensionError("empty batch");
  if (ctx.training && ctx.rng == nullptr) throw ParameterError("training forward needs an rng");
  const bool drop = ctx.training && config_.dropout > 0.0;
  const bool causal = config_.arch == Arch::kDecoderOnly;

  std::vector<std::int32_t> positions(batch.rows());
  for (std::size_t r = 0; r < positions.size(); ++r) positions[r] = static_cast<std::int32_t>(r % seq);

  ForwardResult result;
  Tensor x = add(embedding(tok_emb_, batch.inputs), embedding(pos_emb_, positions));
  if (drop) x = dropout(x, config_.dropout, *ctx.rng);

  std::vector<Tensor> balance_terms;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& blk = blocks_[l];
    Tensor a = multi_head(x, x, x, blk.attn, config_.heads, seq, causal);
    if (drop) a = dropout(a, config_.dropout, *ctx.rng);
    x = layer_norm(add(x, a), blk.ln1_gain, blk.ln1_bias);

    Tensor f;
    if (blk.ffn) {
      f = blk.ffn->forward(x, config_.activation);
    } else if (blk.moe->mode() == LayerMode::kShared) {
      f = blk.moe->shared_forward(x, config_.activation);
    } else {
      const auto& gate = blk.moe->gate();
      GateDecision decision;
      bool top1_phase = true;
      switch (config_.gate) {
        case GateKind::kDenseToSparse: {
          Rng* noise = ctx.training && gate.noise_enabled ? ctx.rng : nullptr;
          decision = dts_gate(x, gate, ctx.tau, ctx.iter, ctx.dense_until, noise);
          top1_phase = ctx.iter >= ctx.dense_until;
          break;
        }
        case GateKind::kSwitch:
          decision = topk_gate(x, gate.w_g, 1, false);
          break;
        case GateKind::kTopK:
          decision = topk_gate(x, gate.w_g, config_.top_k, true);
          top1_phase = config_.top_k == 1;
          break;
        case GateKind::kHash:
          decision = hash_gate(batch.inputs, config_.n_experts);
          break;
      }
      f = blk.moe->sparse_forward(x, decision, config_.activation, &result.moe);
      if (config_.gate != GateKind::kHash && config_.balance && (!top1_phase || config_.balance_in_top1)) {
        balance_terms.push_back(balance_loss(decision, gate.alpha));
      }
      result.routes.push_back({l, std::move(decision)});
    }
    if (drop) f = dropout(f, config_.dropout, *ctx.rng);
    x = layer_norm(add(x, f), blk.ln2_gain, blk.ln2_bias);
  }

  result.logits = add_bias(matmul(x, head_w_), head_b_);
  const Tensor scored = batch.scored.empty() ? result.logits : gather_rows(result.logits, batch.scored);
  result.task_loss = cross_entropy(scored, batch.targets, config_.label_smoothing);
  for (auto& term : balance_terms) result.balance_loss = result.balance_loss ? add(result.balance_loss, term) : term;
  return result;
}

}  // namespace evomoe
