#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evomoe/gating.hpp"
#include "evomoe/ops.hpp"

namespace evomoe {

enum class Arch { kDecoderOnly, kEncoderOnly };
enum class GateKind { kDenseToSparse, kSwitch, kTopK, kHash };
enum class CorpusKind { kMarkov, kCopy, kMixture };

// Everything needed to build, train and account for a model. Field names
// double as config-file keys ("section.field").
struct ModelConfig {
  // [model]
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t heads = 4;
  std::size_t vocab = 64;
  std::size_t n_experts = 4;
  // Layer l (0-based) hosts an MoE FFN iff moe_every > 0 and l % moe_every == 0,
  // i.e. the odd layers in 1-based counting for moe_every = 2. 0 disables MoE.
  std::size_t moe_every = 2;
  std::size_t seq_len = 16;
  Arch arch = Arch::kDecoderOnly;
  Activation activation = Activation::kRelu;
  double dropout = 0.1;

  // [gate]
  GateKind gate = GateKind::kDenseToSparse;
  std::size_t top_k = 1;
  double threshold = 0.001;
  double alpha = 0.1;
  bool gate_noise = true;
  double mask_ratio = 0.1;
  bool balance = true;
  bool balance_in_top1 = true;

  // [schedule]  0 <= shared_iters (T_S) <= dense_iters (T_D) <= total_iters (T)
  std::int64_t shared_iters = 500;
  std::int64_t dense_iters = 1500;
  std::int64_t total_iters = 5000;
  double max_temp = 2.0;
  double min_temp = 0.3;
  // Counted from shared_iters.
  std::int64_t decay_iters = 1000;
  ScheduleShape shape = ScheduleShape::kLinear;

  // [train]
  double lr = 3e-4;
  std::int64_t warmup_iters = 100;
  double lr_power = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 0.0;
  std::size_t batch_size = 8;
  double label_smoothing = 0.0;
  std::int64_t log_every = 10;
  std::int64_t trace_every = 50;
  std::uint64_t seed = 1;
  std::vector<std::int32_t> track_tokens = {0};

  // [corpus]
  CorpusKind corpus = CorpusKind::kMixture;
  std::size_t corpus_tokens = 200000;
  std::size_t sub_languages = 4;

  std::vector<std::size_t> moe_layers() const;
  bool is_moe_layer(std::size_t layer) const;
  TemperatureSchedule schedule() const;
  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::filesystem::path& path);
// "section.key=value"; throws ConfigError on unknown keys or bad values.
void apply_override(ModelConfig& config, const std::string& assignment);
// Sorted "[section]\nkey = value" text; a fixed point of parse_config.
std::string canonical_config_text(const ModelConfig& config);
// Hex SHA-256 of the canonical text.
std::string config_hash(const ModelConfig& config);

std::string to_string(GateKind kind);
std::string to_string(CorpusKind kind);

}  // namespace evomoe
