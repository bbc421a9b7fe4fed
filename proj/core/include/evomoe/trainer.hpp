#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evomoe/checkpoint.hpp"
#include "evomoe/config.hpp"
#include "evomoe/corpus.hpp"
#include "evomoe/error.hpp"
#include "evomoe/model.hpp"
#include "evomoe/optimizer.hpp"
#include "evomoe/routing.hpp"

namespace evomoe {

enum class Phase { kShared, kDense, kSparse };

// shared iff iter < T_S; dense iff T_S <= iter < T_D; sparse otherwise.
Phase phase_at(const ModelConfig& config, std::int64_t iter);
std::string to_string(Phase phase);

// NaN/Inf during a step; `iteration` is the step that failed.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::int64_t iteration)
      : NumericError("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

struct TrainState {
  ModelConfig config;
  std::shared_ptr<const Corpus> corpus;
  TransformerLM model;
  AdamState adam;
  Rng model_rng;  // dropout and gate noise
  Rng data_rng;   // batch sampling
  std::int64_t iteration = 0;  // next step to run
  double cumulative_flops = 0.0;

  Phase phase() const { return phase_at(config, iteration); }
};

TrainState init_state(const ModelConfig& config);
// Reuses an already generated corpus (must match the config).
TrainState init_state(const ModelConfig& config, std::shared_ptr<const Corpus> corpus);

Checkpoint snapshot(const TrainState& state);
TrainState restore(const Checkpoint& ckpt, std::shared_ptr<const Corpus> corpus = nullptr);
void save_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_state(const std::filesystem::path& path, std::shared_ptr<const Corpus> corpus = nullptr);

// Task loss alone in the shared phase, task + balance afterwards.
// Throws InvariantError if a balance term is supplied in the shared phase.
Tensor objective(const Tensor& task_loss, const Tensor& balance_loss, Phase phase);

struct StepMetrics {
  std::int64_t iter = 0;
  Phase phase = Phase::kShared;
  double task_loss = 0.0;
  double balance_loss = 0.0;
  double temperature = 0.0;
  double mean_selected_experts = 0.0;
  double tokens_per_sec = 0.0;
  double cumulative_flops = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  // Mean over MoE layers of the load coefficient of variation (0 without routing).
  double load_cv = 0.0;
};

// One JSON object with the metrics-stream keys.
std::string to_json(const StepMetrics& metrics);

struct StepResult {
  StepMetrics metrics;
  Batch batch;
  std::vector<LayerRoute> routes;
};

// Runs iteration state.iteration (diversifying first when it equals T_S > 0)
// and advances the state by one.
StepResult train_step(TrainState& state);

struct TrainCallbacks {
  std::function<void(const StepMetrics&)> on_metrics;                       // every log_every steps
  std::function<void(const TrainState&, const std::string&)> on_checkpoint;  // label: shared/dense/final
  std::function<void(const StepResult&)> on_step;
};

struct TrainOutcome {
  std::vector<StepMetrics> history;  // every step run by this call
  RoutingTrace trace;
};

// Runs until total_iters. Checkpoints fire after the last step of each
// non-empty phase (T_S, T_D) and at the end.
TrainOutcome train(TrainState& state, const TrainCallbacks& callbacks = {});

struct EvalOptions {
  std::optional<double> tau;  // override the schedule temperature
  bool force_dense = false;   // DTS threshold selection regardless of iteration
  std::size_t batch_docs = 64;
};

struct EvalResult {
  double ppl = 0.0;
  double mean_ce = 0.0;
  std::size_t tokens = 0;
  double mean_selected_experts = 0.0;
};

// Perplexity over a whole split with dropout and gate noise off. Never touches
// parameters, optimizer state or training rng streams.
EvalResult evaluate(const TrainState& state, Split split, const EvalOptions& options = {});

// Eval-mode forward of `batch`, appending one record per routed layer.
std::vector<RoutingRecord> log_routing(const TrainState& state, const Batch& batch, RoutingTrace& trace);

// Forward FLOPs per token with `experts` active experts per MoE token.
double forward_flops_per_token(const ModelConfig& config, double experts);

}  // namespace evomoe
