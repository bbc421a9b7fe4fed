#include "evomoe/trainer.hpp"

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "evomoe/flops.hpp"
#include "evomoe/random.hpp"

namespace evomoe {
namespace {

constexpr std::uint64_t kModelRngStream = 2;
constexpr std::uint64_t kDataRngStream = 4;

std::vector<std::size_t> sample_docs(const Corpus& corpus, std::size_t count, Rng& rng) {
  const auto docs = corpus.documents(Split::kTrain);
  if (docs == 0) throw ConfigError("training split is empty; increase corpus.tokens");
  std::uniform_int_distribution<std::size_t> pick(0, docs - 1);
  std::vector<std::size_t> out(count);
  for (auto& d : out) d = pick(rng);
  return out;
}

double mean_load_cv(const std::vector<LayerRoute>& routes) {
  if (routes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : routes) {
    const auto counts = r.decision.expert_counts();
    total += coefficient_of_variation(counts);
  }
  return total / static_cast<double>(routes.size());
}

ForwardContext context_for(const TrainState& state, std::int64_t iter) {
  const auto& cfg = state.config;
  ForwardContext ctx;
  ctx.iter = iter;
  ctx.dense_until = cfg.dense_iters;
  ctx.tau = temperature_at(cfg.schedule(), std::max<std::int64_t>(0, iter - cfg.shared_iters));
  return ctx;
}

}  // namespace

Phase phase_at(const ModelConfig& config, std::int64_t iter) {
  if (iter < config.shared_iters) return Phase::kShared;
  if (iter < config.dense_iters) return Phase::kDense;
  return Phase::kSparse;
}

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::kShared: return "shared";
    case Phase::kDense: return "dense";
    case Phase::kSparse: return "sparse";
  }
  return "?";
}

TrainState init_state(const ModelConfig& config) {
  config.validate();
  return init_state(config, std::make_shared<const Corpus>(make_corpus(config)));
}

TrainState init_state(const ModelConfig& config, std::shared_ptr<const Corpus> corpus) {
  config.validate();
  if (!corpus) throw ParameterError("init_state needs a corpus");
  if (corpus->vocab != config.vocab || corpus->doc_len != config.seq_len + 1) {
    throw ConfigError("corpus does not match config vocab/seq_len");
  }
  return TrainState{config,
                    std::move(corpus),
                    TransformerLM(config),
                    {},
                    Rng(derive_seed(config.seed, kModelRngStream)),
                    Rng(derive_seed(config.seed, kDataRngStream)),
                    0,
                    0.0};
}

Checkpoint snapshot(const TrainState& state) {
  Checkpoint c;
  c.config_text = canonical_config_text(state.config);
  c.iteration = state.iteration;
  c.diversified = state.model.sparse();
  c.cumulative_flops = state.cumulative_flops;
  for (const auto& [name, t] : state.model.parameters()) {
    c.params.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  c.adam = state.adam;
  c.model_rng = serialize_rng(state.model_rng);
  c.data_rng = serialize_rng(state.data_rng);
  return c;
}

TrainState restore(const Checkpoint& ckpt, std::shared_ptr<const Corpus> corpus) {
  ModelConfig cfg;
  try {
    cfg = parse_config(ckpt.config_text);
  } catch (const ConfigError& e) {
    throw CorruptArtifactError(std::string("checkpoint config: ") + e.what());
  }
  TrainState state = corpus ? init_state(cfg, std::move(corpus)) : init_state(cfg);
  if (ckpt.diversified) state.model.diversify();
  auto params = state.model.parameters();
  if (params.size() != ckpt.params.size()) throw CorruptArtifactError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& blob = ckpt.params[i];
    if (blob.name != name || blob.shape != t.shape()) {
      throw CorruptArtifactError("checkpoint parameter " + blob.name + " does not match model slot " + name);
    }
    std::copy(blob.data.begin(), blob.data.end(), t.mutable_data().begin());
  }
  for (const auto& [name, mom] : ckpt.adam.moments) {
    const auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
    if (it == params.end() || mom.m.size() != it->second.size()) {
      throw CorruptArtifactError("checkpoint optimizer state for unknown parameter " + name);
    }
  }
  state.adam = ckpt.adam;
  try {
    state.model_rng = deserialize_rng(ckpt.model_rng);
    state.data_rng = deserialize_rng(ckpt.data_rng);
  } catch (const Error& e) {
    throw CorruptArtifactError(std::string("checkpoint rng state: ") + e.what());
  }
  state.iteration = ckpt.iteration;
  state.cumulative_flops = ckpt.cumulative_flops;
  return state;
}

void save_state(const TrainState& state, const std::filesystem::path& path) {
  write_checkpoint(path, snapshot(state));
}

TrainState load_state(const std::filesystem::path& path, std::shared_ptr<const Corpus> corpus) {
  return restore(read_checkpoint(path), std::move(corpus));
}

Tensor objective(const Tensor& task_loss, const Tensor& balance_loss, Phase phase) {
  if (phase == Phase::kShared) {
    if (balance_loss) throw InvariantError("balance loss supplied during the shared phase");
    return task_loss;
  }
  return balance_loss ? add(task_loss, balance_loss) : task_loss;
}

double forward_flops_per_token(const ModelConfig& config, double experts) {
  if (experts <= 0.0 || config.moe_layers().empty()) {
    return static_cast<double>(flops_count(config, FlopsMode::kDense).forward_flops_per_token);
  }
  const double one = static_cast<double>(flops_count(config, FlopsMode::kTopK, 1).forward_flops_per_token);
  const double per_expert = 4.0 * static_cast<double>(config.d_model * config.d_ff * config.moe_layers().size());
  return one + (experts - 1.0) * per_expert;
}

std::string to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["iter"] = m.iter;
  j["phase"] = to_string(m.phase);
  j["task_loss"] = m.task_loss;
  j["balance_loss"] = m.balance_loss;
  j["temperature"] = m.temperature;
  j["mean_selected_experts"] = m.mean_selected_experts;
  j["tokens_per_sec"] = m.tokens_per_sec;
  j["cumulative_flops"] = m.cumulative_flops;
  return j.dump();
}

StepResult train_step(TrainState& state) {
  const auto& cfg = state.config;
  const std::int64_t iter = state.iteration;
  if (iter >= cfg.total_iters) throw InvariantError("train_step past total_iters");
  const auto start = std::chrono::steady_clock::now();

  if (iter == cfg.shared_iters && cfg.shared_iters > 0 && !state.model.sparse()) {
    state.model.diversify();
  }
  auto params = state.model.parameters();
  prune_moments(state.adam, params);

  const Phase phase = phase_at(cfg, iter);
  StepResult out;
  const auto docs = sample_docs(*state.corpus, cfg.batch_size, state.data_rng);
  out.batch = make_batch(cfg, *state.corpus, Split::kTrain, docs, &state.data_rng);

  ForwardContext ctx = context_for(state, iter);
  ctx.training = true;
  ctx.rng = &state.model_rng;

  const double lr = learning_rate_at(cfg, iter);
  double grad_norm = 0.0;
  ForwardResult fwd;
  try {
    fwd = state.model.forward(out.batch, ctx);
    const Tensor loss = objective(fwd.task_loss, phase == Phase::kShared ? Tensor() : fwd.balance_loss, phase);
    state.model.zero_grad();
    loss.backward();
    grad_norm = adam_step(params, state.adam, AdamConfig::from(cfg), lr);
    if (!std::isfinite(grad_norm)) throw NumericError("non-finite gradient norm");
  } catch (const NumericError& e) {
    throw TrainingAborted(e.what(), iter);
  }

  auto& m = out.metrics;
  m.iter = iter;
  m.phase = phase;
  m.task_loss = fwd.task_loss.item();
  m.balance_loss = fwd.balance_loss ? fwd.balance_loss.item() : 0.0;
  m.temperature = ctx.tau;
  m.mean_selected_experts = fwd.mean_selected();
  m.lr = lr;
  m.grad_norm = grad_norm;
  m.load_cv = mean_load_cv(fwd.routes);
  const double tokens = static_cast<double>(out.batch.rows());
  // Forward plus backward is taken as three forward passes.
  state.cumulative_flops += 3.0 * tokens * forward_flops_per_token(cfg, fwd.routes.empty() ? 0.0 : m.mean_selected_experts);
  m.cumulative_flops = state.cumulative_flops;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.tokens_per_sec = secs > 0.0 ? tokens / secs : 0.0;

  out.routes = std::move(fwd.routes);
  state.iteration = iter + 1;
  return out;
}

TrainOutcome train(TrainState& state, const TrainCallbacks& callbacks) {
  const auto& cfg = state.config;
  TrainOutcome outcome;
  outcome.trace = RoutingTrace(cfg.vocab);
  while (state.iteration < cfg.total_iters) {
    StepResult step = train_step(state);
    const auto iter = step.metrics.iter;
    for (const auto& r : step.routes) {
      outcome.trace.count_preceding(r.layer, r.decision, step.batch);
      if (iter % cfg.trace_every == 0) outcome.trace.append(iter, r.layer, r.decision, step.batch, cfg.track_tokens);
    }
    if (callbacks.on_metrics && iter % cfg.log_every == 0) callbacks.on_metrics(step.metrics);
    if (callbacks.on_step) callbacks.on_step(step);
    outcome.history.push_back(step.metrics);

    if (callbacks.on_checkpoint) {
      const auto done = state.iteration;
      if (done == cfg.total_iters) {
        callbacks.on_checkpoint(state, "final");
      } else if (done == cfg.shared_iters) {
        callbacks.on_checkpoint(state, "shared");
      } else if (done == cfg.dense_iters) {
        callbacks.on_checkpoint(state, "dense");
      }
    }
  }
  return outcome;
}

EvalResult evaluate(const TrainState& state, Split split, const EvalOptions& options) {
  const auto& cfg = state.config;
  const auto& corpus = *state.corpus;
  const std::size_t docs = corpus.documents(split);
  if (docs == 0) throw ConfigError("cannot evaluate on empty split " + to_string(split));
  if (options.batch_docs == 0) throw ParameterError("eval batch_docs must be positive");

  NoGradGuard no_grad;
  ForwardContext ctx = context_for(state, state.iteration);
  if (options.tau) ctx.tau = *options.tau;
  if (options.force_dense) ctx.dense_until = std::numeric_limits<std::int64_t>::max();

  double ce_sum = 0.0, selected_sum = 0.0;
  std::size_t tokens = 0, routed = 0;
  for (std::size_t first = 0; first < docs; first += options.batch_docs) {
    std::vector<std::size_t> ids(std::min(options.batch_docs, docs - first));
    std::iota(ids.begin(), ids.end(), first);
    const Batch batch = make_batch(cfg, corpus, split, ids, nullptr);
    const ForwardResult fwd = state.model.forward(batch, ctx);
    const double n = static_cast<double>(batch.targets.size());
    ce_sum += fwd.task_loss.item() * n;  // task loss is a per-token mean
    tokens += batch.targets.size();
    for (const auto& r : fwd.routes) {
      selected_sum += static_cast<double>(r.decision.selected_total());
      routed += r.decision.tokens;
    }
  }
  EvalResult r;
  r.tokens = tokens;
  r.mean_ce = ce_sum / static_cast<double>(tokens);
  r.ppl = std::exp(r.mean_ce);
  r.mean_selected_experts = routed ? selected_sum / static_cast<double>(routed) : 0.0;
  return r;
}

std::vector<RoutingRecord> log_routing(const TrainState& state, const Batch& batch, RoutingTrace& trace) {
  NoGradGuard no_grad;
  const ForwardResult fwd = state.model.forward(batch, context_for(state, state.iteration));
  std::vector<RoutingRecord> out;
  for (const auto& r : fwd.routes) {
    trace.count_preceding(r.layer, r.decision, batch);
    out.push_back(trace.append(state.iteration, r.layer, r.decision, batch, state.config.track_tokens));
  }
  return out;
}

}  // namespace evomoe
