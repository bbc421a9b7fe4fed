#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "evomoe/checkpoint.hpp"
#include "evomoe/epsim.hpp"
#include "evomoe/flops.hpp"
#include "evomoe/trainer.hpp"

namespace evomoe::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kMetricsVersion = 1;
constexpr int kTraceVersion = 1;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// Config file, then EVOMOE_SEED, then --set overrides in order.
ModelConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  ModelConfig cfg = load_config(path);
  if (const char* seed = std::getenv("EVOMOE_SEED"); seed != nullptr && *seed != '\0') {
    apply_override(cfg, std::string("train.seed=") + seed);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

// Keeps lines of a resumed run's stream that precede the resume point.
void truncate_lines(const fs::path& path, bool has_header, const std::function<bool(const std::string&)>& keep) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  bool first = true;
  while (std::getline(in, line)) {
    if ((first && has_header) || keep(line)) kept += line + '\n';
    first = false;
  }
  in.close();
  write_text(path, kept);
}

std::int64_t leading_int(const std::string& line) {
  std::int64_t v = 0;
  std::istringstream(line) >> v;
  return v;
}

struct TrainArgs {
  std::string config;
  std::string out = "run";
  std::string resume;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const std::string started = utc_now();
  std::optional<TrainState> state;
  if (!a.resume.empty()) {
    state.emplace(load_state(a.resume));
  } else {
    state.emplace(init_state(resolve_config(a.config, a.overrides)));
  }
  const auto& cfg = state->config;
  const std::int64_t start_iter = state->iteration;

  const fs::path dir(a.out);
  if (start_iter >= cfg.total_iters) {
    err << "run already complete at iteration " << start_iter << "; nothing to do\n";
    out << json{{"out", dir.string()}, {"iterations", start_iter}, {"config_hash", config_hash(cfg)}}.dump() << '\n';
    return kOk;
  }
  fs::create_directories(dir / "checkpoints");
  const auto metrics_path = dir / "metrics.jsonl";
  const auto trace_path = dir / "routing.csv";
  const auto tokens_path = dir / "routing_top_tokens.json";

  if (start_iter == 0) {
    fs::remove(metrics_path);
    fs::remove(trace_path);
  } else {
    truncate_lines(metrics_path, false, [&](const std::string& l) {
      return json::parse(l, nullptr, false).value("iter", std::int64_t{-1}) < start_iter;
    });
    truncate_lines(trace_path, true, [&](const std::string& l) { return leading_int(l) < start_iter; });
  }

  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw Error("cannot write " + metrics_path.string());
  std::vector<std::string> checkpoints;

  TrainCallbacks cb;
  cb.on_metrics = [&](const StepMetrics& m) {
    metrics << to_json(m) << '\n';
    err << "iter " << m.iter << " " << to_string(m.phase) << " loss " << m.task_loss << " tau " << m.temperature
        << " experts " << m.mean_selected_experts << '\n';
  };
  cb.on_checkpoint = [&](const TrainState& s, const std::string& label) {
    const auto p = dir / "checkpoints" / (label + ".ckpt");
    save_state(s, p);
    checkpoints.push_back(p.string());
  };

  TrainOutcome outcome;
  try {
    outcome = train(*state, cb);
  } catch (const TrainingAborted& e) {
    metrics.flush();
    const auto snap = dir / "nan_snapshot.ckpt";
    save_state(*state, snap);
    write_text(dir / "nan_diagnostic.json",
               json{{"iteration", e.iteration()}, {"error", e.what()}, {"snapshot", snap.string()}}.dump(2) + "\n");
    err << "numerical abort: " << e.what() << " (snapshot " << snap.string() << ")\n";
    return kNumericAbort;
  }
  metrics.close();

  {
    std::ostringstream csv;
    outcome.trace.write_csv(csv);
    std::string body = csv.str();
    if (start_iter > 0 && fs::exists(trace_path)) body = body.substr(body.find('\n') + 1);
    std::ofstream f(trace_path, std::ios::app);
    f << body;
  }
  write_text(tokens_path, outcome.trace.top_tokens_json() + "\n");
  if (checkpoints.empty()) {
    const auto p = dir / "checkpoints" / "final.ckpt";
    save_state(*state, p);
    checkpoints.push_back(p.string());
  }

  json manifest;
  manifest["config_hash"] = config_hash(cfg);
  manifest["seed"] = cfg.seed;
  manifest["start_iter"] = start_iter;
  manifest["end_iter"] = state->iteration;
  manifest["outputs"] = {{"metrics", metrics_path.string()},
                         {"routing_trace", trace_path.string()},
                         {"routing_top_tokens", tokens_path.string()},
                         {"checkpoints", checkpoints}};
  manifest["artifact_versions"] = {
      {"checkpoint", kCheckpointVersion}, {"metrics", kMetricsVersion}, {"routing_trace", kTraceVersion}};
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_now();
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "config.ini", canonical_config_text(cfg));

  json summary{{"out", dir.string()}, {"iterations", state->iteration}, {"config_hash", config_hash(cfg)}};
  if (!outcome.history.empty()) summary["final_task_loss"] = outcome.history.back().task_loss;
  out << summary.dump() << '\n';
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& split_name, std::ostream& out) {
  const Split split = parse_split(split_name);
  const TrainState state = load_state(ckpt);
  const EvalResult r = evaluate(state, split);
  out << json{{"split", to_string(split)}, {"ppl", r.ppl}, {"tokens", r.tokens}}.dump() << '\n';
  return kOk;
}

int cmd_gate_sweep(const std::string& config, const std::vector<std::string>& overrides, const std::string& ckpt,
                   const std::vector<double>& temps, const std::string& split_name, std::ostream& out) {
  if (temps.empty()) throw ConfigError("--temps needs at least one temperature");
  const Split split = parse_split(split_name);
  TrainState state = ckpt.empty() ? init_state(resolve_config(config, overrides)) : load_state(ckpt);
  if (!state.model.sparse()) state.model.diversify();
  if (!state.model.has_gate()) throw ConfigError("gate sweep needs a learned gate and at least one MoE layer");
  out << "tau,mean_selected_experts,ppl\n";
  for (double tau : temps) {
    EvalOptions opt;
    opt.tau = tau;
    opt.force_dense = true;
    const EvalResult r = evaluate(state, split, opt);
    out << json(tau).dump() << ',' << json(r.mean_selected_experts).dump() << ',' << json(r.ppl).dump() << '\n';
  }
  return kOk;
}

struct SimArgs {
  std::string trace;
  std::string out;
  Topology topo;
  std::size_t experts_per_worker = 0;
  std::uint64_t bytes_per_token = 64 * 8;
};

int cmd_sim(const SimArgs& a, std::ostream& out) {
  std::ifstream in(a.trace);
  if (!in) throw ConfigError("cannot open trace '" + a.trace + "'");
  const RoutingTrace trace = RoutingTrace::read_csv(in);
  const Assignment assignment = assignment_from_trace(trace, a.topo, a.experts_per_worker, a.bytes_per_token);
  const std::string report = sim_report_json(assignment, a.topo);
  if (!a.out.empty()) write_text(a.out, report + "\n");
  out << report << '\n';
  return kOk;
}

int cmd_flops(const std::string& config, const std::vector<std::string>& overrides, std::ostream& out) {
  const ModelConfig cfg = resolve_config(config, overrides);
  const bool moe = !cfg.moe_layers().empty();
  const std::size_t k = cfg.gate == GateKind::kTopK ? cfg.top_k : 1;
  const FlopsReport report = flops_count(cfg, moe ? FlopsMode::kTopK : FlopsMode::kDense, k);
  const FlopsReport dense = flops_count(cfg, FlopsMode::kDense);
  const FlopsReport top1 = flops_count(cfg, moe ? FlopsMode::kTopK : FlopsMode::kDense, 1);

  json j = json::parse(to_json(report));
  const std::uint64_t expected = cfg.moe_layers().size() * cfg.d_model * cfg.n_experts;
  const std::uint64_t delta = top1.activated_params_per_token - dense.activated_params_per_token;
  j["identity_check"] = {{"dense_activated_params", dense.activated_params_per_token},
                         {"top1_activated_params", top1.activated_params_per_token},
                         {"expected_delta", expected},
                         {"actual_delta", delta},
                         {"holds", delta == expected}};
  out << j.dump(2) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EvoMoE training lab", "evomoe"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "evomoe 0.1.0");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("config", train_args.config, "INI config file");
  train->add_option("--out", train_args.out, "Output directory")->capture_default_str();
  train->add_option("--resume", train_args.resume, "Checkpoint to continue from");
  train->add_option("--set", train_args.overrides, "Override section.key=value")->take_all();

  std::string eval_ckpt, eval_split = "valid";
  auto* eval = app.add_subcommand("eval", "Perplexity of a checkpoint");
  eval->add_option("checkpoint", eval_ckpt)->required();
  eval->add_option("--split", eval_split)->capture_default_str();

  std::string sweep_config, sweep_ckpt, sweep_split = "valid";
  std::vector<std::string> sweep_overrides;
  std::vector<double> sweep_temps;
  auto* sweep = app.add_subcommand("gate-sweep", "Mean selected experts and ppl per temperature");
  sweep->add_option("config", sweep_config, "INI config file");
  sweep->add_option("--ckpt", sweep_ckpt, "Evaluate this checkpoint instead of a fresh model");
  sweep->add_option("--temps", sweep_temps, "Temperatures, in output order")->delimiter(',')->required();
  sweep->add_option("--split", sweep_split)->capture_default_str();
  sweep->add_option("--set", sweep_overrides)->take_all();

  SimArgs sim_args;
  std::size_t d_model = 64;
  auto* sim = app.add_subcommand("sim", "Naive vs hierarchical all-to-all on a routing trace");
  sim->add_option("trace", sim_args.trace, "routing.csv")->required();
  sim->add_option("--out", sim_args.out, "Also write the report here");
  sim->add_option("--nodes", sim_args.topo.nodes)->capture_default_str();
  sim->add_option("--gpus-per-node", sim_args.topo.gpus_per_node)->capture_default_str();
  sim->add_option("--nics-per-node", sim_args.topo.nics_per_node)->capture_default_str();
  sim->add_option("--intra-bw", sim_args.topo.intra_bw, "bytes/s")->capture_default_str();
  sim->add_option("--inter-bw", sim_args.topo.inter_bw, "bytes/s")->capture_default_str();
  sim->add_option("--intra-latency", sim_args.topo.intra_latency, "s")->capture_default_str();
  sim->add_option("--inter-latency", sim_args.topo.inter_latency, "s")->capture_default_str();
  sim->add_option("--experts-per-worker", sim_args.experts_per_worker, "0 = infer from trace");
  sim->add_option("--d-model", d_model, "Token width; bytes per token = 8 * d_model")->capture_default_str();

  std::string flops_config;
  std::vector<std::string> flops_overrides;
  auto* flops = app.add_subcommand("flops", "Parameter and FLOPs accounting");
  flops->add_option("config", flops_config)->required();
  flops->add_option("--set", flops_overrides)->take_all();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << "evomoe 0.1.0\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*train) {
      if (train_args.config.empty() && train_args.resume.empty()) throw ConfigError("train needs a config or --resume");
      return cmd_train(train_args, out, err);
    }
    if (*eval) return cmd_eval(eval_ckpt, eval_split, out);
    if (*sweep) {
      if (sweep_config.empty() && sweep_ckpt.empty()) throw ConfigError("gate-sweep needs a config or --ckpt");
      return cmd_gate_sweep(sweep_config, sweep_overrides, sweep_ckpt, sweep_temps, sweep_split, out);
    }
    if (*sim) {
      sim_args.bytes_per_token = 8 * static_cast<std::uint64_t>(d_model);
      return cmd_sim(sim_args, out);
    }
    if (*flops) return cmd_flops(flops_config, flops_overrides, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParameterError& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const CorruptArtifactError& e) {
    err << "corrupt artifact: " << e.what() << '\n';
    return kCorruptArtifact;
  } catch (const NumericError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace evomoe::cli
