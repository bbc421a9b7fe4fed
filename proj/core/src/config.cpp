#include "evomoe/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "evomoe/checkpoint.hpp"
#include "evomoe/error.hpp"

namespace evomoe {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + raw + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename E>
E parse_enum(const std::string& key, const std::string& raw,
             std::initializer_list<std::pair<const char*, E>> names) {
  const std::string v = trim(raw);
  for (const auto& [name, value] : names)
    if (v == name) return value;
  std::string options;
  for (const auto& [name, value] : names) options += std::string(options.empty() ? "" : "|") + name;
  throw ConfigError("config key '" + key + "': expected one of " + options + ", got '" + raw + "'");
}

const std::initializer_list<std::pair<const char*, Arch>> kArchNames = {
    {"decoder-only", Arch::kDecoderOnly}, {"encoder-only", Arch::kEncoderOnly}};
const std::initializer_list<std::pair<const char*, Activation>> kActivationNames = {
    {"relu", Activation::kRelu}, {"gelu", Activation::kGelu}};
const std::initializer_list<std::pair<const char*, GateKind>> kGateNames = {
    {"dts", GateKind::kDenseToSparse}, {"switch", GateKind::kSwitch}, {"topk", GateKind::kTopK},
    {"hash", GateKind::kHash}};
const std::initializer_list<std::pair<const char*, CorpusKind>> kCorpusNames = {
    {"markov", CorpusKind::kMarkov}, {"copy", CorpusKind::kCopy}, {"mixture", CorpusKind::kMixture}};
const std::initializer_list<std::pair<const char*, ScheduleShape>> kShapeNames = {
    {"linear", ScheduleShape::kLinear}, {"exponential", ScheduleShape::kExponential}};

template <typename E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return "?";
}

struct Field {
  std::function<std::string(const ModelConfig&)> get;
  std::function<void(ModelConfig&, const std::string&)> set;
};

template <typename T>
Field number_field(T ModelConfig::*member, const std::string& key) {
  return {[member](const ModelConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member, key](ModelConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); }};
}

Field bool_field(bool ModelConfig::*member, const std::string& key) {
  return {[member](const ModelConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](ModelConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

template <typename E>
Field enum_field(E ModelConfig::*member, const std::string& key,
                 std::initializer_list<std::pair<const char*, E>> names) {
  return {[member, names](const ModelConfig& c) { return enum_name(c.*member, names); },
          [member, key, names](ModelConfig& c, const std::string& v) {
            c.*member = parse_enum(key, v, names);
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto num = [&t](const std::string& key, auto member) { t.emplace(key, number_field(member, key)); };
    num("model.layers", &ModelConfig::layers);
    num("model.d_model", &ModelConfig::d_model);
    num("model.d_ff", &ModelConfig::d_ff);
    num("model.heads", &ModelConfig::heads);
    num("model.vocab", &ModelConfig::vocab);
    num("model.n_experts", &ModelConfig::n_experts);
    num("model.moe_every", &ModelConfig::moe_every);
    num("model.seq_len", &ModelConfig::seq_len);
    num("model.dropout", &ModelConfig::dropout);
    t.emplace("model.arch", enum_field(&ModelConfig::arch, "model.arch", kArchNames));
    t.emplace("model.activation",
              enum_field(&ModelConfig::activation, "model.activation", kActivationNames));

    t.emplace("gate.kind", enum_field(&ModelConfig::gate, "gate.kind", kGateNames));
    num("gate.top_k", &ModelConfig::top_k);
    num("gate.threshold", &ModelConfig::threshold);
    num("gate.alpha", &ModelConfig::alpha);
    num("gate.mask_ratio", &ModelConfig::mask_ratio);
    t.emplace("gate.noise", bool_field(&ModelConfig::gate_noise, "gate.noise"));
    t.emplace("gate.balance", bool_field(&ModelConfig::balance, "gate.balance"));
    t.emplace("gate.balance_in_top1", bool_field(&ModelConfig::balance_in_top1, "gate.balance_in_top1"));

    num("schedule.shared_iters", &ModelConfig::shared_iters);
    num("schedule.dense_iters", &ModelConfig::dense_iters);
    num("schedule.total_iters", &ModelConfig::total_iters);
    num("schedule.max_temp", &ModelConfig::max_temp);
    num("schedule.min_temp", &ModelConfig::min_temp);
    num("schedule.decay_iters", &ModelConfig::decay_iters);
    t.emplace("schedule.shape", enum_field(&ModelConfig::shape, "schedule.shape", kShapeNames));

    num("train.lr", &ModelConfig::lr);
    num("train.warmup_iters", &ModelConfig::warmup_iters);
    num("train.lr_power", &ModelConfig::lr_power);
    num("train.beta1", &ModelConfig::beta1);
    num("train.beta2", &ModelConfig::beta2);
    num("train.adam_eps", &ModelConfig::adam_eps);
    num("train.weight_decay", &ModelConfig::weight_decay);
    num("train.clip_norm", &ModelConfig::clip_norm);
    num("train.batch_size", &ModelConfig::batch_size);
    num("train.label_smoothing", &ModelConfig::label_smoothing);
    num("train.log_every", &ModelConfig::log_every);
    num("train.trace_every", &ModelConfig::trace_every);
    num("train.seed", &ModelConfig::seed);
    t.emplace("train.track_tokens",
              Field{[](const ModelConfig& c) {
                      std::string out;
                      for (std::size_t i = 0; i < c.track_tokens.size(); ++i) {
                        if (i) out += ",";
                        out += std::to_string(c.track_tokens[i]);
                      }
                      return out;
                    },
                    [](ModelConfig& c, const std::string& v) {
                      c.track_tokens.clear();
                      std::stringstream in(v);
                      std::string item;
                      while (std::getline(in, item, ',')) {
                        if (!trim(item).empty())
                          c.track_tokens.push_back(parse_number<std::int32_t>("train.track_tokens", item));
                      }
                    }});

    t.emplace("corpus.kind", enum_field(&ModelConfig::corpus, "corpus.kind", kCorpusNames));
    num("corpus.tokens", &ModelConfig::corpus_tokens);
    num("corpus.sub_languages", &ModelConfig::sub_languages);
    return t;
  }();
  return table;
}

void set_field(ModelConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, value);
}

}  // namespace

std::vector<std::size_t> ModelConfig::moe_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers; ++l)
    if (is_moe_layer(l)) out.push_back(l);
  return out;
}

bool ModelConfig::is_moe_layer(std::size_t layer) const {
  return moe_every > 0 && layer < layers && layer % moe_every == 0;
}

TemperatureSchedule ModelConfig::schedule() const {
  TemperatureSchedule s;
  s.max_temp = max_temp;
  s.min_temp = min_temp;
  s.decay_iters = decay_iters;
  s.dense_iters = dense_iters - shared_iters;
  s.shape = shape;
  return s;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(d_model >= 2, "model.d_model must be at least 2");
  require(heads >= 1 && d_model % heads == 0, "model.d_model must be divisible by model.heads");
  require(d_ff >= 1, "model.d_ff must be positive");
  require(vocab >= 2, "model.vocab must be at least 2");
  require(seq_len >= 2, "model.seq_len must be at least 2");
  require(dropout >= 0.0 && dropout < 1.0, "model.dropout must lie in [0, 1)");
  if (!moe_layers().empty()) {
    require(n_experts >= 2, "model.n_experts must be at least 2 when MoE layers exist");
  }
  require(top_k >= 1 && top_k <= std::max<std::size_t>(n_experts, 1), "gate.top_k must lie in [1, n_experts]");
  require(threshold >= 0.0 && threshold < 1.0, "gate.threshold must lie in [0, 1)");
  require(alpha >= 0.0, "gate.alpha must be non-negative");
  require(mask_ratio >= 0.0 && mask_ratio <= 1.0, "gate.mask_ratio must lie in [0, 1]");
  require(0 <= shared_iters && shared_iters <= dense_iters && dense_iters <= total_iters,
          "schedule requires 0 <= shared_iters <= dense_iters <= total_iters");
  schedule().validate();
  require(lr > 0.0, "train.lr must be positive");
  require(warmup_iters >= 0, "train.warmup_iters must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  require(adam_eps > 0.0, "train.adam_eps must be positive");
  require(weight_decay >= 0.0, "train.weight_decay must be non-negative");
  require(clip_norm >= 0.0, "train.clip_norm must be non-negative");
  require(batch_size >= 1, "train.batch_size must be positive");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, "train.label_smoothing must lie in [0, 1)");
  require(log_every >= 1 && trace_every >= 1, "logging intervals must be positive");
  for (auto t : track_tokens) require(t >= 0 && static_cast<std::size_t>(t) < vocab, "tracked token outside vocab");
  require(corpus_tokens >= 1, "corpus.tokens must be positive");
  if (corpus == CorpusKind::kMixture) {
    require(sub_languages >= 1 && vocab % sub_languages == 0,
            "corpus.sub_languages must divide model.vocab for the mixture corpus");
  }
}

ModelConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ModelConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) set_field(config, section + "." + key, value.data());
  }
  return config;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void apply_override(ModelConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_field(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string canonical_config_text(const ModelConfig& config) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), field.get(config));
  }
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, entries] : sections) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto& [key, value] : entries) out << key << " = " << value << '\n';
  }
  return out.str();
}

std::string config_hash(const ModelConfig& config) { return sha256_hex(canonical_config_text(config)); }

std::string to_string(GateKind kind) { return enum_name(kind, kGateNames); }
std::string to_string(CorpusKind kind) { return enum_name(kind, kCorpusNames); }

}  // namespace evomoe
