#include "unforge/config.hpp"

#include "unforge/errors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <variant>

namespace unforge {

namespace {

constexpr std::array<std::pair<Scenario, std::string_view>, 13> kScenarioNames{{
    {Scenario::Finetune, "finetune"},
    {Scenario::UnlearnBaselines, "unlearn_baselines"},
    {Scenario::MoxAlphaSweep, "mox_alpha_sweep"},
    {Scenario::EtaSweep, "eta_sweep"},
    {Scenario::Ablation, "ablation"},
    {Scenario::StabilityWeightSweep, "stability_weight_sweep"},
    {Scenario::ForgetSizeSweep, "forget_size_sweep"},
    {Scenario::DirectionAnalysis, "direction_analysis"},
    {Scenario::Trajectory, "trajectory"},
    {Scenario::Continual, "continual"},
    {Scenario::Relearn, "relearn"},
    {Scenario::Overlap, "overlap"},
    {Scenario::MotivationFig1, "motivation_fig1"},
}};

using C = ExperimentConfig;
using Member = std::variant<int C::*, double C::*, std::string C::*, std::vector<double> C::*,
                            std::vector<std::uint64_t> C::*>;

struct Field {
  const char* name;
  Member member;
  const char* help;
};

// Kept alphabetical; canonical_text relies on it.
const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      {"alpha", &C::alpha, "extrapolation strength"},
      {"alphas", &C::alphas, "alpha grid of mox_alpha_sweep"},
      {"attrs_per_entity", &C::attrs_per_entity, "facts per entity"},
      {"batch_size", &C::batch_size, "unlearning batch size (0 = full batch)"},
      {"beta", &C::beta, "NPO/PO temperature"},
      {"clip_norm", &C::clip_norm, "gradient norm clip (0 = off)"},
      {"continual_epochs", &C::continual_epochs, "epochs per continual stage"},
      {"continual_lr", &C::continual_lr, "peak lr of continual stages"},
      {"continual_ratios", &C::continual_ratios, "forget ratio of each continual stage"},
      {"ctx_len", &C::ctx_len, "model context length"},
      {"d_ff", &C::d_ff, "feed-forward width"},
      {"d_model", &C::d_model, "model width"},
      {"epochs", &C::epochs, "unlearning epochs"},
      {"eta", &C::eta, "momentum coefficient"},
      {"etas", &C::etas, "eta grid of eta_sweep"},
      {"fig1_betas", &C::fig1_betas, "forget weights of motivation_fig1"},
      {"fig1_epochs", &C::fig1_epochs, "epochs of the weighted runs"},
      {"fig1_lr", &C::fig1_lr, "lr of the weighted runs"},
      {"fig1_optimizer", &C::fig1_optimizer, "optimizer of the weighted runs (adamw|sgd)"},
      {"fig1_retain_per_forget", &C::fig1_retain_per_forget, "retain pairs per forget pair in the weighted runs"},
      {"fig1_trace_every", &C::fig1_trace_every, "epochs between weighted-run evaluations"},
      {"forget_ratio", &C::forget_ratio, "fraction of entities forgotten"},
      {"forget_ratios", &C::forget_ratios, "ratios of forget_size_sweep"},
      {"ft_batch_size", &C::ft_batch_size, "fine-tuning batch size"},
      {"ft_epochs", &C::ft_epochs, "fine-tuning epochs"},
      {"ft_lr", &C::ft_lr, "fine-tuning peak lr"},
      {"ft_warmup_epochs", &C::ft_warmup_epochs, "fine-tuning warm-up epochs"},
      {"heldout_pairs", &C::heldout_pairs, "heldout-world pairs"},
      {"kl_weight", &C::kl_weight, "retain KL weight of MOX memorization"},
      {"lr", &C::lr, "unlearning peak lr"},
      {"momentum_every", &C::momentum_every, "epochs between momentum updates"},
      {"n_entities", &C::n_entities, "entities in the corpus"},
      {"n_heads", &C::n_heads, "attention heads"},
      {"n_layers", &C::n_layers, "transformer blocks"},
      {"optimizer", &C::optimizer, "unlearning optimizer (adamw|sgd)"},
      {"oracle_epochs", &C::oracle_epochs, "oracle training epochs"},
      {"output_dir", &C::output_dir, "artifact directory"},
      {"relearn_epochs", &C::relearn_epochs, "relearning epochs"},
      {"relearn_lr", &C::relearn_lr, "relearning peak lr"},
      {"retain_per_forget", &C::retain_per_forget, "retain pairs per forget pair in a batch"},
      {"scenario", &C::scenario, "scenario to run"},
      {"seeds", &C::seeds, "comma-separated seeds"},
      {"target_text", &C::target_text, "refusal target of targeted objectives"},
      {"target_weight", &C::target_weight, "weight of the refusal term"},
      {"trace_every", &C::trace_every, "epochs between trajectory evaluations"},
      {"warmup_epochs", &C::warmup_epochs, "unlearning warm-up epochs"},
      {"weight_decay", &C::weight_decay, "decoupled weight decay"},
      {"weights", &C::weights, "forget-term weights of stability_weight_sweep"},
  };
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields())
    if (key == f.name) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("bad value '" + std::string(text) + "' for key '" + std::string(key) + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ConfigError("non-finite value for key '" + std::string(key) + "'");
  }
  return v;
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  text = trim(text);
  if (text.empty()) return out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(parse_number<T>(key, text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

template <class T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

template <class... Ts>
struct Overload : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overload(Ts...) -> Overload<Ts...>;

void require(bool ok, const char* key, const char* what) {
  if (!ok) throw ConfigError(std::string("config key '") + key + "' " + what);
}

void require_ratios(const std::vector<double>& v, const char* key) {
  require(!v.empty(), key, "must not be empty");
  for (double r : v) require(r > 0.0 && r < 1.0, key, "entries must lie in (0, 1)");
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  for (const auto& [v, n] : kScenarioNames)
    if (v == s) return n;
  return "unknown";
}

Scenario scenario_from_name(std::string_view name) {
  for (const auto& [v, n] : kScenarioNames)
    if (n == name) return v;
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> all = [] {
    std::vector<Scenario> v;
    for (const auto& [s, n] : kScenarioNames) v.push_back(s);
    return v;
  }();
  return all;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> v;
    for (const auto& f : fields()) v.push_back({f.name, f.help});
    return v;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value) {
  const Field& f = field(key);
  std::visit(Overload{
                 [&](int C::*m) { config.*m = parse_number<int>(key, value); },
                 [&](double C::*m) { config.*m = parse_number<double>(key, value); },
                 [&](std::string C::*m) { config.*m = std::string(trim(value)); },
                 [&](std::vector<double> C::*m) { config.*m = parse_list<double>(key, value); },
                 [&](std::vector<std::uint64_t> C::*m) { config.*m = parse_list<std::uint64_t>(key, value); },
             },
             f.member);
}

std::string get_setting(const ExperimentConfig& config, std::string_view key) {
  const Field& f = field(key);
  return std::visit(Overload{
                        [&](int C::*m) { return std::to_string(config.*m); },
                        [&](double C::*m) { return format_double(config.*m); },
                        [&](std::string C::*m) { return config.*m; },
                        [&](std::vector<double> C::*m) { return format_list(config.*m); },
                        [&](std::vector<std::uint64_t> C::*m) { return format_list(config.*m); },
                    },
                    f.member);
}

void apply_config_text(ExperimentConfig& config, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    apply_setting(config, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  apply_config_text(config, in);
}

std::string canonical_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.name;
    out += " = ";
    out += get_setting(config, f.name);
    out += '\n';
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.output_dir.clear();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_text(c))));
  return buf;
}

OptimizerKind optimizer_from_name(std::string_view name) {
  if (name == "adamw") return OptimizerKind::AdamW;
  if (name == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  scenario_from_name(scenario);
  require(!seeds.empty(), "seeds", "must not be empty");
  require(!output_dir.empty(), "output_dir", "must not be empty");
  require(n_entities >= 10, "n_entities", "must be at least 10");
  require(attrs_per_entity >= 2 && attrs_per_entity <= kNumAttributes, "attrs_per_entity", "must be in [2, 4]");
  require(forget_ratio > 0.0 && forget_ratio < 1.0, "forget_ratio", "must lie in (0, 1)");
  require(heldout_pairs >= 5, "heldout_pairs", "must be at least 5");
  require_ratios(forget_ratios, "forget_ratios");
  require_ratios(continual_ratios, "continual_ratios");
  double total = 0.0;
  for (double r : continual_ratios) total += r;
  require(total < 1.0, "continual_ratios", "must sum to less than 1");
  require(ft_epochs > 0, "ft_epochs", "must be positive");
  require(ft_lr > 0.0, "ft_lr", "must be positive");
  require(oracle_epochs > 0, "oracle_epochs", "must be positive");
  require(epochs > 0, "epochs", "must be positive");
  require(continual_epochs > 0, "continual_epochs", "must be positive");
  require(continual_lr > 0.0, "continual_lr", "must be positive");
  require(relearn_epochs > 0, "relearn_epochs", "must be positive");
  require(relearn_lr > 0.0, "relearn_lr", "must be positive");
  require(fig1_epochs > 0, "fig1_epochs", "must be positive");
  require(fig1_lr > 0.0, "fig1_lr", "must be positive");
  require(!fig1_betas.empty(), "fig1_betas", "must not be empty");
  for (double b : fig1_betas) require(b > 0.0, "fig1_betas", "entries must be positive");
  require(fig1_retain_per_forget >= 1, "fig1_retain_per_forget", "must be at least 1");
  require(fig1_trace_every > 0, "fig1_trace_every", "must be positive");
  require(trace_every > 0, "trace_every", "must be positive");
  require(momentum_every > 0, "momentum_every", "must be positive");
  require(!alphas.empty(), "alphas", "must not be empty");
  for (double a : alphas) require(a > 0.0, "alphas", "entries must be positive");
  require(!weights.empty(), "weights", "must not be empty");
  for (double w : weights) require(w > 0.0, "weights", "entries must be positive");
  require(!etas.empty(), "etas", "must not be empty");
  for (double e : etas) require(e > 0.0 && e <= 1.0, "etas", "entries must lie in (0, 1]");
  require(!target_text.empty(), "target_text", "must not be empty");
  optimizer_from_name(optimizer);
  optimizer_from_name(fig1_optimizer);
  ExtrapolationConfig{alpha, eta}.validate();
  model_config(*this, 0).validate();
  for (const Variant v : {Variant::CE, Variant::MoxMemCE}) objective_spec(*this, v).validate();
  finetune_config(*this, 0).validate();
  unlearn_config(*this, 0).validate();
}

ModelConfig model_config(const ExperimentConfig& config, std::uint64_t seed) {
  ModelConfig m;
  m.vocab_size = Vocabulary::standard().size();
  m.ctx_len = config.ctx_len;
  m.d_model = config.d_model;
  m.n_layers = config.n_layers;
  m.n_heads = config.n_heads;
  m.d_ff = config.d_ff;
  m.seed = seed;
  return m;
}

TrainConfig finetune_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = config.ft_epochs;
  t.batch_size = config.ft_batch_size;
  t.lr_peak = config.ft_lr;
  t.weight_decay = config.weight_decay;
  t.warmup_epochs = config.ft_warmup_epochs;
  t.seed = seed;
  t.eval_every = -1;
  return t;
}

TrainConfig oracle_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig t = finetune_config(config, seed);
  t.epochs = config.oracle_epochs;
  return t;
}

TrainConfig unlearn_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = config.epochs;
  t.batch_size = config.batch_size;
  t.lr_peak = config.lr;
  t.weight_decay = config.weight_decay;
  t.warmup_epochs = config.warmup_epochs;
  t.seed = seed;
  t.eval_every = -1;
  t.optimizer = optimizer_from_name(config.optimizer);
  t.clip_norm = config.clip_norm;
  t.retain_per_forget = config.retain_per_forget;
  t.target_text = config.target_text;
  return t;
}

ObjectiveSpec objective_spec(const ExperimentConfig& config, Variant variant) {
  ObjectiveSpec s;
  s.variant = variant;
  s.beta = config.beta;
  s.kl_weight = config.kl_weight;
  s.target_weight = config.target_weight;
  return s;
}

}  // namespace unforge
