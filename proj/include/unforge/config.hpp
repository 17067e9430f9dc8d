#pragma once

#include "unforge/extrapolation.hpp"
#include "unforge/model.hpp"
#include "unforge/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace unforge {

enum class Scenario {
  Finetune,
  UnlearnBaselines,
  MoxAlphaSweep,
  EtaSweep,
  Ablation,
  StabilityWeightSweep,
  ForgetSizeSweep,
  DirectionAnalysis,
  Trajectory,
  Continual,
  Relearn,
  Overlap,
  MotivationFig1,
};

std::string_view scenario_name(Scenario s);
Scenario scenario_from_name(std::string_view name);
const std::vector<Scenario>& all_scenarios();

// Flat experiment configuration. Every field has a key of the same name in
// the config file and on the command line.
struct ExperimentConfig {
  std::string scenario;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";

  // corpus and splits
  int n_entities = 50;
  int attrs_per_entity = 4;
  double forget_ratio = 0.1;
  int heldout_pairs = kDefaultHeldoutPairs;
  std::vector<double> forget_ratios{0.01, 0.05, 0.1};
  std::vector<double> continual_ratios{0.04, 0.06, 0.1};

  // model
  int ctx_len = 48;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;

  // reference and oracle fine-tuning
  double ft_lr = 5e-3;
  int ft_epochs = 60;
  // the oracle needs longer to fit retain from scratch
  int oracle_epochs = 80;
  int ft_batch_size = 16;
  double ft_warmup_epochs = 1.0;

  // unlearning
  double lr = 3e-4;
  int epochs = 20;
  int batch_size = 16;
  double warmup_epochs = 0.0;
  double weight_decay = 0.01;
  std::string optimizer = "adamw";
  double clip_norm = 0.0;
  int retain_per_forget = 4;

  // objectives
  double beta = 0.1;
  double kl_weight = 10.0;
  double target_weight = 1.0;
  std::string target_text{kRefusalTarget};

  // extrapolation
  double alpha = kDefaultAlpha;
  double eta = kDefaultEta;
  int momentum_every = 1;
  std::vector<double> alphas{0.5, 1, 2, 4, 8};
  std::vector<double> etas{0.5, 0.6, 0.675, 0.8, 0.9};
  std::vector<double> weights{1, 2, 3, 4, 5};

  // per-scenario knobs
  int trace_every = 1;
  int continual_epochs = 3;
  double continual_lr = 3e-4;
  int relearn_epochs = 5;
  double relearn_lr = 3e-4;
  std::vector<double> fig1_betas{1, 2, 4};
  std::string fig1_optimizer = "sgd";
  double fig1_lr = 0.03;
  int fig1_epochs = 40;
  int fig1_retain_per_forget = 1;
  int fig1_trace_every = 5;

  // Throws ConfigError naming the first bad key.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};
// Every key, in canonical (alphabetical) order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for unknown keys and unparsable values.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);
std::string get_setting(const ExperimentConfig& config, std::string_view key);

// `key = value` lines; '#' starts a comment. Later lines win.
void apply_config_text(ExperimentConfig& config, std::istream& in);
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);

// One `key = value` line per key in canonical order, with shortest
// round-trip number formatting.
std::string canonical_text(const ExperimentConfig& config);
// FNV-1a 64 of canonical_text as 16 lowercase hex digits. output_dir is
// blanked first, so moving a run does not change its hash.
std::string config_hash(const ExperimentConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

ModelConfig model_config(const ExperimentConfig& config, std::uint64_t seed);
TrainConfig finetune_config(const ExperimentConfig& config, std::uint64_t seed);
// finetune_config with oracle_epochs
TrainConfig oracle_config(const ExperimentConfig& config, std::uint64_t seed);
// Objective is left at its default; callers set it.
TrainConfig unlearn_config(const ExperimentConfig& config, std::uint64_t seed);
ObjectiveSpec objective_spec(const ExperimentConfig& config, Variant variant);
OptimizerKind optimizer_from_name(std::string_view name);

}  // namespace unforge
