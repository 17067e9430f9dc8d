#include "unforge/checkpoint.hpp"
#include "unforge/config.hpp"
#include "unforge/errors.hpp"
#include "unforge/report.hpp"
#include "unforge/runner.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using namespace unforge;

namespace {

struct RunArgs {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> overrides;
};

void add_run_options(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--out", args.out, "output directory (same as --output_dir)");
  cmd->add_option("--seed", args.seed, "run a single seed (same as --seeds N)");
  for (const auto& key : config_keys()) {
    if (key.name == "scenario") continue;
    cmd->add_option("--" + key.name, args.overrides[key.name], key.help);
  }
}

ExperimentConfig resolve(const RunArgs& args, CLI::App* cmd, const std::string& scenario) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) apply_config_file(cfg, args.config_path);
  for (const auto& [key, value] : args.overrides)
    if (cmd->count("--" + key) > 0) apply_setting(cfg, key, value);
  if (!args.out.empty()) cfg.output_dir = args.out;
  if (args.seed) cfg.seeds = {*args.seed};
  cfg.scenario = scenario;
  return cfg;
}

void print_manifest(const RunManifest& m) {
  std::cout << m.scenario << ": " << m.status << " (" << m.rows.size() << " rows, " << m.artifacts.size()
            << " artifacts) -> " << m.output_dir << '\n';
  if (!m.error.empty()) std::cerr << m.scenario << ": " << m.error << '\n';
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const fs::path dir(data_dir);
  std::ifstream data(dir / "data.jsonl");
  if (!data) throw IoError("cannot open " + (dir / "data.jsonl").string());
  const DatasetSplit split = read_split_jsonl(data);
  const Checkpoint ref = load_checkpoint(dir / "ref.ckpt");
  const Checkpoint oracle = load_checkpoint(dir / "oracle.ckpt");
  const Transformer model(ck.meta.model);
  model.check_params(ck.theta);
  const Evaluator ev(model, split, ref.theta, oracle.theta);
  ReportRow row;
  row.method = std::string(provenance_name(ck.meta.provenance));
  row.seed = ck.meta.model.seed;
  row.checkpoint = ckpt_path;
  row.metrics = ev.evaluate(ck.theta);
  std::cout << row_json(row);
  return 0;
}

int run_decode(const std::string& ckpt_path, const std::string& prompt, int max_new) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Transformer model(ck.meta.model);
  const auto& vocab = Vocabulary::standard();
  std::vector<int> q{kBosToken};
  for (int t : vocab.tokenize(prompt)) q.push_back(t);
  const TokenSeq seq = TokenSeq::from_parts(q, {});
  const TokenSeq out = model.greedy_decode(ck.theta, seq, max_new);
  std::cout << vocab.detokenize(out.answer_tokens()) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unlearning by model extrapolation on a desk-scale transformer"};
  app.require_subcommand(1);

  std::map<std::string, RunArgs> run_args;
  std::map<std::string, CLI::App*> scenario_cmds;
  for (const Scenario s : all_scenarios()) {
    const std::string name(scenario_name(s));
    CLI::App* cmd = app.add_subcommand(name, "run the " + name + " scenario");
    add_run_options(cmd, run_args[name]);
    scenario_cmds[name] = cmd;
  }
  CLI::App* all_cmd = app.add_subcommand("all", "run every scenario under <out>/<scenario>");
  add_run_options(all_cmd, run_args["all"]);

  std::string ckpt, data_dir, prompt;
  int max_new = 12;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against a scenario data directory");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "directory holding data.jsonl, ref.ckpt and oracle.ckpt")->required();
  CLI::App* decode_cmd = app.add_subcommand("decode", "greedy answer for a question");
  decode_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  decode_cmd->add_option("--prompt", prompt, "question text, e.g. \"what alma stone city ?\"")->required();
  decode_cmd->add_option("--max-new", max_new, "token budget");
  CLI::App* config_cmd = app.add_subcommand("config", "print the resolved configuration");
  add_run_options(config_cmd, run_args["config"]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (eval_cmd->parsed()) return run_eval(ckpt, data_dir);
    if (decode_cmd->parsed()) return run_decode(ckpt, prompt, max_new);
    if (config_cmd->parsed()) {
      std::cout << canonical_text(resolve(run_args["config"], config_cmd, "finetune"));
      return 0;
    }
    if (all_cmd->parsed()) {
      ExperimentConfig cfg = resolve(run_args["all"], all_cmd, "finetune");
      const auto manifests = run_suite(cfg);
      for (const auto& m : manifests) print_manifest(m);
      return combined_exit_code(manifests);
    }
    for (const auto& [name, cmd] : scenario_cmds) {
      if (!cmd->parsed()) continue;
      const RunManifest m = run_scenario(resolve(run_args[name], cmd, name));
      print_manifest(m);
      return m.exit_code;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
