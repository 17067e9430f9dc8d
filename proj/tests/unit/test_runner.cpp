#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"
#include "unforge/checkpoint.hpp"
#include "unforge/config.hpp"
#include "unforge/errors.hpp"
#include "unforge/report.hpp"
#include "unforge/runner.hpp"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace unforge;
using unforge::testing::perturbed;
using unforge::testing::tiny_config;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unforge_test_runner_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small_config(const std::string& scenario, const fs::path& out) {
  ExperimentConfig c;
  c.scenario = scenario;
  c.output_dir = out.string();
  c.n_entities = 10;
  c.attrs_per_entity = 2;
  c.forget_ratio = 0.3;
  c.heldout_pairs = 6;
  c.ctx_len = 16;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 8;
  c.ft_epochs = 3;
  c.oracle_epochs = 3;
  c.ft_batch_size = 8;
  c.epochs = 2;
  c.batch_size = 4;
  c.alphas = {1, 4};
  c.etas = {0.675};
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UNFORGE_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_output(const std::string& args) {
  const fs::path out = fs::temp_directory_path() / "unforge_test_runner_cli.txt";
  const std::string cmd = std::string(UNFORGE_CLI) + " " + args + " > " + out.string() + " 2>&1";
  [[maybe_unused]] const int rc = std::system(cmd.c_str());
  return slurp(out);
}

std::set<std::string> files_with_ext(const fs::path& dir, const std::string& ext) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.insert(fs::relative(e.path(), dir).string());
  return out;
}

}  // namespace

TEST_CASE("config text round trip and hashing") {
  ExperimentConfig a;
  a.scenario = "finetune";
  std::istringstream text(
      "# comment line\n"
      "lr = 0.001   # trailing\n"
      "\n"
      "alphas = 0.5, 2,8\n"
      "optimizer = sgd\n"
      "seeds = 3,4\n"
      "lr = 0.002\n");
  apply_config_text(a, text);
  CHECK(a.lr == 0.002);
  CHECK(a.alphas == std::vector<double>{0.5, 2, 8});
  CHECK(a.optimizer == "sgd");
  CHECK(a.seeds == std::vector<std::uint64_t>{3, 4});

  ExperimentConfig b;
  std::istringstream canon(canonical_text(a));
  apply_config_text(b, canon);
  CHECK(canonical_text(b) == canonical_text(a));
  CHECK(config_hash(b) == config_hash(a));
  CHECK(config_hash(a).size() == 16);
  b.output_dir = "elsewhere";
  CHECK(config_hash(b) == config_hash(a));
  b.lr = 0.003;
  CHECK(config_hash(b) != config_hash(a));

  CHECK(get_setting(a, "lr") == "0.002");
  CHECK(get_setting(a, "alpha") == "4");
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);

  std::string prev;
  for (const auto& k : config_keys()) {
    CHECK(k.name > prev);
    prev = k.name;
    CHECK_FALSE(k.help.empty());
  }
}

TEST_CASE("config errors") {
  ExperimentConfig c;
  CHECK_THROWS_AS(apply_setting(c, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "lr", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "epochs", "2.5"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "alphas", "1,,2"), ConfigError);
  std::istringstream bad("lr 0.1\n");
  CHECK_THROWS_AS(apply_config_text(c, bad), ConfigError);
  CHECK_THROWS_AS(apply_config_file(c, "/nonexistent/unforge.cfg"), Error);

  c = ExperimentConfig{};
  c.scenario = "finetune";
  CHECK_NOTHROW(c.validate());
  for (auto [key, value] : {std::pair{"lr", "-1"}, {"alpha", "0"}, {"eta", "1.5"}, {"forget_ratio", "1"},
                            {"optimizer", "rmsprop"}, {"d_model", "7"}, {"seeds", ""}}) {
    ExperimentConfig bad_cfg;
    bad_cfg.scenario = "finetune";
    CAPTURE(key);
    bool rejected = false;
    try {
      apply_setting(bad_cfg, key, value);
      bad_cfg.validate();
    } catch (const ConfigError&) {
      rejected = true;
    }
    CHECK(rejected);
  }
  ExperimentConfig unknown;
  unknown.scenario = "party";
  CHECK_THROWS_AS(unknown.validate(), ConfigError);
  for (const Scenario s : all_scenarios()) CHECK(scenario_from_name(scenario_name(s)) == s);
}

TEST_CASE("derived configs") {
  ExperimentConfig c;
  c.d_model = 32;
  c.ft_lr = 0.01;
  c.lr = 0.002;
  c.optimizer = "sgd";
  const ModelConfig m = model_config(c, 9);
  CHECK(m.d_model == 32);
  CHECK(m.seed == 9);
  CHECK(finetune_config(c, 1).lr_peak == 0.01);
  CHECK(oracle_config(c, 1).epochs == c.oracle_epochs);
  CHECK(oracle_config(c, 1).lr_peak == 0.01);
  const TrainConfig u = unlearn_config(c, 1);
  CHECK(u.lr_peak == 0.002);
  CHECK(u.optimizer == OptimizerKind::SGD);
  CHECK(objective_spec(c, Variant::NPO).variant == Variant::NPO);
  CHECK(objective_spec(c, Variant::NPO).beta == c.beta);
}

TEST_CASE("checkpoint round trip") {
  const Transformer model(tiny_config(3));
  const ParamStore theta = perturbed(model.init_params(), 1, 0.3);
  CheckpointMeta meta;
  meta.model = model.config();
  meta.provenance = Provenance::Mem;
  meta.info = {{"method", "mox"}, {"seed", "3"}};

  std::stringstream first;
  write_checkpoint(first, theta, meta);
  const std::string bytes = first.str();
  CHECK(bytes.substr(0, 8) == "MOXCKPT1");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 12, 8);
  CHECK(bytes.size() == 20 + header_len + 4 * static_cast<std::size_t>(theta.total_len()));

  first.seekg(0);
  const Checkpoint back = read_checkpoint(first);
  CHECK(back.meta == meta);
  CHECK(back.theta == quantize(theta));
  CHECK(back.theta.layout() == theta.layout());
  CHECK_NOTHROW(model.check_params(back.theta));
  CHECK(l2_distance(back.theta, theta) < 1e-6 * l2_norm(theta));

  // a second save of the loaded store is bit-identical
  std::stringstream second;
  write_checkpoint(second, back.theta, back.meta);
  CHECK(second.str() == bytes);
  CHECK(quantize(quantize(theta)) == quantize(theta));

  for (const Provenance p : {Provenance::Ref, Provenance::Mem, Provenance::For, Provenance::Oracle,
                             Provenance::Baseline})
    CHECK(provenance_from_name(provenance_name(p)) == p);
}

TEST_CASE("corrupt checkpoints report the bad offset") {
  const Transformer model(tiny_config(4));
  std::stringstream s;
  CheckpointMeta meta;
  meta.model = model.config();
  write_checkpoint(s, model.init_params(), meta);
  const std::string good = s.str();
  auto offset_of = [](const std::string& bytes) -> long {
    std::istringstream in(bytes);
    try {
      read_checkpoint(in);
    } catch (const FormatError& e) {
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  std::string bad = good;
  bad[3] = 'X';
  CHECK(offset_of(bad) == 3);
  bad = good;
  bad[8] = 9;
  CHECK(offset_of(bad) == 8);
  bad = good;
  bad[20] = '!';
  CHECK(offset_of(bad) == 20);
  CHECK(offset_of(good.substr(0, good.size() - 3)) >= 20);
  CHECK(offset_of(good.substr(0, 10)) >= 0);
  CHECK(offset_of(good + "tail") >= 20);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("report formatting") {
  std::ostringstream csv;
  write_report_csv(csv, {});
  std::string header;
  for (const auto& c : report_columns()) header += (header.empty() ? "" : ",") + c;
  CHECK(csv.str() == header + "\n");
  CHECK(report_columns().size() == report_key_columns().size() + eval_report_columns().size());
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 4.0, -2.5e10}) CHECK(std::stod(format_real(v)) == v);
  CHECK(format_real(4.0) == "4");

  ReportRow row;
  row.method = "mox_ce";
  row.knob = "alpha";
  row.value = 4.0;
  const auto j = nlohmann::json::parse(row_json(row));
  CHECK(j["schema"] == "unforge.eval/1");
  CHECK(j["method"] == "mox_ce");
  CHECK(j["metrics"].size() == eval_report_columns().size());
}

TEST_CASE("finetune scenario artifacts and reproducibility") {
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  const RunManifest ma = run_scenario(small_config("finetune", a));
  REQUIRE(ma.status == "ok");
  CHECK(ma.exit_code == 0);
  CHECK(files_with_ext(a, ".ckpt").size() == 2);
  CHECK(fs::exists(a / "finetune.csv"));
  CHECK(fs::exists(a / "summary.txt"));
  CHECK(fs::exists(a / "manifest.json"));
  CHECK(fs::exists(a / "config.txt"));
  CHECK(ma.rows.size() == 2);
  for (const auto& art : ma.artifacts) CHECK(fs::exists(a / art.path));
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["config_hash"] == ma.config_hash);

  const RunManifest mb = run_scenario(small_config("finetune", b));
  REQUIRE(mb.status == "ok");
  CHECK(mb.config_hash == ma.config_hash);
  for (const std::string ext : {".ckpt", ".csv", ".jsonl", ".json"}) {
    const auto fa = files_with_ext(a, ext);
    CHECK(fa == files_with_ext(b, ext));
    for (const auto& f : fa) {
      if (f == "manifest.json") continue;  // carries timings and the output path
      CAPTURE(f);
      CHECK(slurp(a / f) == slurp(b / f));
    }
  }

  // the evaluation CLI reproduces the stored report of a checkpoint
  const auto row = ma.rows.front();
  const std::string data_dir = (a / fs::path(row.checkpoint).parent_path()).string();
  const auto cli = nlohmann::json::parse(cli_output("eval --ckpt " + (a / row.checkpoint).string() + " --data " + data_dir));
  CHECK(cli["metrics"]["fq"].get<double>() == doctest::Approx(row.metrics.fq).epsilon(1e-12));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("failures map to exit codes") {
  const fs::path dir = scratch_dir("fail");
  ExperimentConfig bad = small_config("finetune", dir);
  bad.lr = -1;
  const RunManifest m = run_scenario(bad);
  CHECK(m.status == "failed");
  CHECK(m.exit_code == 2);
  CHECK_FALSE(fs::exists(dir / "config.txt"));

  fs::create_directories(dir);
  std::ofstream(dir / "blocker") << "x";
  const RunManifest io = run_scenario(small_config("finetune", dir / "blocker" / "sub"));
  CHECK(io.status == "failed");
  CHECK(io.exit_code == 4);

  RunManifest ok, div, failed;
  div.status = "diverged";
  div.exit_code = 3;
  failed.status = "failed";
  failed.exit_code = 4;
  CHECK(combined_exit_code({ok, ok}) == 0);
  CHECK(combined_exit_code({ok, div}) == 3);
  CHECK(combined_exit_code({div, failed}) == 4);
  fs::remove_all(dir);
}

TEST_CASE("command line") {
  const fs::path dir = scratch_dir("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "lr = 0.1\nepochs = 7\n";
  const std::string text = cli_output("config --config " + (dir / "run.cfg").string() + " --lr 0.2");
  CHECK(text.find("lr = 0.2\n") != std::string::npos);
  CHECK(text.find("epochs = 7\n") != std::string::npos);
  CHECK(run_cli("finetune --lr -1 --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("finetune --no-such-flag 1") == 2);
  CHECK(run_cli("finetune --config /nonexistent/cfg") != 0);
  CHECK(run_cli("eval --ckpt /nonexistent/a.ckpt --data /nonexistent") == 4);
  CHECK(run_cli("") == 2);
  fs::remove_all(dir);
}
