#pragma once

#include "unforge/eval.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace unforge {

// One evaluated model of a scenario.
struct ReportRow {
  std::string method;
  std::uint64_t seed = 0;
  // Swept parameter (alpha, eta, beta, stage, ...); empty when none.
  std::string knob;
  std::optional<double> value;
  // Set for rows sampled during training.
  std::optional<int> epoch;
  // Relative to the output directory; empty when no checkpoint was kept.
  std::string checkpoint;
  std::string status = "ok";
  std::optional<std::int64_t> divergence_step;
  EvalReport metrics;
};

struct Artifact {
  std::string path;  // relative to the output directory
  std::string kind;
};

struct StageTime {
  std::string stage;
  double seconds = 0.0;
};

struct RunManifest {
  std::string scenario;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  // ok, diverged (some run blew up, everything else finished) or failed.
  std::string status = "ok";
  std::string error;
  int exit_code = 0;
  std::vector<Artifact> artifacts;
  std::vector<StageTime> stages;
  std::vector<ReportRow> rows;
};

// Shortest decimal string that reads back to the same double.
std::string format_real(double v);

// Leading columns of the aggregate CSV; the eval report columns follow.
const std::vector<std::string>& report_key_columns();
std::vector<std::string> report_columns();
void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
std::string row_json(const ReportRow& row);
void write_summary(std::ostream& out, const std::vector<ReportRow>& rows);
std::string manifest_json(const RunManifest& manifest);

// Writes <scenario>.csv, one JSON per checkpointed row, summary.txt and
// manifest.json under manifest.output_dir and records them as artifacts.
// Throws IoError naming the path that failed.
void emit_report(RunManifest& manifest);

}  // namespace unforge
