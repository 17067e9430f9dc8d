#include "unforge/report.hpp"

#include "unforge/errors.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace unforge {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

Json real_json(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

void open_and_write(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

const std::vector<std::string>& report_key_columns() {
  static const std::vector<std::string> cols{"method", "seed", "knob", "value", "epoch",
                                             "checkpoint", "status", "divergence_step"};
  return cols;
}

std::vector<std::string> report_columns() {
  std::vector<std::string> cols = report_key_columns();
  for (const auto& c : eval_report_columns()) cols.push_back(c);
  return cols;
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  const auto cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.method) << ',' << r.seed << ',' << csv_field(r.knob) << ','
        << (r.value ? format_real(*r.value) : "") << ',' << (r.epoch ? std::to_string(*r.epoch) : "") << ','
        << csv_field(r.checkpoint) << ',' << r.status << ','
        << (r.divergence_step ? std::to_string(*r.divergence_step) : "");
    for (const double v : eval_report_values(r.metrics)) out << ',' << format_real(v);
    out << '\n';
  }
}

std::string row_json(const ReportRow& r) {
  Json j;
  j["schema"] = "unforge.eval/1";
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["knob"] = r.knob;
  j["value"] = r.value ? real_json(*r.value) : Json(nullptr);
  j["epoch"] = r.epoch ? Json(*r.epoch) : Json(nullptr);
  j["checkpoint"] = r.checkpoint;
  j["status"] = r.status;
  j["divergence_step"] = r.divergence_step ? Json(*r.divergence_step) : Json(nullptr);
  Json metrics = Json::object();
  const auto& names = eval_report_columns();
  const auto values = eval_report_values(r.metrics);
  for (std::size_t i = 0; i < names.size(); ++i) metrics[names[i]] = real_json(values[i]);
  j["metrics"] = std::move(metrics);
  return j.dump(2) + "\n";
}

void write_summary(std::ostream& out, const std::vector<ReportRow>& rows) {
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %5s %-12s %6s %8s %8s %8s %8s %8s %8s\n", "method", "seed", "knob",
                "epoch", "status", "fq", "mu", "f_rl", "r_rl", "h_util");
  out << line;
  for (const auto& r : rows) {
    const std::string knob = r.knob.empty() ? "" : r.knob + "=" + (r.value ? format_real(*r.value) : "");
    std::snprintf(line, sizeof(line), "%-22s %5llu %-12s %6s %8s %8.4f %8.4f %8.4f %8.4f %8.4f\n", r.method.c_str(),
                  static_cast<unsigned long long>(r.seed), knob.c_str(), r.epoch ? std::to_string(*r.epoch).c_str() : "",
                  r.status.c_str(), r.metrics.fq, r.metrics.mu, r.metrics.f_rl, r.metrics.r_rl,
                  r.metrics.heldout_utility);
    out << line;
  }
}

std::string manifest_json(const RunManifest& m) {
  Json j;
  j["schema"] = "unforge.manifest/1";
  j["scenario"] = m.scenario;
  j["config_hash"] = m.config_hash;
  j["seeds"] = m.seeds;
  j["status"] = m.status;
  j["error"] = m.error;
  j["exit_code"] = m.exit_code;
  Json artifacts = Json::array();
  for (const auto& a : m.artifacts) artifacts.push_back(Json{{"path", a.path}, {"kind", a.kind}});
  j["artifacts"] = std::move(artifacts);
  Json stages = Json::array();
  for (const auto& s : m.stages) stages.push_back(Json{{"stage", s.stage}, {"seconds", s.seconds}});
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

void emit_report(RunManifest& m) {
  const fs::path dir(m.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  for (const auto& r : m.rows) {
    if (r.checkpoint.empty()) continue;
    fs::path rel(r.checkpoint);
    rel.replace_extension(".json");
    open_and_write(dir / rel, row_json(r));
    m.artifacts.push_back({rel.generic_string(), "eval_json"});
  }

  const std::string csv_name = (m.scenario.empty() ? std::string("report") : m.scenario) + ".csv";
  {
    std::ostringstream csv;
    write_report_csv(csv, m.rows);
    open_and_write(dir / csv_name, csv.str());
    m.artifacts.push_back({csv_name, "report_csv"});
  }
  {
    std::ostringstream txt;
    write_summary(txt, m.rows);
    open_and_write(dir / "summary.txt", txt.str());
    m.artifacts.push_back({"summary.txt", "summary"});
  }
  m.artifacts.push_back({"manifest.json", "manifest"});
  open_and_write(dir / "manifest.json", manifest_json(m));
}

}  // namespace unforge
