#pragma once

#include "unforge/config.hpp"
#include "unforge/report.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace unforge {

// In-process memo of fine-tuned reference/oracle pairs, keyed by everything
// that determines them. Lets one process run several scenarios without
// re-training; nothing is shared through the file system.
class WorldCache {
 public:
  struct Entry {
    ParamStore ref;
    ParamStore oracle;
    TrainTrace ref_trace;
    TrainTrace oracle_trace;
  };
  std::shared_ptr<const Entry> find(const std::string& key) const;
  void put(const std::string& key, std::shared_ptr<const Entry> entry);

 private:
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
};

// Validates the config, runs the scenario for every seed, writes all
// artifacts and the report. Stage failures do not throw; they are recorded
// in the returned manifest (status, error, exit_code).
RunManifest run_scenario(const ExperimentConfig& config, WorldCache* cache = nullptr);

// Every scenario in turn, each under output_dir/<scenario>.
std::vector<RunManifest> run_suite(const ExperimentConfig& config);

// Exit code for a set of manifests: the first failure's code, else 3 when
// some run diverged, else 0.
int combined_exit_code(const std::vector<RunManifest>& manifests);

}  // namespace unforge
