#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "transport/bootstrap.hpp"
#include "transport/estimate.hpp"
#include "transport/survival_forest.hpp"
#include "transport/synthgen.hpp"
#include "transport/weighting.hpp"

namespace transport {

struct SubgroupSpec {
  std::string name;
  std::string predicate;
};

struct RunConfig {
  std::filesystem::path source_data;
  std::filesystem::path source_schema;
  std::filesystem::path target_data;
  std::filesystem::path target_schema;
  std::filesystem::path output_dir = "out";
  char delimiter = ',';
  double horizon = 5.0;
  std::uint64_t seed = 1;
  int n_boot = 1000;  // 0 skips the bootstrap
  double confidence = 0.95;
  int threads = 1;
  ForestParams forest;
  SelectionParams selection;
  std::vector<Contrast> contrasts;  // empty: every pair of source arms
  std::optional<std::vector<Estimand>> estimands;
  std::optional<std::string> eligibility;
  std::vector<SubgroupSpec> subgroups;
  double smd_threshold = 0.1;
  std::optional<std::filesystem::path> save_models;
  std::optional<std::filesystem::path> load_models;

  /// Estimands actually run: the configured set, or SATE, OOB re-translation,
  /// TATE, eligible TATE (when criteria are given) and the weighted comparator.
  std::vector<Estimand> resolved_estimands() const;
};

/// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig read_run_config(const std::filesystem::path& path);
/// Canonical JSON echo (sorted keys).
std::string run_config_to_json(const RunConfig& config);
/// FNV-1a of the canonical echo, without output location and thread count.
std::string config_hash(const RunConfig& config);

struct StageStatus {
  std::string name;
  std::string status;  // "ok", "failed", "skipped"
  std::vector<std::string> outputs;
  std::string error;
};

struct RunResult {
  bool ok = false;
  std::string failed_stage;
  std::string error;
  std::vector<StageStatus> stages;
  TransportEstimates estimates;
};

/// Runs every stage in order and writes reports into config.output_dir.
/// A failing stage stops the run; files from earlier stages stay in place
/// and the manifest records the run as incomplete.
RunResult run_transport(const RunConfig& config, std::ostream* log = nullptr);

/// Writes source.csv, target.csv, schema.json, scenario.json, truth.json,
/// truth_risks.csv and a ready-to-run config.json into `dir`.
OracleTruth write_synthetic(const Scenario& scenario, const std::filesystem::path& dir);

}  // namespace transport
