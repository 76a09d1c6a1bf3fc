#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transport/crf.hpp"
#include "transport/estimate.hpp"
#include "transport/weighting.hpp"

namespace transport {

/// Named subset of the target rows.
struct Subgroup {
  std::string name;
  std::vector<bool> mask;
};

/// Everything the estimators need. The target is fixed; only the source is
/// resampled by the bootstrap. `forest.seed` is the master seed.
struct TransportProblem {
  SourceData source;
  ModelMatrix target;
  std::vector<std::string> target_ids;
  std::vector<bool> eligible;  // target rows meeting the eligibility criteria
  std::vector<Subgroup> subgroups;
  std::vector<Contrast> contrasts;
  std::vector<Estimand> estimands;
  double horizon = 5.0;
  ForestParams forest;
  SelectionParams selection;
};

struct BootstrapOptions {
  int n_boot = 1000;
  double confidence = 0.95;
  int threads = 1;
  bool keep_replicates = false;
};

struct TransportEstimates {
  std::vector<ContrastEstimate> estimates;  // estimand-major, then contrast
  std::vector<ContrastEstimate> subgroups;  // subgroup-major, then contrast
  int n_boot = 0;
  std::size_t redraws = 0;        // replicates redrawn because an arm had no events
  std::size_t oob_fallbacks = 0;  // full-data rows with no OOB tree in their own arm
  std::optional<WeightSet> weights;
  std::vector<std::vector<double>> replicates;  // [replicate][statistic] when kept
  std::vector<std::string> warnings;
};

/// Full-data estimates only (se = 0, n_boot = 0).
TransportEstimates point_estimates(const TransportProblem& problem, int threads = 1);

/// Full-data point estimates with bootstrap standard errors. Each replicate
/// resamples the source within arms (arm sizes preserved), refits every
/// model with seeds derived from (master seed, replicate), and re-evaluates
/// every estimand and subgroup. Replicates with an event-free arm are redrawn.
TransportEstimates bootstrap_estimates(const TransportProblem& problem, const BootstrapOptions& options);

/// Sample standard deviation (n - 1 denominator).
double bootstrap_se(std::span<const double> values);

}  // namespace transport
