#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "transport/cohort.hpp"
#include "transport/estimate.hpp"

namespace transport {

enum class Population { Source, Target };

/// Marginal law of one covariate in one population. Which fields apply
/// depends on the covariate kind: normal (mean, sd), bernoulli (p),
/// categorical (probs, aligned with the levels).
struct CovariateLaw {
  double mean = 0.0;
  double sd = 1.0;
  double p = 0.5;
  std::vector<double> probs;
};

struct ScenarioCovariate {
  std::string name;
  CovariateKind kind = CovariateKind::Numeric;
  std::vector<std::string> levels;
  CovariateLaw source;
  CovariateLaw target;
};

/// Hazard lambda(w) = baseline_hazard * exp(sum beta * w). Coefficient keys
/// are covariate names, or "name=level" for categorical levels (unlisted
/// levels have coefficient 0).
struct ScenarioArm {
  std::string label;
  double allocation = 0.0;
  double baseline_hazard = 0.0;
  std::map<std::string, double> coefficients;
};

/// Exponential censoring at `rate` (0 disables it) and an optional
/// administrative end of follow-up.
struct Censoring {
  double rate = 0.0;
  std::optional<double> admin_time;
};

/// Event times are Weibull with cumulative hazard lambda(w) * t^shape;
/// shape 1 gives exponential times.
struct Scenario {
  std::string name;
  std::vector<ScenarioCovariate> covariates;
  std::vector<ScenarioArm> arms;
  double weibull_shape = 1.0;
  Censoring censoring;
  double horizon = 5.0;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::uint64_t seed = 1;

  void validate() const;
  CovariateSchema schema() const;
  std::size_t arm_index(std::string_view label) const;
  /// Covariate values use the cohort encoding (binary 0/1, categorical level index).
  double hazard(std::size_t arm, std::span<const double> w) const;
  double true_risk(std::size_t arm, std::span<const double> w, double t) const;
};

Scenario parse_scenario(const std::string& json_text);
Scenario read_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& scenario);

/// "S1": one normal covariate shifted in the target, no effect modification.
/// "S2": effect modified by a binary covariate with shifted prevalence.
Scenario builtin_scenario(std::string_view name);

struct ContrastTruth {
  Contrast contrast;
  double tate = 0.0;  // over the target covariate law
  double tate_mc_error = 0.0;
  double sate = 0.0;  // over the source covariate law
  double sate_mc_error = 0.0;
  double sample_tate = 0.0;  // mean true ITE over the generated target rows
};

struct OracleTruth {
  std::vector<std::string> arms;
  double horizon = 0.0;
  std::string method;  // "quadrature" or "monte-carlo"
  std::vector<double> target_arm_risk;
  std::vector<double> source_arm_risk;
  std::vector<ContrastTruth> contrasts;  // all pairs, treated before reference in arm order
  std::vector<std::string> target_ids;
  std::vector<double> target_risks;  // subject-major, one value per arm

  double risk(std::size_t subject, std::size_t arm) const { return target_risks[subject * arms.size() + arm]; }
  double ite(std::size_t subject, const Contrast& contrast) const;
  const ContrastTruth& contrast(const Contrast& contrast) const;
};

struct SyntheticData {
  Cohort source;
  Cohort target;
  OracleTruth truth;
};

SyntheticData generate(const Scenario& scenario);

/// Expectation of a risk or risk difference at time t over one population's
/// covariate law, optionally with some covariates held fixed. Tensor
/// Gauss-Hermite quadrature when the grid is small enough, otherwise
/// Monte Carlo with 1e6 draws.
struct Expectation {
  double value = 0.0;
  double mc_error = 0.0;
  bool monte_carlo = false;
};
Expectation expected_risk(const Scenario& scenario, Population population, std::size_t arm, double t,
                          const std::map<std::string, double>& fixed = {});
Expectation expected_effect(const Scenario& scenario, Population population, const Contrast& contrast, double t,
                            const std::map<std::string, double>& fixed = {});

/// Probability that a source subject's event is observed before censoring.
double event_probability(const Scenario& scenario, Population population);

std::string truth_to_json(const OracleTruth& truth);
void write_truth_risks_csv(std::ostream& out, const OracleTruth& truth);

}  // namespace transport
