#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "transport/cohort.hpp"

namespace transport {

/// Standardized mean difference, target minus source. Numeric covariates use
/// (mean_T - mean_S) / sqrt((var_T + var_S) / 2) with population variances;
/// binary covariates use the proportion form. Returns nullopt when the pooled
/// spread is zero. Requires at least two rows per cohort.
std::optional<double> compute_smd(std::string_view covariate, const Cohort& source,
                                  const Cohort& target);

/// Proportion-form SMD for one level of a categorical covariate.
std::optional<double> compute_level_smd(std::string_view covariate, std::string_view level,
                                        const Cohort& source, const Cohort& target);

/// SMD for two proportions.
std::optional<double> proportion_smd(double p_target, double p_source);

struct SmdRow {
  std::string characteristic;  // "age", or "race=Black" for a categorical level
  std::string target_summary;
  std::string source_summary;
  std::optional<double> smd;
  bool flagged = false;
};

struct SmdTable {
  std::vector<SmdRow> rows;
  double threshold = 0.1;
};

/// Table over the given covariates; categoricals contribute one row per level.
/// A row is flagged iff |smd| > threshold.
SmdTable smd_table(const Cohort& source, const Cohort& target,
                   const std::vector<std::string>& covariates, double threshold = 0.1);

void write_smd_csv(std::ostream& out, const SmdTable& table, char delimiter = ',');

}  // namespace transport
