#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "transport/cohort.hpp"

namespace transport {

/// Schema sidecar: JSON object {"covariates": [{"name", "kind", "levels"?, "unit"?}, ...]}.
CovariateSchema read_schema(const std::filesystem::path& path);
CovariateSchema parse_schema(const std::string& json_text);
std::string schema_to_json(const CovariateSchema& schema);
void write_schema(const std::filesystem::path& path, const CovariateSchema& schema);

/// Delimited cohort file. Header holds covariate names plus the reserved
/// columns id, arm, event, time (arm/event/time required for source cohorts).
/// Missing values ("", "NA") are rejected; there is no imputation.
Cohort read_cohort(std::istream& in, const CovariateSchema& schema, CohortRole role,
                   char delimiter = ',');
Cohort read_cohort(const std::filesystem::path& path, const CovariateSchema& schema,
                   CohortRole role, char delimiter = ',');

void write_cohort(std::ostream& out, const Cohort& cohort, char delimiter = ',');
void write_cohort(const std::filesystem::path& path, const Cohort& cohort, char delimiter = ',');

}  // namespace transport
