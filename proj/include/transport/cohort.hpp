#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace transport {

enum class CovariateKind { Numeric, Binary, Categorical };

std::string_view to_string(CovariateKind kind);
CovariateKind parse_kind(std::string_view text);

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::Numeric;
  std::vector<std::string> levels;  // categorical only
  std::string unit;

  std::optional<std::size_t> level_index(std::string_view label) const;
  bool operator==(const CovariateSpec&) const = default;
};

/// Ordered covariate dictionary. Names are unique and non-empty; categorical
/// level lists are non-empty and duplicate-free.
class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<CovariateSpec> entries);

  const std::vector<CovariateSpec>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const CovariateSpec& operator[](std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  const CovariateSpec& at(std::string_view name) const;

  bool operator==(const CovariateSchema&) const = default;

 private:
  std::vector<CovariateSpec> entries_;
};

enum class CohortRole { Source, Target };

/// One subject. Covariate values are stored per schema entry: numeric values
/// as-is, binary as 0/1, categorical as the index into the declared levels.
struct SubjectRecord {
  std::string id;
  std::vector<double> covariates;
  std::optional<std::string> arm;
  std::optional<bool> event;
  std::optional<double> time;
};

/// Immutable rectangular dataset. Source cohorts carry arm, event and time on
/// every row; target cohorts need only covariates.
class Cohort {
 public:
  Cohort(CovariateSchema schema, std::vector<SubjectRecord> rows, CohortRole role);

  const CovariateSchema& schema() const { return schema_; }
  const std::vector<SubjectRecord>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  CohortRole role() const { return role_; }
  bool empty() const { return rows_.empty(); }

  /// Arm labels in lexicographic order.
  std::vector<std::string> arms() const;

  /// Values of one covariate across rows (schema encoding).
  std::vector<double> column(std::string_view name) const;

  Cohort subset(const std::vector<std::size_t>& indices) const;
  Cohort subset(const std::vector<bool>& mask) const;

 private:
  CovariateSchema schema_;
  std::vector<SubjectRecord> rows_;
  CohortRole role_;
};

}  // namespace transport
