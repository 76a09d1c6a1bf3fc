#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "transport/cohort.hpp"

namespace transport {

/// Partition of covariate names between a source and a target schema.
struct AlignmentReport {
  std::vector<std::string> shared;
  std::vector<std::string> dropped_source;
  std::vector<std::string> dropped_target;
  std::vector<std::string> type_conflicts;
};

/// Schema-level alignment. A name is shared when the kinds match; categorical
/// covariates additionally need the target's declared levels to be a subset of
/// the source's. Throws Error("no common covariates") when nothing is shared.
AlignmentReport align_schemas(const CovariateSchema& source, const CovariateSchema& target);

/// Same partition, but the categorical rule uses the levels actually observed
/// in the target rows rather than the declared ones.
AlignmentReport align_cohorts(const Cohort& source, const Cohort& target);

std::string alignment_to_json(const AlignmentReport& report);

/// One model-matrix column. Categorical covariates expand to one 0/1
/// indicator per source level.
struct FeatureColumn {
  std::string name;       // "age" or "race=Black"
  std::string covariate;  // schema name
  CovariateKind kind = CovariateKind::Numeric;
  std::string level;      // categorical only
};

/// Column layout over the shared covariates, in source-schema order.
class FeatureLayout {
 public:
  FeatureLayout() = default;
  FeatureLayout(const CovariateSchema& source, const std::vector<std::string>& shared);
  explicit FeatureLayout(std::vector<FeatureColumn> columns);

  const std::vector<FeatureColumn>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  std::vector<FeatureColumn> columns_;
  std::uint64_t fingerprint_ = 0;
};

/// Dense row-major design matrix tagged with the layout fingerprint.
class ModelMatrix {
 public:
  ModelMatrix() = default;
  ModelMatrix(std::size_t cols, std::vector<double> values, std::uint64_t fingerprint);

  std::size_t rows() const { return cols_ == 0 ? 0 : values_.size() / cols_; }
  std::size_t cols() const { return cols_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * cols_, cols_};
  }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

  ModelMatrix gather(std::span<const std::size_t> indices) const;

 private:
  std::size_t cols_ = 0;
  std::vector<double> values_;
  std::uint64_t fingerprint_ = 0;
};

/// Encodes a cohort against a layout, matching covariates by name and
/// categorical levels by label.
ModelMatrix make_model_matrix(const Cohort& cohort, const FeatureLayout& layout);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);

}  // namespace transport
