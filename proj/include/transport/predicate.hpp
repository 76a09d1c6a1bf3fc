#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "transport/cohort.hpp"

namespace transport {

/// Boolean filter over covariates, e.g. `hdl < 40 OR ldl > 160`,
/// `NOT (race IN {Black, Asian}) AND smoker == 1`. Keywords are
/// case-insensitive; comparison operators are < <= > >= == !=. An empty
/// expression accepts every row.
class Predicate {
 public:
  struct Node;

  Predicate();
  static Predicate parse(std::string_view text);

  const std::string& text() const { return text_; }
  bool is_vacuous() const { return root_ == nullptr; }

  /// Covariate names referenced anywhere in the expression.
  std::vector<std::string> covariates() const;

  /// Throws Error naming the first covariate missing from the schema or used
  /// with an incompatible comparison.
  void validate(const CovariateSchema& schema) const;

  bool evaluate(const CovariateSchema& schema, const SubjectRecord& row) const;

  /// Row mask over a cohort; validates first.
  std::vector<bool> mask(const Cohort& cohort) const;

 private:
  std::string text_;
  std::shared_ptr<const Node> root_;
};

/// Rows of `cohort` satisfying `criteria`. The input is not modified.
Cohort eligibility_filter(const Cohort& cohort, const Predicate& criteria);

}  // namespace transport
