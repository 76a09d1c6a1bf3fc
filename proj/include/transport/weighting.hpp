#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transport/alignment.hpp"
#include "transport/cohort.hpp"
#include "transport/crf.hpp"
#include "transport/estimate.hpp"

namespace transport {

struct SelectionParams {
  int n_trees = 500;
  std::optional<int> mtry;  // unset: ceil(sqrt(p))
  int min_node_size = 10;
  std::optional<int> max_depth;
  std::uint64_t seed = 0;
  int threads = 1;
  double clip_low = 0.01;
  double clip_high = 0.99;
};

/// Bagged CART trees with Gini splits. Each leaf stores the in-bag share of
/// label-1 rows; the forest probability is the mean leaf share over trees.
class ClassificationForest {
 public:
  struct Node {
    std::int32_t column = -1;
    double threshold = 0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    double share = 0;  // leaves only
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<std::uint16_t> inbag;
    double predict(std::span<const double> x) const;
  };

  static ClassificationForest fit(const ModelMatrix& x, const std::vector<bool>& label,
                                  const SelectionParams& params);

  double predict(std::span<const double> x) const;
  /// Mean over trees that left training row `row` out of bag; nullopt if none did.
  std::optional<double> predict_oob(std::size_t row) const;

  const std::vector<Tree>& trees() const { return trees_; }

 private:
  std::vector<Tree> trees_;
  ModelMatrix training_x_;
};

/// P(trial membership | covariates) estimated on the stacked source + target
/// rows. Rows are stacked source-first, each block sorted by id, so the fit
/// does not depend on input order.
class SelectionModel {
 public:
  static SelectionModel fit(const ModelMatrix& source, const std::vector<std::string>& source_ids,
                            const ModelMatrix& target, const std::vector<std::string>& target_ids,
                            const SelectionParams& params);

  /// Clipped membership probability for an arbitrary covariate row.
  double probability(std::span<const double> x) const;

  /// Unclipped probabilities for the source rows. When `ids` equals the id
  /// sequence the model was fitted on, training rows get out-of-bag
  /// probabilities; otherwise ordinary predictions.
  std::vector<double> source_probabilities(const ModelMatrix& source, const std::vector<std::string>& ids) const;

  std::uint64_t fingerprint() const { return fingerprint_; }
  const SelectionParams& params() const { return params_; }
  double clip(double p) const;

 private:

  ClassificationForest forest_;
  SelectionParams params_;
  std::uint64_t fingerprint_ = 0;
  std::vector<std::string> source_ids_;          // input order
  std::vector<double> source_oob_;               // input order, unclipped
};

SelectionModel fit_selection_model(const Cohort& source, const Cohort& target, const FeatureLayout& layout,
                                   const SelectionParams& params);

/// Inverse-odds weights (1 - p) / p for trial rows, with diagnostics.
struct WeightSet {
  std::vector<std::string> ids;
  std::vector<double> probability;
  std::vector<double> weight;
  double min = 0;
  double max = 0;
  double sum = 0;
  double ess = 0;  // (sum w)^2 / sum w^2
  std::size_t clipped = 0;
};

WeightSet weights_from_probabilities(std::vector<std::string> ids, std::vector<double> probability);
WeightSet compute_weights(const SelectionModel& model, const ModelMatrix& source, const std::vector<std::string>& ids);
WeightSet compute_weights(const SelectionModel& model, const Cohort& source, const FeatureLayout& layout);

/// Per-subject rows "id,probability,weight" followed by a summary row.
void write_weights_csv(std::ostream& out, const WeightSet& weights);

/// Weighted-KM risk difference at `horizon`; point only (se = 0).
ContrastEstimate weighted_contrast(const SourceData& source, const WeightSet& weights, const Contrast& contrast,
                                   double horizon);
ContrastEstimate weighted_contrast(const Cohort& source, const WeightSet& weights, const Contrast& contrast,
                                   double horizon);

}  // namespace transport
