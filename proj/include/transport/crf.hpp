#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "transport/alignment.hpp"
#include "transport/cohort.hpp"
#include "transport/estimate.hpp"
#include "transport/survival_forest.hpp"

namespace transport {

/// Source cohort encoded against a feature layout, with per-row arm indices.
struct SourceData {
  ModelMatrix x;
  std::vector<double> time;
  std::vector<bool> event;
  std::vector<std::string> ids;
  std::vector<std::string> arms;      // label order
  std::vector<std::uint32_t> arm_of;  // index into `arms` per row

  std::size_t size() const { return time.size(); }
  std::size_t arm_index(const std::string& label) const;
  SourceData gather(const std::vector<std::size_t>& rows) const;
  /// Rows of one arm as SurvivalData, with their source row indices.
  SurvivalData arm_data(std::size_t arm, std::vector<std::size_t>* rows = nullptr) const;
};

/// `arms` fixes the label order; empty means lexicographic order of the labels present.
SourceData encode_source(const Cohort& source, const FeatureLayout& layout,
                         std::vector<std::string> arms = {});

/// One outcome forest per arm, all on the same covariate layout.
struct ArmModelSet {
  std::vector<std::string> arms;
  std::vector<SurvivalForest> forests;
  std::vector<std::vector<std::size_t>> training_rows;  // source rows per arm, in fit order
  double horizon = 5.0;
  std::uint64_t fingerprint = 0;

  std::size_t arm_index(const std::string& label) const;
  const SurvivalForest& forest(const std::string& arm) const { return forests[arm_index(arm)]; }
};

/// Fits arm k with seed derived from (params.seed, k). Throws an Error naming
/// any arm without events.
ArmModelSet fit_arm_models(const SourceData& source, const ForestParams& params, double horizon);
ArmModelSet fit_arm_models(const Cohort& source, const FeatureLayout& layout, const ForestParams& params,
                           double horizon);

/// Predicted risk at the model horizon for every subject under every arm.
class CounterfactualGrid {
 public:
  CounterfactualGrid(std::vector<std::string> arms, std::vector<std::string> ids, std::vector<double> risks);

  std::size_t subjects() const { return ids_.size(); }
  const std::vector<std::string>& arms() const { return arms_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t arm_index(const std::string& label) const;
  double risk(std::size_t subject, std::size_t arm) const { return risks_[subject * arms_.size() + arm]; }

 private:
  std::vector<std::string> arms_;
  std::vector<std::string> ids_;
  std::vector<double> risks_;
};

CounterfactualGrid counterfactual_grid(const ArmModelSet& models, const ModelMatrix& target,
                                       const std::vector<std::string>& ids, int threads = 1);
CounterfactualGrid counterfactual_grid(const ArmModelSet& models, const Cohort& target,
                                       const FeatureLayout& layout, int threads = 1);

/// Individual effect: risk under the treated arm minus risk under the reference arm.
double ite(const CounterfactualGrid& grid, const Contrast& contrast, std::size_t subject);

/// Mean ITE over all subjects, or over the subjects selected by `mask`.
double tate(const CounterfactualGrid& grid, const Contrast& contrast);
double tate(const CounterfactualGrid& grid, const Contrast& contrast, const std::vector<bool>& mask);

/// Point-only subgroup estimate (se = 0, n_boot = 0); SEs come from the bootstrap driver.
ContrastEstimate subgroup_tate(const CounterfactualGrid& grid, const Contrast& contrast,
                               const std::vector<bool>& mask, const std::string& name = "subgroup");

/// Predictions over the source rows: out-of-bag for the arm a row trained,
/// ordinary forest prediction for the other arms.
struct OobGrid {
  CounterfactualGrid grid;
  std::size_t fallbacks = 0;  // rows in-bag for every tree of their own arm
};
OobGrid oob_counterfactuals(const ArmModelSet& models, const SourceData& source, int threads = 1);

/// KM risk at `horizon` for one arm of `source`; `weights` is empty or one per row.
double arm_km_risk(const SourceData& source, std::size_t arm, double horizon,
                   std::span<const double> weights = {});

/// OOB re-translation: fit per-arm forests on `source` and return the TATE of
/// each contrast over the source cohort itself.
std::vector<double> oob_retranslate(const SourceData& source, const ForestParams& params,
                                    const std::vector<Contrast>& contrasts, double horizon,
                                    std::size_t* fallbacks = nullptr);

}  // namespace transport
