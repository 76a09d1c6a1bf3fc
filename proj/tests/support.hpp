#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "transport/alignment.hpp"
#include "transport/cohort.hpp"
#include "transport/random.hpp"
#include "transport/survival_forest.hpp"

namespace testing {

using namespace transport;

inline CovariateSpec numeric(std::string name) { return {std::move(name), CovariateKind::Numeric, {}, ""}; }
inline CovariateSpec binary(std::string name) { return {std::move(name), CovariateKind::Binary, {}, ""}; }
inline CovariateSpec categorical(std::string name, std::vector<std::string> levels) {
  return {std::move(name), CovariateKind::Categorical, std::move(levels), ""};
}

inline SubjectRecord trial_row(std::string id, std::vector<double> x, std::string arm, bool event, double time) {
  return {std::move(id), std::move(x), std::move(arm), event, time};
}
inline SubjectRecord target_row(std::string id, std::vector<double> x) {
  return {std::move(id), std::move(x), std::nullopt, std::nullopt, std::nullopt};
}

inline std::string pad(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

/// Small simulated trial over covariates x ~ N(0,1) and z ~ Bernoulli(0.4).
/// Arm k has hazard 0.15 * exp(0.5 x + 0.4 z - 0.2 k); censoring Exp(0.05)
/// with an administrative end at 8.
inline Cohort simulated_trial(std::uint64_t seed, std::size_t n, const std::vector<std::string>& arms) {
  Rng rng(seed);
  std::vector<SubjectRecord> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal(0, 1);
    const double z = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const std::size_t k = i % arms.size();
    const double rate = 0.15 * std::exp(0.5 * x + 0.4 * z - 0.2 * static_cast<double>(k));
    const double t = rng.exponential(rate);
    const double c = std::min(rng.exponential(0.05), 8.0);
    rows.push_back(trial_row("S" + pad(i), {x, z}, arms[k], t <= c, std::min(t, c)));
  }
  return Cohort(CovariateSchema({numeric("x"), binary("z")}), std::move(rows), CohortRole::Source);
}

/// Target rows over the same covariates, x shifted by `shift`.
inline Cohort simulated_target(std::uint64_t seed, std::size_t n, double shift = 0.5) {
  Rng rng(seed);
  std::vector<SubjectRecord> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal(shift, 1);
    const double z = rng.uniform() < 0.6 ? 1.0 : 0.0;
    rows.push_back(target_row("T" + pad(i), {x, z}));
  }
  return Cohort(CovariateSchema({numeric("x"), binary("z")}), std::move(rows), CohortRole::Target);
}

inline FeatureLayout xz_layout() {
  return FeatureLayout(CovariateSchema({numeric("x"), binary("z")}), {"x", "z"});
}

/// Survival data with a single-column (or wider) design matrix.
inline SurvivalData survival_data(const std::vector<std::vector<double>>& x, std::vector<double> time,
                                  std::vector<bool> event, std::uint64_t fingerprint = 7) {
  SurvivalData d;
  const std::size_t cols = x.empty() ? 1 : x.front().size();
  std::vector<double> values;
  for (const auto& r : x) values.insert(values.end(), r.begin(), r.end());
  d.x = ModelMatrix(cols, std::move(values), fingerprint);
  d.time = std::move(time);
  d.event = std::move(event);
  for (std::size_t i = 0; i < d.time.size(); ++i) d.ids.push_back("r" + pad(i));
  return d;
}

/// Straightforward log-rank chi-square: loops over distinct event times and
/// counts risk sets directly.
inline double brute_force_logrank(const std::vector<bool>& group, const std::vector<double>& times,
                                  const std::vector<bool>& events) {
  std::vector<double> grid;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i]) grid.push_back(times[i]);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double o_minus_e = 0, v = 0;
  for (double t : grid) {
    double n = 0, n1 = 0, d = 0, d1 = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] >= t) {
        n += 1;
        if (group[i]) n1 += 1;
      }
      if (times[i] == t && events[i]) {
        d += 1;
        if (group[i]) d1 += 1;
      }
    }
    o_minus_e += d1 - d * n1 / n;
    if (n > 1) v += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1);
  }
  return v > 0 ? o_minus_e * o_minus_e / v : 0.0;
}

}  // namespace testing
