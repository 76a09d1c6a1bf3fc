#include "transport/crf.hpp"

#include <algorithm>
#include <numeric>

#include "transport/error.hpp"
#include "transport/km.hpp"
#include "transport/parallel.hpp"
#include "transport/random.hpp"

namespace transport {

namespace {

std::size_t find_arm(const std::vector<std::string>& arms, const std::string& label) {
  auto it = std::find(arms.begin(), arms.end(), label);
  if (it == arms.end()) throw Error("unknown arm '" + label + "'");
  return static_cast<std::size_t>(it - arms.begin());
}

}  // namespace

std::size_t SourceData::arm_index(const std::string& label) const { return find_arm(arms, label); }

SourceData SourceData::gather(const std::vector<std::size_t>& rows) const {
  SourceData out;
  out.x = x.gather(rows);
  out.arms = arms;
  out.time.reserve(rows.size());
  out.event.reserve(rows.size());
  out.ids.reserve(rows.size());
  out.arm_of.reserve(rows.size());
  for (auto r : rows) {
    out.time.push_back(time[r]);
    out.event.push_back(event[r]);
    out.ids.push_back(ids[r]);
    out.arm_of.push_back(arm_of[r]);
  }
  return out;
}

SurvivalData SourceData::arm_data(std::size_t arm, std::vector<std::size_t>* rows) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i) {
    if (arm_of[i] == arm) idx.push_back(i);
  }
  SurvivalData d;
  d.x = x.gather(idx);
  for (auto i : idx) {
    d.time.push_back(time[i]);
    d.event.push_back(event[i]);
    d.ids.push_back(ids[i]);
  }
  if (rows) *rows = std::move(idx);
  return d;
}

SourceData encode_source(const Cohort& source, const FeatureLayout& layout, std::vector<std::string> arms) {
  if (source.role() != CohortRole::Source) throw Error("encode_source needs a source cohort");
  SourceData out;
  out.x = make_model_matrix(source, layout);
  out.arms = arms.empty() ? source.arms() : std::move(arms);
  for (const auto& r : source.rows()) {
    out.time.push_back(*r.time);
    out.event.push_back(*r.event);
    out.ids.push_back(r.id);
    out.arm_of.push_back(static_cast<std::uint32_t>(find_arm(out.arms, *r.arm)));
  }
  return out;
}

std::size_t ArmModelSet::arm_index(const std::string& label) const { return find_arm(arms, label); }

ArmModelSet fit_arm_models(const SourceData& source, const ForestParams& params, double horizon) {
  if (!(horizon > 0)) throw Error("horizon must be > 0");
  ArmModelSet set;
  set.arms = source.arms;
  set.horizon = horizon;
  set.fingerprint = source.x.fingerprint();
  for (std::size_t a = 0; a < source.arms.size(); ++a) {
    std::vector<std::size_t> rows;
    auto data = source.arm_data(a, &rows);
    if (data.size() == 0) throw Error("arm '" + source.arms[a] + "' has no rows");
    if (std::none_of(data.event.begin(), data.event.end(), [](bool e) { return e; })) {
      throw Error("arm '" + source.arms[a] + "' has no events");
    }
    ForestParams arm_params = params;
    arm_params.seed = derive_seed(params.seed, Stream::Arm, a);
    set.forests.push_back(SurvivalForest::fit(data, arm_params));
    set.training_rows.push_back(std::move(rows));
  }
  return set;
}

ArmModelSet fit_arm_models(const Cohort& source, const FeatureLayout& layout, const ForestParams& params,
                           double horizon) {
  return fit_arm_models(encode_source(source, layout), params, horizon);
}

CounterfactualGrid::CounterfactualGrid(std::vector<std::string> arms, std::vector<std::string> ids,
                                       std::vector<double> risks)
    : arms_(std::move(arms)), ids_(std::move(ids)), risks_(std::move(risks)) {
  if (risks_.size() != arms_.size() * ids_.size()) throw Error("counterfactual grid shape mismatch");
  for (double r : risks_) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error("counterfactual risk outside [0, 1]");
  }
}

std::size_t CounterfactualGrid::arm_index(const std::string& label) const { return find_arm(arms_, label); }

CounterfactualGrid counterfactual_grid(const ArmModelSet& models, const ModelMatrix& target,
                                       const std::vector<std::string>& ids, int threads) {
  if (target.fingerprint() != models.fingerprint) {
    throw Error("target covariates do not match the fitted models' layout; check the alignment report");
  }
  if (ids.size() != target.rows()) throw Error("target ids do not match the target matrix");
  const std::size_t n_arms = models.arms.size();
  std::vector<double> risks(target.rows() * n_arms);
  parallel_for(target.rows(), threads, [&](std::size_t i) {
    for (std::size_t a = 0; a < n_arms; ++a) {
      risks[i * n_arms + a] = models.forests[a].predict_risk(target, i, models.horizon);
    }
  });
  return {models.arms, ids, std::move(risks)};
}

CounterfactualGrid counterfactual_grid(const ArmModelSet& models, const Cohort& target,
                                       const FeatureLayout& layout, int threads) {
  std::vector<std::string> ids;
  for (const auto& r : target.rows()) ids.push_back(r.id);
  return counterfactual_grid(models, make_model_matrix(target, layout), ids, threads);
}

double ite(const CounterfactualGrid& grid, const Contrast& contrast, std::size_t subject) {
  if (subject >= grid.subjects()) throw Error("subject index out of range");
  return grid.risk(subject, grid.arm_index(contrast.treated())) -
         grid.risk(subject, grid.arm_index(contrast.reference()));
}

double tate(const CounterfactualGrid& grid, const Contrast& contrast) {
  return tate(grid, contrast, std::vector<bool>(grid.subjects(), true));
}

double tate(const CounterfactualGrid& grid, const Contrast& contrast, const std::vector<bool>& mask) {
  if (mask.size() != grid.subjects()) throw Error("subgroup mask does not match the grid");
  const auto a = grid.arm_index(contrast.treated());
  const auto b = grid.arm_index(contrast.reference());
  // Per-arm means, so tate(A,B) + tate(B,C) == tate(A,C) up to one rounding.
  double sum_a = 0, sum_b = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < grid.subjects(); ++i) {
    if (!mask[i]) continue;
    sum_a += grid.risk(i, a);
    sum_b += grid.risk(i, b);
    ++n;
  }
  if (n == 0) throw Error(grid.subjects() == 0 ? "empty target population" : "empty subgroup");
  return sum_a / static_cast<double>(n) - sum_b / static_cast<double>(n);
}

ContrastEstimate subgroup_tate(const CounterfactualGrid& grid, const Contrast& contrast,
                               const std::vector<bool>& mask, const std::string& name) {
  auto e = ContrastEstimate::make(contrast, Estimand::Tate, tate(grid, contrast, mask), 0.0, 0);
  e.subgroup = name;
  e.n = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  return e;
}

OobGrid oob_counterfactuals(const ArmModelSet& models, const SourceData& source, int threads) {
  if (source.x.fingerprint() != models.fingerprint) throw Error("source layout does not match the models");
  const std::size_t n_arms = models.arms.size();
  // position of each source row inside its own arm's training data
  std::vector<std::size_t> own_position(source.size(), 0);
  std::vector<bool> trained(source.size(), false);
  for (std::size_t a = 0; a < n_arms; ++a) {
    const auto& rows = models.training_rows[a];
    for (std::size_t k = 0; k < rows.size(); ++k) {
      own_position[rows[k]] = k;
      trained[rows[k]] = true;
    }
  }
  std::vector<double> risks(source.size() * n_arms);
  std::vector<std::uint8_t> fell_back(source.size(), 0);
  parallel_for(source.size(), threads, [&](std::size_t i) {
    for (std::size_t a = 0; a < n_arms; ++a) {
      const auto& forest = models.forests[a];
      double r;
      if (trained[i] && source.arm_of[i] == a) {
        auto oob = forest.try_predict_risk_oob(own_position[i], models.horizon);
        if (!oob) fell_back[i] = 1;
        r = oob ? *oob : forest.predict_risk(source.x, i, models.horizon);
      } else {
        r = forest.predict_risk(source.x, i, models.horizon);
      }
      risks[i * n_arms + a] = r;
    }
  });
  OobGrid out{CounterfactualGrid(models.arms, source.ids, std::move(risks))};
  out.fallbacks = static_cast<std::size_t>(std::count(fell_back.begin(), fell_back.end(), 1));
  return out;
}

double arm_km_risk(const SourceData& source, std::size_t arm, double horizon, std::span<const double> weights) {
  if (!weights.empty() && weights.size() != source.size()) throw Error("weights do not cover every source row");
  std::vector<double> times, w;
  std::vector<bool> events;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source.arm_of[i] != arm) continue;
    times.push_back(source.time[i]);
    events.push_back(source.event[i]);
    if (!weights.empty()) w.push_back(weights[i]);
  }
  if (times.empty()) throw Error("arm '" + source.arms.at(arm) + "' has no rows");
  if (!w.empty() && std::accumulate(w.begin(), w.end(), 0.0) <= 0) {
    throw Error("arm '" + source.arms[arm] + "' has zero total weight");
  }
  return risk_at(km_fit(times, events, w), horizon).risk;
}

std::vector<double> oob_retranslate(const SourceData& source, const ForestParams& params,
                                    const std::vector<Contrast>& contrasts, double horizon, std::size_t* fallbacks) {
  const auto models = fit_arm_models(source, params, horizon);
  const auto oob = oob_counterfactuals(models, source, params.threads);
  if (fallbacks) *fallbacks = oob.fallbacks;
  std::vector<double> out;
  for (const auto& c : contrasts) out.push_back(tate(oob.grid, c));
  return out;
}

}  // namespace transport
