#include "transport/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "transport/error.hpp"
#include "transport/parallel.hpp"
#include "transport/random.hpp"

namespace transport {

namespace {

constexpr int kMaxRedraws = 1000;

bool contains(const std::vector<Estimand>& set, Estimand e) {
  return std::find(set.begin(), set.end(), e) != set.end();
}

struct Evaluation {
  std::vector<double> values;
  std::size_t oob_fallbacks = 0;
  std::optional<WeightSet> weights;
};

void validate(const TransportProblem& p) {
  if (p.contrasts.empty()) throw Error("no contrasts requested");
  if (p.estimands.empty() && p.subgroups.empty()) throw Error("no estimands requested");
  if (p.target_ids.size() != p.target.rows()) throw Error("target ids do not match the target matrix");
  for (const auto& c : p.contrasts) {
    p.source.arm_index(c.treated());
    p.source.arm_index(c.reference());
  }
  const bool needs_target = contains(p.estimands, Estimand::Tate) || contains(p.estimands, Estimand::TateEligible) ||
                            contains(p.estimands, Estimand::Weighted) || !p.subgroups.empty();
  if (needs_target && p.target.rows() == 0) throw Error("empty target population");
  if (contains(p.estimands, Estimand::TateEligible)) {
    if (p.eligible.size() != p.target.rows()) throw Error("eligibility mask does not match the target");
    if (std::none_of(p.eligible.begin(), p.eligible.end(), [](bool b) { return b; })) {
      throw Error("no target subject meets the eligibility criteria");
    }
  }
  for (const auto& s : p.subgroups) {
    if (s.mask.size() != p.target.rows()) throw Error("subgroup '" + s.name + "' mask does not match the target");
    if (std::none_of(s.mask.begin(), s.mask.end(), [](bool b) { return b; })) {
      throw Error("subgroup '" + s.name + "' is empty");
    }
  }
}

Evaluation evaluate(const TransportProblem& p, const SourceData& sample, std::uint64_t seed, int threads) {
  Evaluation out;
  const auto& est = p.estimands;
  const bool need_models = contains(est, Estimand::OobRetranslation) || contains(est, Estimand::Tate) ||
                           contains(est, Estimand::TateEligible) || !p.subgroups.empty();

  std::optional<ArmModelSet> models;
  std::optional<CounterfactualGrid> grid;
  if (need_models) {
    ForestParams params = p.forest;
    params.seed = seed;
    params.threads = threads;
    models = fit_arm_models(sample, params, p.horizon);
    const bool need_grid = contains(est, Estimand::Tate) || contains(est, Estimand::TateEligible) ||
                           !p.subgroups.empty();
    if (need_grid) grid = counterfactual_grid(*models, p.target, p.target_ids, threads);
  }

  std::map<std::size_t, double> km_risk;
  auto arm_risk = [&](const std::string& arm) {
    const auto a = sample.arm_index(arm);
    auto it = km_risk.find(a);
    if (it == km_risk.end()) it = km_risk.emplace(a, arm_km_risk(sample, a, p.horizon)).first;
    return it->second;
  };

  for (auto e : est) {
    switch (e) {
      case Estimand::Sate:
        for (const auto& c : p.contrasts) out.values.push_back(arm_risk(c.treated()) - arm_risk(c.reference()));
        break;
      case Estimand::OobRetranslation: {
        const auto oob = oob_counterfactuals(*models, sample, threads);
        out.oob_fallbacks = oob.fallbacks;
        for (const auto& c : p.contrasts) out.values.push_back(tate(oob.grid, c));
        break;
      }
      case Estimand::Tate:
        for (const auto& c : p.contrasts) out.values.push_back(tate(*grid, c));
        break;
      case Estimand::TateEligible:
        for (const auto& c : p.contrasts) out.values.push_back(tate(*grid, c, p.eligible));
        break;
      case Estimand::Weighted: {
        SelectionParams sel = p.selection;
        sel.seed = derive_seed(seed, Stream::Selection, 0);
        sel.threads = threads;
        const auto model = SelectionModel::fit(sample.x, sample.ids, p.target, p.target_ids, sel);
        auto weights = compute_weights(model, sample.x, sample.ids);
        for (const auto& c : p.contrasts) out.values.push_back(weighted_contrast(sample, weights, c, p.horizon).point);
        out.weights = std::move(weights);
        break;
      }
    }
  }
  for (const auto& s : p.subgroups) {
    for (const auto& c : p.contrasts) out.values.push_back(tate(*grid, c, s.mask));
  }
  return out;
}

/// Stratified resample: each arm keeps its size. Returns the row indices and
/// the number of redraws needed to give every arm at least one event.
std::pair<std::vector<std::size_t>, std::size_t> resample(const SourceData& source, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_arm(source.arms.size());
  for (std::size_t i = 0; i < source.size(); ++i) by_arm[source.arm_of[i]].push_back(i);
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Rng rng(derive_seed(seed, Stream::Redraw, static_cast<std::uint64_t>(attempt)));
    std::vector<std::size_t> rows;
    rows.reserve(source.size());
    bool ok = true;
    for (const auto& arm_rows : by_arm) {
      bool any_event = false;
      for (std::size_t k = 0; k < arm_rows.size(); ++k) {
        const auto r = arm_rows[rng.below(arm_rows.size())];
        any_event = any_event || source.event[r];
        rows.push_back(r);
      }
      ok = ok && (arm_rows.empty() || any_event);
    }
    if (ok) return {std::move(rows), static_cast<std::size_t>(attempt)};
  }
  throw Error("bootstrap could not draw a replicate with events in every arm");
}

TransportEstimates assemble(const TransportProblem& p, const Evaluation& full,
                            const std::vector<std::vector<double>>& replicates, int n_boot, double z) {
  TransportEstimates out;
  out.n_boot = n_boot;
  out.oob_fallbacks = full.oob_fallbacks;
  out.weights = full.weights;
  std::size_t k = 0;
  auto next = [&](const Contrast& c, Estimand e) {
    double se = 0;
    if (n_boot > 0) {
      std::vector<double> column;
      column.reserve(replicates.size());
      for (const auto& r : replicates) column.push_back(r[k]);
      se = bootstrap_se(column);
    }
    return ContrastEstimate::make(c, e, full.values[k++], se, n_boot, z);
  };
  const auto eligible_n = static_cast<std::size_t>(std::count(p.eligible.begin(), p.eligible.end(), true));
  for (auto e : p.estimands) {
    for (const auto& c : p.contrasts) {
      auto est = next(c, e);
      switch (e) {
        case Estimand::Sate:
        case Estimand::OobRetranslation:
        case Estimand::Weighted:
          est.n = p.source.size();
          break;
        case Estimand::Tate:
          est.n = p.target.rows();
          break;
        case Estimand::TateEligible:
          est.n = eligible_n;
          break;
      }
      out.estimates.push_back(std::move(est));
    }
  }
  for (const auto& s : p.subgroups) {
    const auto n = static_cast<std::size_t>(std::count(s.mask.begin(), s.mask.end(), true));
    for (const auto& c : p.contrasts) {
      auto est = next(c, Estimand::Tate);
      est.subgroup = s.name;
      est.n = n;
      out.subgroups.push_back(std::move(est));
    }
  }
  return out;
}

}  // namespace

double bootstrap_se(std::span<const double> values) {
  if (values.size() < 2) throw Error("bootstrap SE needs at least two replicates");
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

TransportEstimates point_estimates(const TransportProblem& problem, int threads) {
  validate(problem);
  const auto full = evaluate(problem, problem.source, problem.forest.seed, threads);
  return assemble(problem, full, {}, 0, 1.96);
}

TransportEstimates bootstrap_estimates(const TransportProblem& problem, const BootstrapOptions& options) {
  validate(problem);
  if (options.n_boot < 2) throw Error("n_boot must be at least 2");
  const double z = normal_multiplier(options.confidence);
  const auto full = evaluate(problem, problem.source, problem.forest.seed, options.threads);

  const auto n_boot = static_cast<std::size_t>(options.n_boot);
  std::vector<std::vector<double>> replicates(n_boot);
  std::vector<std::size_t> redraws(n_boot, 0);
  parallel_for(n_boot, options.threads, [&](std::size_t b) {
    const auto seed = derive_seed(problem.forest.seed, Stream::Replicate, b);
    auto [rows, redrawn] = resample(problem.source, seed);
    redraws[b] = redrawn;
    replicates[b] = evaluate(problem, problem.source.gather(rows), seed, 1).values;
  });

  auto out = assemble(problem, full, replicates, options.n_boot, z);
  for (auto r : redraws) out.redraws += r;
  if (static_cast<double>(out.redraws) > 0.1 * static_cast<double>(n_boot)) {
    out.warnings.push_back(fmt::format("{} bootstrap redraws for {} replicates (> 10%)", out.redraws, n_boot));
  }
  if (full.oob_fallbacks > 0) {
    out.warnings.push_back(fmt::format("{} source rows had no out-of-bag tree; used all trees", full.oob_fallbacks));
  }
  if (options.keep_replicates) out.replicates = std::move(replicates);
  return out;
}

}  // namespace transport
