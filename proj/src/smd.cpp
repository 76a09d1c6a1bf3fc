#include "transport/smd.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "transport/error.hpp"

namespace transport {

namespace {

struct Moments {
  double mean = 0;
  double var = 0;  // population variance
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size());
  return m;
}

void require_rows(const Cohort& source, const Cohort& target) {
  if (source.size() < 2 || target.size() < 2) {
    throw Error("SMD needs at least two rows in each cohort");
  }
}

const CovariateSpec& shared_spec(std::string_view covariate, const Cohort& source,
                                 const Cohort& target) {
  const auto& s = source.schema().at(covariate);
  const auto& t = target.schema().at(covariate);
  if (s.kind != t.kind) throw Error("covariate '" + std::string(covariate) + "' differs in kind");
  return s;
}

double level_share(const Cohort& cohort, std::string_view covariate, std::string_view level) {
  const auto& spec = cohort.schema().at(covariate);
  const auto idx = spec.level_index(level);
  if (!idx) return 0.0;
  const auto col = cohort.column(covariate);
  const auto hits = std::count(col.begin(), col.end(), static_cast<double>(*idx));
  return static_cast<double>(hits) / static_cast<double>(col.size());
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string numeric_summary(const std::vector<double>& v) {
  return fmt::format("{:.4g} ({:.4g}- {:.4g})", quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75));
}

std::string count_summary(double share, std::size_t n) {
  const auto count = static_cast<long long>(std::llround(share * static_cast<double>(n)));
  return fmt::format("{} ({:.1f}%)", count, 100.0 * share);
}

}  // namespace

std::optional<double> proportion_smd(double p_target, double p_source) {
  const double pooled = (p_target * (1 - p_target) + p_source * (1 - p_source)) / 2.0;
  if (!(pooled > 0)) return std::nullopt;
  return (p_target - p_source) / std::sqrt(pooled);
}

std::optional<double> compute_smd(std::string_view covariate, const Cohort& source,
                                  const Cohort& target) {
  require_rows(source, target);
  const auto& spec = shared_spec(covariate, source, target);
  if (spec.kind == CovariateKind::Categorical) {
    throw Error("categorical covariate '" + spec.name + "' needs a level; use compute_level_smd");
  }
  const auto s = moments(source.column(covariate));
  const auto t = moments(target.column(covariate));
  if (spec.kind == CovariateKind::Binary) return proportion_smd(t.mean, s.mean);
  const double pooled = (t.var + s.var) / 2.0;
  if (!(pooled > 0)) return std::nullopt;
  return (t.mean - s.mean) / std::sqrt(pooled);
}

std::optional<double> compute_level_smd(std::string_view covariate, std::string_view level,
                                        const Cohort& source, const Cohort& target) {
  require_rows(source, target);
  const auto& spec = shared_spec(covariate, source, target);
  if (spec.kind != CovariateKind::Categorical) {
    throw Error("covariate '" + spec.name + "' is not categorical");
  }
  return proportion_smd(level_share(target, covariate, level), level_share(source, covariate, level));
}

SmdTable smd_table(const Cohort& source, const Cohort& target,
                   const std::vector<std::string>& covariates, double threshold) {
  SmdTable table;
  table.threshold = threshold;
  auto add = [&](std::string label, std::string tsum, std::string ssum, std::optional<double> smd) {
    const bool flagged = smd && std::abs(*smd) > threshold;
    table.rows.push_back({std::move(label), std::move(tsum), std::move(ssum), smd, flagged});
  };
  for (const auto& name : covariates) {
    const auto& spec = shared_spec(name, source, target);
    switch (spec.kind) {
      case CovariateKind::Numeric:
        add(name, numeric_summary(target.column(name)), numeric_summary(source.column(name)),
            compute_smd(name, source, target));
        break;
      case CovariateKind::Binary: {
        const auto t = moments(target.column(name)).mean;
        const auto s = moments(source.column(name)).mean;
        add(name, count_summary(t, target.size()), count_summary(s, source.size()),
            compute_smd(name, source, target));
        break;
      }
      case CovariateKind::Categorical:
        for (const auto& level : spec.levels) {
          add(name + "=" + level, count_summary(level_share(target, name, level), target.size()),
              count_summary(level_share(source, name, level), source.size()),
              compute_level_smd(name, level, source, target));
        }
        break;
    }
  }
  return table;
}

void write_smd_csv(std::ostream& out, const SmdTable& table, char d) {
  auto field = [d](const std::string& s) {
    return s.find(d) == std::string::npos ? s : "\"" + s + "\"";
  };
  out << "characteristic" << d << "target" << d << "source" << d << "standardized_mean_difference" << d
      << "flagged\n";
  for (const auto& r : table.rows) {
    out << field(r.characteristic) << d << field(r.target_summary) << d << field(r.source_summary) << d
        << (r.smd ? fmt::format("{:.3f}", *r.smd) : std::string("NA")) << d << (r.flagged ? 1 : 0)
        << '\n';
  }
}

}  // namespace transport
