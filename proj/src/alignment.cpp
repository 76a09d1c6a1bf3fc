#include "transport/alignment.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "transport/error.hpp"

namespace transport {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

bool levels_subset(const std::vector<std::string>& inner, const std::vector<std::string>& outer) {
  return std::all_of(inner.begin(), inner.end(), [&](const std::string& l) {
    return std::find(outer.begin(), outer.end(), l) != outer.end();
  });
}

AlignmentReport partition(const CovariateSchema& source, const CovariateSchema& target,
                          const auto& target_levels) {
  AlignmentReport report;
  for (const auto& s : source.entries()) {
    const auto t_index = target.find(s.name);
    if (!t_index) {
      report.dropped_source.push_back(s.name);
      continue;
    }
    const auto& t = target[*t_index];
    bool compatible = s.kind == t.kind;
    if (compatible && s.kind == CovariateKind::Categorical) {
      compatible = levels_subset(target_levels(*t_index), s.levels);
    }
    (compatible ? report.shared : report.type_conflicts).push_back(s.name);
  }
  for (const auto& t : target.entries()) {
    if (!source.find(t.name)) report.dropped_target.push_back(t.name);
  }
  if (report.shared.empty()) throw Error("no common covariates");
  return report;
}

}  // namespace

AlignmentReport align_schemas(const CovariateSchema& source, const CovariateSchema& target) {
  return partition(source, target, [&](std::size_t j) { return target[j].levels; });
}

AlignmentReport align_cohorts(const Cohort& source, const Cohort& target) {
  const auto& tschema = target.schema();
  return partition(source.schema(), tschema, [&](std::size_t j) {
    std::set<std::size_t> seen;
    for (const auto& r : target.rows()) seen.insert(static_cast<std::size_t>(r.covariates[j]));
    std::vector<std::string> observed;
    for (auto i : seen) observed.push_back(tschema[j].levels[i]);
    return observed;
  });
}

std::string alignment_to_json(const AlignmentReport& report) {
  nlohmann::json doc = {{"shared", report.shared},
                        {"dropped_source", report.dropped_source},
                        {"dropped_target", report.dropped_target},
                        {"type_conflicts", report.type_conflicts}};
  return doc.dump(2) + "\n";
}

FeatureLayout::FeatureLayout(const CovariateSchema& source, const std::vector<std::string>& shared) {
  std::vector<FeatureColumn> cols;
  for (const auto& e : source.entries()) {
    if (std::find(shared.begin(), shared.end(), e.name) == shared.end()) continue;
    if (e.kind == CovariateKind::Categorical) {
      for (const auto& level : e.levels) {
        cols.push_back({e.name + "=" + level, e.name, e.kind, level});
      }
    } else {
      cols.push_back({e.name, e.name, e.kind, {}});
    }
  }
  for (const auto& name : shared) {
    if (!source.find(name)) throw Error("shared covariate '" + name + "' is not in the source schema");
  }
  *this = FeatureLayout(std::move(cols));
}

FeatureLayout::FeatureLayout(std::vector<FeatureColumn> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw Error("feature layout has no columns");
  std::uint64_t h = fnv1a("feature-layout/1");
  for (const auto& c : columns_) {
    h = fnv1a(c.name, h);
    h = fnv1a("\x1f", h);
    h = fnv1a(to_string(c.kind), h);
    h = fnv1a("\x1e", h);
  }
  fingerprint_ = h;
}

ModelMatrix::ModelMatrix(std::size_t cols, std::vector<double> values, std::uint64_t fingerprint)
    : cols_(cols), values_(std::move(values)), fingerprint_(fingerprint) {
  if (cols_ == 0 || values_.size() % cols_ != 0) throw Error("model matrix shape mismatch");
}

ModelMatrix ModelMatrix::gather(std::span<const std::size_t> indices) const {
  std::vector<double> out;
  out.reserve(indices.size() * cols_);
  for (auto i : indices) {
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return ModelMatrix(cols_, std::move(out), fingerprint_);
}

ModelMatrix make_model_matrix(const Cohort& cohort, const FeatureLayout& layout) {
  const auto& schema = cohort.schema();
  struct Source {
    std::size_t index;
    std::optional<std::size_t> level;
  };
  std::vector<Source> sources;
  for (const auto& col : layout.columns()) {
    const auto j = schema.find(col.covariate);
    if (!j) throw Error("cohort lacks model covariate '" + col.covariate + "'");
    const auto& spec = schema[*j];
    if (spec.kind != col.kind) throw Error("covariate '" + col.covariate + "' has a different kind");
    Source s{*j, std::nullopt};
    if (col.kind == CovariateKind::Categorical) s.level = spec.level_index(col.level);
    sources.push_back(s);
  }
  // Target levels unknown to the layout would silently encode as all-zero.
  for (const auto& spec : schema.entries()) {
    if (spec.kind != CovariateKind::Categorical) continue;
    bool used = false;
    std::set<std::string> known;
    for (const auto& col : layout.columns()) {
      if (col.covariate == spec.name) {
        used = true;
        known.insert(col.level);
      }
    }
    if (!used) continue;
    const auto j = *schema.find(spec.name);
    for (const auto& r : cohort.rows()) {
      const auto& label = spec.levels[static_cast<std::size_t>(r.covariates[j])];
      if (!known.contains(label)) {
        throw Error("level '" + label + "' of '" + spec.name + "' is not known to the model");
      }
    }
  }

  std::vector<double> values;
  values.reserve(cohort.size() * sources.size());
  for (const auto& r : cohort.rows()) {
    for (std::size_t c = 0; c < sources.size(); ++c) {
      const double v = r.covariates[sources[c].index];
      if (layout.columns()[c].kind != CovariateKind::Categorical) {
        values.push_back(v);
      } else {
        // A level the cohort's schema does not declare never occurs in it.
        const auto level = sources[c].level;
        values.push_back(level && static_cast<std::size_t>(v) == *level ? 1.0 : 0.0);
      }
    }
  }
  return ModelMatrix(layout.size(), std::move(values), layout.fingerprint());
}

}  // namespace transport
