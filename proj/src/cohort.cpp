#include "transport/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "transport/error.hpp"

namespace transport {

std::string_view to_string(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::Numeric:
      return "numeric";
    case CovariateKind::Binary:
      return "binary";
    case CovariateKind::Categorical:
      return "categorical";
  }
  return "numeric";
}

CovariateKind parse_kind(std::string_view text) {
  if (text == "numeric") return CovariateKind::Numeric;
  if (text == "binary") return CovariateKind::Binary;
  if (text == "categorical") return CovariateKind::Categorical;
  throw Error("unknown covariate kind '" + std::string(text) + "'");
}

std::optional<std::size_t> CovariateSpec::level_index(std::string_view label) const {
  auto it = std::find(levels.begin(), levels.end(), label);
  if (it == levels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - levels.begin());
}

CovariateSchema::CovariateSchema(std::vector<CovariateSpec> entries) : entries_(std::move(entries)) {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw Error("covariate name must be non-empty");
    if (e.name == "id" || e.name == "arm" || e.name == "event" || e.name == "time") {
      throw Error("covariate name '" + e.name + "' is reserved");
    }
    if (!seen.insert(e.name).second) throw Error("duplicate covariate name '" + e.name + "'");
    if (e.kind == CovariateKind::Categorical) {
      if (e.levels.empty()) throw Error("categorical covariate '" + e.name + "' has no levels");
      std::set<std::string> lv(e.levels.begin(), e.levels.end());
      if (lv.size() != e.levels.size()) {
        throw Error("categorical covariate '" + e.name + "' has duplicate levels");
      }
    } else if (!e.levels.empty()) {
      throw Error("covariate '" + e.name + "' declares levels but is not categorical");
    }
  }
}

std::optional<std::size_t> CovariateSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

const CovariateSpec& CovariateSchema::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw Error("unknown covariate '" + std::string(name) + "'");
  return entries_[*i];
}

namespace {

void check_row(const CovariateSchema& schema, const SubjectRecord& row, CohortRole role) {
  if (row.covariates.size() != schema.size()) {
    throw Error("row '" + row.id + "' has " + std::to_string(row.covariates.size()) +
                " covariates, schema has " + std::to_string(schema.size()));
  }
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& spec = schema[j];
    const double v = row.covariates[j];
    if (!std::isfinite(v)) {
      throw Error("row '" + row.id + "': non-finite value for '" + spec.name + "'");
    }
    if (spec.kind == CovariateKind::Binary && v != 0.0 && v != 1.0) {
      throw Error("row '" + row.id + "': binary covariate '" + spec.name + "' must be 0 or 1");
    }
    if (spec.kind == CovariateKind::Categorical) {
      if (v < 0 || v != std::floor(v) || v >= static_cast<double>(spec.levels.size())) {
        throw Error("row '" + row.id + "': invalid level for '" + spec.name + "'");
      }
    }
  }
  if (row.event.has_value() != row.time.has_value()) {
    throw Error("row '" + row.id + "': event and time must be given together");
  }
  if (row.time && (!std::isfinite(*row.time) || *row.time < 0)) {
    throw Error("row '" + row.id + "': follow-up time must be finite and >= 0");
  }
  if (role == CohortRole::Source && (!row.arm || !row.event)) {
    throw Error("source row '" + row.id + "' lacks arm, event or time");
  }
}

}  // namespace

Cohort::Cohort(CovariateSchema schema, std::vector<SubjectRecord> rows, CohortRole role)
    : schema_(std::move(schema)), rows_(std::move(rows)), role_(role) {
  for (const auto& r : rows_) check_row(schema_, r, role_);
}

std::vector<std::string> Cohort::arms() const {
  std::set<std::string> labels;
  for (const auto& r : rows_) {
    if (r.arm) labels.insert(*r.arm);
  }
  return {labels.begin(), labels.end()};
}

std::vector<double> Cohort::column(std::string_view name) const {
  const auto j = schema_.find(name);
  if (!j) throw Error("unknown covariate '" + std::string(name) + "'");
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r.covariates[*j]);
  return out;
}

Cohort Cohort::subset(const std::vector<std::size_t>& indices) const {
  std::vector<SubjectRecord> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(rows_.at(i));
  return Cohort(schema_, std::move(rows), role_);
}

Cohort Cohort::subset(const std::vector<bool>& mask) const {
  if (mask.size() != rows_.size()) throw Error("mask length does not match cohort size");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) idx.push_back(i);
  }
  return subset(idx);
}

}  // namespace transport
