#include "transport/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>
#include <gsl/gsl_integration.h>
#include <json.hpp>

#include "transport/error.hpp"
#include "transport/random.hpp"

namespace transport {

namespace {

using nlohmann::json;

constexpr std::size_t kHermiteNodes = 48;
constexpr double kMaxGrid = 2e6;
constexpr std::size_t kMonteCarloDraws = 1000000;
constexpr double kInf = std::numeric_limits<double>::infinity();

const CovariateLaw& law_of(const ScenarioCovariate& c, Population pop) {
  return pop == Population::Source ? c.source : c.target;
}

void check_probs(const std::vector<double>& probs, std::size_t n, const std::string& what) {
  if (probs.size() != n) throw Error(what + ": expected " + std::to_string(n) + " probabilities");
  double sum = 0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(what + ": probability outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(what + ": probabilities do not sum to 1");
}

/// coefficient[arm][k] over the expanded covariate vector: one slot per
/// numeric/binary covariate, one per level for categoricals.
struct Coefficients {
  std::vector<std::size_t> offset;  // first slot of each covariate
  std::vector<std::vector<double>> beta;

  double linear_predictor(const Scenario& s, std::size_t arm, std::span<const double> w) const {
    double lp = 0;
    const auto& b = beta[arm];
    for (std::size_t j = 0; j < s.covariates.size(); ++j) {
      if (s.covariates[j].kind == CovariateKind::Categorical) {
        lp += b[offset[j] + static_cast<std::size_t>(w[j])];
      } else {
        lp += b[offset[j]] * w[j];
      }
    }
    return lp;
  }
};

Coefficients resolve(const Scenario& s) {
  Coefficients out;
  std::map<std::string, std::size_t> slot;
  std::size_t k = 0;
  for (const auto& c : s.covariates) {
    out.offset.push_back(k);
    if (c.kind == CovariateKind::Categorical) {
      for (const auto& level : c.levels) slot[c.name + "=" + level] = k++;
    } else {
      slot[c.name] = k++;
    }
  }
  for (const auto& arm : s.arms) {
    std::vector<double> b(k, 0.0);
    for (const auto& [key, value] : arm.coefficients) {
      auto it = slot.find(key);
      if (it == slot.end()) throw Error("arm '" + arm.label + "': coefficient for unknown covariate '" + key + "'");
      if (!std::isfinite(value)) throw Error("arm '" + arm.label + "': coefficient '" + key + "' is not finite");
      b[it->second] = value;
    }
    out.beta.push_back(std::move(b));
  }
  return out;
}

double risk_from_hazard(double lambda, double t, double shape) {
  if (lambda == 0.0 || t <= 0.0) return 0.0;
  return -std::expm1(-lambda * std::pow(t, shape));
}

double draw_covariate(const ScenarioCovariate& c, const CovariateLaw& law, Rng& rng) {
  switch (c.kind) {
    case CovariateKind::Numeric:
      return rng.normal(law.mean, law.sd);
    case CovariateKind::Binary:
      return rng.bernoulli(law.p) ? 1.0 : 0.0;
    case CovariateKind::Categorical: {
      const double u = rng.uniform();
      double acc = 0;
      for (std::size_t l = 0; l + 1 < law.probs.size(); ++l) {
        acc += law.probs[l];
        if (u < acc) return static_cast<double>(l);
      }
      return static_cast<double>(law.probs.size() - 1);
    }
  }
  return 0.0;
}

std::size_t draw_arm(const Scenario& s, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t a = 0; a + 1 < s.arms.size(); ++a) {
    acc += s.arms[a].allocation;
    if (u < acc) return a;
  }
  return s.arms.size() - 1;
}

struct Node {
  double value;
  double weight;
};

std::vector<Node> hermite_nodes(double mean, double sd) {
  if (sd == 0.0) return {{mean, 1.0}};
  auto* w = gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, kHermiteNodes, mean, 0.5 / (sd * sd), 0.0, 0.0);
  if (w == nullptr) throw Error("could not build quadrature rule");
  const double* x = gsl_integration_fixed_nodes(w);
  const double* v = gsl_integration_fixed_weights(w);
  std::vector<Node> out;
  double total = 0;
  for (std::size_t i = 0; i < kHermiteNodes; ++i) {
    out.push_back({x[i], v[i]});
    total += v[i];
  }
  gsl_integration_fixed_free(w);
  for (auto& n : out) n.weight /= total;
  return out;
}

std::vector<std::optional<double>> fixed_values(const Scenario& s, const std::map<std::string, double>& fixed) {
  std::vector<std::optional<double>> out(s.covariates.size());
  for (const auto& [name, value] : fixed) {
    auto it = std::find_if(s.covariates.begin(), s.covariates.end(), [&](const auto& c) { return c.name == name; });
    if (it == s.covariates.end()) throw Error("unknown covariate '" + name + "'");
    if (it->kind == CovariateKind::Binary && value != 0.0 && value != 1.0) {
      throw Error("binary covariate '" + name + "' must be fixed at 0 or 1");
    }
    if (it->kind == CovariateKind::Categorical &&
        (value < 0 || value >= static_cast<double>(it->levels.size()) || value != std::floor(value))) {
      throw Error("categorical covariate '" + name + "' fixed at an invalid level index");
    }
    out[static_cast<std::size_t>(it - s.covariates.begin())] = value;
  }
  return out;
}

/// Means (and Monte Carlo errors) of the outputs of f over the covariate law.
struct Integral {
  std::vector<double> mean;
  std::vector<double> mc_error;
  bool monte_carlo = false;
};

Integral integrate(const Scenario& s, Population pop, const std::map<std::string, double>& fixed, std::size_t outputs,
                   const std::function<void(std::span<const double>, double*)>& f) {
  const auto fix = fixed_values(s, fixed);
  const std::size_t p = s.covariates.size();
  Integral out{std::vector<double>(outputs, 0.0), std::vector<double>(outputs, 0.0), false};
  std::vector<double> values(outputs);

  std::vector<std::vector<Node>> nodes(p);
  double grid = 1;
  for (std::size_t j = 0; j < p; ++j) {
    const auto& c = s.covariates[j];
    const auto& law = law_of(c, pop);
    if (fix[j]) {
      nodes[j] = {{*fix[j], 1.0}};
    } else if (c.kind == CovariateKind::Numeric) {
      nodes[j] = hermite_nodes(law.mean, law.sd);
    } else if (c.kind == CovariateKind::Binary) {
      nodes[j] = {{0.0, 1.0 - law.p}, {1.0, law.p}};
    } else {
      for (std::size_t l = 0; l < law.probs.size(); ++l) nodes[j].push_back({static_cast<double>(l), law.probs[l]});
    }
    grid *= static_cast<double>(nodes[j].size());
  }

  std::vector<double> w(p);
  if (grid <= kMaxGrid) {
    std::vector<std::size_t> idx(p, 0);
    while (true) {
      double weight = 1;
      for (std::size_t j = 0; j < p; ++j) {
        w[j] = nodes[j][idx[j]].value;
        weight *= nodes[j][idx[j]].weight;
      }
      if (weight > 0) {
        f(w, values.data());
        for (std::size_t k = 0; k < outputs; ++k) out.mean[k] += weight * values[k];
      }
      std::size_t j = 0;
      while (j < p && ++idx[j] == nodes[j].size()) idx[j++] = 0;
      if (j == p) break;
    }
    return out;
  }

  out.monte_carlo = true;
  Rng rng(derive_seed(s.seed, pop == Population::Source ? Stream::Source : Stream::Target, 1));
  std::vector<double> sq(outputs, 0.0);
  for (std::size_t i = 0; i < kMonteCarloDraws; ++i) {
    for (std::size_t j = 0; j < p; ++j) w[j] = fix[j] ? *fix[j] : draw_covariate(s.covariates[j], law_of(s.covariates[j], pop), rng);
    f(w, values.data());
    for (std::size_t k = 0; k < outputs; ++k) {
      out.mean[k] += values[k];
      sq[k] += values[k] * values[k];
    }
  }
  const auto n = static_cast<double>(kMonteCarloDraws);
  for (std::size_t k = 0; k < outputs; ++k) {
    out.mean[k] /= n;
    const double var = std::max(0.0, sq[k] / n - out.mean[k] * out.mean[k]);
    out.mc_error[k] = std::sqrt(var / (n - 1));
  }
  return out;
}

CovariateLaw parse_law(const json& j, const ScenarioCovariate& c, const CovariateLaw* fallback) {
  CovariateLaw law = fallback ? *fallback : CovariateLaw{};
  const std::string prefix = fallback ? "target_" : "";
  switch (c.kind) {
    case CovariateKind::Numeric:
      if (j.contains(prefix + "mean")) law.mean = j.at(prefix + "mean").get<double>();
      if (j.contains(prefix + "sd")) law.sd = j.at(prefix + "sd").get<double>();
      break;
    case CovariateKind::Binary:
      if (j.contains(prefix + "p")) law.p = j.at(prefix + "p").get<double>();
      break;
    case CovariateKind::Categorical:
      if (j.contains(prefix + "probs")) law.probs = j.at(prefix + "probs").get<std::vector<double>>();
      break;
  }
  return law;
}

json law_json(const ScenarioCovariate& c, const CovariateLaw& law, const std::string& prefix) {
  json j = json::object();
  switch (c.kind) {
    case CovariateKind::Numeric:
      j[prefix + "mean"] = law.mean;
      j[prefix + "sd"] = law.sd;
      break;
    case CovariateKind::Binary:
      j[prefix + "p"] = law.p;
      break;
    case CovariateKind::Categorical:
      j[prefix + "probs"] = law.probs;
      break;
  }
  return j;
}

std::string padded_id(char prefix, std::size_t i, std::size_t n) {
  const auto width = std::to_string(std::max<std::size_t>(n, 1)).size();
  return fmt::format("{}{:0{}}", prefix, i + 1, width);
}

}  // namespace

void Scenario::validate() const {
  if (covariates.empty()) throw Error("scenario has no covariates");
  schema();
  for (const auto& c : covariates) {
    for (const auto* law : {&c.source, &c.target}) {
      switch (c.kind) {
        case CovariateKind::Numeric:
          if (!std::isfinite(law->mean) || !(law->sd >= 0.0) || !std::isfinite(law->sd)) {
            throw Error("covariate '" + c.name + "': invalid normal parameters");
          }
          break;
        case CovariateKind::Binary:
          if (!(law->p >= 0.0 && law->p <= 1.0)) throw Error("covariate '" + c.name + "': p outside [0, 1]");
          break;
        case CovariateKind::Categorical:
          check_probs(law->probs, c.levels.size(), "covariate '" + c.name + "'");
          break;
      }
    }
  }
  if (arms.empty()) throw Error("scenario has no arms");
  std::set<std::string> labels;
  std::vector<double> allocation;
  for (const auto& a : arms) {
    if (a.label.empty()) throw Error("arm label is empty");
    if (!labels.insert(a.label).second) throw Error("duplicate arm '" + a.label + "'");
    if (!(a.baseline_hazard >= 0.0) || !std::isfinite(a.baseline_hazard)) {
      throw Error("arm '" + a.label + "': baseline hazard must be finite and non-negative");
    }
    allocation.push_back(a.allocation);
  }
  check_probs(allocation, arms.size(), "arm allocation");
  resolve(*this);
  if (!(weibull_shape > 0.0) || !std::isfinite(weibull_shape)) throw Error("weibull_shape must be positive");
  if (!(censoring.rate >= 0.0) || !std::isfinite(censoring.rate)) throw Error("censoring rate must be non-negative");
  if (censoring.admin_time && !(*censoring.admin_time > 0.0)) throw Error("administrative time must be positive");
  if (censoring.rate == 0.0 && !censoring.admin_time) {
    const bool zero_hazard = std::any_of(arms.begin(), arms.end(), [](const auto& a) { return a.baseline_hazard == 0; });
    if (zero_hazard) throw Error("an arm with zero hazard needs censoring (rate or administrative time)");
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw Error("horizon must be positive");
  if (n_source == 0) throw Error("n_source must be positive");
}

CovariateSchema Scenario::schema() const {
  std::vector<CovariateSpec> specs;
  for (const auto& c : covariates) specs.push_back({c.name, c.kind, c.levels, ""});
  return CovariateSchema(std::move(specs));
}

std::size_t Scenario::arm_index(std::string_view label) const {
  for (std::size_t a = 0; a < arms.size(); ++a) {
    if (arms[a].label == label) return a;
  }
  throw Error("unknown arm '" + std::string(label) + "'");
}

double Scenario::hazard(std::size_t arm, std::span<const double> w) const {
  const auto coef = resolve(*this);
  return arms[arm].baseline_hazard * std::exp(coef.linear_predictor(*this, arm, w));
}

double Scenario::true_risk(std::size_t arm, std::span<const double> w, double t) const {
  return risk_from_hazard(hazard(arm, w), t, weibull_shape);
}

Scenario parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("scenario is not valid JSON: ") + e.what());
  }
  Scenario s;
  try {
    s.name = j.value("name", "");
    for (const auto& jc : j.at("covariates")) {
      ScenarioCovariate c;
      c.name = jc.at("name").get<std::string>();
      c.kind = parse_kind(jc.at("kind").get<std::string>());
      if (c.kind == CovariateKind::Categorical) c.levels = jc.at("levels").get<std::vector<std::string>>();
      c.source = parse_law(jc, c, nullptr);
      c.target = parse_law(jc, c, &c.source);
      s.covariates.push_back(std::move(c));
    }
    for (const auto& ja : j.at("arms")) {
      ScenarioArm a;
      a.label = ja.at("label").get<std::string>();
      a.allocation = ja.at("allocation").get<double>();
      a.baseline_hazard = ja.at("baseline_hazard").get<double>();
      if (ja.contains("coefficients")) a.coefficients = ja.at("coefficients").get<std::map<std::string, double>>();
      s.arms.push_back(std::move(a));
    }
    s.weibull_shape = j.value("weibull_shape", 1.0);
    if (j.contains("censoring")) {
      const auto& jc = j.at("censoring");
      s.censoring.rate = jc.value("rate", 0.0);
      if (jc.contains("admin_time")) s.censoring.admin_time = jc.at("admin_time").get<double>();
    }
    s.horizon = j.value("horizon", 5.0);
    s.n_source = j.at("n_source").get<std::size_t>();
    s.n_target = j.at("n_target").get<std::size_t>();
    s.seed = j.value("seed", std::uint64_t{1});
  } catch (const json::exception& e) {
    throw Error(std::string("invalid scenario: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario read_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str());
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["covariates"] = json::array();
  for (const auto& c : s.covariates) {
    json jc = {{"name", c.name}, {"kind", std::string(to_string(c.kind))}};
    if (c.kind == CovariateKind::Categorical) jc["levels"] = c.levels;
    jc.update(law_json(c, c.source, ""));
    jc.update(law_json(c, c.target, "target_"));
    j["covariates"].push_back(std::move(jc));
  }
  j["arms"] = json::array();
  for (const auto& a : s.arms) {
    j["arms"].push_back({{"label", a.label},
                         {"allocation", a.allocation},
                         {"baseline_hazard", a.baseline_hazard},
                         {"coefficients", a.coefficients}});
  }
  j["weibull_shape"] = s.weibull_shape;
  j["censoring"] = {{"rate", s.censoring.rate}};
  if (s.censoring.admin_time) j["censoring"]["admin_time"] = *s.censoring.admin_time;
  j["horizon"] = s.horizon;
  j["n_source"] = s.n_source;
  j["n_target"] = s.n_target;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

Scenario builtin_scenario(std::string_view name) {
  Scenario s;
  s.name = std::string(name);
  s.censoring = {0.05, 8.0};
  s.horizon = 5.0;
  s.n_source = 4000;
  s.n_target = 2000;
  s.seed = 1;
  if (name == "S1") {
    s.covariates.push_back({"x", CovariateKind::Numeric, {}, {0.0, 1.0, 0.5, {}}, {0.5, 1.0, 0.5, {}}});
    s.arms.push_back({"A", 0.5, 0.048, {{"x", 0.5}}});
    s.arms.push_back({"B", 0.5, 0.08, {{"x", 0.5}}});
  } else if (name == "S2") {
    s.covariates.push_back({"x", CovariateKind::Numeric, {}, {0.0, 1.0, 0.5, {}}, {0.0, 1.0, 0.5, {}}});
    s.covariates.push_back({"z", CovariateKind::Binary, {}, {0.0, 1.0, 0.3, {}}, {0.0, 1.0, 0.7, {}}});
    s.arms.push_back({"A", 0.5, 0.068, {{"x", 0.4}, {"z", 0.3 + std::log(0.4)}}});
    s.arms.push_back({"B", 0.5, 0.08, {{"x", 0.4}, {"z", 0.3}}});
    // The effect lives mostly in the z = 1 stratum, which is the minority
    // of the source; a larger trial keeps that stratum well populated.
    s.n_source = 20000;
  } else {
    throw Error("unknown built-in scenario '" + std::string(name) + "' (expected S1 or S2)");
  }
  s.validate();
  return s;
}

double OracleTruth::ite(std::size_t subject, const Contrast& c) const {
  const auto find = [&](const std::string& label) {
    auto it = std::find(arms.begin(), arms.end(), label);
    if (it == arms.end()) throw Error("unknown arm '" + label + "'");
    return static_cast<std::size_t>(it - arms.begin());
  };
  return risk(subject, find(c.treated())) - risk(subject, find(c.reference()));
}

const ContrastTruth& OracleTruth::contrast(const Contrast& c) const {
  for (const auto& t : contrasts) {
    if (t.contrast == c) return t;
  }
  throw Error("no truth for contrast " + c.label());
}

Expectation expected_risk(const Scenario& s, Population pop, std::size_t arm, double t,
                          const std::map<std::string, double>& fixed) {
  s.validate();
  if (arm >= s.arms.size()) throw Error("arm index out of range");
  const auto coef = resolve(s);
  const auto r = integrate(s, pop, fixed, 1, [&](std::span<const double> w, double* out) {
    out[0] = risk_from_hazard(s.arms[arm].baseline_hazard * std::exp(coef.linear_predictor(s, arm, w)), t, s.weibull_shape);
  });
  return {r.mean[0], r.mc_error[0], r.monte_carlo};
}

Expectation expected_effect(const Scenario& s, Population pop, const Contrast& c, double t,
                            const std::map<std::string, double>& fixed) {
  s.validate();
  const auto a = s.arm_index(c.treated());
  const auto b = s.arm_index(c.reference());
  const auto coef = resolve(s);
  const auto r = integrate(s, pop, fixed, 1, [&](std::span<const double> w, double* out) {
    const double ra = risk_from_hazard(s.arms[a].baseline_hazard * std::exp(coef.linear_predictor(s, a, w)), t, s.weibull_shape);
    const double rb = risk_from_hazard(s.arms[b].baseline_hazard * std::exp(coef.linear_predictor(s, b, w)), t, s.weibull_shape);
    out[0] = ra - rb;
  });
  return {r.mean[0], r.mc_error[0], r.monte_carlo};
}

double event_probability(const Scenario& s, Population pop) {
  s.validate();
  const auto coef = resolve(s);
  const double c = s.censoring.rate;
  const double tau = s.censoring.admin_time.value_or(kInf);
  const double k = s.weibull_shape;
  auto p_event = [&](double lambda) {
    if (lambda == 0.0) return 0.0;
    if (k == 1.0) {
      const double total = lambda + c;
      return std::isinf(tau) ? lambda / total : lambda / total * -std::expm1(-total * tau);
    }
    auto density = [&](double t) {
      if (t <= 0.0) return 0.0;
      return lambda * k * std::pow(t, k - 1) * std::exp(-lambda * std::pow(t, k) - c * t);
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, 0.0, tau, 15, 1e-12);
  };
  const auto r = integrate(s, pop, {}, 1, [&](std::span<const double> w, double* out) {
    double total = 0;
    for (std::size_t a = 0; a < s.arms.size(); ++a) {
      const double lambda = s.arms[a].baseline_hazard * std::exp(coef.linear_predictor(s, a, w));
      total += s.arms[a].allocation * p_event(lambda);
    }
    out[0] = total;
  });
  return r.mean[0];
}

SyntheticData generate(const Scenario& s) {
  s.validate();
  const auto schema = s.schema();
  const auto coef = resolve(s);
  const std::size_t p = s.covariates.size();
  const std::size_t n_arms = s.arms.size();
  const double admin = s.censoring.admin_time.value_or(kInf);

  std::vector<SubjectRecord> source_rows;
  source_rows.reserve(s.n_source);
  Rng src(derive_seed(s.seed, Stream::Source, 0));
  for (std::size_t i = 0; i < s.n_source; ++i) {
    SubjectRecord r;
    r.id = padded_id('S', i, s.n_source);
    r.covariates.resize(p);
    for (std::size_t j = 0; j < p; ++j) r.covariates[j] = draw_covariate(s.covariates[j], s.covariates[j].source, src);
    const auto arm = draw_arm(s, src);
    const double lambda = s.arms[arm].baseline_hazard * std::exp(coef.linear_predictor(s, arm, r.covariates));
    const double e = src.exponential(1.0);
    const double t_event = lambda > 0 ? std::pow(e / lambda, 1.0 / s.weibull_shape) : kInf;
    const double t_cens = std::min(s.censoring.rate > 0 ? src.exponential(s.censoring.rate) : kInf, admin);
    r.arm = s.arms[arm].label;
    r.event = t_event <= t_cens;
    r.time = std::min(t_event, t_cens);
    source_rows.push_back(std::move(r));
  }

  OracleTruth truth;
  for (const auto& a : s.arms) truth.arms.push_back(a.label);
  truth.horizon = s.horizon;

  std::vector<SubjectRecord> target_rows;
  target_rows.reserve(s.n_target);
  truth.target_risks.reserve(s.n_target * n_arms);
  Rng tgt(derive_seed(s.seed, Stream::Target, 0));
  for (std::size_t i = 0; i < s.n_target; ++i) {
    SubjectRecord r;
    r.id = padded_id('T', i, s.n_target);
    r.covariates.resize(p);
    for (std::size_t j = 0; j < p; ++j) r.covariates[j] = draw_covariate(s.covariates[j], s.covariates[j].target, tgt);
    for (std::size_t a = 0; a < n_arms; ++a) {
      const double lambda = s.arms[a].baseline_hazard * std::exp(coef.linear_predictor(s, a, r.covariates));
      truth.target_risks.push_back(risk_from_hazard(lambda, s.horizon, s.weibull_shape));
    }
    truth.target_ids.push_back(r.id);
    target_rows.push_back(std::move(r));
  }

  // Per-arm risks then every pairwise difference, in one pass per population.
  const auto contrasts = all_contrasts(truth.arms);
  const std::size_t outputs = n_arms + contrasts.size();
  auto risks_and_effects = [&](std::span<const double> w, double* out) {
    for (std::size_t a = 0; a < n_arms; ++a) {
      out[a] = risk_from_hazard(s.arms[a].baseline_hazard * std::exp(coef.linear_predictor(s, a, w)), s.horizon,
                                s.weibull_shape);
    }
    for (std::size_t k = 0; k < contrasts.size(); ++k) {
      out[n_arms + k] = out[s.arm_index(contrasts[k].treated())] - out[s.arm_index(contrasts[k].reference())];
    }
  };
  const auto on_target = integrate(s, Population::Target, {}, outputs, risks_and_effects);
  const auto on_source = integrate(s, Population::Source, {}, outputs, risks_and_effects);
  truth.method = on_target.monte_carlo || on_source.monte_carlo ? "monte-carlo" : "quadrature";
  truth.target_arm_risk.assign(on_target.mean.begin(), on_target.mean.begin() + static_cast<std::ptrdiff_t>(n_arms));
  truth.source_arm_risk.assign(on_source.mean.begin(), on_source.mean.begin() + static_cast<std::ptrdiff_t>(n_arms));
  for (std::size_t k = 0; k < contrasts.size(); ++k) {
    ContrastTruth ct{contrasts[k], on_target.mean[n_arms + k], on_target.mc_error[n_arms + k],
                     on_source.mean[n_arms + k], on_source.mc_error[n_arms + k], 0.0};
    if (s.n_target > 0) {
      const auto a = s.arm_index(contrasts[k].treated());
      const auto b = s.arm_index(contrasts[k].reference());
      double total = 0;
      for (std::size_t i = 0; i < s.n_target; ++i) total += truth.risk(i, a) - truth.risk(i, b);
      ct.sample_tate = total / static_cast<double>(s.n_target);
    }
    truth.contrasts.push_back(std::move(ct));
  }

  return {Cohort(schema, std::move(source_rows), CohortRole::Source),
          Cohort(schema, std::move(target_rows), CohortRole::Target), std::move(truth)};
}

std::string truth_to_json(const OracleTruth& t) {
  json j;
  j["arms"] = t.arms;
  j["horizon"] = t.horizon;
  j["method"] = t.method;
  j["target_arm_risk"] = json::object();
  j["source_arm_risk"] = json::object();
  for (std::size_t a = 0; a < t.arms.size(); ++a) {
    j["target_arm_risk"][t.arms[a]] = t.target_arm_risk[a];
    j["source_arm_risk"][t.arms[a]] = t.source_arm_risk[a];
  }
  j["contrasts"] = json::array();
  for (const auto& c : t.contrasts) {
    j["contrasts"].push_back({{"contrast", c.contrast.label()},
                              {"treated", c.contrast.treated()},
                              {"reference", c.contrast.reference()},
                              {"tate", c.tate},
                              {"tate_mc_error", c.tate_mc_error},
                              {"sate", c.sate},
                              {"sate_mc_error", c.sate_mc_error},
                              {"sample_tate", c.sample_tate}});
  }
  j["n_target"] = t.target_ids.size();
  return j.dump(2) + "\n";
}

void write_truth_risks_csv(std::ostream& out, const OracleTruth& t) {
  out << "id";
  for (const auto& a : t.arms) out << ",risk_" << a;
  out << '\n';
  for (std::size_t i = 0; i < t.target_ids.size(); ++i) {
    out << t.target_ids[i];
    for (std::size_t a = 0; a < t.arms.size(); ++a) out << ',' << fmt::format("{}", t.risk(i, a));
    out << '\n';
  }
}

}  // namespace transport
