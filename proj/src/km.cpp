#include "transport/km.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "transport/error.hpp"

namespace transport {

KmCurve km_fit(std::span<const double> times, const std::vector<bool>& events,
               std::span<const double> weights) {
  const std::size_t n = times.size();
  if (n == 0) throw Error("km_fit: empty input");
  if (events.size() != n) throw Error("km_fit: times and events differ in length");
  if (!weights.empty() && weights.size() != n) throw Error("km_fit: weights differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(times[i] >= 0) || !std::isfinite(times[i])) throw Error("km_fit: times must be finite and >= 0");
    if (!weights.empty() && !(weights[i] > 0 && std::isfinite(weights[i]))) {
      throw Error("km_fit: weights must be positive and finite");
    }
  }
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  // Canonical order makes the floating-point sums independent of input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (times[a] != times[b]) return times[a] < times[b];
    if (events[a] != events[b]) return events[a] > events[b];
    return w(a) < w(b);
  });

  // at_risk(t) = sum of weights with time >= t, accumulated from the tail.
  std::vector<double> tail(n + 1, 0.0);
  for (std::size_t k = n; k-- > 0;) tail[k] = tail[k + 1] + w(order[k]);

  KmCurve curve;
  curve.weighted = !weights.empty();
  curve.last_time = times[order[n - 1]];
  double s = 1.0;
  std::size_t k = 0;
  while (k < n) {
    const double t = times[order[k]];
    const double at_risk = tail[k];
    double d = 0;
    std::size_t j = k;
    for (; j < n && times[order[j]] == t; ++j) {
      if (events[order[j]]) d += w(order[j]);
    }
    if (d > 0) {
      s *= 1.0 - d / at_risk;
      curve.grid.push_back(t);
      curve.survival.push_back(s);
      curve.at_risk.push_back(at_risk);
      curve.events.push_back(d);
    }
    k = j;
  }
  return curve;
}

HorizonRisk risk_at(const KmCurve& curve, double horizon) {
  if (!(horizon > 0)) throw Error("risk_at: horizon must be > 0");
  HorizonRisk out;
  out.extrapolated = horizon > curve.last_time;
  auto it = std::upper_bound(curve.grid.begin(), curve.grid.end(), horizon);
  if (it == curve.grid.begin()) return out;
  out.risk = 1.0 - curve.survival[static_cast<std::size_t>(it - curve.grid.begin()) - 1];
  return out;
}

void write_km_csv(std::ostream& out, const KmCurve& curve) {
  out << "time,survival,at_risk,events\n";
  out << "0,1,,\n";
  for (std::size_t j = 0; j < curve.grid.size(); ++j) {
    out << fmt::format("{},{},{},{}\n", curve.grid[j], curve.survival[j], curve.at_risk[j], curve.events[j]);
  }
}

double arm_km_risk(const Cohort& source, const std::string& arm, double horizon,
                   std::span<const double> weights) {
  if (!weights.empty() && weights.size() != source.size()) {
    throw Error("weights do not cover every source row");
  }
  std::vector<double> times, w;
  std::vector<bool> events;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto& r = source.rows()[i];
    if (r.arm != arm) continue;
    times.push_back(*r.time);
    events.push_back(*r.event);
    if (!weights.empty()) w.push_back(weights[i]);
  }
  if (times.empty()) throw Error("unknown or empty arm '" + arm + "'");
  if (!w.empty() && std::accumulate(w.begin(), w.end(), 0.0) <= 0) {
    throw Error("arm '" + arm + "' has zero total weight");
  }
  return risk_at(km_fit(times, events, w), horizon).risk;
}

}  // namespace transport

namespace transport {

double sate_risk_difference(const Cohort& source, const std::string& arm_a, const std::string& arm_b,
                            double horizon) {
  const double a = arm_km_risk(source, arm_a, horizon);
  if (arm_a == arm_b) return 0.0;
  return a - arm_km_risk(source, arm_b, horizon);
}

ContrastEstimate sate_contrast(const Cohort& source, const Contrast& contrast, double horizon) {
  auto e = ContrastEstimate::make(contrast, Estimand::Sate,
                                  sate_risk_difference(source, contrast.treated(), contrast.reference(), horizon),
                                  0.0, 0);
  e.n = source.size();
  return e;
}

}  // namespace transport
