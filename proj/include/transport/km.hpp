#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "transport/cohort.hpp"
#include "transport/estimate.hpp"

namespace transport {

/// Product-limit survival curve. Grid points are the distinct event times;
/// at_risk/events hold (possibly weighted) counts at each point.
struct KmCurve {
  std::vector<double> grid;
  std::vector<double> survival;
  std::vector<double> at_risk;
  std::vector<double> events;
  double last_time = 0;  // largest observed follow-up time, event or censored
  bool weighted = false;
};

/// Kaplan-Meier fit. Events at a tied time are processed before censorings at
/// that time. `weights` is empty (all ones) or one positive weight per row.
KmCurve km_fit(std::span<const double> times, const std::vector<bool>& events,
               std::span<const double> weights = {});

struct HorizonRisk {
  double risk = 0;
  bool extrapolated = false;  // horizon beyond last follow-up; survival carried forward
};

/// 1 - S(t*) at the largest grid time t* <= horizon (0 before the first event).
HorizonRisk risk_at(const KmCurve& curve, double horizon);

/// Survival step function as "time,survival,at_risk,events" rows.
void write_km_csv(std::ostream& out, const KmCurve& curve);

/// KM risk at `horizon` for the rows of one arm, optionally weighted.
/// `weights` is empty or aligned with the cohort rows.
double arm_km_risk(const Cohort& source, const std::string& arm, double horizon,
                   std::span<const double> weights = {});

/// KM risk difference at `horizon`, arm_a minus arm_b. Equal labels give 0.
/// Throws for an unknown arm.
double sate_risk_difference(const Cohort& source, const std::string& arm_a, const std::string& arm_b,
                            double horizon);

/// Point-only SATE estimate (se = 0, n_boot = 0).
ContrastEstimate sate_contrast(const Cohort& source, const Contrast& contrast, double horizon);

}  // namespace transport
