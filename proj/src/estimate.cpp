#include "transport/estimate.hpp"

#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "transport/error.hpp"

namespace transport {

std::string_view to_string(Estimand e) {
  switch (e) {
    case Estimand::Sate:
      return "SATE";
    case Estimand::OobRetranslation:
      return "OOB-retranslation";
    case Estimand::Tate:
      return "TATE";
    case Estimand::TateEligible:
      return "TATE-eligible";
    case Estimand::Weighted:
      return "weighted";
  }
  return "TATE";
}

Estimand parse_estimand(std::string_view text) {
  for (auto e : kAllEstimands) {
    if (to_string(e) == text) return e;
  }
  throw Error("unknown estimand '" + std::string(text) + "'");
}

Contrast::Contrast(std::string treated, std::string reference)
    : treated_(std::move(treated)), reference_(std::move(reference)) {
  if (treated_ == reference_) throw Error("contrast arms must differ ('" + treated_ + "')");
}

std::vector<Contrast> all_contrasts(const std::vector<std::string>& arms) {
  std::vector<Contrast> out;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    for (std::size_t j = i + 1; j < arms.size(); ++j) out.emplace_back(arms[i], arms[j]);
  }
  return out;
}

double normal_multiplier(double confidence_level) {
  if (!(confidence_level > 0 && confidence_level < 1)) throw Error("confidence level must be in (0, 1)");
  if (confidence_level == 0.95) return 1.96;
  boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 0.5 + confidence_level / 2.0);
}

ContrastEstimate ContrastEstimate::make(Contrast contrast, Estimand estimand, double point, double se,
                                        int n_boot, double z) {
  ContrastEstimate e{std::move(contrast), estimand, {}, 0, 0, 0, 0, 0, 0};
  e.point = point;
  e.se = se;
  e.ci_low = point - z * se;
  e.ci_high = point + z * se;
  e.n_boot = n_boot;
  return e;
}

}  // namespace transport
