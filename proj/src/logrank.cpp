#include "transport/logrank.hpp"

#include <algorithm>
#include <numeric>

#include "transport/error.hpp"

namespace transport {

double logrank_statistic(const std::vector<bool>& in_group_one, std::span<const double> times,
                         const std::vector<bool>& events) {
  const std::size_t n = times.size();
  if (in_group_one.size() != n || events.size() != n) throw Error("logrank: length mismatch");
  const auto n1_total = static_cast<std::size_t>(std::count(in_group_one.begin(), in_group_one.end(), true));
  if (n1_total == 0 || n1_total == n) throw Error("logrank: both groups must be non-empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  double at_risk = static_cast<double>(n);
  double at_risk_one = static_cast<double>(n1_total);
  double observed_minus_expected = 0;
  double variance = 0;
  std::size_t k = 0;
  while (k < n) {
    const double t = times[order[k]];
    double d = 0, d1 = 0, leaving = 0, leaving_one = 0;
    std::size_t j = k;
    for (; j < n && times[order[j]] == t; ++j) {
      const bool one = in_group_one[order[j]];
      leaving += 1;
      if (one) leaving_one += 1;
      if (events[order[j]]) {
        d += 1;
        if (one) d1 += 1;
      }
    }
    if (d > 0) {
      observed_minus_expected += d1 - d * at_risk_one / at_risk;
      if (at_risk > 1) {
        variance += d * (at_risk_one / at_risk) * (1 - at_risk_one / at_risk) * (at_risk - d) / (at_risk - 1);
      }
    }
    at_risk -= leaving;
    at_risk_one -= leaving_one;
    k = j;
  }
  if (!(variance > 0)) return 0.0;
  return observed_minus_expected * observed_minus_expected / variance;
}

}  // namespace transport
