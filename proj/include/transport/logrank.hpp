#pragma once

#include <span>
#include <vector>

namespace transport {

/// Two-sample log-rank chi-square statistic (O - E)^2 / V for group 1 versus
/// group 0. Tied event times are pooled at one grid point with the
/// hypergeometric variance. Returns 0 when there are no events or V is 0.
/// Both groups must be non-empty.
double logrank_statistic(const std::vector<bool>& in_group_one, std::span<const double> times,
                         const std::vector<bool>& events);

}  // namespace transport
