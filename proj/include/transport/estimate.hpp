#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace transport {

enum class Estimand { Sate, OobRetranslation, Tate, TateEligible, Weighted };

std::string_view to_string(Estimand e);
Estimand parse_estimand(std::string_view text);
inline constexpr Estimand kAllEstimands[] = {Estimand::Sate, Estimand::OobRetranslation, Estimand::Tate,
                                             Estimand::TateEligible, Estimand::Weighted};

/// Treated arm versus reference arm; the two labels differ.
class Contrast {
 public:
  Contrast(std::string treated, std::string reference);

  const std::string& treated() const { return treated_; }
  const std::string& reference() const { return reference_; }
  std::string label() const { return treated_ + " vs " + reference_; }
  Contrast reversed() const { return {reference_, treated_}; }

  bool operator==(const Contrast&) const = default;

 private:
  std::string treated_;
  std::string reference_;
};

/// Every unordered pair (arms[i], arms[j]) with i < j, in that order.
std::vector<Contrast> all_contrasts(const std::vector<std::string>& arms);

/// Normal quantile for a two-sided interval; exactly 1.96 at 0.95.
double normal_multiplier(double confidence_level);

struct ContrastEstimate {
  Contrast contrast;
  Estimand estimand = Estimand::Tate;
  std::string subgroup;  // empty for the whole population
  std::size_t n = 0;     // subjects the estimate averages over
  double point = 0;
  double se = 0;
  double ci_low = 0;
  double ci_high = 0;
  int n_boot = 0;

  /// Fills the normal-approximation interval point -/+ z * se.
  static ContrastEstimate make(Contrast contrast, Estimand estimand, double point, double se, int n_boot,
                               double z = 1.96);
};

}  // namespace transport
