#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xidpo/corpus.hpp"
#include "xidpo/policy.hpp"

namespace xidpo {

enum class Region { head, middle, tail };

std::string_view region_name(Region r);

// head: gap < lower, tail: gap > upper, middle otherwise.
Region classify_region(double gap, double lower, double upper);

struct RegionStats {
  double fraction = 0.0;            // share of all samples in the region
  double filtered_fraction = 0.0;   // share of all samples: in region and filtered
  double saturated_fraction = 0.0;  // share of all samples: in region, magnitude > 1 - eps
};

struct FilterReport {
  double beta = 0.0;
  double gamma = 0.0;
  double epsilon = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t n = 0;
  // Samples whose sigmoid-gradient magnitude is below epsilon.
  double filtered_fraction = 0.0;
  // Head-side saturation (magnitude above 1 - epsilon), reported separately.
  double saturated_fraction = 0.0;
  RegionStats head;
  RegionStats middle;
  RegionStats tail;
};

// 1 - sigma(beta * delta - gamma): the magnitude of d log sigma(z)/dz.
double sigmoid_grad_magnitude(double delta, double beta, double gamma);

// Reward gaps a - b of every non-degenerate pair under policy.
std::vector<double> reward_gaps(const Dataset& dataset, const PolicyParams& policy);

// thresholds default to the 10th / 90th percentiles of gaps.
FilterReport filter_report(const std::vector<double>& gaps, double beta, double gamma, double epsilon,
                           std::optional<std::pair<double, double>> thresholds = std::nullopt);

std::string filter_report_json(const FilterReport& report);

// Per-token split of the SimPO argument for equal-length responses:
// (beta/|y|)(log pi(y_w^i|.) - log pi(y_l^i|.)) - gamma/|y|.
std::vector<double> token_decompose(const PolicyParams& policy, const PreferencePair& pair, double beta,
                                    double gamma);

struct EquivalenceReport {
  double max_discrepancy = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// max |dpo_lennorm(policy, ref) - simpo(policy, gamma = implied_gamma(ref))|.
EquivalenceReport equivalence_check(const PolicyParams& policy, const PolicyParams& ref, const Dataset& dataset,
                                    double beta);

}  // namespace xidpo
