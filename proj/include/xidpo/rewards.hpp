#pragma once

#include <string>

#include "xidpo/corpus.hpp"
#include "xidpo/policy.hpp"

namespace xidpo {

// Length-normalised rewards of one pair and the quantities derived from them.
struct RewardBreakdown {
  double a = 0.0;      // (1/|y_w|) log pi(y_w|x)
  double b = 0.0;      // (1/|y_l|) log pi(y_l|x)
  double delta = 0.0;  // a - b
  double denom = 0.0;  // |a + b|
  double m = 0.0;      // delta / denom, in [-1, 1]
};

double length_norm_reward(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response);

// (a - b) / |a + b| for a, b <= 0. Throws DegeneratePairError when a == b == 0.
double ratio_margin(double a, double b);

// Builds the breakdown from already computed normalised rewards.
RewardBreakdown make_breakdown(double a, double b);

RewardBreakdown pair_breakdown(const PolicyParams& params, const PreferencePair& pair);

// The SimPO margin that makes the length-normalised DPO loss against ref
// coincide with SimPO: (beta/|y_w|) log ref(y_w|x) - (beta/|y_l|) log ref(y_l|x).
double implied_gamma(const PolicyParams& ref, const PreferencePair& pair, double beta);

std::string breakdown_to_json(const RewardBreakdown& rb);

}  // namespace xidpo
