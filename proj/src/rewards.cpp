#include "xidpo/rewards.hpp"

#include <cmath>

#include "json.hpp"

namespace xidpo {

double length_norm_reward(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response) {
  const auto lp = sequence_logprob(params, prompt, response);
  return lp.total / static_cast<double>(lp.length);
}

double ratio_margin(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw ContractError("ratio_margin requires finite rewards");
  }
  if (a > 0.0 || b > 0.0) {
    throw ContractError("ratio_margin requires non-positive log-probability rewards");
  }
  // Literal |a + b|; equals |a| + |b| for non-positive inputs.
  const double denom = std::abs(a + b);
  if (denom == 0.0) {
    throw DegeneratePairError("both responses have probability 1; ratio margin undefined");
  }
  return (a - b) / denom;
}

RewardBreakdown make_breakdown(double a, double b) {
  RewardBreakdown rb;
  rb.a = a;
  rb.b = b;
  rb.m = ratio_margin(a, b);
  rb.delta = a - b;
  rb.denom = std::abs(a + b);
  return rb;
}

RewardBreakdown pair_breakdown(const PolicyParams& params, const PreferencePair& pair) {
  return make_breakdown(length_norm_reward(params, pair.prompt, pair.chosen),
                        length_norm_reward(params, pair.prompt, pair.rejected));
}

double implied_gamma(const PolicyParams& ref, const PreferencePair& pair, double beta) {
  if (!(beta > 0.0)) {
    throw ContractError("beta must be positive");
  }
  return beta * length_norm_reward(ref, pair.prompt, pair.chosen) -
         beta * length_norm_reward(ref, pair.prompt, pair.rejected);
}

std::string breakdown_to_json(const RewardBreakdown& rb) {
  nlohmann::ordered_json j;
  j["a"] = rb.a;
  j["b"] = rb.b;
  j["delta"] = rb.delta;
  j["denom"] = rb.denom;
  j["m"] = rb.m;
  return j.dump();
}

}  // namespace xidpo
