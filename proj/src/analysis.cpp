#include "xidpo/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "json.hpp"
#include "xidpo/losses.hpp"
#include "xidpo/margin.hpp"
#include "xidpo/rewards.hpp"

namespace xidpo {

namespace {

// Same interpolation rule as the margin quantiles, but over raw reward gaps,
// which are not confined to [-1, 1].
double interpolated_percentile(std::vector<double> values, double t) {
  std::sort(values.begin(), values.end());
  const double h = t * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) {
    return values.back();
  }
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

nlohmann::ordered_json region_json(const RegionStats& r) {
  return {{"fraction", r.fraction}, {"filtered_fraction", r.filtered_fraction},
          {"saturated_fraction", r.saturated_fraction}};
}

}  // namespace

std::string_view region_name(Region r) {
  switch (r) {
    case Region::head:
      return "head";
    case Region::middle:
      return "middle";
    case Region::tail:
      return "tail";
  }
  return "middle";
}

Region classify_region(double gap, double lower, double upper) {
  if (gap < lower) {
    return Region::head;
  }
  if (gap > upper) {
    return Region::tail;
  }
  return Region::middle;
}

double sigmoid_grad_magnitude(double delta, double beta, double gamma) {
  if (!(beta > 0.0)) {
    throw ContractError("beta must be positive");
  }
  return sigmoid(-(beta * delta - gamma));
}

std::vector<double> reward_gaps(const Dataset& dataset, const PolicyParams& policy) {
  std::vector<double> gaps;
  gaps.reserve(dataset.pairs.size());
  for (const auto& pair : dataset.pairs) {
    const double a = length_norm_reward(policy, pair.prompt, pair.chosen);
    const double b = length_norm_reward(policy, pair.prompt, pair.rejected);
    gaps.push_back(a - b);
  }
  return gaps;
}

FilterReport filter_report(const std::vector<double>& gaps, double beta, double gamma, double epsilon,
                           std::optional<std::pair<double, double>> thresholds) {
  if (gaps.empty()) {
    throw ContractError("gaps must be non-empty");
  }
  if (!(beta > 0.0)) {
    throw ContractError("beta must be positive");
  }
  if (!(epsilon > 0.0 && epsilon < 0.5)) {
    throw ContractError("epsilon must lie in (0, 0.5)");
  }
  FilterReport rep;
  rep.beta = beta;
  rep.gamma = gamma;
  rep.epsilon = epsilon;
  rep.n = gaps.size();
  if (thresholds) {
    rep.lower = thresholds->first;
    rep.upper = thresholds->second;
  } else {
    rep.lower = interpolated_percentile(gaps, 0.10);
    rep.upper = interpolated_percentile(gaps, 0.90);
  }
  if (thresholds && !(rep.lower < rep.upper)) {
    throw ContractError("region thresholds require lower < upper");
  }

  std::size_t filtered = 0;
  std::size_t saturated = 0;
  std::array<std::size_t, 3> in_region{};
  std::array<std::size_t, 3> filtered_in{};
  std::array<std::size_t, 3> saturated_in{};
  for (double g : gaps) {
    const auto r = static_cast<std::size_t>(classify_region(g, rep.lower, rep.upper));
    const double mag = sigmoid_grad_magnitude(g, beta, gamma);
    ++in_region[r];
    if (mag < epsilon) {
      ++filtered;
      ++filtered_in[r];
    } else if (mag > 1.0 - epsilon) {
      ++saturated;
      ++saturated_in[r];
    }
  }
  const double n = static_cast<double>(gaps.size());
  rep.filtered_fraction = static_cast<double>(filtered) / n;
  rep.saturated_fraction = static_cast<double>(saturated) / n;
  RegionStats* stats[3] = {&rep.head, &rep.middle, &rep.tail};
  for (std::size_t r = 0; r < 3; ++r) {
    stats[r]->fraction = static_cast<double>(in_region[r]) / n;
    stats[r]->filtered_fraction = static_cast<double>(filtered_in[r]) / n;
    stats[r]->saturated_fraction = static_cast<double>(saturated_in[r]) / n;
  }
  return rep;
}

std::string filter_report_json(const FilterReport& report) {
  nlohmann::ordered_json j;
  j["beta"] = report.beta;
  j["gamma"] = report.gamma;
  j["epsilon"] = report.epsilon;
  j["n"] = report.n;
  j["thresholds"] = {{"lower", report.lower}, {"upper", report.upper}};
  j["filtered_fraction"] = report.filtered_fraction;
  j["saturated_fraction"] = report.saturated_fraction;
  j["per_region_fractions"] = {{"head", region_json(report.head)},
                               {"middle", region_json(report.middle)},
                               {"tail", region_json(report.tail)}};
  return j.dump(2);
}

std::vector<double> token_decompose(const PolicyParams& policy, const PreferencePair& pair, double beta,
                                    double gamma) {
  if (!(beta > 0.0)) {
    throw ContractError("beta must be positive");
  }
  if (pair.chosen.size() != pair.rejected.size()) {
    throw ContractError("token decomposition needs equal-length responses; use the sequence-level SimPO argument");
  }
  const auto w = sequence_logprob(policy, pair.prompt, pair.chosen);
  const auto l = sequence_logprob(policy, pair.prompt, pair.rejected);
  const double len = static_cast<double>(pair.chosen.size());
  const double gamma_i = gamma / len;
  std::vector<double> terms(pair.chosen.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    terms[i] = beta / len * (w.per_token[i] - l.per_token[i]) - gamma_i;
  }
  return terms;
}

EquivalenceReport equivalence_check(const PolicyParams& policy, const PolicyParams& ref, const Dataset& dataset,
                                    double beta) {
  if (dataset.pairs.empty()) {
    throw ContractError("dataset must be non-empty");
  }
  EquivalenceReport rep;
  LossConfig cfg;
  cfg.beta = beta;
  for (const auto& pair : dataset.pairs) {
    try {
      const double dpo = loss_dpo_lennorm(policy, ref, pair, cfg).loss;
      LossConfig simpo_cfg = cfg;
      simpo_cfg.gamma = implied_gamma(ref, pair, beta);
      const double simpo = loss_simpo(policy, pair, simpo_cfg).loss;
      rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(dpo - simpo));
      ++rep.checked;
    } catch (const DegeneratePairError&) {
      ++rep.skipped;
    }
  }
  return rep;
}

}  // namespace xidpo
