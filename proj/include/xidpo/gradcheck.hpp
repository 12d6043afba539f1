#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "xidpo/losses.hpp"
#include "xidpo/random.hpp"

namespace xidpo {

struct GradCheckInstance {
  PolicyParams policy;
  PolicyParams ref;
  PreferencePair pair;
  LossConfig cfg;
};

// Random policy, reference, pair and hyperparameters for `method`. For the
// xidpo family, xi is kept at least 0.02 away from the pair's margin so the
// central difference never straddles the LeakyReLU kink.
GradCheckInstance random_instance(Method method, int vocab_size, Rng& rng);

// Central differences of loss_value over every weight. frozen_denom is
// forwarded to loss_value.
Gradient finite_difference_grad(const GradCheckInstance& inst, double step,
                                std::optional<double> frozen_denom = std::nullopt);

// ||a - b||_2 / max(||a||_2, ||b||_2); 0 when both vanish.
double relative_error(const Gradient& a, const Gradient& b);

struct MethodCheck {
  Method method;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
};

// Analytic gradient against the frozen-denominator finite difference.
std::vector<MethodCheck> run_grad_check(const std::vector<Method>& methods, std::size_t trials, int vocab_size,
                                        std::uint64_t seed, double step = 1e-5);

}  // namespace xidpo
