#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xidpo/corpus.hpp"
#include "xidpo/policy.hpp"
#include "xidpo/rewards.hpp"

namespace xidpo {

enum class Method {
  dpo,
  dpo_lennorm,
  ipo,
  simpo,
  cpo,
  orpo,
  rdpo,
  simper,
  xidpo,
  xidpo_noleaky,
  xidpo_relu,
};

std::string_view method_name(Method m);
// Throws ConfigError on an unknown name. Names are lower-case.
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();
bool requires_reference(Method m);
bool is_ratio_margin_method(Method m);

struct LossConfig {
  Method method = Method::xidpo;
  double beta = 2.0;
  double gamma = 0.5;
  std::optional<double> xi;  // required by the xidpo family, in (0, 1]
  double tau = 0.1;
  double lambda = 1.0;
  double c = 0.0;
  double leaky_slope = 0.01;  // LeakyReLU slope alpha, in [0, 1)
};

// Checks the fields the selected method reads. Throws ConfigError.
void validate_loss_config(const LossConfig& cfg);

struct LossOutput {
  double loss = 0.0;
  Gradient grad;
  // Present whenever the ratio margin of the pair is defined.
  std::optional<RewardBreakdown> breakdown;
  // xidpo: m < xi (non-leaky branch). Always true for other methods.
  bool active = true;
};

// -log sigma(z), computed without overflow.
double neg_log_sigmoid(double z);
// d/dz [-log sigma(z)] = -(1 - sigma(z)).
double neg_log_sigmoid_grad(double z);
double sigmoid(double z);

LossOutput loss_dpo(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                    const LossConfig& cfg);
LossOutput loss_dpo_lennorm(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                            const LossConfig& cfg);
LossOutput loss_ipo(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                    const LossConfig& cfg);
LossOutput loss_simpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);
LossOutput loss_cpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);
LossOutput loss_orpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);
LossOutput loss_rdpo(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                     const LossConfig& cfg);
LossOutput loss_simper(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);
LossOutput loss_xidpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);
LossOutput loss_xidpo_noleaky(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);
LossOutput loss_xidpo_relu(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg);

// Dispatches on cfg.method. ref must be non-null for methods that need it.
LossOutput compute_loss(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
                        const LossConfig& cfg);

// Forward value only. With frozen_denom set, the ratio-margin methods use it
// in place of |a + b|; this is the function whose derivative the analytic
// gradient of the xidpo family equals.
double loss_value(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
                  const LossConfig& cfg, std::optional<double> frozen_denom = std::nullopt);

struct BatchStats {
  std::size_t used = 0;
  std::size_t skipped = 0;  // degenerate pairs
  std::size_t with_breakdown = 0;
  double mean_chosen_reward = 0.0;
  double mean_rejected_reward = 0.0;
  double mean_m = 0.0;
  double active_fraction = 0.0;
};

struct BatchResult {
  double mean_loss = 0.0;
  Gradient mean_grad;
  BatchStats stats;
};

// Mean loss and gradient over the batch. Degenerate pairs are skipped and
// counted. Per-pair work may fan out over `workers` threads; the reduction
// runs in pair order so the result is independent of the worker count.
BatchResult batch_loss(const PolicyParams& policy, std::span<const PreferencePair> batch, const LossConfig& cfg,
                       const PolicyParams* ref = nullptr, std::size_t workers = 1);

}  // namespace xidpo
