#include "xidpo/losses.hpp"

#include <array>
#include <cmath>

#include "xidpo/parallel.hpp"

namespace xidpo {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 11> kMethodNames{{
    {Method::dpo, "dpo"},
    {Method::dpo_lennorm, "dpo_lennorm"},
    {Method::ipo, "ipo"},
    {Method::simpo, "simpo"},
    {Method::cpo, "cpo"},
    {Method::orpo, "orpo"},
    {Method::rdpo, "rdpo"},
    {Method::simper, "simper"},
    {Method::xidpo, "xidpo"},
    {Method::xidpo_noleaky, "xidpo_noleaky"},
    {Method::xidpo_relu, "xidpo_relu"},
}};

// Sequence-level log-probabilities the loss formulas are built from.
struct SeqTerms {
  double lw = 0.0;  // log pi_theta(y_w|x)
  double ll = 0.0;  // log pi_theta(y_l|x)
  double nw = 1.0;  // |y_w|
  double nl = 1.0;  // |y_l|
  double rw = 0.0;  // log pi_ref(y_w|x)
  double rl = 0.0;  // log pi_ref(y_l|x)
};

// Loss value plus its partial derivatives w.r.t. lw and ll.
struct ScalarLoss {
  double loss = 0.0;
  double d_lw = 0.0;
  double d_ll = 0.0;
  std::optional<RewardBreakdown> breakdown;
  bool active = true;
};

SeqTerms gather_terms(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
                      bool needs_ref) {
  SeqTerms t;
  t.lw = sequence_logprob(policy, pair.prompt, pair.chosen).total;
  t.ll = sequence_logprob(policy, pair.prompt, pair.rejected).total;
  t.nw = static_cast<double>(pair.chosen.size());
  t.nl = static_cast<double>(pair.rejected.size());
  if (needs_ref) {
    if (ref == nullptr) {
      throw ConfigError("reference policy required");
    }
    t.rw = sequence_logprob(*ref, pair.prompt, pair.chosen).total;
    t.rl = sequence_logprob(*ref, pair.prompt, pair.rejected).total;
  }
  return t;
}

std::optional<RewardBreakdown> try_breakdown(double a, double b) {
  if (std::abs(a + b) == 0.0) {
    return std::nullopt;
  }
  return make_breakdown(a, b);
}

// Sigmoid-family loss -log sigma(z) with dz/dlw, dz/dll given.
ScalarLoss sigmoid_loss(double z, double dz_dlw, double dz_dll) {
  ScalarLoss s;
  s.loss = neg_log_sigmoid(z);
  const double g = neg_log_sigmoid_grad(z);
  s.d_lw = g * dz_dlw;
  s.d_ll = g * dz_dll;
  return s;
}

// Squared LeakyReLU(xi - m) with the denominator treated as a constant.
// slope == 1 turns the leaky branch into the plain square (m - xi)^2.
ScalarLoss ratio_margin_loss(const SeqTerms& t, double xi, double slope, std::optional<double> frozen_denom) {
  const double a = t.lw / t.nw;
  const double b = t.ll / t.nl;
  const double denom = frozen_denom ? *frozen_denom : std::abs(a + b);
  if (!(denom > 0.0)) {
    throw DegeneratePairError("ratio margin denominator |a + b| is zero");
  }
  const double m = (a - b) / denom;
  const double u = xi - m;
  // Subgradient at u == 0 uses the unit-slope branch.
  const double k = u >= 0.0 ? 1.0 : slope;
  const double act = k * u;

  ScalarLoss s;
  s.loss = act * act;
  const double d_u = 2.0 * act * k;
  const double d_m = -d_u;
  s.d_lw = d_m / denom / t.nw;
  s.d_ll = -d_m / denom / t.nl;
  s.active = m < xi;
  return s;
}

ScalarLoss evaluate_scalar(const SeqTerms& t, const LossConfig& cfg, std::optional<double> frozen_denom) {
  const double beta = cfg.beta;
  const double a = t.lw / t.nw;
  const double b = t.ll / t.nl;
  ScalarLoss s;

  switch (cfg.method) {
    case Method::dpo: {
      const double z = beta * (t.lw - t.rw) - beta * (t.ll - t.rl);
      s = sigmoid_loss(z, beta, -beta);
      break;
    }
    case Method::dpo_lennorm: {
      const double z = beta / t.nw * (t.lw - t.rw) - beta / t.nl * (t.ll - t.rl);
      s = sigmoid_loss(z, beta / t.nw, -beta / t.nl);
      break;
    }
    case Method::ipo: {
      const double h = (t.lw - t.rw) - (t.ll - t.rl);
      const double r = h - 1.0 / (2.0 * cfg.tau);
      s.loss = r * r;
      s.d_lw = 2.0 * r;
      s.d_ll = -2.0 * r;
      break;
    }
    case Method::simpo: {
      const double z = beta * a - beta * b - cfg.gamma;
      s = sigmoid_loss(z, beta / t.nw, -beta / t.nl);
      break;
    }
    case Method::cpo: {
      const double z = beta * t.lw - beta * t.ll;
      s = sigmoid_loss(z, beta, -beta);
      s.loss -= cfg.lambda * t.lw;
      s.d_lw -= cfg.lambda;
      break;
    }
    case Method::orpo: {
      if (!(a < 0.0) || !(b < 0.0)) {
        throw DegeneratePairError("ORPO odds undefined for a response with probability 1");
      }
      // log(p / (1 - p)) with p = exp(a)
      const double odds_w = a - std::log(-std::expm1(a));
      const double odds_l = b - std::log(-std::expm1(b));
      const double z = odds_w - odds_l;
      const double dodds_w = -1.0 / std::expm1(a);
      const double dodds_l = -1.0 / std::expm1(b);
      const double g = cfg.lambda * neg_log_sigmoid_grad(z);
      s.loss = -a + cfg.lambda * neg_log_sigmoid(z);
      s.d_lw = (-1.0 + g * dodds_w) / t.nw;
      s.d_ll = (-g * dodds_l) / t.nl;
      break;
    }
    case Method::rdpo: {
      const double z = beta * (t.lw - t.rw) - beta * (t.ll - t.rl) - (cfg.c * t.nw - cfg.c * t.nl);
      s = sigmoid_loss(z, beta, -beta);
      break;
    }
    case Method::simper: {
      const double ea = std::exp(a);
      const double eb = std::exp(b);
      s.loss = -ea + eb;
      s.d_lw = -ea / t.nw;
      s.d_ll = eb / t.nl;
      break;
    }
    case Method::xidpo:
      s = ratio_margin_loss(t, *cfg.xi, cfg.leaky_slope, frozen_denom);
      break;
    case Method::xidpo_relu:
      s = ratio_margin_loss(t, *cfg.xi, 0.0, frozen_denom);
      break;
    case Method::xidpo_noleaky:
      s = ratio_margin_loss(t, *cfg.xi, 1.0, frozen_denom);
      s.active = true;
      break;
  }

  if (is_ratio_margin_method(cfg.method)) {
    // ratio_margin_loss already rejected a zero denominator.
    s.breakdown = make_breakdown(a, b);
  } else {
    s.breakdown = try_breakdown(a, b);
  }
  return s;
}

LossOutput run(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
               const LossConfig& cfg) {
  validate_loss_config(cfg);
  const SeqTerms t = gather_terms(policy, ref, pair, requires_reference(cfg.method));
  const ScalarLoss s = evaluate_scalar(t, cfg, std::nullopt);

  LossOutput out;
  out.loss = s.loss;
  out.breakdown = s.breakdown;
  out.active = s.active;
  out.grad = Gradient(policy.weights().dim());
  if (s.d_lw != 0.0) {
    accumulate_logprob_grad(policy, pair.prompt, pair.chosen, s.d_lw, out.grad);
  }
  if (s.d_ll != 0.0) {
    accumulate_logprob_grad(policy, pair.prompt, pair.rejected, s.d_ll, out.grad);
  }
  return out;
}

LossOutput run_as(Method m, const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
                  LossConfig cfg) {
  cfg.method = m;
  return run(policy, ref, pair, cfg);
}

}  // namespace

std::string_view method_name(Method m) {
  for (const auto& [method, name] : kMethodNames) {
    if (method == m) {
      return name;
    }
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto& [method, n] : kMethodNames) {
    if (n == name) {
      return method;
    }
  }
  throw ConfigError("unknown loss method \"" + std::string(name) + "\"");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = [] {
    std::vector<Method> v;
    for (const auto& entry : kMethodNames) {
      v.push_back(entry.first);
    }
    return v;
  }();
  return methods;
}

bool requires_reference(Method m) {
  return m == Method::dpo || m == Method::dpo_lennorm || m == Method::ipo || m == Method::rdpo;
}

bool is_ratio_margin_method(Method m) {
  return m == Method::xidpo || m == Method::xidpo_noleaky || m == Method::xidpo_relu;
}

void validate_loss_config(const LossConfig& cfg) {
  auto finite = [](double x) { return std::isfinite(x); };
  switch (cfg.method) {
    case Method::dpo:
    case Method::dpo_lennorm:
    case Method::simpo:
    case Method::cpo:
    case Method::rdpo:
      if (!(cfg.beta > 0.0) || !finite(cfg.beta)) {
        throw ConfigError("beta must be a positive finite number");
      }
      break;
    default:
      break;
  }
  switch (cfg.method) {
    case Method::simpo:
      if (!finite(cfg.gamma)) {
        throw ConfigError("gamma must be finite");
      }
      break;
    case Method::ipo:
      if (!(cfg.tau > 0.0) || !finite(cfg.tau)) {
        throw ConfigError("tau must be a positive finite number");
      }
      break;
    case Method::cpo:
    case Method::orpo:
      if (!(cfg.lambda >= 0.0) || !finite(cfg.lambda)) {
        throw ConfigError("lambda must be non-negative");
      }
      break;
    case Method::rdpo:
      if (!finite(cfg.c)) {
        throw ConfigError("c must be finite");
      }
      break;
    case Method::xidpo:
    case Method::xidpo_noleaky:
    case Method::xidpo_relu:
      if (!cfg.xi) {
        throw ConfigError("xi is required for " + std::string(method_name(cfg.method)));
      }
      if (!(*cfg.xi > 0.0 && *cfg.xi <= 1.0)) {
        throw ConfigError("xi must lie in (0, 1]");
      }
      if (cfg.method == Method::xidpo && !(cfg.leaky_slope >= 0.0 && cfg.leaky_slope < 1.0)) {
        throw ConfigError("leaky_slope must lie in [0, 1)");
      }
      break;
    default:
      break;
  }
}

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double neg_log_sigmoid(double z) {
  // softplus(-z)
  return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double neg_log_sigmoid_grad(double z) {
  return -sigmoid(-z);
}

LossOutput loss_dpo(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                    const LossConfig& cfg) {
  return run_as(Method::dpo, policy, &ref, pair, cfg);
}

LossOutput loss_dpo_lennorm(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                            const LossConfig& cfg) {
  return run_as(Method::dpo_lennorm, policy, &ref, pair, cfg);
}

LossOutput loss_ipo(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                    const LossConfig& cfg) {
  return run_as(Method::ipo, policy, &ref, pair, cfg);
}

LossOutput loss_simpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::simpo, policy, nullptr, pair, cfg);
}

LossOutput loss_cpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::cpo, policy, nullptr, pair, cfg);
}

LossOutput loss_orpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::orpo, policy, nullptr, pair, cfg);
}

LossOutput loss_rdpo(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                     const LossConfig& cfg) {
  return run_as(Method::rdpo, policy, &ref, pair, cfg);
}

LossOutput loss_simper(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::simper, policy, nullptr, pair, cfg);
}

LossOutput loss_xidpo(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::xidpo, policy, nullptr, pair, cfg);
}

LossOutput loss_xidpo_noleaky(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::xidpo_noleaky, policy, nullptr, pair, cfg);
}

LossOutput loss_xidpo_relu(const PolicyParams& policy, const PreferencePair& pair, const LossConfig& cfg) {
  return run_as(Method::xidpo_relu, policy, nullptr, pair, cfg);
}

LossOutput compute_loss(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
                        const LossConfig& cfg) {
  if (requires_reference(cfg.method) && ref == nullptr) {
    throw ConfigError(std::string(method_name(cfg.method)) + " requires a reference policy");
  }
  return run(policy, ref, pair, cfg);
}

double loss_value(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pair,
                  const LossConfig& cfg, std::optional<double> frozen_denom) {
  validate_loss_config(cfg);
  const SeqTerms t = gather_terms(policy, ref, pair, requires_reference(cfg.method));
  return evaluate_scalar(t, cfg, frozen_denom).loss;
}

BatchResult batch_loss(const PolicyParams& policy, std::span<const PreferencePair> batch, const LossConfig& cfg,
                       const PolicyParams* ref, std::size_t workers) {
  if (batch.empty()) {
    throw ContractError("batch must be non-empty");
  }
  if (requires_reference(cfg.method) && ref == nullptr) {
    throw ConfigError(std::string(method_name(cfg.method)) + " requires a reference policy");
  }
  validate_loss_config(cfg);

  std::vector<std::optional<LossOutput>> outputs(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    try {
      outputs[i] = run(policy, ref, batch[i], cfg);
    } catch (const DegeneratePairError&) {
      outputs[i] = std::nullopt;
    }
  });

  BatchResult result;
  result.mean_grad = Gradient(policy.weights().dim());
  double loss_sum = 0.0;
  double a_sum = 0.0;
  double b_sum = 0.0;
  double m_sum = 0.0;
  std::size_t active = 0;
  for (const auto& out : outputs) {
    if (!out) {
      ++result.stats.skipped;
      continue;
    }
    ++result.stats.used;
    loss_sum += out->loss;
    result.mean_grad.add_scaled(out->grad, 1.0);
    if (out->active) {
      ++active;
    }
    if (out->breakdown) {
      ++result.stats.with_breakdown;
      a_sum += out->breakdown->a;
      b_sum += out->breakdown->b;
      m_sum += out->breakdown->m;
    }
  }
  if (result.stats.used > 0) {
    const double n = static_cast<double>(result.stats.used);
    result.mean_loss = loss_sum / n;
    result.mean_grad.scale(1.0 / n);
    result.stats.active_fraction = static_cast<double>(active) / n;
  }
  if (result.stats.with_breakdown > 0) {
    const double nb = static_cast<double>(result.stats.with_breakdown);
    result.stats.mean_chosen_reward = a_sum / nb;
    result.stats.mean_rejected_reward = b_sum / nb;
    result.stats.mean_m = m_sum / nb;
  }
  return result;
}

}  // namespace xidpo
