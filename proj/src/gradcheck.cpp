#include "xidpo/gradcheck.hpp"

#include <cmath>

namespace xidpo {

namespace {

TokenSeq random_seq(Rng& rng, int vocab, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + static_cast<std::size_t>(rng() % (max_len - min_len + 1));
  TokenSeq s(len);
  for (auto& t : s) {
    t = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab));
  }
  return s;
}

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

}  // namespace

GradCheckInstance random_instance(Method method, int vocab_size, Rng& rng) {
  const PolicyConfig pc{vocab_size, 0};
  GradCheckInstance inst{PolicyParams::random(pc, rng(), 1.0), PolicyParams::random(pc, rng(), 1.0), {}, {}};
  do {
    inst.pair.prompt = random_seq(rng, vocab_size, 0, 3);
    inst.pair.chosen = random_seq(rng, vocab_size, 1, 6);
    inst.pair.rejected = random_seq(rng, vocab_size, 1, 6);
  } while (inst.pair.chosen == inst.pair.rejected);

  LossConfig& cfg = inst.cfg;
  cfg.method = method;
  cfg.beta = uniform(rng, 0.05, 3.0);
  cfg.gamma = uniform(rng, -1.0, 1.5);
  cfg.tau = uniform(rng, 0.05, 1.0);
  cfg.lambda = uniform(rng, 0.1, 2.0);
  cfg.c = uniform(rng, -0.5, 0.5);
  cfg.leaky_slope = 0.01;
  if (is_ratio_margin_method(method)) {
    const double m = pair_breakdown(inst.policy, inst.pair).m;
    double xi = 0.0;
    do {
      xi = uniform(rng, 0.01, 1.0);
    } while (std::abs(xi - m) < 0.02);
    cfg.xi = xi;
  }
  return inst;
}

Gradient finite_difference_grad(const GradCheckInstance& inst, double step, std::optional<double> frozen_denom) {
  PolicyParams p = inst.policy;
  const PolicyParams* ref = requires_reference(inst.cfg.method) ? &inst.ref : nullptr;
  Gradient g(p.weights().dim());
  auto w = p.mutable_weights().flat();
  auto gf = g.flat();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + step;
    const double up = loss_value(p, ref, inst.pair, inst.cfg, frozen_denom);
    w[i] = orig - step;
    const double down = loss_value(p, ref, inst.pair, inst.cfg, frozen_denom);
    w[i] = orig;
    gf[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(const Gradient& a, const Gradient& b) {
  double diff = 0.0;
  double na = 0.0;
  double nb = 0.0;
  const auto fa = a.flat();
  const auto fb = b.flat();
  for (std::size_t i = 0; i < fa.size(); ++i) {
    diff += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    na += fa[i] * fa[i];
    nb += fb[i] * fb[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  if (scale == 0.0) {
    return 0.0;
  }
  return std::sqrt(diff) / scale;
}

std::vector<MethodCheck> run_grad_check(const std::vector<Method>& methods, std::size_t trials, int vocab_size,
                                        std::uint64_t seed, double step) {
  std::vector<MethodCheck> results;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const Method method = methods[mi];
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(method)));
    MethodCheck check{method, 0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
      const auto inst = random_instance(method, vocab_size, rng);
      const PolicyParams* ref = requires_reference(method) ? &inst.ref : nullptr;
      const auto analytic = compute_loss(inst.policy, ref, inst.pair, inst.cfg);
      std::optional<double> frozen;
      if (is_ratio_margin_method(method)) {
        frozen = analytic.breakdown->denom;
      }
      const auto numeric = finite_difference_grad(inst, step, frozen);
      check.max_rel_error = std::max(check.max_rel_error, relative_error(analytic.grad, numeric));
      ++check.trials;
    }
    results.push_back(check);
  }
  return results;
}

}  // namespace xidpo
