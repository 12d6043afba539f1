#include "xidpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "xidpo/random.hpp"
#include "xidpo/rewards.hpp"

namespace xidpo {

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t dim) : cfg_(cfg), m_(dim), v_(dim) {}

  void step(WeightTable& w, const Gradient& g, double lr) {
    auto wf = w.flat();
    const auto gf = g.flat();
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < wf.size(); ++i) {
        wf[i] -= lr * gf[i];
      }
      return;
    }
    ++t_;
    auto mf = m_.flat();
    auto vf = v_.flat();
    const double b1 = cfg_.adam_beta1;
    const double b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < wf.size(); ++i) {
      mf[i] = b1 * mf[i] + (1.0 - b1) * gf[i];
      vf[i] = b2 * vf[i] + (1.0 - b2) * gf[i] * gf[i];
      wf[i] -= lr * (mf[i] / c1) / (std::sqrt(vf[i] / c2) + cfg_.adam_eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  WeightTable m_;
  WeightTable v_;
  std::size_t t_ = 0;
};

std::string fmt(double x) {
  return nlohmann::json(x).dump();
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) {
    throw ConfigError("lr must be positive");
  }
  if (!(cfg.warmup_fraction >= 0.0 && cfg.warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in [0, 1)");
  }
  if (cfg.log_every < 1) {
    throw ConfigError("log_every must be >= 1");
  }
  if (cfg.eval_size < 1) {
    throw ConfigError("eval_size must be >= 1");
  }
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) || !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0) ||
      !(cfg.adam_eps > 0.0)) {
    throw ConfigError("adam coefficients out of range");
  }
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step) {
  if (cfg.schedule == ScheduleKind::constant) {
    return cfg.lr;
  }
  const auto warmup =
      static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(cfg.steps)));
  if (step < warmup) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(std::max<std::size_t>(cfg.steps - std::min(warmup, cfg.steps), 1));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

RewardSummary eval_rewards(const PolicyParams& policy, const Dataset& dataset) {
  if (dataset.pairs.empty()) {
    throw ContractError("dataset must be non-empty");
  }
  RewardSummary s;
  double a_sum = 0.0;
  double b_sum = 0.0;
  double m_sum = 0.0;
  for (const auto& pair : dataset.pairs) {
    try {
      const auto rb = pair_breakdown(policy, pair);
      a_sum += rb.a;
      b_sum += rb.b;
      m_sum += rb.m;
      ++s.used;
    } catch (const DegeneratePairError&) {
      ++s.skipped;
    }
  }
  if (s.used == 0) {
    throw EmptyDistributionError("every pair is degenerate under the policy");
  }
  const double n = static_cast<double>(s.used);
  s.mean_chosen = a_sum / n;
  s.mean_rejected = b_sum / n;
  s.mean_m = m_sum / n;
  return s;
}

TrainResult train(const PolicyParams& policy, const Dataset& dataset, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg, const PolicyParams* ref) {
  if (dataset.pairs.empty()) {
    throw ContractError("dataset must be non-empty");
  }
  if (requires_reference(loss_cfg.method) && ref == nullptr) {
    throw ConfigError(std::string(method_name(loss_cfg.method)) + " requires a reference policy");
  }
  validate_loss_config(loss_cfg);
  validate_train_config(train_cfg);

  TrainResult result{policy, {}};
  PolicyParams& params = result.params;
  const std::size_t n = dataset.pairs.size();

  Dataset eval_slice;
  eval_slice.vocab_size = dataset.vocab_size;
  eval_slice.pairs.assign(dataset.pairs.begin(),
                          dataset.pairs.begin() + static_cast<std::ptrdiff_t>(std::min(train_cfg.eval_size, n)));

  auto log_state = [&](std::size_t step) {
    TrainRecord rec;
    rec.step = step;
    const auto rewards = eval_rewards(params, eval_slice);
    rec.chosen_reward = rewards.mean_chosen;
    rec.rejected_reward = rewards.mean_rejected;
    rec.mean_m = rewards.mean_m;
    const auto eval = batch_loss(params, eval_slice.pairs, loss_cfg, ref, train_cfg.workers);
    rec.loss = eval.mean_loss;
    rec.active_frac = eval.stats.active_fraction;
    rec.lr = scheduled_lr(train_cfg, step);
    result.log.records.push_back(rec);
  };

  Rng rng(mix_seed(train_cfg.seed, 0));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t bsz = std::min(train_cfg.batch_size, n);

  Optimizer opt(train_cfg, params.weights().dim());
  std::vector<PreferencePair> batch(bsz);

  for (std::size_t step = 0; step < train_cfg.steps; ++step) {
    if (step % train_cfg.log_every == 0) {
      log_state(step);
    }
    if (cursor + bsz > n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    for (std::size_t i = 0; i < bsz; ++i) {
      batch[i] = dataset.pairs[order[cursor + i]];
    }
    cursor += bsz;

    const auto res = batch_loss(params, batch, loss_cfg, ref, train_cfg.workers);
    if (res.stats.used == 0) {
      ++result.log.skipped_steps;
      continue;
    }
    opt.step(params.mutable_weights(), res.mean_grad, scheduled_lr(train_cfg, step));
  }
  log_state(train_cfg.steps);
  return result;
}

std::string train_log_csv(const TrainLog& log, const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) {
    out << "# " << c << '\n';
  }
  out << "step,loss,chosen_reward,rejected_reward,mean_m,active_frac,lr\n";
  for (const auto& r : log.records) {
    out << r.step << ',' << fmt(r.loss) << ',' << fmt(r.chosen_reward) << ',' << fmt(r.rejected_reward) << ','
        << fmt(r.mean_m) << ',' << fmt(r.active_frac) << ',' << fmt(r.lr) << '\n';
  }
  return out.str();
}

}  // namespace xidpo
