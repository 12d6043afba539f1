#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xidpo/corpus.hpp"
#include "xidpo/losses.hpp"
#include "xidpo/policy.hpp"

namespace xidpo {

enum class ScheduleKind { constant, cosine_with_warmup };
enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  ScheduleKind schedule = ScheduleKind::cosine_with_warmup;
  double warmup_fraction = 0.10;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  // Logged rewards are measured on the first min(eval_size, n) pairs.
  std::size_t eval_size = 512;
  std::size_t workers = 1;
};

void validate_train_config(const TrainConfig& cfg);

// Learning rate applied by update number `step` (0-based). Linear warm-up
// reaching the peak at the end of the warm-up, then a half cosine to 0 at
// step == steps.
double scheduled_lr(const TrainConfig& cfg, std::size_t step);

struct TrainRecord {
  std::size_t step = 0;  // updates applied so far
  double loss = 0.0;     // mean loss on the evaluation slice
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
  double mean_m = 0.0;
  double active_frac = 0.0;
  double lr = 0.0;

  bool operator==(const TrainRecord&) const = default;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::size_t skipped_steps = 0;

  bool operator==(const TrainLog&) const = default;
};

struct TrainResult {
  PolicyParams params;
  TrainLog log;
};

struct RewardSummary {
  double mean_chosen = 0.0;
  double mean_rejected = 0.0;
  double mean_m = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

RewardSummary eval_rewards(const PolicyParams& policy, const Dataset& dataset);

TrainResult train(const PolicyParams& policy, const Dataset& dataset, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg, const PolicyParams* ref = nullptr);

// `step,loss,chosen_reward,rejected_reward,mean_m,active_frac,lr`, preceded
// by one `# ...` line per comment.
std::string train_log_csv(const TrainLog& log, const std::vector<std::string>& comments = {});

}  // namespace xidpo
