#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "xidpo/corpus.hpp"
#include "xidpo/losses.hpp"
#include "xidpo/policy.hpp"
#include "xidpo/trainer.hpp"

namespace xidpo {

enum class PolicyInitKind { uniform, random };

struct PolicyInit {
  PolicyConfig config{16, 0};
  PolicyInitKind kind = PolicyInitKind::random;
  double scale = 1.0;
  std::uint64_t seed = 0;
};

PolicyParams make_initial_policy(const PolicyInit& init);

// Either a fixed xi or "auto:<t>", resolved later as the t-quantile of the
// initial margin distribution.
struct XiSpec {
  std::optional<double> value;
  std::optional<double> auto_t;
};

// Accepts "0.35" or "auto:0.95". Throws ConfigError.
XiSpec parse_xi_spec(std::string_view text);

struct PathsConfig {
  std::string data;
  std::string policy;
  std::string ref;
  std::string out_dir;
};

// One document with sections generator, policy, loss, train and paths. Every
// section is optional; unknown keys anywhere are rejected.
struct RunConfig {
  GeneratorConfig generator;
  PolicyInit policy;
  LossConfig loss;
  XiSpec xi;
  TrainConfig train;
  PathsConfig paths;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

}  // namespace xidpo
