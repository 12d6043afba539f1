#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xidpo/errors.hpp"

namespace xidpo {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

struct PolicyConfig {
  int vocab_size = 2;
  TokenId bos_id = 0;

  bool operator==(const PolicyConfig&) const = default;
};

// Dense V x V table, row-major. Used for both the policy logits and their
// gradients.
class WeightTable {
 public:
  WeightTable() = default;
  explicit WeightTable(std::size_t dim, double fill = 0.0) : dim_(dim), data_(dim * dim, fill) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t row, std::size_t col) { return data_[row * dim_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return data_[row * dim_ + col]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * dim_, dim_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  // this += scale * other
  void add_scaled(const WeightTable& other, double scale);
  void scale(double s);
  bool all_finite() const;

  bool operator==(const WeightTable&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

using Gradient = WeightTable;

// Bigram softmax language model: weights(prev, next) are unconstrained logits
// of the next token given the previous one.
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(PolicyConfig config, WeightTable weights);

  static PolicyParams uniform(PolicyConfig config);
  // Logits drawn i.i.d. from N(0, scale^2).
  static PolicyParams random(PolicyConfig config, std::uint64_t seed, double scale = 1.0);

  const PolicyConfig& config() const { return config_; }
  int vocab_size() const { return config_.vocab_size; }
  const WeightTable& weights() const { return weights_; }
  WeightTable& mutable_weights() { return weights_; }

  // Context used for the first response token.
  TokenId context_for(const TokenSeq& prompt) const;

  bool operator==(const PolicyParams&) const = default;

 private:
  PolicyConfig config_;
  WeightTable weights_;
};

struct LogProbResult {
  double total = 0.0;
  std::vector<double> per_token;
  std::size_t length = 0;
};

// Numerically stable log-softmax of one row.
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

LogProbResult sequence_logprob(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response);

// d total / d weights.
Gradient logprob_grad(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response);

// out += scale * d total / d weights. Lets losses combine several sequence
// gradients without allocating a table per sequence.
void accumulate_logprob_grad(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response,
                             double scale, Gradient& out);

// Ancestral sampling of exactly max_len tokens.
TokenSeq sample(const PolicyParams& params, const TokenSeq& prompt, std::size_t max_len, std::uint64_t rng_seed);

std::string policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const std::string& text);
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace xidpo
