#include "xidpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xidpo/random.hpp"

namespace xidpo {

namespace {

void check_ids(const PolicyParams& params, const TokenSeq& seq, const char* what) {
  const int v = params.vocab_size();
  for (TokenId id : seq) {
    if (id < 0 || id >= v) {
      throw ContractError(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(v));
    }
  }
}

void check_inputs(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response) {
  if (response.empty()) {
    throw ContractError("response must be non-empty");
  }
  check_ids(params, prompt, "prompt");
  check_ids(params, response, "response");
}

}  // namespace

void WeightTable::add_scaled(const WeightTable& other, double s) {
  if (other.dim_ != dim_) {
    throw ContractError("weight table dimension mismatch");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += s * other.data_[i];
  }
}

void WeightTable::scale(double s) {
  for (double& x : data_) {
    x *= s;
  }
}

bool WeightTable::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

PolicyParams::PolicyParams(PolicyConfig config, WeightTable weights)
    : config_(config), weights_(std::move(weights)) {
  if (config_.vocab_size < 2) {
    throw ContractError("vocab_size must be >= 2");
  }
  if (config_.bos_id < 0 || config_.bos_id >= config_.vocab_size) {
    throw ContractError("bos_id must be < vocab_size");
  }
  if (weights_.dim() != static_cast<std::size_t>(config_.vocab_size)) {
    throw ContractError("weight table must be vocab_size x vocab_size");
  }
  if (!weights_.all_finite()) {
    throw ContractError("policy weights must be finite");
  }
}

PolicyParams PolicyParams::uniform(PolicyConfig config) {
  return PolicyParams(config, WeightTable(static_cast<std::size_t>(std::max(config.vocab_size, 0))));
}

PolicyParams PolicyParams::random(PolicyConfig config, std::uint64_t seed, double scale) {
  WeightTable w(static_cast<std::size_t>(std::max(config.vocab_size, 0)));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : w.flat()) {
    x = scale * normal(rng);
  }
  return PolicyParams(config, std::move(w));
}

TokenId PolicyParams::context_for(const TokenSeq& prompt) const {
  return prompt.empty() ? config_.bos_id : prompt.back();
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) {
    sum += std::exp(x - mx);
  }
  const double log_norm = std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (logits[i] - mx) - log_norm;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& p : out) {
    p /= sum;
  }
  return out;
}

LogProbResult sequence_logprob(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response) {
  check_inputs(params, prompt, response);
  LogProbResult result;
  result.per_token.reserve(response.size());
  TokenId prev = params.context_for(prompt);
  for (TokenId tok : response) {
    const auto row = log_softmax(params.weights().row(static_cast<std::size_t>(prev)));
    const double lp = row[static_cast<std::size_t>(tok)];
    result.per_token.push_back(lp);
    result.total += lp;
    prev = tok;
  }
  result.length = response.size();
  return result;
}

void accumulate_logprob_grad(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response,
                             double scale, Gradient& out) {
  check_inputs(params, prompt, response);
  if (out.dim() != params.weights().dim()) {
    throw ContractError("gradient table dimension mismatch");
  }
  TokenId prev = params.context_for(prompt);
  for (TokenId tok : response) {
    const auto c = static_cast<std::size_t>(prev);
    const auto probs = softmax(params.weights().row(c));
    auto grow = out.row(c);
    for (std::size_t j = 0; j < probs.size(); ++j) {
      grow[j] -= scale * probs[j];
    }
    grow[static_cast<std::size_t>(tok)] += scale;
    prev = tok;
  }
}

Gradient logprob_grad(const PolicyParams& params, const TokenSeq& prompt, const TokenSeq& response) {
  Gradient g(params.weights().dim());
  accumulate_logprob_grad(params, prompt, response, 1.0, g);
  return g;
}

TokenSeq sample(const PolicyParams& params, const TokenSeq& prompt, std::size_t max_len, std::uint64_t rng_seed) {
  if (max_len == 0) {
    throw ContractError("max_len must be >= 1");
  }
  check_ids(params, prompt, "prompt");
  Rng rng(rng_seed);
  TokenSeq out;
  out.reserve(max_len);
  TokenId prev = params.context_for(prompt);
  for (std::size_t i = 0; i < max_len; ++i) {
    const auto probs = softmax(params.weights().row(static_cast<std::size_t>(prev)));
    const double u = uniform01(rng);
    double cum = 0.0;
    // Falls back to the last token with non-zero mass if rounding leaves cum < u.
    TokenId pick = -1;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      if (probs[j] <= 0.0) {
        continue;
      }
      cum += probs[j];
      pick = static_cast<TokenId>(j);
      if (u < cum) {
        break;
      }
    }
    out.push_back(pick);
    prev = pick;
  }
  return out;
}

std::string policy_to_json(const PolicyParams& params) {
  nlohmann::ordered_json j;
  j["vocab_size"] = params.vocab_size();
  j["bos_id"] = params.config().bos_id;
  auto rows = nlohmann::ordered_json::array();
  const auto& w = params.weights();
  for (std::size_t r = 0; r < w.dim(); ++r) {
    auto row = w.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["weights"] = std::move(rows);
  return j.dump();
}

PolicyParams policy_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("policy JSON: ") + e.what());
  }
  try {
    PolicyConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.bos_id = j.at("bos_id").get<TokenId>();
    const auto& rows = j.at("weights");
    if (cfg.vocab_size < 2 || !rows.is_array() || rows.size() != static_cast<std::size_t>(cfg.vocab_size)) {
      throw ValidationError("policy weights must have vocab_size rows");
    }
    WeightTable w(static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (!row.is_array() || row.size() != w.dim()) {
        throw ValidationError("policy weight row " + std::to_string(r) + " has wrong length");
      }
      for (std::size_t c = 0; c < w.dim(); ++c) {
        w(r, c) = row[c].get<double>();
      }
    }
    try {
      return PolicyParams(cfg, std::move(w));
    } catch (const ContractError& e) {
      throw ValidationError(e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("policy JSON: ") + e.what());
  }
}

void save_policy(const PolicyParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  out << policy_to_json(params) << '\n';
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

}  // namespace xidpo
