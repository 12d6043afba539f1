#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numeric code paths: log-probabilities are
// computed by direct exponentiation and each loss is written out from its
// formula.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "xidpo/cli.hpp"
#include "xidpo/losses.hpp"
#include "xidpo/policy.hpp"

namespace oracle {

using xidpo::Gradient;
using xidpo::LossConfig;
using xidpo::Method;
using xidpo::PolicyParams;
using xidpo::PreferencePair;
using xidpo::TokenSeq;

inline double token_logprob(const PolicyParams& p, int ctx, int tok) {
  const auto& w = p.weights();
  double z = 0.0;
  for (int j = 0; j < p.vocab_size(); ++j) {
    z += std::exp(w(ctx, j));
  }
  return w(ctx, tok) - std::log(z);
}

inline std::vector<double> token_logprobs(const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& resp) {
  int ctx = prompt.empty() ? p.config().bos_id : prompt.back();
  std::vector<double> out;
  for (int t : resp) {
    out.push_back(token_logprob(p, ctx, t));
    ctx = t;
  }
  return out;
}

inline double seq_logprob(const PolicyParams& p, const TokenSeq& prompt, const TokenSeq& resp) {
  double s = 0.0;
  for (double v : token_logprobs(p, prompt, resp)) {
    s += v;
  }
  return s;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double neg_log_sigmoid(double z) { return std::log1p(std::exp(-z)); }

// Loss value from the textbook formula. frozen_denom replaces |a + b| for
// the ratio-margin family.
inline double loss(const PolicyParams& policy, const PolicyParams* ref, const PreferencePair& pr,
                   const LossConfig& cfg, std::optional<double> frozen_denom = std::nullopt) {
  const double nw = static_cast<double>(pr.chosen.size());
  const double nl = static_cast<double>(pr.rejected.size());
  const double lw = seq_logprob(policy, pr.prompt, pr.chosen);
  const double ll = seq_logprob(policy, pr.prompt, pr.rejected);
  const double a = lw / nw;
  const double b = ll / nl;
  double rw = 0.0;
  double rl = 0.0;
  if (ref != nullptr) {
    rw = seq_logprob(*ref, pr.prompt, pr.chosen);
    rl = seq_logprob(*ref, pr.prompt, pr.rejected);
  }
  const double be = cfg.beta;
  switch (cfg.method) {
    case Method::dpo:
      return neg_log_sigmoid(be * ((lw - rw) - (ll - rl)));
    case Method::dpo_lennorm:
      return neg_log_sigmoid(be * (lw - rw) / nw - be * (ll - rl) / nl);
    case Method::ipo: {
      const double h = (lw - rw) - (ll - rl);
      const double d = h - 1.0 / (2.0 * cfg.tau);
      return d * d;
    }
    case Method::simpo:
      return neg_log_sigmoid(be * a - be * b - cfg.gamma);
    case Method::cpo:
      return neg_log_sigmoid(be * (lw - ll)) - cfg.lambda * lw;
    case Method::orpo: {
      const double pw = std::exp(a);
      const double pl = std::exp(b);
      const double lor = std::log(pw / (1.0 - pw)) - std::log(pl / (1.0 - pl));
      return -a - cfg.lambda * std::log(sigmoid(lor));
    }
    case Method::rdpo:
      return neg_log_sigmoid(be * ((lw - rw) - (ll - rl)) - (cfg.c * nw - cfg.c * nl));
    case Method::simper:
      return -std::exp(a) + std::exp(b);
    case Method::xidpo:
    case Method::xidpo_relu:
    case Method::xidpo_noleaky: {
      const double denom = frozen_denom ? *frozen_denom : std::fabs(a + b);
      const double m = (a - b) / denom;
      const double u = *cfg.xi - m;
      if (cfg.method == Method::xidpo_noleaky) {
        return (m - *cfg.xi) * (m - *cfg.xi);
      }
      const double slope = cfg.method == Method::xidpo_relu ? 0.0 : cfg.leaky_slope;
      const double act = u >= 0.0 ? u : slope * u;
      return act * act;
    }
  }
  return 0.0;
}

inline double frozen_denominator(const PolicyParams& policy, const PreferencePair& pr) {
  const double a = seq_logprob(policy, pr.prompt, pr.chosen) / static_cast<double>(pr.chosen.size());
  const double b = seq_logprob(policy, pr.prompt, pr.rejected) / static_cast<double>(pr.rejected.size());
  return std::fabs(a + b);
}

// Central differences of f over every weight of `policy`.
inline Gradient fd_grad(const PolicyParams& policy, const std::function<double(const PolicyParams&)>& f,
                        double step) {
  Gradient g = policy.weights();
  PolicyParams probe = policy;
  auto flat = probe.mutable_weights().flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + step;
    const double up = f(probe);
    flat[i] = orig - step;
    const double down = f(probe);
    flat[i] = orig;
    g.flat()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double norm(const Gradient& g) {
  double s = 0.0;
  for (double v : g.flat()) {
    s += v * v;
  }
  return std::sqrt(s);
}

inline double rel_error(const Gradient& a, const Gradient& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.flat().size(); ++i) {
    const double x = a.flat()[i] - b.flat()[i];
    d += x * x;
  }
  const double scale = std::max(norm(a), norm(b));
  return scale == 0.0 ? 0.0 : std::sqrt(d) / scale;
}

// Brute-force order-statistic interpolation.
inline double quantile(std::vector<double> v, double t) {
  std::sort(v.begin(), v.end());
  const double h = t * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo == v.size() - 1) {
    return v[lo];
  }
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

}  // namespace oracle

namespace testutil {

// A policy whose row `ctx` gives the listed probabilities to tokens 0..k-1;
// the remaining mass goes to the last token.
inline xidpo::PolicyParams policy_with_row(int vocab, int ctx, const std::vector<double>& probs) {
  xidpo::PolicyConfig cfg{vocab, 0};
  auto p = xidpo::PolicyParams::uniform(cfg);
  double rest = 1.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    p.mutable_weights()(static_cast<std::size_t>(ctx), j) = std::log(probs[j]);
    rest -= probs[j];
  }
  p.mutable_weights()(static_cast<std::size_t>(ctx), static_cast<std::size_t>(vocab - 1)) = std::log(rest);
  return p;
}

// Policy and pair with a = -1, b = -3: single-token responses from context 2.
inline std::pair<xidpo::PolicyParams, xidpo::PreferencePair> pair_with_rewards_m1_m3() {
  auto p = policy_with_row(3, 2, {std::exp(-1.0), std::exp(-3.0)});
  xidpo::PreferencePair pr{{2}, {0}, {1}, {}};
  return {p, pr};
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("xidpo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliRun run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  CliRun r;
  r.code = xidpo::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

}  // namespace testutil
