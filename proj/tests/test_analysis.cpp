#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "xidpo/analysis.hpp"
#include "xidpo/errors.hpp"
#include "xidpo/random.hpp"
#include "xidpo/rewards.hpp"

using namespace xidpo;

TEST_CASE("sigmoid gradient magnitude") {
  for (double beta : {0.1, 1.0, 10.0}) CHECK(sigmoid_grad_magnitude(0.0, beta, 0.0) == 0.5);
  CHECK(sigmoid_grad_magnitude(0.5, 10.0, 0.0) == doctest::Approx(0.006693).epsilon(1e-4));
  CHECK(sigmoid_grad_magnitude(0.7, 2.0, 1.4) == doctest::Approx(0.5).epsilon(1e-15));
  double prev = 1.0;
  for (double d = -3.0; d <= 3.0; d += 0.01) {
    const double g = sigmoid_grad_magnitude(d, 3.0, 0.5);
    CHECK(g < prev);
    CHECK(g > 0.0);
    CHECK(g < 1.0);
    prev = g;
  }
  CHECK_THROWS_AS(sigmoid_grad_magnitude(0.0, 0.0, 0.0), ContractError);
}

TEST_CASE("filter report examples") {
  const std::vector<double> gaps{-1.0, 0.0, 1.0};
  const auto r = filter_report(gaps, 100.0, 0.0, 0.01, std::make_pair(-0.5, 0.5));
  CHECK(r.filtered_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(r.saturated_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(r.tail.filtered_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(r.head.saturated_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(r.head.fraction + r.middle.fraction + r.tail.fraction == doctest::Approx(1.0));
  CHECK(filter_report(gaps, 1e-6, 0.0, 0.01).filtered_fraction == 0.0);
  CHECK_THROWS_AS(filter_report(gaps, 1.0, 0.0, 0.5), ContractError);
  CHECK_THROWS_AS(filter_report({}, 1.0, 0.0, 0.01), ContractError);
  CHECK_THROWS_AS(filter_report(gaps, 1.0, 0.0, 0.01, std::make_pair(0.5, -0.5)), ContractError);
}

TEST_CASE("filtered fraction recomputed per sample") {
  Rng rng(6);
  std::vector<double> gaps(400);
  for (double& g : gaps) g = 4.0 * uniform01(rng) - 2.0;
  const auto r = filter_report(gaps, 7.0, 0.3, 0.02);
  std::size_t filtered = 0;
  for (double g : gaps) filtered += (1.0 - oracle::sigmoid(7.0 * g - 0.3)) < 0.02 ? 1 : 0;
  CHECK(r.filtered_fraction == doctest::Approx(static_cast<double>(filtered) / 400.0));
  CHECK(r.lower == doctest::Approx(oracle::quantile(gaps, 0.10)));
  CHECK(r.upper == doctest::Approx(oracle::quantile(gaps, 0.90)));
}

TEST_CASE("filtering is monotone in beta on symmetric gaps") {
  std::vector<double> gaps;
  for (int i = -100; i <= 100; ++i) gaps.push_back(i / 100.0);
  double prev = -1.0;
  for (double beta : {0.1, 1.0, 10.0, 100.0}) {
    const double f = filter_report(gaps, beta, 0.0, 0.01).filtered_fraction;
    CHECK(f >= prev);
    prev = f;
  }
  CHECK(prev > 0.0);
}

TEST_CASE("region classification") {
  CHECK(classify_region(-2.0, -1.0, 1.0) == Region::head);
  CHECK(classify_region(0.0, -1.0, 1.0) == Region::middle);
  CHECK(classify_region(-1.0, -1.0, 1.0) == Region::middle);
  CHECK(classify_region(1.5, -1.0, 1.0) == Region::tail);
  CHECK(region_name(Region::tail) == "tail");
}

TEST_CASE("filter report JSON") {
  const auto r = filter_report({-1.0, 0.0, 1.0}, 100.0, 0.0, 0.01, std::make_pair(-0.5, 0.5));
  const auto j = nlohmann::json::parse(filter_report_json(r));
  CHECK(j.at("beta") == 100.0);
  CHECK(j.at("filtered_fraction").get<double>() == doctest::Approx(1.0 / 3.0));
  CHECK(j.at("per_region_fractions").contains("tail"));
}

TEST_CASE("token decomposition") {
  const auto uni = PolicyParams::uniform({5, 0});
  for (double t : token_decompose(uni, {{1}, {2, 3}, {4, 0}, {}}, 2.0, 0.0)) CHECK(std::fabs(t) <= 1e-15);
  CHECK_THROWS_AS(token_decompose(uni, {{1}, {2, 3}, {4}, {}}, 2.0, 0.5), ContractError);

  Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    const auto p = PolicyParams::random({7, 0}, rng(), 2.0);
    const std::size_t len = 1 + rng() % 8;
    PreferencePair pr;
    pr.prompt = {static_cast<TokenId>(rng() % 7)};
    for (std::size_t k = 0; k < len; ++k) {
      pr.chosen.push_back(static_cast<TokenId>(rng() % 7));
      pr.rejected.push_back(static_cast<TokenId>(rng() % 7));
    }
    if (pr.chosen == pr.rejected) continue;
    const double beta = 0.1 + 3.0 * uniform01(rng);
    const double gamma = 2.0 * uniform01(rng) - 0.5;
    const auto terms = token_decompose(p, pr, beta, gamma);
    REQUIRE(terms.size() == len);
    double sum = 0.0;
    for (double t : terms) sum += t;
    const double a = oracle::seq_logprob(p, pr.prompt, pr.chosen) / static_cast<double>(len);
    const double b = oracle::seq_logprob(p, pr.prompt, pr.rejected) / static_cast<double>(len);
    CHECK(std::fabs(sum - (beta * a - beta * b - gamma)) <= 1e-10);
    // per-token terms from the oracle
    const auto lw = oracle::token_logprobs(p, pr.prompt, pr.chosen);
    const auto ll = oracle::token_logprobs(p, pr.prompt, pr.rejected);
    for (std::size_t i = 0; i < len; ++i) {
      const double expect = beta / static_cast<double>(len) * (lw[i] - ll[i]) - gamma / static_cast<double>(len);
      CHECK(std::fabs(terms[i] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("equivalence check") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = PolicyParams::random({8, 0}, rng(), 1.5);
    const auto ref = PolicyParams::random({8, 0}, rng(), 1.5);
    Dataset ds{{}, 8};
    for (int i = 0; i < 5; ++i) {
      PreferencePair pr;
      pr.prompt = {static_cast<TokenId>(rng() % 8)};
      for (std::uint64_t k = 0, n = 1 + rng() % 6; k < n; ++k) pr.chosen.push_back(static_cast<TokenId>(rng() % 8));
      for (std::uint64_t k = 0, n = 1 + rng() % 6; k < n; ++k) pr.rejected.push_back(static_cast<TokenId>(rng() % 8));
      if (pr.chosen != pr.rejected) ds.pairs.push_back(pr);
    }
    const double beta = 0.05 + 3.0 * uniform01(rng);
    const auto rep = equivalence_check(p, ref, ds, beta);
    CHECK(rep.max_discrepancy <= 1e-10);
    CHECK(rep.checked == ds.pairs.size());
  }
  const auto uni = PolicyParams::uniform({4, 0});
  const auto p = PolicyParams::random({4, 0}, 3);
  const Dataset eq{{{{0}, {1, 2}, {3, 3}, {}}}, 4};
  CHECK(implied_gamma(uni, eq.pairs[0], 2.0) == doctest::Approx(0.0));
  CHECK(equivalence_check(p, uni, eq, 2.0).max_discrepancy <= 1e-10);
}

TEST_CASE("reward gaps") {
  const auto [p, pr] = testutil::pair_with_rewards_m1_m3();
  const auto gaps = reward_gaps(Dataset{{pr}, 3}, p);
  REQUIRE(gaps.size() == 1);
  CHECK(gaps[0] == doctest::Approx(2.0).epsilon(1e-12));
}
