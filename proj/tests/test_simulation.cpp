#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/distributions/non_central_chi_squared.hpp>

#include "esb/core.hpp"
#include "esb/parallel.hpp"
#include "esb/pricing.hpp"
#include "esb/reference.hpp"
#include "esb/simulation.hpp"

using namespace esb;

namespace {

ChainPath frozen(double end, std::size_t state = 0) {
  ChainPath p;
  p.times = {0.0};
  p.states = {state};
  p.end = end;
  return p;
}

}  // namespace

TEST(Chain, ZeroGeneratorNeverJumps) {
  const RegimeChain chain(Eigen::MatrixXd::Zero(3, 3));
  Rng rng(1);
  const auto p = simulate_chain(chain, 2, 100.0, rng);
  EXPECT_EQ(p.jumps(), 0u);
  EXPECT_EQ(p.state_at(50.0), 2u);
}

TEST(Chain, SymmetricTwoStateHoldingTime) {
  Eigen::MatrixXd q(2, 2);
  q << -1, 1, 1, -1;
  const RegimeChain chain(q);
  Rng rng(2);
  std::vector<double> holds;
  while (holds.size() < 10000) {
    const auto p = simulate_chain(chain, 0, 50.0, rng);
    // First holding time only, so every sample is a complete exponential.
    if (p.jumps() >= 1) holds.push_back(p.times[1]);
  }
  double mean = 0.0, sq = 0.0;
  for (double h : holds) mean += h, sq += h * h;
  mean /= holds.size();
  const double se = std::sqrt((sq / holds.size() - mean * mean) / holds.size());
  EXPECT_NEAR(mean, 1.0, 3.0 * se);
}

TEST(Chain, PublishedGeneratorNeverSkipsANeighbour) {
  const auto chain = base_model().chain;
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const auto p = simulate_chain(chain, static_cast<std::size_t>(i % 3), 20.0, rng);
    for (std::size_t s = 1; s < p.states.size(); ++s) {
      const auto a = p.states[s - 1], b = p.states[s];
      EXPECT_EQ(std::max(a, b) - std::min(a, b), 1u);
    }
  }
}

TEST(Chain, TerminalLawMatchesTransitionMatrix) {
  const auto chain = base_model().chain;
  Rng rng(4);
  const std::size_t n = 40000;
  std::vector<double> count(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) count[simulate_chain(chain, 1, 2.0, rng).states.back()] += 1.0;
  const Eigen::MatrixXd p = chain.transition_matrix(2.0);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const double pk = p(1, k);
    EXPECT_NEAR(count[static_cast<std::size_t>(k)] / n, pk, 3.0 * std::sqrt(pk * (1 - pk) / n));
  }
}

TEST(Hazards, ZeroVolatilityFollowsOde) {
  const SovereignParams p{"X", 0.8, {0.05}, 0.0, 0.0};
  Rng rng(5);
  const auto h = simulate_hazards(p, frozen(5.0), 0.2, 1e-3, rng);
  for (std::size_t i = 0; i < h.values.size(); i += 250) {
    const double t = h.step * static_cast<double>(i);
    EXPECT_NEAR(h.values[i], 0.05 + (0.2 - 0.05) * std::exp(-0.8 * t), 1e-4);
  }
}

TEST(Hazards, StayNonnegativeWhenFellerFails) {
  const SovereignParams p{"X", 0.1, {0.001}, 0.5, 0.0};
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto h = simulate_hazards(p, frozen(5.0), 0.001, 1e-2, rng);
    for (double v : h.values) EXPECT_GE(v, 0.0);
  }
}

TEST(Hazards, LongRunMeanIsLevel) {
  const SovereignParams p{"X", 0.5, {0.03}, 0.1, 0.0};
  Rng rng(7);
  std::vector<double> means;
  for (int path = 0; path < 200; ++path) {
    const auto h = simulate_hazards(p, frozen(100.0), 0.03, 1e-2, rng);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = h.values.size() / 2; i < h.values.size(); ++i, ++n) s += h.values[i];
    means.push_back(s / n);
  }
  double mean = 0.0, sq = 0.0;
  for (double m : means) mean += m, sq += m * m;
  mean /= means.size();
  const double se = std::sqrt((sq / means.size() - mean * mean) / means.size());
  EXPECT_NEAR(mean, 0.03, 3.0 * se);
}

TEST(Hazards, EulerMatchesExactCirTransition) {
  const double kappa = 1.0, mu = 0.05, sigma = 0.2, gamma0 = 0.05, t = 1.0;
  const SovereignParams p{"X", kappa, {mu}, sigma, 0.0};
  const double c = sigma * sigma * (1.0 - std::exp(-kappa * t)) / (4.0 * kappa);
  boost::math::non_central_chi_squared_distribution<double> law(4.0 * kappa * mu / (sigma * sigma),
                                                                gamma0 * std::exp(-kappa * t) / c);
  Rng rng(8);
  const std::size_t n = 2000;
  std::vector<double> u;
  for (std::size_t i = 0; i < n; ++i)
    u.push_back(boost::math::cdf(law, simulate_hazards(p, frozen(t), gamma0, 1e-3, rng).values.back() / c));
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    ks = std::max({ks, u[i] - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - u[i]});
  EXPECT_LT(ks, 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST(Hazards, TrendRaisesLevel) {
  const SovereignParams p{"X", 2.0, {0.02}, 1e-6, 0.2};
  Rng rng(9);
  const auto h = simulate_hazards(p, frozen(5.0), 0.02, 1e-3, rng);
  EXPECT_GT(h.values.back(), 0.02 * std::exp(0.2 * 5.0) * 0.85);
}

TEST(Defaults, ZeroHazardNeverDefaults) {
  HazardTrajectory h{0.0, 0.01, std::vector<double>(501, 0.0)};
  const auto schedule = PaymentSchedule::standard();
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) EXPECT_FALSE(sample_default(h, schedule, rng).defaulted());
}

TEST(Defaults, ConstantHazardSurvival) {
  HazardTrajectory h{0.0, 0.01, std::vector<double>(501, 0.1)};
  const auto schedule = PaymentSchedule::standard();
  Rng rng(11);
  const std::size_t n = 100000;
  std::size_t alive = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = sample_default(h, schedule, rng);
    if (!d.defaulted()) {
      ++alive;
    } else {
      ASSERT_GT(d.time, schedule.time(d.period - 1));
      ASSERT_LE(d.time, schedule.time(d.period));
    }
  }
  const double p = std::exp(-0.5);
  EXPECT_NEAR(static_cast<double>(alive) / n, p, 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST(Defaults, IndependentGivenFrozenHazards) {
  HazardTrajectory h{0.0, 0.01, std::vector<double>(501, 0.1)};
  const auto schedule = PaymentSchedule::standard();
  const std::vector<HazardTrajectory> hs{h, h};
  Rng rng(12);
  const std::size_t n = 50000;
  double a = 0, b = 0, ab = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = sample_defaults(hs, schedule, rng);
    const double x = d[0].defaulted(), y = d[1].defaulted();
    a += x, b += y, ab += x * y;
  }
  a /= n, b /= n, ab /= n;
  const double corr = (ab - a * b) / std::sqrt(a * (1 - a) * b * (1 - b));
  EXPECT_NEAR(corr, 0.0, 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST(PathSet, SurvivalMatchesTransform) {
  const auto model = base_model();
  auto state = representative_state(model);
  state.regime = 1;
  const auto schedule = PaymentSchedule::standard();
  const std::size_t n = 50000;
  ConditionalPathSet set(model, state.regime, schedule, n, 3);
  const std::size_t j = model.portfolio.index_of("PRT");
  std::vector<double> out(model.sovereigns());
  std::vector<std::size_t> period(model.sovereigns());
  std::size_t alive = 0;
  for (std::size_t p = 0; p < n; ++p) {
    set.losses(p, state.gamma, state.loss, out, period);
    alive += period[j] == 0;
  }
  const double exact = survival_claim_price(state, j, 5.0, Eigen::VectorXd::Ones(3), model);
  EXPECT_NEAR(static_cast<double>(alive) / n, exact, 3.0 * std::sqrt(exact * (1 - exact) / n));
}

TEST(PathSet, EulerPathSurvivalMatchesTransform) {
  const auto model = base_model();
  auto state = representative_state(model);
  state.regime = 2;
  const auto schedule = PaymentSchedule::standard();
  const std::size_t j = model.portfolio.index_of("ITA");
  const std::size_t n = 10000;
  Rng rng(13);
  std::size_t alive = 0;
  for (std::size_t p = 0; p < n; ++p) alive += !simulate_path(model, state, schedule, 0.01, rng).defaults[j].defaulted();
  const double exact = survival_claim_price(state, j, 5.0, Eigen::VectorXd::Ones(3), model);
  EXPECT_NEAR(static_cast<double>(alive) / n, exact, 3.0 * std::sqrt(exact * (1 - exact) / n));
}

TEST(PathSet, SameSeedReproducesAndLossesStayInRange) {
  const auto model = base_model();
  const auto state = representative_state(model);
  const auto schedule = PaymentSchedule::standard();
  ConditionalPathSet a(model, 2, schedule, 500, 9), b(model, 2, schedule, 500, 9);
  std::vector<double> s1, s2;
  for (std::size_t p = 0; p < 500; ++p) {
    const double l1 = a.portfolio_loss(p, state.gamma, state.loss, s1);
    const double l2 = b.portfolio_loss(p, state.gamma, state.loss, s2);
    EXPECT_EQ(l1, l2);
    EXPECT_GE(l1, 0.0);
    EXPECT_LE(l1, 1.0);
  }
}

TEST(PathSet, RandomInitialLossDrawnPerPath) {
  const auto model = base_model();
  const auto state = representative_state(model);
  const auto schedule = PaymentSchedule::standard();
  const std::size_t j = model.portfolio.index_of("ITA");
  const RandomInitialLoss r{j, 0.5, 1.5};
  ConditionalPathSet set(model, 0, schedule, 20000, 5, 0, {}, std::span<const RandomInitialLoss>(&r, 1));
  std::vector<double> out(model.sovereigns());
  double mean = 0.0;
  for (std::size_t p = 0; p < set.size(); ++p) {
    set.losses(p, state.gamma, state.loss, out);
    ASSERT_GT(out[j], 0.0);
    mean += out[j];
  }
  mean /= set.size();
  EXPECT_NEAR(mean, 0.5, 3.0 * std::sqrt(0.25 / 2.5 / set.size()));
}
