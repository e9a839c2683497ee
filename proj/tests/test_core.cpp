#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "esb/core.hpp"
#include "esb/io.hpp"
#include "esb/parallel.hpp"

using namespace esb;

TEST(PortfolioLoss, WeightedSum) {
  const std::vector<double> w{0.5, 0.5};
  EXPECT_DOUBLE_EQ(portfolio_loss(std::vector<double>{0.0, 0.0}, w), 0.0);
  EXPECT_DOUBLE_EQ(portfolio_loss(std::vector<double>{1.0, 1.0}, w), 1.0);
  EXPECT_NEAR(portfolio_loss(std::vector<double>{0.2, 0.6}, w), 0.4, 1e-15);
}

TEST(PortfolioLoss, DimensionMismatchThrows) {
  EXPECT_THROW(portfolio_loss(std::vector<double>{0.1}, std::vector<double>{0.5, 0.5}), ValidationError);
}

TEST(Payoff, Examples) {
  EXPECT_DOUBLE_EQ(esb_payoff(0.0, 0.3), 0.7);
  EXPECT_DOUBLE_EQ(ejb_payoff(0.0, 0.3), 0.3);
  EXPECT_DOUBLE_EQ(esb_payoff(0.3, 0.3), 0.7);
  EXPECT_DOUBLE_EQ(ejb_payoff(0.3, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(esb_payoff(0.5, 0.3), 0.5);
  EXPECT_DOUBLE_EQ(ejb_payoff(0.5, 0.3), 0.0);
}

TEST(Payoff, ParityAndBoundsProperty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double l = u(rng);
    const double k = 0.01 + 0.98 * u(rng);
    EXPECT_NEAR(esb_payoff(l, k) + ejb_payoff(l, k), 1.0 - l, 1e-15);
    EXPECT_NEAR(esb_payoff(l, k), std::min(1.0 - l, 1.0 - k), 1e-15);
    EXPECT_GE(ejb_payoff(l, k), 0.0);
    EXPECT_LE(ejb_payoff(l, k), k);
  }
}

TEST(Payoff, NormalizedSenior) {
  TrancheSpec t{0.3, 5.0, true};
  EXPECT_DOUBLE_EQ(esb_payoff(0.0, t), 1.0);
  EXPECT_NEAR(esb_payoff(0.5, t), 0.5 / 0.7, 1e-15);
}

TEST(Lgd, BetaVariance) {
  LgdSpec s{{0.5}, 2.0};
  EXPECT_NEAR(s.variance(0), 0.25 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.shape_a(0), 1.0);
  EXPECT_DOUBLE_EQ(s.shape_b(0), 1.0);
}

TEST(Lgd, UnitMeanIsPointMass) {
  LgdSpec s{{1.0}, 1.5};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(s.sample(0, rng), 1.0);
  EXPECT_EQ(s.variance(0), 0.0);
  EXPECT_EQ(s.quantile(0, 0.3), 1.0);
}

TEST(Lgd, AustriaExpansionEmpiricalMean) {
  const auto lgd = load_lgd(data_path("lgd_means.tsv"));
  const auto& aut = lgd.at("AUT");
  ASSERT_DOUBLE_EQ(aut.mean[0], 0.55);
  ASSERT_DOUBLE_EQ(aut.concentration, 1.5);
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = aut.sample(0, rng);
    ASSERT_GE(x, 0.0);
    ASSERT_LE(x, 1.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(aut.variance(0));
  EXPECT_NEAR(mean, 0.55, 3.0 * sd / std::sqrt(n));
  EXPECT_NEAR(sq / n - mean * mean, aut.variance(0), 0.003);
}

TEST(Lgd, CallValueMatchesSampling) {
  LgdSpec s{{0.6}, 1.5};
  Rng rng(3);
  const int n = 400000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::max(s.sample(0, rng) - 0.4, 0.0);
  EXPECT_NEAR(s.call_value(0, 0.4), acc / n, 2e-3);
  EXPECT_DOUBLE_EQ(s.call_value(0, 0.0), 0.6);
  EXPECT_DOUBLE_EQ(s.call_value(0, 1.0), 0.0);
}

TEST(Lgd, Validation) {
  EXPECT_THROW((LgdSpec{{0.0}, 1.5}.validate(1)), ValidationError);
  EXPECT_THROW((LgdSpec{{1.2}, 1.5}.validate(1)), ValidationError);
  EXPECT_THROW((LgdSpec{{0.5}, 0.0}.validate(1)), ValidationError);
  EXPECT_THROW((LgdSpec{{0.5}, 1.5}.validate(2)), ValidationError);
  EXPECT_NO_THROW((LgdSpec{{0.5, 1.0}, 1.5}.validate(2)));
}

TEST(RegimeChain, Validation) {
  Eigen::MatrixXd q(2, 2);
  q << -1, 1, 2, -2;
  EXPECT_NO_THROW(RegimeChain{q});
  Eigen::MatrixXd bad_row = q;
  bad_row(0, 0) = -0.9;
  EXPECT_THROW(RegimeChain{bad_row}, ValidationError);
  Eigen::MatrixXd negative(2, 2);
  negative << 1, -1, 0, 0;
  EXPECT_THROW(RegimeChain{negative}, ValidationError);
  EXPECT_THROW(RegimeChain{Eigen::MatrixXd::Zero(2, 3)}, ValidationError);
}

TEST(RegimeChain, ConsistentDiagonalAndTransitions) {
  Eigen::MatrixXd q(3, 3);
  q << -0.1421, 0.1421, 0.0, 0.5843, -1.1685, 0.5843, 0.0, 0.9630, -0.9630;
  q(1, 1) = -1.0;  // deliberately inconsistent
  const auto chain = RegimeChain::with_consistent_diagonal(q);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(chain.generator().row(static_cast<Eigen::Index>(i)).sum(), 0.0, 1e-15);
  const Eigen::MatrixXd p = chain.transition_matrix(2.0);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_GE(p(i, j), 0.0);
  }
  EXPECT_TRUE(chain.transition_matrix(0.0).isIdentity(1e-15));
  // Chapman-Kolmogorov
  EXPECT_TRUE(chain.transition_matrix(3.0).isApprox(p * chain.transition_matrix(1.0), 1e-12));
}

TEST(Sovereign, Validation) {
  SovereignParams p{"X", 0.5, {0.01, 0.02}, 0.1, 0.0};
  EXPECT_NO_THROW(p.validate(2));
  auto q = p;
  q.kappa = 0.0;
  EXPECT_THROW(q.validate(2), ValidationError);
  q = p;
  q.mu[1] = 0.0;
  EXPECT_THROW(q.validate(2), ValidationError);
  q = p;
  q.omega = -0.1;
  EXPECT_THROW(q.validate(2), ValidationError);
  EXPECT_THROW(p.validate(3), ValidationError);
  q = p;
  q.omega = 0.1;
  EXPECT_NEAR(q.level(1, 2.0), 0.02 * std::exp(0.2), 1e-15);
}

TEST(Portfolio, WeightsMustSumToOne) {
  Portfolio p;
  p.sovereigns = {{"A", 0.5, {0.01}, 0.1, 0.0}, {"B", 0.5, {0.01}, 0.1, 0.0}};
  p.lgd = {{{0.5}, 1.5}, {{0.5}, 1.5}};
  p.weights = {0.5, 0.5};
  EXPECT_NO_THROW(p.validate(1));
  p.weights = {0.5, 0.4};
  EXPECT_THROW(p.validate(1), ValidationError);
  p.weights = {1.0, 0.0};
  EXPECT_THROW(p.validate(1), ValidationError);
  EXPECT_EQ(p.index_of("B"), 1u);
  EXPECT_THROW(p.index_of("C"), ValidationError);
}

TEST(Schedule, RegularQuarterly) {
  const auto s = PaymentSchedule::regular(5.0);
  EXPECT_EQ(s.periods(), 20u);
  EXPECT_DOUBLE_EQ(s.maturity(), 5.0);
  EXPECT_DOUBLE_EQ(s.delta(1), 0.25);
  EXPECT_EQ(s.period_containing(0.0), 1u);
  EXPECT_EQ(s.period_containing(0.25), 1u);
  EXPECT_EQ(s.period_containing(5.0), 20u);
  EXPECT_EQ(s.period_containing(0.3), 2u);
  EXPECT_THROW(PaymentSchedule({0.0}), ValidationError);
  EXPECT_THROW(PaymentSchedule({0.0, 1.0, 1.0}), ValidationError);
}

TEST(Discount, FactorInUnitInterval) {
  DiscountCurve c{0.03};
  EXPECT_DOUBLE_EQ(c.discount(1.0, 1.0), 1.0);
  EXPECT_NEAR(c.discount(0.0, 5.0), std::exp(-0.15), 1e-15);
  for (double s = 0.0; s < 30.0; s += 0.5) {
    EXPECT_GT(c.discount(0.0, s), 0.0);
    EXPECT_LE(c.discount(0.0, s), 1.0);
  }
}

TEST(MarketState, Validation) {
  auto s = MarketState::initial(0, {0.01, 0.02});
  EXPECT_NO_THROW(s.validate(2, 3));
  EXPECT_FALSE(s.defaulted(0));
  s.gamma[0] = -1e-9;
  EXPECT_THROW(s.validate(2, 3), ValidationError);
  s.gamma[0] = 0.0;
  s.loss[1] = 1.1;
  EXPECT_THROW(s.validate(2, 3), ValidationError);
  s.loss[1] = 0.4;
  EXPECT_TRUE(s.defaulted(1));
  s.regime = 3;
  EXPECT_THROW(s.validate(2, 3), ValidationError);
}

TEST(Tranche, AttachmentOpenInterval) {
  EXPECT_THROW((TrancheSpec{0.0, 5.0}.validate()), ValidationError);
  EXPECT_THROW((TrancheSpec{1.0, 5.0}.validate()), ValidationError);
  EXPECT_NO_THROW((TrancheSpec{0.3, 5.0}.validate()));
}
