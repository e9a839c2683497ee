#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "esb/em.hpp"
#include "esb/synthetic.hpp"

using namespace esb;

namespace {

CreditModel two_state_model(std::vector<std::vector<double>> mu, double kappa, double sigma, double q12, double q21) {
  Eigen::MatrixXd q(2, 2);
  q << -q12, q12, q21, -q21;
  CreditModel m;
  m.chain = RegimeChain(q);
  for (std::size_t j = 0; j < mu.size(); ++j) {
    m.portfolio.sovereigns.push_back({"S" + std::to_string(j), kappa, mu[j], sigma, 0.0});
    m.portfolio.lgd.push_back(LgdSpec{{0.5, 0.5}, 2.0});
    m.portfolio.weights.push_back(1.0 / static_cast<double>(mu.size()));
  }
  return m;
}

EmParameters truth_of(const CreditModel& m) {
  EmParameters p;
  p.generator = m.chain.generator();
  p.initial = Eigen::VectorXd::Constant(m.chain.states(), 1.0 / m.chain.states());
  for (const auto& s : m.portfolio.sovereigns) {
    p.mu.push_back(s.mu);
    p.kappa.push_back(s.kappa);
    p.sigma.push_back(s.sigma);
  }
  return p;
}

double match_rate(const std::vector<Eigen::VectorXd>& probs, const std::vector<std::size_t>& truth) {
  double hits = 0.0;
  for (std::size_t m = 1; m < truth.size(); ++m) {
    Eigen::Index best;
    probs[m].maxCoeff(&best);
    hits += static_cast<std::size_t>(best) == truth[m];
  }
  return hits / static_cast<double>(truth.size() - 1);
}

}  // namespace

TEST(Filter, ProbabilitiesAreConsistent) {
  const auto m = two_state_model({{0.01, 0.04}, {0.02, 0.05}}, 2.0, 0.1, 0.5, 1.0);
  const auto sim = simulate_hazard_panel(m, 3.0, 7, 0, 2);
  const auto f = filter_smooth(sim.panel, truth_of(m));
  const std::size_t n = sim.panel.date_count();
  ASSERT_EQ(f.filtered.size(), n);
  for (std::size_t t = 0; t < n; ++t) {
    EXPECT_NEAR(f.filtered[t].sum(), 1.0, 1e-12);
    EXPECT_NEAR(f.smoothed[t].sum(), 1.0, 1e-12);
    EXPECT_GE(f.filtered[t].minCoeff(), 0.0);
    EXPECT_GE(f.smoothed[t].minCoeff(), 0.0);
  }
  EXPECT_LT((f.filtered.back() - f.smoothed.back()).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t t = 1; t < n; ++t) {
    EXPECT_LT((f.pairs[t].rowwise().sum() - f.smoothed[t - 1]).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((f.pairs[t].colwise().sum().transpose() - f.smoothed[t]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Filter, LikelihoodMatchesPathEnumeration) {
  const auto m = two_state_model({{0.01, 0.04}}, 2.0, 0.1, 0.5, 1.0);
  auto sim = simulate_hazard_panel(m, 5.0 / 52.0, 7, 0, 3);
  ASSERT_EQ(sim.panel.date_count(), 6u);
  const auto p = truth_of(m);
  const double h = sim.panel.step();
  const Eigen::MatrixXd trans = (p.generator * h).exp();
  const auto& g = sim.panel.gamma[0];
  auto density = [&](std::size_t t, std::size_t x) {
    const double var = p.sigma[0] * p.sigma[0] * g[t - 1] * h;
    const double e = g[t] - g[t - 1] - p.kappa[0] * (p.mu[0][x] - g[t - 1]) * h;
    return std::exp(-0.5 * e * e / var) / std::sqrt(2.0 * std::numbers::pi * var);
  };
  double total = 0.0;
  for (unsigned code = 0; code < 64; ++code) {
    double w = 0.5;
    for (std::size_t t = 1; t < 6; ++t) {
      const std::size_t a = (code >> (t - 1)) & 1u, b = (code >> t) & 1u;
      w *= trans(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * density(t, b);
    }
    total += w;
  }
  EXPECT_NEAR(filter_smooth(sim.panel, p).log_likelihood, std::log(total), 1e-10);
}

TEST(Filter, WellSeparatedRegimesAreIdentified) {
  const auto m = two_state_model({{0.001, 0.1}, {0.002, 0.2}}, 5.0, 0.05, 0.5, 0.5);
  const auto sim = simulate_hazard_panel(m, 10.0, 7, 0, 4);
  const auto f = filter_smooth(sim.panel, truth_of(m));
  EXPECT_GE(match_rate(f.smoothed, sim.regimes), 0.99);
}

TEST(Filter, SmoothingBeatsFiltering) {
  const auto m = two_state_model({{0.01, 0.02}, {0.015, 0.03}}, 3.0, 0.15, 1.0, 1.0);
  double filtered = 0.0, smoothed = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto sim = simulate_hazard_panel(m, 10.0, 7, 0, seed);
    const auto f = filter_smooth(sim.panel, truth_of(m));
    filtered += match_rate(f.filtered, sim.regimes);
    smoothed += match_rate(f.smoothed, sim.regimes);
  }
  EXPECT_GT(smoothed, filtered);
}

TEST(Em, RecoversTwoStateLevels) {
  const auto m = two_state_model({{0.01, 0.05}, {0.02, 0.08}, {0.015, 0.06}}, 3.0, 0.1, 0.5, 1.0);
  const auto sim = simulate_hazard_panel(m, 10.0, 7, 0, 6);
  const auto sigma = estimate_sigma_qv(sim.panel, 1.0, {});
  for (double s : sigma) EXPECT_NEAR(s, 0.1, 0.02);
  const auto res = em_estimate(sim.panel, em_initial_guess(sim.panel, 2, sigma));
  EXPECT_TRUE(res.converged);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t x = 0; x < 2; ++x)
      EXPECT_NEAR(res.params.mu[j][x], m.portfolio.sovereigns[j].mu[x], 0.15 * m.portfolio.sovereigns[j].mu[x])
          << "sovereign " << j << " regime " << x;
  for (std::size_t i = 1; i < res.log_likelihood.size(); ++i)
    EXPECT_GE(res.log_likelihood[i], res.log_likelihood[i - 1] - 1e-8 * std::abs(res.log_likelihood[i - 1]));
  EXPECT_GT(res.generator_stderr(0, 1), 0.0);
  EXPECT_NEAR(res.params.generator.row(0).sum(), 0.0, 1e-12);
}

TEST(Em, UnreachableRegimeIsFrozenWithWarning) {
  const auto m = two_state_model({{0.01, 0.05}}, 3.0, 0.1, 0.5, 1.0);
  const auto sim = simulate_hazard_panel(m, 3.0, 7, 0, 7);
  EmParameters start = em_initial_guess(sim.panel, 3, std::vector<double>{0.1});
  start.mu[0][2] = 50.0;
  EmOptions opt;
  opt.max_iterations = 5;
  const auto res = em_estimate(sim.panel, start, opt);
  ASSERT_FALSE(res.warnings.empty());
  EXPECT_NE(res.warnings.front().find("regime 3"), std::string::npos);
  EXPECT_EQ(res.params.mu[0][2], 50.0);
}

TEST(Em, InitialisersAndValidation) {
  const auto m = two_state_model({{0.01, 0.05}}, 3.0, 0.1, 0.5, 1.0);
  const auto sim = simulate_hazard_panel(m, 3.0, 7, 0, 8);
  const auto p = em_initial_from_path(sim.panel, sim.regimes, 2, std::vector<double>{0.1});
  EXPECT_LT(p.mu[0][0], p.mu[0][1]);
  EXPECT_GE(p.generator(0, 1), 0.1);
  const auto km = em_initial_kmeans(sim.panel, 2, std::vector<double>{0.1});
  EXPECT_LE(km.mu[0][0], km.mu[0][1]);
  auto bad = sim.panel;
  bad.dates[3] += 0.01;
  EXPECT_THROW(filter_smooth(bad, p), ValidationError);
  bad = sim.panel;
  bad.gamma[0][2] = -1.0;
  EXPECT_THROW(em_estimate(bad, p), ValidationError);
  EXPECT_THROW(estimate_sigma_qv(sim.panel, 0.0, {}), ValidationError);
}
