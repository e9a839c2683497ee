#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "esb/core.hpp"
#include "esb/io.hpp"
#include "esb/pricing.hpp"
#include "esb/reference.hpp"
#include "esb/risk.hpp"
#include "esb/synthetic.hpp"

using namespace esb;

namespace {

McConfig mc_paths(std::size_t paths, std::uint64_t seed = 1) {
  McConfig mc;
  mc.paths = paths;
  mc.seed = seed;
  mc.threads = 1;
  return mc;
}

double probability_at(const CreditModel& base, const std::string& name, double kappa, std::size_t paths) {
  const auto state0 = representative_state(base);
  const auto spec = named_scenario(name, base.sovereigns(), base.portfolio.index_of("ITA"));
  const auto state = spec.apply(state0);
  const auto model = parameter_set(spec.parameter_set, state);
  const double k[1] = {kappa};
  return loss_probability(state, model, k, PaymentSchedule::standard(), mc_paths(paths), spec.random_losses)
      .front()
      .probability;
}

}  // namespace

TEST(Scenario, ApplyOverridesState) {
  const auto model = base_model();
  const auto base = representative_state(model);
  const auto s = named_scenario("hazard110", model.sovereigns(), 7).apply(base);
  for (std::size_t j = 0; j < model.sovereigns(); ++j) EXPECT_NEAR(s.gamma[j], 1.1 * base.gamma[j], 1e-15);
  EXPECT_EQ(named_scenario("state3", 10, 7).apply(base).regime, 2u);
  EXPECT_EQ(named_scenario("contagion3", 10, 7).parameter_set, "crisis2");
  EXPECT_EQ(named_scenario("italy_default", 10, 7).random_losses.front().sovereign, 7u);
  EXPECT_THROW(named_scenario("nope", 10, 7), ValidationError);
  ScenarioSpec bad;
  bad.hazard_multiplier.assign(10, 0.0);
  EXPECT_THROW(bad.apply(base), ValidationError);
  bad.hazard_multiplier.clear();
  bad.initial_loss.assign(10, 1.5);
  EXPECT_THROW(bad.apply(base), ValidationError);
}

TEST(LossProbability, UnreachableThresholdGivesZero) {
  const auto model = base_model();
  auto state = representative_state(model);
  state.regime = 2;
  const double k[1] = {0.999};
  EXPECT_EQ(loss_probability(state, model, k, PaymentSchedule::standard(), mc_paths(5000)).front().probability, 0.0);
}

TEST(LossProbability, NonincreasingInAttachment) {
  const auto model = base_model();
  auto state = representative_state(model);
  state.regime = 2;
  std::vector<double> ks;
  for (int i = 1; i <= 10; ++i) ks.push_back(0.03 * i);
  const auto p = loss_probability(state, model, ks, PaymentSchedule::standard(), mc_paths(20000));
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_LE(p[i].probability, p[i - 1].probability);
}

TEST(LossProbability, StateIsTheDominantRiskFactor) {
  const auto model = base_model();
  const double base = probability_at(model, "base", 0.1, 20000);
  const double s2 = probability_at(model, "state2", 0.1, 20000);
  const double s3 = probability_at(model, "state3", 0.1, 20000);
  EXPECT_LE(base, s2);
  EXPECT_LT(s2, s3);
}

TEST(Crisis, IdenticalGeneratorIsFixedPoint) {
  const auto model = base_model();
  const auto state = representative_state(model);
  const auto same = match_crisis_parameters(model, model.chain, state, PaymentSchedule::standard());
  for (std::size_t j = 0; j < model.sovereigns(); ++j)
    EXPECT_NEAR(same.portfolio.sovereigns[j].mu[2], model.portfolio.sovereigns[j].mu[2], 1e-12);
}

TEST(Crisis, PublishedCrisisGeneratorsMatchLossAndRaiseLadder) {
  const auto model = base_model();
  const auto state = representative_state(model);
  const auto schedule = PaymentSchedule::standard();
  const auto c1 = parameter_set("crisis1", state);
  const auto c2 = parameter_set("crisis2", state);
  // Entries of the crisis generators as published.
  EXPECT_NEAR(c1.chain.rate(1, 2), 0.2843, 1e-12);
  EXPECT_NEAR(c1.chain.rate(2, 1), 1.4444, 1e-12);
  EXPECT_NEAR(c2.chain.rate(1, 2), 0.1843, 1e-12);
  const auto base_losses = expected_terminal_losses(state, model, schedule);
  const auto l1 = expected_terminal_losses(state, c1, schedule);
  const auto l2 = expected_terminal_losses(state, c2, schedule);
  for (std::size_t j = 0; j < model.sovereigns(); ++j) {
    EXPECT_NEAR(l1[j], base_losses[j], 1e-8);
    EXPECT_NEAR(l2[j], base_losses[j], 1e-8);
    const double m0 = model.portfolio.sovereigns[j].mu[2];
    const double m1 = c1.portfolio.sovereigns[j].mu[2];
    const double m2 = c2.portfolio.sovereigns[j].mu[2];
    EXPECT_LT(m0, m1) << model.portfolio.sovereigns[j].id;
    EXPECT_LT(m1, m2) << model.portfolio.sovereigns[j].id;
  }
}

TEST(Crisis, ShorterStrongRecessionRaisesLevel) {
  const auto model = base_model();
  const auto state = representative_state(model);
  const auto schedule = PaymentSchedule::standard();
  Eigen::MatrixXd q = model.chain.generator();
  double previous = 0.0;
  for (int halvings = 0; halvings < 4; ++halvings) {
    const auto matched = match_crisis_parameters(model, RegimeChain::with_consistent_diagonal(q), state, schedule);
    const double mu = matched.portfolio.sovereigns[model.portfolio.index_of("ITA")].mu[2];
    EXPECT_GT(mu, previous);
    previous = mu;
    q(2, 1) *= 2.0;  // halves the expected stay in the strong recession
  }
}

TEST(Pricer, MatchesDirectGridPricing) {
  const auto model = base_model();
  auto state = representative_state(model);
  state.regime = 1;
  const auto schedule = PaymentSchedule::standard();
  const TranchePricer pricer(model, schedule, 5000, 3);
  const std::vector<double> ks{0.1, 0.3};
  const auto a = pricer.price(state, ks);
  const auto b = price_tranche_grid(state, model, ks, schedule, mc_paths(5000, 4));
  for (std::size_t i = 0; i < ks.size(); ++i)
    EXPECT_NEAR(a[i].esb, b[i].esb, 3.0 * std::hypot(a[i].stderr_value, b[i].stderr_value) + 1e-12);
  EXPECT_NEAR(pricer.expected_terminal_loss(state), expected_terminal_loss(state, model, schedule), 1e-14);
}

TEST(Historical, FrozenInputsGiveFlatSeries) {
  const auto model = base_model();
  const std::vector<MarketState> states(5, representative_state(model));
  const std::vector<double> ks{0.1, 0.3};
  const auto h = historical_spread_trajectory(states, model, ks, 5.0, 5000, 1, 1);
  for (const auto& s : h.series) {
    EXPECT_EQ(s.spreads.size(), 5u);
    EXPECT_EQ(s.volatility, 0.0);
  }
}

TEST(Historical, SingleSwitchShiftsAtTheSwitchDate) {
  const auto model = base_model();
  std::vector<MarketState> states(8, representative_state(model));
  for (std::size_t d = 0; d < states.size(); ++d) {
    states[d].date = static_cast<double>(d) / 52.0;
    if (d >= 5) states[d].regime = 2;
  }
  const std::vector<double> ks{0.05};
  const auto h = historical_spread_trajectory(states, model, ks, 5.0, 5000, 1, 1);
  const auto& s = h.series.front().spreads;
  for (std::size_t d = 1; d < s.size(); ++d) {
    if (d == 5)
      EXPECT_GT(s[d], s[d - 1]);
    else
      EXPECT_EQ(s[d], s[d - 1]);
  }
}

TEST(Historical, IncompleteStatesAreSkipped) {
  const auto model = base_model();
  std::vector<MarketState> states(3, representative_state(model));
  states[1].gamma[0] = std::nan("");
  const std::vector<double> ks{0.3};
  const auto h = historical_spread_trajectory(states, model, ks, 5.0, 2000, 1, 1);
  EXPECT_EQ(h.series.front().spreads.size(), 2u);
  EXPECT_EQ(h.warnings.size(), 1u);
}

TEST(Historical, SpreadVolatilityFallsWithAttachment) {
  const auto model = base_model();
  const auto sim = simulate_hazard_panel(model, 3.0, 14, 1, 5);
  std::vector<MarketState> states;
  for (std::size_t d = 0; d < sim.panel.date_count(); ++d) {
    std::vector<double> g;
    for (std::size_t j = 0; j < model.sovereigns(); ++j) g.push_back(sim.panel.gamma[j][d]);
    auto s = MarketState::initial(sim.regimes[d], g);
    s.date = sim.panel.dates[d];
    states.push_back(s);
  }
  const std::vector<double> ks{0.2, 0.25, 0.3, 0.35, 0.4};
  const auto h = historical_spread_trajectory(states, model, ks, 5.0, 20000, 2, 1);
  for (std::size_t i = 1; i < ks.size(); ++i) EXPECT_LT(h.series[i].volatility, h.series[i - 1].volatility);
}

TEST(VarEs, HandEnumeration) {
  std::vector<double> s(100);
  std::iota(s.begin(), s.end(), 1.0);
  const auto r = var_es(s, 0.95);
  EXPECT_DOUBLE_EQ(r.var, 95.0);
  EXPECT_DOUBLE_EQ(r.es, 98.0);
  const auto c = var_es(std::vector<double>(100, 0.3), 0.99);
  EXPECT_DOUBLE_EQ(c.var, 0.3);
  EXPECT_DOUBLE_EQ(c.es, 0.3);
}

TEST(VarEs, ExpectedShortfallDominatesVar) {
  Rng rng(2);
  std::lognormal_distribution<double> law(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(200 + 37 * t);
    for (double& x : s) x = law(rng) - 1.0;
    for (double a : {0.9, 0.95, 0.99}) {
      const auto r = var_es(s, a);
      EXPECT_GE(r.es, r.var);
    }
  }
  EXPECT_THROW(var_es({}, 0.9), ValidationError);
  EXPECT_THROW(var_es({1.0}, 1.0), ValidationError);
  EXPECT_THROW(var_es({std::nan("")}, 0.5), NumericalError);
}

TEST(RelativeLoss, MeasureTagsEnforced) {
  const auto rn = base_model();
  const auto state = representative_state(rn);
  RelativeLossConfig cfg;
  cfg.outer_paths = 10;
  cfg.inner_paths = 100;
  const std::vector<double> ks{0.3};
  EXPECT_THROW(relative_losses(state, rn, rn, ks, cfg), ValidationError);
  const auto rw = real_world_model();
  EXPECT_THROW(relative_losses(state, rw, rw, ks, cfg), ValidationError);
}

TEST(RelativeLoss, SmallRunIsSaneAndDeterministic) {
  const auto rn = base_model();
  const auto rw = real_world_model();
  const auto state = representative_state(rn);
  RelativeLossConfig cfg;
  cfg.outer_paths = 400;
  cfg.inner_paths = 2000;
  cfg.euler_step = 1e-2;
  cfg.threads = 2;
  cfg.block_size = 64;
  const std::vector<double> ks{0.1, 0.3};
  const auto a = relative_losses(state, rn, rw, ks, cfg);
  cfg.threads = 1;
  const auto b = relative_losses(state, rn, rw, ks, cfg);
  EXPECT_EQ(a.losses, b.losses);
  for (const auto& row : a.losses)
    for (double x : row) {
      EXPECT_TRUE(std::isfinite(x));
      EXPECT_LE(x, 1.0);
    }
  const auto r1 = var_es(a.losses[0], 0.99), r3 = var_es(a.losses[1], 0.99);
  EXPECT_GE(r1.es, r3.es);
}
