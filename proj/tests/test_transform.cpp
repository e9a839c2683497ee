#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "esb/core.hpp"
#include "esb/transform.hpp"

using namespace esb;

namespace {

// Independent RK4 on β' = −κβ + ½σ²β² − a, β(0) = −u, plus the running integral of β.
std::pair<double, double> numeric_beta(double tau, double u, double a, double kappa, double sigma, double h = 1e-4) {
  auto f = [&](double b) { return -kappa * b + 0.5 * sigma * sigma * b * b - a; };
  const long n = std::lround(tau / h);
  h = tau / static_cast<double>(n);
  double b = -u, integral = 0.0;
  for (long i = 0; i < n; ++i) {
    const double k1 = f(b), k2 = f(b + 0.5 * h * k1), k3 = f(b + 0.5 * h * k2), k4 = f(b + h * k3);
    // Simpson over the step using the RK4 stage values for β.
    const double mid = b + 0.5 * h * (k1 + k2) * 0.5;
    const double next = b + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    integral += h / 6.0 * (b + 4.0 * mid + next);
    b = next;
  }
  return {b, integral};
}

// Textbook CIR zero-coupon bond E[exp(−∫γ)] = A(τ) exp(−B(τ) γ0).
double cir_bond(double tau, double gamma0, double kappa, double mu, double sigma) {
  const double h = std::sqrt(kappa * kappa + 2.0 * sigma * sigma);
  const double e = std::exp(h * tau) - 1.0;
  const double den = (kappa + h) * e + 2.0 * h;
  const double b = 2.0 * e / den;
  const double a = std::pow(2.0 * h * std::exp(0.5 * (kappa + h) * tau) / den, 2.0 * kappa * mu / (sigma * sigma));
  return a * std::exp(-b * gamma0);
}

RegimeChain table_chain() {
  Eigen::MatrixXd q(3, 3);
  q << -0.1421, 0.1421, 0.0, 0.5843, -1.1685, 0.5843, 0.0, 0.9630, -0.9630;
  return RegimeChain::with_consistent_diagonal(q);
}

}  // namespace

TEST(Riccati, InitialValueIsMinusU) {
  EXPECT_EQ(riccati_beta(0.0, 0.7, 1.0, 0.3, 0.2), -0.7);
  EXPECT_EQ(riccati_beta(0.0, 0.0, 0.0, 0.3, 0.2), 0.0);
  EXPECT_EQ(riccati_beta_integral(0.0, 0.7, 1.0, 0.3, 0.2), 0.0);
}

TEST(Riccati, NonPositiveProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double u = 3.0 * unit(rng), a = 2.0 * unit(rng), k = 0.05 + 5.0 * unit(rng), s = 0.01 + unit(rng);
    const double tau = 30.0 * unit(rng);
    EXPECT_LE(riccati_beta(tau, u, a, k, s), 0.0);
    EXPECT_LE(riccati_beta_integral(tau, u, a, k, s), 0.0);
  }
}

TEST(Riccati, BernoulliCaseMatchesNumericOde) {
  for (double tau : {1.0, 5.0}) {
    const auto [b, integral] = numeric_beta(tau, 0.5, 0.0, 0.4, 0.3);
    EXPECT_NEAR(riccati_beta(tau, 0.5, 0.0, 0.4, 0.3), b, 1e-10);
    EXPECT_NEAR(riccati_beta_integral(tau, 0.5, 0.0, 0.4, 0.3), integral, 1e-10);
  }
}

TEST(Riccati, GenericCaseMatchesNumericOde) {
  const auto [b, integral] = numeric_beta(2.0, 0.5, 1.0, 0.3, 0.2);
  EXPECT_NEAR(riccati_beta(2.0, 0.5, 1.0, 0.3, 0.2), b, 1e-10);
  EXPECT_NEAR(riccati_beta_integral(2.0, 0.5, 1.0, 0.3, 0.2), integral, 1e-10);
}

TEST(Riccati, RandomParametersMatchNumericOde) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const double u = unit(rng), a = unit(rng), k = 0.1 + 3.0 * unit(rng), s = 0.05 + 0.3 * unit(rng);
    const auto [b, integral] = numeric_beta(3.0, u, a, k, s, 5e-4);
    EXPECT_NEAR(riccati_beta(3.0, u, a, k, s), b, 1e-10);
    EXPECT_NEAR(riccati_beta_integral(3.0, u, a, k, s), integral, 1e-9);
  }
}

TEST(Riccati, RejectsNegativeLoadings) {
  EXPECT_THROW(riccati_beta(1.0, -0.1, 0.0, 0.3, 0.2), ValidationError);
  EXPECT_THROW(riccati_beta(1.0, 0.0, -1.0, 0.3, 0.2), ValidationError);
  EXPECT_THROW(riccati_beta(-1.0, 0.0, 1.0, 0.3, 0.2), ValidationError);
}

TEST(Transform, SingleStateMatchesCirBond) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const RegimeChain chain(Eigen::MatrixXd::Zero(1, 1));
  for (int i = 0; i < 20; ++i) {
    SovereignParams p{"X", 0.1 + 3.0 * unit(rng), {0.001 + 0.1 * unit(rng)}, 0.02 + 0.3 * unit(rng), 0.0};
    const double gamma0 = 0.2 * unit(rng);
    const double tau = 0.5 + 9.5 * unit(rng);
    TransformRequest req{0.0, tau, {1.0}, {0.0}, Eigen::VectorXd::Ones(1)};
    const std::vector<SovereignParams> ps{p};
    const auto sol = solve_transform(req, chain, ps);
    const std::vector<double> g{gamma0};
    EXPECT_NEAR(sol.value(0, g), cir_bond(tau, gamma0, p.kappa, p.mu[0], p.sigma), 1e-8) << "set " << i;
  }
}

TEST(Transform, TerminalWeightsReturnedAtHorizon) {
  const auto chain = table_chain();
  const std::vector<SovereignParams> ps{{"X", 0.5, {0.01, 0.02, 0.05}, 0.1, 0.0}};
  Eigen::VectorXd xi(3);
  xi << 1.0, 2.0, 3.0;
  TransformRequest req{0.0, 1.0, {1.0}, {0.0}, xi};
  const auto traj = solve_v(req, chain, ps);
  EXPECT_TRUE(traj.values.back().isApprox(xi, 0.0));
  EXPECT_DOUBLE_EQ(traj.times.back(), 1.0);
  EXPECT_DOUBLE_EQ(traj.times.front(), 0.0);
  EXPECT_TRUE(traj.values.front().isApprox(solve_transform(req, chain, ps).v, 1e-13));
}

TEST(Transform, ZeroLoadingsGiveTransitionMatrix) {
  const auto chain = table_chain();
  const std::vector<SovereignParams> ps{{"X", 0.5, {0.01, 0.02, 0.05}, 0.1, 0.0}};
  const std::vector<double> zero{0.0};
  const auto phi = propagator(chain, ps, zero, zero, 0.0, 3.0);
  EXPECT_TRUE(phi.isApprox(chain.transition_matrix(3.0), 1e-12));
}

TEST(Transform, ThreeStateStepHalvingConverges) {
  const auto chain = table_chain();
  const std::vector<SovereignParams> ps{{"ITA", 0.1215, {0.0710, 0.0727, 0.4099}, 0.2113, 0.0},
                                        {"DEU", 0.1076, {0.0027, 0.0001, 0.0338}, 0.0872, 0.0}};
  const std::vector<double> a{1.0, 1.0}, u{0.0, 0.5};
  TransformOptions coarse;
  TransformOptions fine;
  fine.max_step = coarse.max_step / 2.0;
  const auto p1 = propagator(chain, ps, a, u, 0.0, 5.0, coarse);
  const auto p2 = propagator(chain, ps, a, u, 0.0, 5.0, fine);
  EXPECT_LT((p1 - p2).cwiseAbs().maxCoeff(), 1e-8);
  TransformOptions checked;
  checked.self_check = true;
  EXPECT_NO_THROW(propagator(chain, ps, a, u, 0.0, 5.0, checked));
}

TEST(Transform, HorizonSweepMatchesSeparateSolves) {
  const auto chain = table_chain();
  std::vector<SovereignParams> ps{{"A", 0.3, {0.01, 0.02, 0.05}, 0.1, 0.0}};
  const std::vector<double> a{1.0}, u{0.0};
  const std::vector<double> horizons{0.25, 1.0, 2.5, 5.0};
  for (double omega : {0.0, 0.05}) {
    ps[0].omega = omega;
    const auto sweep = horizon_propagators(chain, ps, a, u, 0.0, horizons);
    for (std::size_t i = 0; i < horizons.size(); ++i)
      EXPECT_TRUE(sweep[i].isApprox(propagator(chain, ps, a, u, 0.0, horizons[i]), 1e-10));
  }
}

TEST(Transform, PositiveTrendLowersSurvival) {
  const auto chain = table_chain();
  std::vector<SovereignParams> ps{{"A", 0.3, {0.01, 0.02, 0.05}, 0.1, 0.0}};
  const std::vector<double> a{1.0}, u{0.0};
  const Eigen::VectorXd flat = propagator(chain, ps, a, u, 0.0, 5.0).rowwise().sum();
  ps[0].omega = 0.1;
  const Eigen::VectorXd trended = propagator(chain, ps, a, u, 0.0, 5.0).rowwise().sum();
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_LT(trended[k], flat[k]);
}

TEST(Transform, RequestValidation) {
  const auto chain = table_chain();
  const std::vector<SovereignParams> ps{{"A", 0.3, {0.01, 0.02, 0.05}, 0.1, 0.0}};
  EXPECT_THROW(solve_transform(TransformRequest{1.0, 1.0, {1.0}, {0.0}, Eigen::VectorXd::Ones(3)}, chain, ps),
               ValidationError);
  EXPECT_THROW(solve_transform(TransformRequest{0.0, 1.0, {-1.0}, {0.0}, Eigen::VectorXd::Ones(3)}, chain, ps),
               ValidationError);
  EXPECT_THROW(solve_transform(TransformRequest{0.0, 1.0, {1.0}, {0.0}, Eigen::VectorXd::Ones(2)}, chain, ps),
               ValidationError);
}

TEST(Transform, ExponentCapRaisesNumericalError) {
  TransformSolution sol{{-1.0}, Eigen::VectorXd::Ones(1)};
  const std::vector<double> g{1e6};
  EXPECT_THROW(sol.value(0, g), NumericalError);
}
