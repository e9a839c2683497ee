#pragma once

// Extended Laplace transform of the regime-switching CIR model:
//
//   E[ξ(X_s) exp(−∫_t^s a'γ_θ dθ − u'γ_s) | F_t] = v(t, X_t) exp(β(s−t)'γ_t)
//
// β_j solves the scalar Riccati equation
//   β' = −κ β + ½ σ² β² − a,  β(0) = −u,
// which has a closed form, and v solves the linear system
//   −v'(θ) − diag(μ̄(θ)) v(θ) = Q v(θ),  v(s) = ξ,
//   μ̄_k(θ) = Σ_j e^{ω_j θ} κ_j μ_j(k) β_j(s − θ),
// integrated numerically with fixed-step RK4.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esb/core.hpp"

namespace esb {

// Closed-form solution of the CIR Riccati equation for one sovereign.
// Internally works with b = −β, which solves b' = a − κ b − ½ σ² b².
class RiccatiSolution {
 public:
  RiccatiSolution(double u, double a, double kappa, double sigma) : u_(u), sigma2_(sigma * sigma) {
    require(u >= 0.0 && a >= 0.0, "Riccati loadings must be nonnegative");
    require(kappa > 0.0 && sigma > 0.0, "Riccati needs positive kappa and sigma");
    h_ = std::sqrt(kappa * kappa + 2.0 * sigma2_ * a);
    // Roots of ½σ²b² + κb − a. r_plus via the cancellation-free form.
    r_plus_ = 2.0 * a / (kappa + h_);
    r_minus_ = (-kappa - h_) / sigma2_;
    ratio_ = (u_ - r_plus_) / (u_ - r_minus_);
    trivial_ = (u == 0.0 && a == 0.0);
  }

  // β(τ) ≤ 0.
  double beta(double tau) const {
    if (trivial_) return 0.0;
    if (tau == 0.0) return -u_;
    const double e = std::exp(-h_ * tau);
    const double num = r_plus_ * (u_ - r_minus_) - r_minus_ * (u_ - r_plus_) * e;
    const double den = (u_ - r_minus_) - (u_ - r_plus_) * e;
    return -num / den;
  }

  // ∫_0^τ β(θ) dθ ≤ 0.
  double integral(double tau) const {
    if (trivial_ || tau == 0.0) return 0.0;
    const double e = std::exp(-h_ * tau);
    const double log_term = std::log1p(-ratio_ * e) - std::log1p(-ratio_);
    return -(r_plus_ * tau + 2.0 / sigma2_ * log_term);
  }

 private:
  double u_;
  double sigma2_;
  double h_ = 0.0;
  double r_plus_ = 0.0;
  double r_minus_ = 0.0;
  double ratio_ = 0.0;
  bool trivial_ = false;
};

inline double riccati_beta(double tau, double u, double a, double kappa, double sigma) {
  require(tau >= 0.0, "time to horizon must be nonnegative");
  return RiccatiSolution(u, a, kappa, sigma).beta(tau);
}

inline double riccati_beta_integral(double tau, double u, double a, double kappa, double sigma) {
  require(tau >= 0.0, "time to horizon must be nonnegative");
  return RiccatiSolution(u, a, kappa, sigma).integral(tau);
}

struct TransformRequest {
  double t = 0.0;
  double s = 1.0;
  std::vector<double> a;
  std::vector<double> u;
  Eigen::VectorXd xi;

  void validate(std::size_t sovereigns, std::size_t states) const {
    require(t >= 0.0 && s > t, "transform needs 0 <= t < s");
    require(a.size() == sovereigns && u.size() == sovereigns, "loading vectors must have length J");
    require(static_cast<std::size_t>(xi.size()) == states, "terminal weights must have length K");
    require(xi.allFinite(), "terminal weights must be finite");
    for (double x : a) require(x >= 0.0, "integrated-hazard loadings must be nonnegative");
    for (double x : u) require(x >= 0.0, "terminal loadings must be nonnegative");
  }
};

struct TransformOptions {
  double max_step = 1.0 / 365.0;
  // Re-integrate with half the step and fail if the results differ by more
  // than `check_tolerance`.
  bool self_check = false;
  double check_tolerance = 1e-8;
  double exponent_cap = 700.0;
};

// Per-sovereign data entering μ̄; sovereigns with zero loadings are dropped.
struct TransformTerm {
  RiccatiSolution riccati;
  double kappa;
  double omega;
  std::vector<double> mu;
};

namespace detail {

inline std::vector<TransformTerm> transform_terms(std::span<const SovereignParams> params,
                                                  std::span<const double> a,
                                                  std::span<const double> u) {
  std::vector<TransformTerm> terms;
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (a[j] == 0.0 && u[j] == 0.0) continue;
    const auto& p = params[j];
    terms.push_back({RiccatiSolution(u[j], a[j], p.kappa, p.sigma), p.kappa, p.omega, p.mu});
  }
  return terms;
}

// μ̄ at calendar time θ = s − τ.
inline void mu_bar(const std::vector<TransformTerm>& terms, double s, double tau,
                   Eigen::VectorXd& out) {
  out.setZero();
  for (const auto& term : terms) {
    const double scale =
        term.kappa * term.riccati.beta(tau) * (term.omega == 0.0 ? 1.0 : std::exp(term.omega * (s - tau)));
    for (Eigen::Index k = 0; k < out.size(); ++k) out[k] += scale * term.mu[static_cast<std::size_t>(k)];
  }
}

// Integrates Ψ' = (Q + diag μ̄(s − τ)) Ψ in τ over [tau0, tau1] with RK4.
inline void rk4_advance(const Eigen::MatrixXd& q, const std::vector<TransformTerm>& terms, double s,
                        double tau0, double tau1, double max_step, Eigen::MatrixXd& psi) {
  const double length = tau1 - tau0;
  if (length <= 0.0) return;
  const auto steps = static_cast<long>(std::ceil(length / max_step - 1e-9));
  const double h = length / static_cast<double>(std::max(steps, 1L));
  const Eigen::Index k = q.rows();
  Eigen::VectorXd m0(k), m1(k), m2(k);
  Eigen::MatrixXd k1(k, psi.cols()), k2(k, psi.cols()), k3(k, psi.cols()), k4(k, psi.cols()), y(k, psi.cols());
  const bool dynamic = !terms.empty();
  m0.setZero();
  m1.setZero();
  m2.setZero();
  double tau = tau0;
  if (dynamic) mu_bar(terms, s, tau, m0);
  for (long i = 0; i < std::max(steps, 1L); ++i) {
    if (dynamic) {
      mu_bar(terms, s, tau + 0.5 * h, m1);
      mu_bar(terms, s, tau + h, m2);
    }
    k1.noalias() = q * psi;
    k1 += m0.asDiagonal() * psi;
    y = psi + 0.5 * h * k1;
    k2.noalias() = q * y;
    k2 += m1.asDiagonal() * y;
    y = psi + 0.5 * h * k2;
    k3.noalias() = q * y;
    k3 += m1.asDiagonal() * y;
    y = psi + h * k3;
    k4.noalias() = q * y;
    k4 += m2.asDiagonal() * y;
    psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    tau += h;
    m0 = m2;
  }
  if (!psi.allFinite()) throw NumericalError("transform ODE produced non-finite values");
}

inline Eigen::MatrixXd propagator_with_step(const RegimeChain& chain,
                                            const std::vector<TransformTerm>& terms, double t,
                                            double s, double step) {
  Eigen::MatrixXd psi = Eigen::MatrixXd::Identity(chain.generator().rows(), chain.generator().rows());
  rk4_advance(chain.generator(), terms, s, 0.0, s - t, step, psi);
  return psi;
}

}  // namespace detail

// Φ(t, s) with v(t) = Φ(t, s) ξ.
inline Eigen::MatrixXd propagator(const RegimeChain& chain, std::span<const SovereignParams> params,
                                  std::span<const double> a, std::span<const double> u, double t,
                                  double s, const TransformOptions& options = {}) {
  require(params.size() == a.size() && a.size() == u.size(), "loading vectors must have length J");
  require(t >= 0.0 && s > t, "transform needs 0 <= t < s");
  const auto terms = detail::transform_terms(params, a, u);
  Eigen::MatrixXd phi = detail::propagator_with_step(chain, terms, t, s, options.max_step);
  if (options.self_check) {
    const Eigen::MatrixXd fine = detail::propagator_with_step(chain, terms, t, s, 0.5 * options.max_step);
    const double diff = (fine - phi).cwiseAbs().maxCoeff();
    if (diff > options.check_tolerance)
      throw NumericalError("transform step-halving check failed (difference " + std::to_string(diff) + ")");
  }
  return phi;
}

// Φ(t, s_n) for every horizon s_1 < s_2 < ... . When all loaded sovereigns
// have ω = 0 the system is autonomous in τ = s − θ and one integration pass
// serves all horizons.
inline std::vector<Eigen::MatrixXd> horizon_propagators(const RegimeChain& chain,
                                                        std::span<const SovereignParams> params,
                                                        std::span<const double> a,
                                                        std::span<const double> u, double t,
                                                        std::span<const double> horizons,
                                                        const TransformOptions& options = {}) {
  require(params.size() == a.size() && a.size() == u.size(), "loading vectors must have length J");
  const auto terms = detail::transform_terms(params, a, u);
  bool autonomous = true;
  for (const auto& term : terms) autonomous = autonomous && term.omega == 0.0;
  std::vector<Eigen::MatrixXd> out;
  out.reserve(horizons.size());
  const auto k = chain.generator().rows();
  if (autonomous) {
    Eigen::MatrixXd psi = Eigen::MatrixXd::Identity(k, k);
    double tau = 0.0;
    for (double s : horizons) {
      require(s > t && s - t >= tau, "horizons must be increasing and after t");
      detail::rk4_advance(chain.generator(), terms, 0.0, tau, s - t, options.max_step, psi);
      tau = s - t;
      out.push_back(psi);
    }
  } else {
    for (double s : horizons) {
      require(s > t, "horizons must lie after t");
      out.push_back(detail::propagator_with_step(chain, terms, t, s, options.max_step));
    }
  }
  return out;
}

struct TransformSolution {
  std::vector<double> beta;  // β_j(s − t)
  Eigen::VectorXd v;         // v(t, ·)

  double value(std::size_t regime, std::span<const double> gamma, double cap = 700.0) const {
    double exponent = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) exponent += beta[j] * gamma[j];
    if (!std::isfinite(exponent) || std::abs(exponent) > cap)
      throw NumericalError("transform exponent outside the representable range");
    return v[static_cast<Eigen::Index>(regime)] * std::exp(exponent);
  }
};

inline TransformSolution solve_transform(const TransformRequest& request, const RegimeChain& chain,
                                         std::span<const SovereignParams> params,
                                         const TransformOptions& options = {}) {
  request.validate(params.size(), chain.states());
  TransformSolution out;
  out.beta.resize(params.size());
  for (std::size_t j = 0; j < params.size(); ++j)
    out.beta[j] = riccati_beta(request.s - request.t, request.u[j], request.a[j], params[j].kappa,
                               params[j].sigma);
  out.v = propagator(chain, params, request.a, request.u, request.t, request.s, options) * request.xi;
  return out;
}

// v(θ, ·) on a grid from t to s (ascending). The last entry equals ξ exactly.
struct VTrajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> values;
};

inline VTrajectory solve_v(const TransformRequest& request, const RegimeChain& chain,
                           std::span<const SovereignParams> params,
                           const TransformOptions& options = {}) {
  request.validate(params.size(), chain.states());
  const auto terms = detail::transform_terms(params, request.a, request.u);
  const double length = request.s - request.t;
  const auto steps = static_cast<long>(std::ceil(length / options.max_step - 1e-9));
  const double h = length / static_cast<double>(std::max(steps, 1L));
  VTrajectory out;
  Eigen::MatrixXd v = request.xi;
  out.times.push_back(request.s);
  out.values.push_back(request.xi);
  for (long i = 0; i < std::max(steps, 1L); ++i) {
    detail::rk4_advance(chain.generator(), terms, request.s, i * h, (i + 1) * h, h, v);
    out.times.push_back(request.s - (i + 1) * h);
    out.values.push_back(v.col(0));
  }
  out.times.back() = request.t;
  std::reverse(out.times.begin(), out.times.end());
  std::reverse(out.values.begin(), out.values.end());
  if (options.self_check) {
    const Eigen::VectorXd coarse = out.values.front();
    const Eigen::VectorXd fine =
        detail::propagator_with_step(chain, terms, request.t, request.s, 0.5 * h) * request.xi;
    if ((fine - coarse).cwiseAbs().maxCoeff() > options.check_tolerance)
      throw NumericalError("transform step-halving check failed");
  }
  return out;
}

inline double laplace_transform(const MarketState& state, const TransformRequest& request,
                                const CreditModel& model, const TransformOptions& options = {}) {
  state.validate(model.sovereigns(), model.states());
  const auto solution = solve_transform(request, model.chain, model.portfolio.sovereigns, options);
  return solution.value(state.regime, state.gamma, options.exponent_cap);
}

}  // namespace esb
