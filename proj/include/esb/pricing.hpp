#pragma once

// Semi-analytic pricing of survival claims, CDS legs and expected portfolio
// losses. Losses from a default in (t_{n−1}, t_n] are booked at t_n with the
// regime prevailing at t_n.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "esb/core.hpp"
#include "esb/transform.hpp"

namespace esb {

// Price of 1_{τ^j > s} f(X_s), discounted to the state date.
inline double survival_claim_price(const MarketState& state, std::size_t j, double s,
                                   const Eigen::VectorXd& f, const CreditModel& model,
                                   const TransformOptions& options = {}) {
  state.validate(model.sovereigns(), model.states());
  require(j < model.sovereigns(), "sovereign index out of range");
  if (state.defaulted(j)) return 0.0;
  TransformRequest request;
  request.t = state.date;
  request.s = s;
  request.a.assign(model.sovereigns(), 0.0);
  request.a[j] = 1.0;
  request.u.assign(model.sovereigns(), 0.0);
  request.xi = f;
  return model.curve.discount(state.date, s) * laplace_transform(state, request, model, options);
}

// Precomputed single-name quantities on a payment grid t_0 < ... < t_N, valued
// at t_0. With β_n = β(t_n − t_0) and Φ_n = Φ(t_0, t_n):
//   P(τ > t_n)                       = (Φ_n 1)(X) e^{β_n γ}
//   E[1{τ > t_n} g(X_{t_n})]         = (Φ_n g)(X) e^{β_n γ}
//   E[1{τ > t_{n−1}} g(X_{t_n})]     = (Φ_{n−1} e^{QΔ_n} g)(X) e^{β_{n−1} γ}
// so bucketed default expectations E[1{τ ∈ (t_{n−1}, t_n]} g(X_{t_n})] are the
// difference of the last two. `g` is the mean LGD for CDS pricing.
class CdsKernel {
 public:
  CdsKernel(const RegimeChain& chain, const SovereignParams& params, const Eigen::VectorXd& payoff,
            std::span<const double> times, double rate = 0.0, const TransformOptions& options = {})
      : times_(times.begin(), times.end()), rate_(rate) {
    require(times_.size() >= 2, "kernel grid needs at least one period");
    require(static_cast<std::size_t>(payoff.size()) == chain.states(), "payoff must have length K");
    const std::size_t n = times_.size() - 1;
    const SovereignParams p[1] = {params};
    const double a[1] = {1.0}, u[1] = {0.0};
    const auto phis = horizon_propagators(chain, p, a, u, times_[0],
                                          std::span<const double>(times_).subspan(1), options);
    const RiccatiSolution riccati(0.0, 1.0, params.kappa, params.sigma);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(payoff.size());
    beta_.assign(n + 1, 0.0);
    survival_.assign(n + 1, ones);
    alive_before_.assign(n + 1, Eigen::VectorXd::Zero(payoff.size()));
    alive_after_.assign(n + 1, Eigen::VectorXd::Zero(payoff.size()));
    for (std::size_t i = 1; i <= n; ++i) {
      beta_[i] = riccati.beta(times_[i] - times_[0]);
      survival_[i] = phis[i - 1] * ones;
      const Eigen::VectorXd carried = chain.transition_matrix(times_[i] - times_[i - 1]) * payoff;
      alive_before_[i] = i == 1 ? carried : Eigen::VectorXd(phis[i - 2] * carried);
      alive_after_[i] = phis[i - 1] * payoff;
    }
  }

  // Σ_i w_i kernel_i for kernels on the same grid that differ only in the
  // mean-reversion levels; used to interpolate across level scalings.
  static CdsKernel combine(std::span<const CdsKernel* const> kernels, std::span<const double> weights) {
    require(!kernels.empty() && kernels.size() == weights.size(), "kernel combination needs matching weights");
    CdsKernel out = *kernels.front();
    const std::size_t n = out.periods();
    for (std::size_t i = 1; i <= n; ++i) {
      out.survival_[i].setZero();
      out.alive_before_[i].setZero();
      out.alive_after_[i].setZero();
      for (std::size_t c = 0; c < kernels.size(); ++c) {
        out.survival_[i] += weights[c] * kernels[c]->survival_[i];
        out.alive_before_[i] += weights[c] * kernels[c]->alive_before_[i];
        out.alive_after_[i] += weights[c] * kernels[c]->alive_after_[i];
      }
    }
    return out;
  }

  std::size_t periods() const { return times_.size() - 1; }
  const std::vector<double>& times() const { return times_; }
  double beta(std::size_t n) const { return beta_[n]; }

  double discount(std::size_t n) const { return std::exp(-rate_ * (times_[n] - times_[0])); }

  double survival(std::size_t n, std::size_t regime, double gamma) const {
    return survival_[n][static_cast<Eigen::Index>(regime)] * std::exp(beta_[n] * gamma);
  }

  // E[1{τ ∈ (t_{n−1}, t_n]} g(X_{t_n})], undiscounted.
  double default_bucket(std::size_t n, std::size_t regime, double gamma) const {
    const auto k = static_cast<Eigen::Index>(regime);
    const double before = alive_before_[n][k] * std::exp(beta_[n - 1] * gamma);
    const double after = alive_after_[n][k] * std::exp(beta_[n] * gamma);
    return std::max(before - after, 0.0);
  }

  // Σ_{n ≤ last} Δt_n B(t_0, t_n)^{-1} P(τ > t_n): premium leg per unit spread.
  double annuity(std::size_t last, std::size_t regime, double gamma) const {
    double sum = 0.0;
    for (std::size_t n = 1; n <= last; ++n)
      sum += (times_[n] - times_[n - 1]) * discount(n) * survival(n, regime, gamma);
    return sum;
  }

  double default_leg(std::size_t last, std::size_t regime, double gamma) const {
    double sum = 0.0;
    for (std::size_t n = 1; n <= last; ++n) sum += discount(n) * default_bucket(n, regime, gamma);
    return sum;
  }

  double expected_loss(std::size_t last, std::size_t regime, double gamma) const {
    double sum = 0.0;
    for (std::size_t n = 1; n <= last; ++n) sum += default_bucket(n, regime, gamma);
    return sum;
  }

  double fair_spread(std::size_t last, std::size_t regime, double gamma) const {
    const double ann = annuity(last, regime, gamma);
    if (!(ann > 1e-300)) throw NumericalError("CDS annuity is zero");
    return default_leg(last, regime, gamma) / ann;
  }

  // Number of periods up to `maturity` (relative to t_0); the grid must hit it.
  std::size_t periods_until(double maturity) const {
    for (std::size_t n = 1; n < times_.size(); ++n)
      if (std::abs(times_[n] - times_[0] - maturity) < 1e-9) return n;
    throw ValidationError("maturity is not on the kernel grid");
  }

 private:
  std::vector<double> times_;
  double rate_;
  std::vector<double> beta_;
  std::vector<Eigen::VectorXd> survival_;
  std::vector<Eigen::VectorXd> alive_before_;
  std::vector<Eigen::VectorXd> alive_after_;
};

inline Eigen::VectorXd lgd_mean_vector(const LgdSpec& lgd) {
  return Eigen::Map<const Eigen::VectorXd>(lgd.mean.data(), static_cast<Eigen::Index>(lgd.mean.size()));
}

// Grid used by the pricing helpers: the schedule itself, valued at its first date.
inline CdsKernel make_cds_kernel(const CreditModel& model, std::size_t j, const PaymentSchedule& schedule,
                                 const TransformOptions& options = {}) {
  return CdsKernel(model.chain, model.portfolio.sovereigns[j], lgd_mean_vector(model.portfolio.lgd[j]),
                   schedule.times(), model.curve.rate, options);
}

struct CdsLegs {
  double premium = 0.0;
  double protection = 0.0;
};

inline void check_schedule_start(const MarketState& state, const PaymentSchedule& schedule) {
  require(std::abs(schedule.start() - state.date) < 1e-12,
          "schedule must start at the valuation date");
}

inline CdsLegs cds_legs(const MarketState& state, std::size_t j, const PaymentSchedule& schedule,
                        double spread, const CreditModel& model, const TransformOptions& options = {}) {
  state.validate(model.sovereigns(), model.states());
  check_schedule_start(state, schedule);
  require(spread >= 0.0, "CDS spread must be nonnegative");
  if (state.defaulted(j)) return {};
  const auto kernel = make_cds_kernel(model, j, schedule, options);
  const double gamma = state.gamma[j];
  return {spread * kernel.annuity(kernel.periods(), state.regime, gamma),
          kernel.default_leg(kernel.periods(), state.regime, gamma)};
}

inline double fair_cds_spread(const MarketState& state, std::size_t j, const PaymentSchedule& schedule,
                              const CreditModel& model, const TransformOptions& options = {}) {
  state.validate(model.sovereigns(), model.states());
  check_schedule_start(state, schedule);
  if (state.defaulted(j)) throw NumericalError("CDS annuity is zero for a defaulted sovereign");
  const auto kernel = make_cds_kernel(model, j, schedule, options);
  return kernel.fair_spread(kernel.periods(), state.regime, state.gamma[j]);
}

// Σ_j w_j Σ_n B^{-1} E[1{τ^j ∈ (t_{n−1}, t_n]} δ^j(X_{t_n})]. Losses already
// realized in `state` are counted undiscounted.
inline double expected_discounted_portfolio_loss(const MarketState& state, const CreditModel& model,
                                                 const PaymentSchedule& schedule,
                                                 const TransformOptions& options = {}) {
  state.validate(model.sovereigns(), model.states());
  check_schedule_start(state, schedule);
  double total = 0.0;
  for (std::size_t j = 0; j < model.sovereigns(); ++j) {
    const double w = model.portfolio.weights[j];
    if (state.defaulted(j)) {
      total += w * state.loss[j];
      continue;
    }
    const auto kernel = make_cds_kernel(model, j, schedule, options);
    total += w * kernel.default_leg(kernel.periods(), state.regime, state.gamma[j]);
  }
  return total;
}

// Per-sovereign E[L_T^j], undiscounted.
inline std::vector<double> expected_terminal_losses(const MarketState& state, const CreditModel& model,
                                                    const PaymentSchedule& schedule,
                                                    const TransformOptions& options = {}) {
  state.validate(model.sovereigns(), model.states());
  check_schedule_start(state, schedule);
  std::vector<double> out(model.sovereigns());
  for (std::size_t j = 0; j < model.sovereigns(); ++j) {
    if (state.defaulted(j)) {
      out[j] = state.loss[j];
      continue;
    }
    const auto kernel = make_cds_kernel(model, j, schedule, options);
    out[j] = kernel.expected_loss(kernel.periods(), state.regime, state.gamma[j]);
  }
  return out;
}

// E[L_T], undiscounted.
inline double expected_terminal_loss(const MarketState& state, const CreditModel& model,
                                     const PaymentSchedule& schedule, const TransformOptions& options = {}) {
  const auto losses = expected_terminal_losses(state, model, schedule, options);
  return portfolio_loss(losses, model.portfolio.weights);
}

}  // namespace esb
