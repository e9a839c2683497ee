#pragma once

// Domain types shared by every part of the library: the regime chain, the
// per-sovereign hazard dynamics, the beta LGD law, the portfolio, payment
// schedules and the stylized senior/junior tranche payoffs.
//
// Regimes are 0-based in the C++ API (state 0 = expansion). Files and the CLI
// use 1-based labels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <boost/math/special_functions/beta.hpp>

#include "esb/errors.hpp"

namespace esb {

enum class Measure { risk_neutral, real_world };

inline std::string to_string(Measure m) {
  return m == Measure::risk_neutral ? "risk-neutral" : "real-world";
}

inline Measure measure_from_string(const std::string& s) {
  if (s == "risk-neutral") return Measure::risk_neutral;
  if (s == "real-world") return Measure::real_world;
  throw ValidationError("unknown measure tag '" + s + "'");
}

// Finite-state Markov chain described by its generator matrix.
class RegimeChain {
 public:
  static constexpr double kRowSumTolerance = 1e-12;

  RegimeChain() : RegimeChain(Eigen::MatrixXd::Zero(1, 1)) {}

  explicit RegimeChain(Eigen::MatrixXd generator, std::vector<std::string> labels = {})
      : q_(std::move(generator)), labels_(std::move(labels)) {
    const auto k = q_.rows();
    require(k >= 1 && q_.cols() == k, "generator must be a non-empty square matrix");
    require(q_.allFinite(), "generator has non-finite entries");
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j)
        if (i != j) require(q_(i, j) >= 0.0, "generator has a negative off-diagonal entry");
      require(std::abs(q_.row(i).sum()) <= kRowSumTolerance,
              "generator row " + std::to_string(i + 1) + " does not sum to zero");
    }
    if (labels_.empty())
      for (Eigen::Index i = 0; i < k; ++i) labels_.push_back("state" + std::to_string(i + 1));
    require(labels_.size() == static_cast<std::size_t>(k), "one label per state required");
  }

  // Published generators are rounded to four decimals, so their rows do not
  // sum to zero exactly. This resets each diagonal entry to minus the sum of
  // the off-diagonal rates of its row.
  static RegimeChain with_consistent_diagonal(Eigen::MatrixXd generator,
                                              std::vector<std::string> labels = {}) {
    for (Eigen::Index i = 0; i < generator.rows(); ++i) {
      double off = 0.0;
      for (Eigen::Index j = 0; j < generator.cols(); ++j)
        if (i != j) off += generator(i, j);
      generator(i, i) = -off;
    }
    return RegimeChain(std::move(generator), std::move(labels));
  }

  std::size_t states() const { return static_cast<std::size_t>(q_.rows()); }
  const Eigen::MatrixXd& generator() const { return q_; }
  double rate(std::size_t from, std::size_t to) const {
    return q_(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to));
  }
  double exit_rate(std::size_t k) const { return -rate(k, k); }
  const std::vector<std::string>& labels() const { return labels_; }

  Eigen::MatrixXd transition_matrix(double dt) const {
    require(dt >= 0.0, "transition horizon must be nonnegative");
    return (q_ * dt).exp();
  }

  void check_state(std::size_t k) const {
    require(k < states(), "regime index " + std::to_string(k) + " out of range");
  }

 private:
  Eigen::MatrixXd q_;
  std::vector<std::string> labels_;
};

// CIR-type hazard dynamics with a regime-dependent, exponentially trending
// mean-reversion level:
//   dγ = κ (μ(X_t) e^{ω t} − γ) dt + σ √γ dW.
struct SovereignParams {
  std::string id;
  double kappa = 0.1;
  std::vector<double> mu;
  double sigma = 0.1;
  double omega = 0.0;
  Measure measure = Measure::risk_neutral;

  double level(std::size_t state, double t) const { return mu[state] * std::exp(omega * t); }

  void validate(std::size_t states) const {
    require(std::isfinite(kappa) && kappa > 0.0, id + ": kappa must be positive");
    require(std::isfinite(sigma) && sigma > 0.0, id + ": sigma must be positive");
    require(std::isfinite(omega) && omega >= 0.0, id + ": omega must be nonnegative");
    require(mu.size() == states, id + ": one mean-reversion level per regime required");
    for (double m : mu) require(std::isfinite(m) && m > 0.0, id + ": mu must be positive");
  }
};

// Loss given default: Beta(m ν, (1 − m) ν) with regime-dependent mean m.
// A mean of exactly one, or an infinite concentration, is a point mass.
struct LgdSpec {
  std::vector<double> mean;
  double concentration = 1.5;

  void validate(std::size_t states) const {
    require(mean.size() == states, "LGD needs one mean per regime");
    require(concentration > 0.0, "LGD concentration must be positive");
    for (double m : mean) require(m > 0.0 && m <= 1.0, "LGD mean must lie in (0, 1]");
  }

  bool degenerate(std::size_t k) const { return mean[k] >= 1.0 || std::isinf(concentration); }
  double shape_a(std::size_t k) const { return mean[k] * concentration; }
  double shape_b(std::size_t k) const { return (1.0 - mean[k]) * concentration; }

  double variance(std::size_t k) const {
    if (degenerate(k)) return 0.0;
    return mean[k] * (1.0 - mean[k]) / (concentration + 1.0);
  }

  // Inverse CDF; `u` in (0, 1).
  double quantile(std::size_t k, double u) const {
    if (degenerate(k)) return mean[k];
    return boost::math::ibeta_inv(shape_a(k), shape_b(k), u);
  }

  template <class Rng>
  double sample(std::size_t k, Rng& rng) const {
    require(k < mean.size(), "LGD regime index out of range");
    if (degenerate(k)) return mean[k];
    std::gamma_distribution<double> ga(shape_a(k), 1.0), gb(shape_b(k), 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
  }

  // E[(δ − strike)^+] for the regime-k law.
  double call_value(std::size_t k, double strike) const {
    if (strike <= 0.0) return mean[k] - strike;
    if (strike >= 1.0) return 0.0;
    if (degenerate(k)) return std::max(mean[k] - strike, 0.0);
    const double a = shape_a(k), b = shape_b(k);
    // E[δ 1{δ>s}] = m (1 − I_s(a+1, b))
    return mean[k] * boost::math::ibetac(a + 1.0, b, strike) -
           strike * boost::math::ibetac(a, b, strike);
  }
};

struct Portfolio {
  std::vector<SovereignParams> sovereigns;
  std::vector<double> weights;
  std::vector<LgdSpec> lgd;

  std::size_t size() const { return sovereigns.size(); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t j = 0; j < sovereigns.size(); ++j)
      if (sovereigns[j].id == id) return j;
    throw ValidationError("unknown sovereign '" + id + "'");
  }

  void validate(std::size_t states) const {
    require(!sovereigns.empty(), "portfolio is empty");
    require(weights.size() == sovereigns.size() && lgd.size() == sovereigns.size(),
            "portfolio weights/LGD/sovereign counts differ");
    double total = 0.0;
    for (double w : weights) {
      require(w > 0.0, "portfolio weights must be positive");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-12, "portfolio weights must sum to one");
    for (std::size_t j = 0; j < size(); ++j) {
      sovereigns[j].validate(states);
      lgd[j].validate(states);
    }
  }
};

// Payment grid 0 = t_0 < t_1 < ... < t_N = T, in year fractions.
class PaymentSchedule {
 public:
  explicit PaymentSchedule(std::vector<double> times) : t_(std::move(times)) {
    require(t_.size() >= 2, "payment schedule needs at least one period");
    for (std::size_t i = 1; i < t_.size(); ++i)
      require(t_[i] > t_[i - 1], "payment dates must be strictly increasing");
  }

  static PaymentSchedule regular(double maturity, double frequency = 4.0, double start = 0.0) {
    require(maturity > 0.0 && frequency > 0.0, "invalid regular schedule");
    const auto n = static_cast<std::size_t>(std::llround(maturity * frequency));
    require(n >= 1, "maturity shorter than one period");
    std::vector<double> t(n + 1);
    for (std::size_t i = 0; i <= n; ++i) t[i] = start + maturity * static_cast<double>(i) / n;
    return PaymentSchedule(std::move(t));
  }

  // Quarterly over five years.
  static PaymentSchedule standard() { return regular(5.0); }

  std::size_t periods() const { return t_.size() - 1; }
  double time(std::size_t n) const { return t_[n]; }
  double start() const { return t_.front(); }
  double maturity() const { return t_.back(); }
  double delta(std::size_t n) const { return t_[n] - t_[n - 1]; }
  const std::vector<double>& times() const { return t_; }

  // Index n of the period (t_{n-1}, t_n] that contains `t`.
  std::size_t period_containing(double t) const {
    auto it = std::upper_bound(t_.begin() + 1, t_.end(), t,
                               [](double v, double ti) { return v <= ti; });
    return static_cast<std::size_t>(it - t_.begin());
  }

 private:
  std::vector<double> t_;
};

struct DiscountCurve {
  double rate = 0.0;

  double discount(double t, double s) const { return std::exp(-rate * (s - t)); }
};

struct MarketState {
  double date = 0.0;
  std::size_t regime = 0;
  std::vector<double> gamma;
  std::vector<double> loss;

  static MarketState initial(std::size_t regime, std::vector<double> gamma) {
    MarketState s;
    s.regime = regime;
    s.loss.assign(gamma.size(), 0.0);
    s.gamma = std::move(gamma);
    return s;
  }

  bool defaulted(std::size_t j) const { return loss[j] > 0.0; }

  void validate(std::size_t sovereigns, std::size_t states) const {
    require(gamma.size() == sovereigns && loss.size() == sovereigns,
            "market state dimension does not match the portfolio");
    require(regime < states, "market state regime out of range");
    for (double g : gamma) require(std::isfinite(g) && g >= 0.0, "hazard rates must be >= 0");
    for (double l : loss) require(l >= 0.0 && l <= 1.0, "losses must lie in [0, 1]");
  }
};

struct TrancheSpec {
  double attachment = 0.3;
  double maturity = 5.0;
  bool normalized = false;

  void validate() const {
    require(attachment > 0.0 && attachment < 1.0, "attachment point must lie in (0, 1)");
    require(maturity > 0.0, "tranche maturity must be positive");
  }
};

// Everything needed to price under one measure.
struct CreditModel {
  RegimeChain chain;
  Portfolio portfolio;
  DiscountCurve curve;

  std::size_t states() const { return chain.states(); }
  std::size_t sovereigns() const { return portfolio.size(); }

  void validate() const { portfolio.validate(chain.states()); }
};

// Σ_j w_j L_j.
inline double portfolio_loss(std::span<const double> loss, std::span<const double> weights) {
  require(loss.size() == weights.size(), "loss and weight vectors differ in length");
  return std::inner_product(loss.begin(), loss.end(), weights.begin(), 0.0);
}

// min(1 − L, 1 − κ) = (1 − L) − (κ − L)^+
inline double esb_payoff(double loss, double attachment) {
  return (1.0 - loss) - std::max(attachment - loss, 0.0);
}

// (κ − L)^+
inline double ejb_payoff(double loss, double attachment) {
  return std::max(attachment - loss, 0.0);
}

inline double esb_payoff(double loss, const TrancheSpec& tranche) {
  const double v = esb_payoff(loss, tranche.attachment);
  return tranche.normalized ? v / (1.0 - tranche.attachment) : v;
}

template <class Rng>
double lgd_sample(const LgdSpec& spec, std::size_t state, Rng& rng) {
  return spec.sample(state, rng);
}

}  // namespace esb
