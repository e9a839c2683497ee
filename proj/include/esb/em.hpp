#pragma once

// Real-world dynamics from hazard trajectories: hidden regime filtering and
// smoothing, and EM updates for the generator and the mean-reversion levels.
// Observation densities come from the one-step Euler transition of the hazard
// SDE (Gaussian, mean γ + κ(μ(X) − γ)Δ, variance σ²γΔ), with X the regime at
// the end of the step. ω is fixed at zero.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "esb/calibration.hpp"
#include "esb/core.hpp"
#include "esb/parallel.hpp"

namespace esb {

// Hazard trajectories of several sovereigns on a common uniform grid.
struct HazardPanel {
  std::vector<std::string> sovereigns;
  std::vector<double> dates;
  std::vector<std::vector<double>> gamma;  // [j][date]

  std::size_t date_count() const { return dates.size(); }
  std::size_t sovereign_count() const { return sovereigns.size(); }

  double step() const { return (dates.back() - dates.front()) / static_cast<double>(dates.size() - 1); }

  void validate() const {
    require(dates.size() >= 3, "hazard panel needs at least three dates");
    require(!sovereigns.empty() && gamma.size() == sovereigns.size(), "hazard panel has no sovereigns");
    const double h = step();
    require(h > 0.0, "hazard panel dates must increase");
    for (std::size_t m = 1; m < dates.size(); ++m)
      require(std::abs(dates[m] - dates[m - 1] - h) <= 1e-6 * h + 1e-9, "hazard panel grid must be uniform");
    for (const auto& g : gamma) {
      require(g.size() == dates.size(), "hazard trajectory length differs from the date count");
      for (double v : g) require(std::isfinite(v) && v >= 0.0, "hazard values must be finite and nonnegative");
    }
  }
};

struct EmParameters {
  Eigen::MatrixXd generator;
  Eigen::VectorXd initial;  // law of X at the first date
  std::vector<std::vector<double>> mu;  // [j][k]
  std::vector<double> kappa;
  std::vector<double> sigma;

  std::size_t states() const { return static_cast<std::size_t>(generator.rows()); }
};

struct FilterOutput {
  std::vector<Eigen::VectorXd> filtered;  // P(X_m = k | γ_0..γ_m)
  std::vector<Eigen::VectorXd> smoothed;  // P(X_m = k | all)
  std::vector<Eigen::MatrixXd> pairs;     // P(X_{m−1} = i, X_m = j | all), m ≥ 1
  double log_likelihood = 0.0;
};

namespace detail {

constexpr double kHazardFloor = 1e-6;

// log densities of step m (γ_{m−1} → γ_m) per regime, summed over sovereigns.
inline Eigen::VectorXd log_emission(const HazardPanel& panel, const EmParameters& p, std::size_t m) {
  const double h = panel.dates[m] - panel.dates[m - 1];
  const auto k = static_cast<Eigen::Index>(p.states());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(k);
  for (std::size_t j = 0; j < panel.sovereign_count(); ++j) {
    const double g0 = panel.gamma[j][m - 1];
    const double var = p.sigma[j] * p.sigma[j] * std::max(g0, kHazardFloor) * h;
    const double dg = panel.gamma[j][m] - g0;
    for (Eigen::Index x = 0; x < k; ++x) {
      const double e = dg - p.kappa[j] * (p.mu[j][static_cast<std::size_t>(x)] - g0) * h;
      out[x] += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * e * e / var;
    }
  }
  return out;
}

}  // namespace detail

// Forward–backward recursion with per-step normalization.
inline FilterOutput filter_smooth(const HazardPanel& panel, const EmParameters& p) {
  panel.validate();
  const std::size_t n = panel.date_count();
  const auto k = static_cast<Eigen::Index>(p.states());
  const Eigen::MatrixXd trans = (p.generator * panel.step()).exp();
  FilterOutput out;
  out.filtered.resize(n);
  out.smoothed.resize(n);
  out.pairs.assign(n, Eigen::MatrixXd::Zero(k, k));
  std::vector<Eigen::VectorXd> emission(n);
  out.filtered[0] = p.initial / p.initial.sum();
  for (std::size_t m = 1; m < n; ++m) {
    const Eigen::VectorXd loge = detail::log_emission(panel, p, m);
    const double shift = loge.maxCoeff();
    emission[m] = (loge.array() - shift).exp();
    Eigen::VectorXd a = (trans.transpose() * out.filtered[m - 1]).cwiseProduct(emission[m]);
    const double c = a.sum();
    if (!(c > 0.0) || !std::isfinite(c))
      throw NumericalError("zero likelihood at date index " + std::to_string(m));
    out.filtered[m] = a / c;
    out.log_likelihood += std::log(c) + shift;
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Ones(k);
  out.smoothed[n - 1] = out.filtered[n - 1];
  for (std::size_t m = n - 1; m >= 1; --m) {
    const Eigen::VectorXd weighted = emission[m].cwiseProduct(beta);
    // ξ(i, j) ∝ f_{m−1}(i) P(i, j) e_m(j) β_m(j)
    Eigen::MatrixXd xi = out.filtered[m - 1].asDiagonal() * trans * weighted.asDiagonal();
    xi /= xi.sum();
    out.pairs[m] = xi;
    Eigen::VectorXd next = trans * weighted;
    beta = next / next.sum();
    out.smoothed[m - 1] = xi.rowwise().sum();
  }
  for (auto& v : out.smoothed) v /= v.sum();
  out.smoothed[n - 1] = out.filtered[n - 1];
  return out;
}

struct EmOptions {
  std::size_t max_iterations = 200;
  double tolerance = 1e-8;  // relative log-likelihood improvement
};

struct EmResult {
  EmParameters params;
  FilterOutput filter;
  std::vector<double> log_likelihood;  // per iteration, starting with the initial value
  Eigen::MatrixXd generator_stderr;    // sqrt(q̂_kl / E[T_k])
  Eigen::VectorXd occupation;          // expected time in each regime
  std::vector<std::string> warnings;
  std::size_t iterations = 0;
  bool converged = false;
};

// Expected jump counts and occupation times over one step Δ, for every pair
// of end points, via the block matrix exponential of [[Q, E_kl], [0, Q]].
struct StepIntegrals {
  Eigen::MatrixXd transition;
  std::vector<Eigen::MatrixXd> integral;  // index k·K + l
};

inline StepIntegrals step_integrals(const Eigen::MatrixXd& q, double step) {
  const Eigen::Index k = q.rows();
  StepIntegrals out;
  out.transition = (q * step).exp();
  out.integral.resize(static_cast<std::size_t>(k * k));
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) {
      if (a != b && q(a, b) == 0.0) {
        out.integral[static_cast<std::size_t>(a * k + b)] = Eigen::MatrixXd::Zero(k, k);
        continue;
      }
      Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * k, 2 * k);
      block.topLeftCorner(k, k) = q;
      block.bottomRightCorner(k, k) = q;
      block(a, k + b) = 1.0;
      out.integral[static_cast<std::size_t>(a * k + b)] = (block * step).exp().topRightCorner(k, k);
    }
  return out;
}

inline EmResult em_estimate(const HazardPanel& panel, EmParameters start, const EmOptions& options = {}) {
  panel.validate();
  const std::size_t j_count = panel.sovereign_count();
  const std::size_t n = panel.date_count();
  const auto k = static_cast<Eigen::Index>(start.states());
  require(start.mu.size() == j_count && start.kappa.size() == j_count && start.sigma.size() == j_count,
          "EM parameters do not match the panel");
  RegimeChain(start.generator);  // validates
  if (start.initial.size() != k) start.initial = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  const double h = panel.step();
  EmResult res;
  auto warn = [&](const std::string& msg) {
    if (std::find(res.warnings.begin(), res.warnings.end(), msg) == res.warnings.end()) res.warnings.push_back(msg);
  };
  res.params = start;
  res.filter = filter_smooth(panel, res.params);
  res.log_likelihood.push_back(res.filter.log_likelihood);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const auto& f = res.filter;
    EmParameters next = res.params;
    // Generator.
    const auto si = step_integrals(res.params.generator, h);
    Eigen::MatrixXd jumps = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd occupation = Eigen::VectorXd::Zero(k);
    for (std::size_t m = 1; m < n; ++m)
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
          const double w = f.pairs[m](i, j);
          const double pij = si.transition(i, j);
          if (w <= 0.0 || pij <= 0.0) continue;
          for (Eigen::Index a = 0; a < k; ++a) {
            occupation[a] += w * si.integral[static_cast<std::size_t>(a * k + a)](i, j) / pij;
            for (Eigen::Index b = 0; b < k; ++b)
              if (a != b && res.params.generator(a, b) > 0.0)
                jumps(a, b) += w * res.params.generator(a, b) * si.integral[static_cast<std::size_t>(a * k + b)](i, j) / pij;
          }
        }
    next.generator.setZero();
    for (Eigen::Index a = 0; a < k; ++a) {
      if (occupation[a] <= 1e-12) {
        next.generator.row(a) = res.params.generator.row(a);
        continue;
      }
      for (Eigen::Index b = 0; b < k; ++b)
        if (a != b) next.generator(a, b) = jumps(a, b) / occupation[a];
      next.generator(a, a) = 0.0;
      next.generator(a, a) = -next.generator.row(a).sum();
    }
    next.initial = f.smoothed[0];
    // Levels and speeds: weighted least squares of Δγ = (κμ(k) − κγ)Δ with
    // weights P(X_m = k | all) / γ_{m−1}. Regimes with no weight keep μ.
    Eigen::VectorXd weight_sum = Eigen::VectorXd::Zero(k);
    for (std::size_t m = 1; m < n; ++m) weight_sum += f.smoothed[m];
    std::vector<bool> frozen(static_cast<std::size_t>(k));
    for (Eigen::Index x = 0; x < k; ++x) frozen[static_cast<std::size_t>(x)] = weight_sum[x] < 1e-8;
    for (std::size_t j = 0; j < j_count; ++j) {
      // Unknowns: a_x = κ μ(x) for free regimes, then κ.
      std::vector<Eigen::Index> col(static_cast<std::size_t>(k), -1);
      Eigen::Index free_count = 0;
      for (Eigen::Index x = 0; x < k; ++x)
        if (!frozen[static_cast<std::size_t>(x)]) col[static_cast<std::size_t>(x)] = free_count++;
      const Eigen::Index dim = free_count + 1;
      Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(dim, dim);
      Eigen::VectorXd atb = Eigen::VectorXd::Zero(dim);
      Eigen::VectorXd row(dim);
      for (std::size_t m = 1; m < n; ++m) {
        const double g0 = panel.gamma[j][m - 1];
        const double dg = panel.gamma[j][m] - g0;
        const double scale = 1.0 / std::max(g0, detail::kHazardFloor);
        for (Eigen::Index x = 0; x < k; ++x) {
          const double w = f.smoothed[m][x] * scale;
          if (w <= 0.0) continue;
          row.setZero();
          if (frozen[static_cast<std::size_t>(x)]) {
            row[dim - 1] = (res.params.mu[j][static_cast<std::size_t>(x)] - g0) * h;
          } else {
            row[col[static_cast<std::size_t>(x)]] = h;
            row[dim - 1] = -g0 * h;
          }
          ata += w * row * row.transpose();
          atb += w * dg * row;
        }
      }
      const Eigen::VectorXd sol = ata.ldlt().solve(atb);
      if (!sol.allFinite()) {
        warn("singular level regression for " + panel.sovereigns[j]);
        continue;
      }
      double kappa = sol[dim - 1];
      if (kappa < 1e-6) {
        warn("nonpositive speed estimate for " + panel.sovereigns[j] + " clamped");
        kappa = 1e-6;
      }
      next.kappa[j] = kappa;
      for (Eigen::Index x = 0; x < k; ++x)
        if (!frozen[static_cast<std::size_t>(x)]) next.mu[j][static_cast<std::size_t>(x)] = std::max(sol[col[static_cast<std::size_t>(x)]] / kappa, 0.0);
    }
    for (Eigen::Index x = 0; x < k; ++x)
      if (frozen[static_cast<std::size_t>(x)])
        warn("regime " + std::to_string(x + 1) + " never occupied; its levels are frozen");

    FilterOutput nf = filter_smooth(panel, next);
    const double before = res.log_likelihood.back();
    res.params = next;
    res.filter = std::move(nf);
    res.occupation = occupation;
    res.log_likelihood.push_back(res.filter.log_likelihood);
    res.iterations = it + 1;
    const double gain = res.filter.log_likelihood - before;
    if (std::abs(gain) <= options.tolerance * std::max(1.0, std::abs(before))) {
      res.converged = true;
      break;
    }
  }
  res.generator_stderr = Eigen::MatrixXd::Zero(k, k);
  if (res.occupation.size() == k)
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b)
        if (a != b && res.occupation[a] > 0.0)
          res.generator_stderr(a, b) = std::sqrt(res.params.generator(a, b) / res.occupation[a]);
  return res;
}

// Starting values: levels at spread quantiles of each trajectory, speed 1,
// unit jump rates between all regimes.
inline EmParameters em_initial_guess(const HazardPanel& panel, std::size_t states, std::span<const double> sigma) {
  panel.validate();
  require(sigma.size() == panel.sovereign_count(), "one volatility per sovereign required");
  EmParameters p;
  const auto k = static_cast<Eigen::Index>(states);
  p.generator = Eigen::MatrixXd::Constant(k, k, 1.0);
  for (Eigen::Index a = 0; a < k; ++a) p.generator(a, a) = -static_cast<double>(k - 1);
  p.initial = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  for (std::size_t j = 0; j < panel.sovereign_count(); ++j) {
    std::vector<double> g = panel.gamma[j];
    std::sort(g.begin(), g.end());
    std::vector<double> mu;
    for (std::size_t x = 0; x < states; ++x) {
      const double q = (static_cast<double>(x) + 0.5) / static_cast<double>(states);
      mu.push_back(g[static_cast<std::size_t>(q * static_cast<double>(g.size() - 1))]);
    }
    p.mu.push_back(mu);
    p.kappa.push_back(1.0);
    p.sigma.push_back(sigma[j]);
  }
  return p;
}

// Starting values from a regime path: levels are the mean hazard per regime,
// speed 1, and the counting estimate of the generator with every off-diagonal
// rate raised to at least `rate_floor` (EM never revives a zero rate).
inline EmParameters em_initial_from_path(const HazardPanel& panel, std::span<const std::size_t> regimes,
                                         std::size_t states, std::span<const double> sigma,
                                         double rate_floor = 0.1) {
  panel.validate();
  require(regimes.size() == panel.date_count(), "regime path length differs from the date count");
  require(sigma.size() == panel.sovereign_count(), "one volatility per sovereign required");
  EmParameters p;
  const auto k = static_cast<Eigen::Index>(states);
  const std::vector<std::size_t> path(regimes.begin(), regimes.end());
  p.generator = mle_generator(path, panel.dates, states).generator;
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b)
      if (a != b) p.generator(a, b) = std::max(p.generator(a, b), rate_floor);
    p.generator(a, a) = 0.0;
    p.generator(a, a) = -p.generator.row(a).sum();
  }
  p.initial = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  for (std::size_t j = 0; j < panel.sovereign_count(); ++j) {
    std::vector<double> sum(states, 0.0), count(states, 0.0);
    double all = 0.0;
    for (std::size_t m = 0; m < panel.date_count(); ++m) {
      sum[regimes[m]] += panel.gamma[j][m];
      count[regimes[m]] += 1.0;
      all += panel.gamma[j][m] / static_cast<double>(panel.date_count());
    }
    std::vector<double> mu(states);
    for (std::size_t x = 0; x < states; ++x) mu[x] = count[x] > 0.0 ? sum[x] / count[x] : all;
    p.mu.push_back(mu);
    p.kappa.push_back(1.0);
    p.sigma.push_back(sigma[j]);
  }
  return p;
}

// Regime path by k-means on the cross-section of hazards at each date.
inline EmParameters em_initial_kmeans(const HazardPanel& panel, std::size_t states, std::span<const double> sigma,
                                      std::uint64_t seed = 1) {
  panel.validate();
  std::vector<std::vector<double>> points(panel.date_count(), std::vector<double>(panel.sovereign_count()));
  for (std::size_t m = 0; m < panel.date_count(); ++m)
    for (std::size_t j = 0; j < panel.sovereign_count(); ++j) points[m][j] = panel.gamma[j][m];
  const auto km = kmeans(points, states, seed);
  return em_initial_from_path(panel, km.labels, states, sigma);
}

// Quadratic-variation volatility, scaled by `factor` for the flagged sovereigns.
inline std::vector<double> estimate_sigma_qv(const HazardPanel& panel, double factor,
                                             std::span<const std::string> flagged) {
  panel.validate();
  require(factor > 0.0, "robustification factor must be positive");
  std::vector<double> out;
  for (std::size_t j = 0; j < panel.sovereign_count(); ++j) {
    double qv = 0.0, integral = 0.0;
    for (std::size_t m = 1; m < panel.date_count(); ++m) {
      const double d = panel.gamma[j][m] - panel.gamma[j][m - 1];
      qv += d * d;
      integral += panel.gamma[j][m - 1] * (panel.dates[m] - panel.dates[m - 1]);
    }
    if (!(integral > 0.0)) throw NumericalError("hazard trajectory of " + panel.sovereigns[j] + " is identically zero");
    double s = std::sqrt(qv / integral);
    if (std::find(flagged.begin(), flagged.end(), panel.sovereigns[j]) != flagged.end()) s *= factor;
    out.push_back(s);
  }
  return out;
}

inline std::vector<SovereignParams> em_to_params(const EmParameters& p, std::span<const std::string> ids) {
  std::vector<SovereignParams> out;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    SovereignParams s;
    s.id = ids[j];
    s.kappa = p.kappa[j];
    s.sigma = p.sigma[j];
    s.omega = 0.0;
    s.mu = p.mu[j];
    s.measure = Measure::real_world;
    out.push_back(s);
  }
  return out;
}

}  // namespace esb
