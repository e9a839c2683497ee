#pragma once

// Derivative-free optimizers used by the calibration: an evolution strategy
// with stochastic ranking for the global pass, a linear-interpolation trust
// region for least-squares refinement, and a bounded scalar minimizer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "esb/errors.hpp"
#include "esb/parallel.hpp"

namespace esb {

using Objective = std::function<double(std::span<const double>)>;
// g(x) ≤ 0 means satisfied.
using Constraint = std::function<double(std::span<const double>)>;
using Residuals = std::function<void(std::span<const double>, std::vector<double>&)>;

struct OptimizeResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  bool budget_exhausted = false;
  std::string message;
};

inline void check_bounds(std::span<const double> lower, std::span<const double> upper) {
  require(!lower.empty() && lower.size() == upper.size(), "bounds must be non-empty and of equal length");
  for (std::size_t i = 0; i < lower.size(); ++i)
    require(std::isfinite(lower[i]) && std::isfinite(upper[i]) && lower[i] <= upper[i], "invalid bounds");
}

// ---------------------------------------------------------------------------
// Stochastic-ranking evolution strategy (ISRES).

struct IsresOptions {
  std::size_t max_evaluations = 5000;
  std::size_t population = 0;  // 0 → 20 (n + 1)
  double ranking_probability = 0.45;
  double differential_factor = 0.85;
  double smoothing = 0.2;
  std::uint64_t seed = 1;
};

inline OptimizeResult isres(const Objective& f, const std::vector<Constraint>& constraints,
                            std::span<const double> lower, std::span<const double> upper,
                            std::span<const double> start, const IsresOptions& options) {
  check_bounds(lower, upper);
  const std::size_t n = lower.size();
  const std::size_t lambda = options.population ? options.population : 20 * (n + 1);
  const std::size_t mu = std::max<std::size_t>(1, lambda / 7);
  require(lambda >= 2, "population too small");
  Rng rng = block_rng(options.seed, 0, 0x15e5);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double tau = 1.0 / std::sqrt(2.0 * std::sqrt(static_cast<double>(n)));
  const double tau_global = 1.0 / std::sqrt(2.0 * static_cast<double>(n));

  struct Individual {
    std::vector<double> x, s;
    double f = 0.0, phi = 0.0;
  };
  std::vector<Individual> pop(lambda);
  for (std::size_t i = 0; i < lambda; ++i) {
    pop[i].x.resize(n);
    pop[i].s.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
      pop[i].x[d] = lower[d] + uniform(rng) * (upper[d] - lower[d]);
      pop[i].s[d] = (upper[d] - lower[d]) / std::sqrt(static_cast<double>(n));
    }
  }
  if (!start.empty()) {
    require(start.size() == n, "start point has the wrong dimension");
    for (std::size_t d = 0; d < n; ++d) pop[0].x[d] = std::clamp(start[d], lower[d], upper[d]);
  }

  OptimizeResult best;
  double best_phi = std::numeric_limits<double>::infinity();
  auto evaluate = [&](Individual& ind) {
    ind.f = f(ind.x);
    if (!std::isfinite(ind.f)) ind.f = std::numeric_limits<double>::max();
    ind.phi = 0.0;
    for (const auto& g : constraints) {
      const double v = g(ind.x);
      if (v > 0.0) ind.phi += v * v;
    }
    ++best.evaluations;
    if (ind.phi < best_phi || (ind.phi == best_phi && ind.f < best.value)) {
      best_phi = ind.phi;
      best.value = ind.f;
      best.x = ind.x;
    }
  };

  std::vector<std::size_t> order(lambda);
  while (best.evaluations < options.max_evaluations) {
    for (auto& ind : pop) {
      if (best.evaluations >= options.max_evaluations) break;
      evaluate(ind);
    }
    if (best.evaluations >= options.max_evaluations && best.evaluations % lambda != 0) break;
    // Stochastic bubble-sort ranking.
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t sweep = 0; sweep < lambda; ++sweep) {
      bool swapped = false;
      for (std::size_t j = 0; j + 1 < lambda; ++j) {
        const auto& a = pop[order[j]];
        const auto& b = pop[order[j + 1]];
        const bool by_objective = (a.phi == 0.0 && b.phi == 0.0) || uniform(rng) < options.ranking_probability;
        const bool swap = by_objective ? a.f > b.f : a.phi > b.phi;
        if (swap) {
          std::swap(order[j], order[j + 1]);
          swapped = true;
        }
      }
      if (!swapped) break;
    }
    std::vector<Individual> parents;
    for (std::size_t i = 0; i < mu; ++i) parents.push_back(pop[order[i]]);
    for (std::size_t k = 0; k < lambda; ++k) {
      const std::size_t i = k % mu;
      Individual child = parents[i];
      if (k + 1 < mu) {
        // Differential variation toward the best parent.
        for (std::size_t d = 0; d < n; ++d) {
          const double v = parents[i].x[d] + options.differential_factor * (parents[0].x[d] - parents[i + 1].x[d]);
          child.x[d] = (v >= lower[d] && v <= upper[d]) ? v : parents[i].x[d];
        }
      } else {
        const double global = tau_global * normal(rng);
        for (std::size_t d = 0; d < n; ++d) {
          child.s[d] = std::min(parents[i].s[d] * std::exp(global + tau * normal(rng)), upper[d] - lower[d]);
          double v = parents[i].x[d];
          bool ok = false;
          for (int tries = 0; tries < 10 && !ok; ++tries) {
            v = parents[i].x[d] + child.s[d] * normal(rng);
            ok = v >= lower[d] && v <= upper[d];
          }
          child.x[d] = ok ? v : parents[i].x[d];
          child.s[d] = parents[i].s[d] + options.smoothing * (child.s[d] - parents[i].s[d]);
        }
      }
      pop[k] = std::move(child);
    }
  }
  best.budget_exhausted = true;
  best.message = best_phi > 0.0 ? "no feasible point found" : "evaluation budget used";
  return best;
}

// ---------------------------------------------------------------------------
// Least-squares trust region with linear interpolation models of the
// residuals (derivative-free Gauss–Newton), bound constrained.

struct TrustRegionOptions {
  std::size_t max_evaluations = 500;
  double initial_radius = 0.1;
  double final_radius = 1e-10;
  double target = 0.0;  // stop once ‖r‖² ≤ target
};

inline OptimizeResult least_squares_trust_region(const Residuals& residuals, std::span<const double> lower,
                                                 std::span<const double> upper, std::span<const double> start,
                                                 const TrustRegionOptions& options) {
  check_bounds(lower, upper);
  const std::size_t n = lower.size();
  require(start.size() == n, "start point has the wrong dimension");
  OptimizeResult out;
  std::vector<double> r;
  auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd& res) {
    std::vector<double> xs(x.data(), x.data() + x.size());
    residuals(xs, r);
    ++out.evaluations;
    res = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    double v = res.squaredNorm();
    if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
    return v;
  };
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::VectorXd lo = Eigen::Map<const Eigen::VectorXd>(lower.data(), ni);
  Eigen::VectorXd hi = Eigen::Map<const Eigen::VectorXd>(upper.data(), ni);
  Eigen::VectorXd xk = Eigen::Map<const Eigen::VectorXd>(start.data(), ni).cwiseMax(lo).cwiseMin(hi);
  Eigen::VectorXd rk;
  double fk = eval(xk, rk);
  double radius = options.initial_radius;

  // Interpolation set: n points besides xk.
  std::vector<Eigen::VectorXd> points(n), values(n);
  std::vector<double> fvals(n);
  auto coordinate_point = [&](std::size_t i, double step) {
    Eigen::VectorXd p = xk;
    const double up = hi[static_cast<Eigen::Index>(i)] - xk[static_cast<Eigen::Index>(i)];
    const double down = xk[static_cast<Eigen::Index>(i)] - lo[static_cast<Eigen::Index>(i)];
    p[static_cast<Eigen::Index>(i)] += up >= step || up >= down ? std::min(step, up) : -std::min(step, down);
    return p;
  };
  auto rebuild = [&]() {
    for (std::size_t i = 0; i < n && out.evaluations < options.max_evaluations; ++i) {
      points[i] = coordinate_point(i, radius);
      fvals[i] = eval(points[i], values[i]);
    }
  };
  rebuild();

  while (out.evaluations < options.max_evaluations && fk > options.target && radius > options.final_radius) {
    // If an interpolation point beats xk, move the centre there.
    for (std::size_t i = 0; i < n; ++i)
      if (fvals[i] < fk) {
        std::swap(points[i], xk);
        std::swap(values[i], rk);
        std::swap(fvals[i], fk);
      }
    Eigen::MatrixXd d(ni, ni);
    Eigen::MatrixXd dr(rk.size(), ni);
    for (std::size_t i = 0; i < n; ++i) {
      d.col(static_cast<Eigen::Index>(i)) = points[i] - xk;
      dr.col(static_cast<Eigen::Index>(i)) = values[i] - rk;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(d.transpose());
    if (lu.rank() < ni || lu.rcond() < 1e-10) {
      rebuild();
      continue;
    }
    // J D = dR  →  J = dR D^{-1}
    const Eigen::MatrixXd jac = lu.solve(dr.transpose()).transpose();
    const Eigen::VectorXd g = jac.transpose() * rk;
    const Eigen::MatrixXd h = jac.transpose() * jac;
    // Levenberg–Marquardt step scaled into the ball, then projected onto the box.
    double lm = 0.0;
    Eigen::VectorXd step;
    for (int it = 0; it < 60; ++it) {
      Eigen::MatrixXd a = h;
      a.diagonal().array() += lm + 1e-14 * std::max(1.0, h.diagonal().maxCoeff());
      step = a.ldlt().solve(-g);
      if (step.norm() <= radius || !step.allFinite()) break;
      lm = lm == 0.0 ? 1e-8 * std::max(1.0, h.diagonal().maxCoeff()) : lm * 4.0;
    }
    if (!step.allFinite() || step.norm() > radius) step = -g.normalized() * radius;
    Eigen::VectorXd trial = (xk + step).cwiseMax(lo).cwiseMin(hi);
    step = trial - xk;
    if (step.norm() < 1e-3 * radius) {
      radius *= 0.5;
      rebuild();
      continue;
    }
    Eigen::VectorXd rt;
    const double ft = eval(trial, rt);
    const double predicted = fk - (rk + jac * step).squaredNorm();
    const double ratio = predicted > 0.0 ? (fk - ft) / predicted : -1.0;
    // Replace the interpolation point farthest from the new centre.
    std::size_t far = 0;
    const Eigen::VectorXd& centre = ft < fk ? trial : xk;
    for (std::size_t i = 1; i < n; ++i)
      if ((points[i] - centre).norm() > (points[far] - centre).norm()) far = i;
    if (ft < fk) {
      points[far] = xk;
      values[far] = rk;
      fvals[far] = fk;
      xk = trial;
      rk = rt;
      fk = ft;
    } else {
      points[far] = trial;
      values[far] = rt;
      fvals[far] = ft;
    }
    if (ratio > 0.7)
      radius = std::min(2.0 * radius, 1.0);
    else if (ratio < 0.1)
      radius *= 0.5;
    // Keep the set within a few radii so the model stays local.
    for (std::size_t i = 0; i < n && out.evaluations < options.max_evaluations; ++i)
      if ((points[i] - xk).norm() > 4.0 * radius) {
        points[i] = coordinate_point(i, radius);
        fvals[i] = eval(points[i], values[i]);
      }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (fvals[i] < fk) {
      xk = points[i];
      fk = fvals[i];
    }
  out.x.assign(xk.data(), xk.data() + xk.size());
  out.value = fk;
  out.budget_exhausted = out.evaluations >= options.max_evaluations;
  out.message = fk <= options.target ? "target reached"
                : out.budget_exhausted ? "evaluation budget used"
                                       : "trust region collapsed";
  return out;
}

// ---------------------------------------------------------------------------
// Bounded scalar minimization (Brent).

struct ScalarMinimum {
  double x = 0.0;
  double value = 0.0;
};

template <class F>
ScalarMinimum minimize_scalar(F&& f, double lo, double hi, int bits = 52, std::uintmax_t max_iterations = 200) {
  require(lo <= hi, "invalid scalar bracket");
  auto [x, v] = boost::math::tools::brent_find_minima(f, lo, hi, bits, max_iterations);
  // Brent never evaluates the end points; they matter for boundary solutions.
  const double f_lo = f(lo);
  if (f_lo <= v) return {lo, f_lo};
  const double f_hi = f(hi);
  if (f_hi < v) return {hi, f_hi};
  return {x, v};
}

}  // namespace esb
