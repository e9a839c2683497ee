#pragma once

// Path simulation: the regime chain (exact), hazard rates (full-truncation
// Euler), doubly stochastic default times, and a conditional path set that
// simulates only the chain and integrates the hazard noise out analytically.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "esb/core.hpp"
#include "esb/parallel.hpp"
#include "esb/transform.hpp"

namespace esb {

// Piecewise-constant chain trajectory on [start, end]. states[i] holds on
// [times[i], times[i+1]) with times.back() < end.
struct ChainPath {
  std::vector<double> times;
  std::vector<std::size_t> states;
  double end = 0.0;

  std::size_t state_at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    return states[static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - times.begin() - 1, 0))];
  }
  std::size_t jumps() const { return states.size() - 1; }
};

template <class Gen>
ChainPath simulate_chain(const RegimeChain& chain, std::size_t x0, double start, double end, Gen& rng) {
  chain.check_state(x0);
  require(end >= start, "chain horizon must not precede its start");
  ChainPath path;
  path.end = end;
  path.times.push_back(start);
  path.states.push_back(x0);
  std::exponential_distribution<double> unit(1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double t = start;
  std::size_t x = x0;
  const std::size_t k = chain.states();
  for (;;) {
    const double rate = chain.exit_rate(x);
    if (rate <= 0.0) break;  // absorbing
    t += unit(rng) / rate;
    if (t >= end) break;
    double target = uniform(rng) * rate;
    std::size_t next = x;
    for (std::size_t l = 0; l < k; ++l) {
      if (l == x) continue;
      next = l;
      target -= chain.rate(x, l);
      if (target < 0.0) break;
    }
    x = next;
    path.times.push_back(t);
    path.states.push_back(x);
  }
  return path;
}

template <class Gen>
ChainPath simulate_chain(const RegimeChain& chain, std::size_t x0, double horizon, Gen& rng) {
  return simulate_chain(chain, x0, 0.0, horizon, rng);
}

// Hazard values on the uniform grid start + i·step, i = 0..steps.
struct HazardTrajectory {
  double start = 0.0;
  double step = 0.0;
  std::vector<double> values;

  double end() const { return start + step * static_cast<double>(values.size() - 1); }

  // Trapezoidal ∫ γ over the grid, cumulative.
  std::vector<double> integrated() const {
    std::vector<double> out(values.size(), 0.0);
    for (std::size_t i = 1; i < values.size(); ++i)
      out[i] = out[i - 1] + 0.5 * step * (values[i - 1] + values[i]);
    return out;
  }
};

// Full-truncation Euler: the latent x may go negative, γ = x⁺ enters drift and
// diffusion and is what is recorded.
template <class Gen>
HazardTrajectory simulate_hazards(const SovereignParams& params, const ChainPath& path, double gamma0,
                                  double step, Gen& rng) {
  require(gamma0 >= 0.0 && std::isfinite(gamma0), "initial hazard must be nonnegative");
  require(step > 0.0, "Euler step must be positive");
  const double start = path.times.front();
  const double length = path.end - start;
  const auto steps = static_cast<std::size_t>(std::ceil(length / step - 1e-9));
  const double h = steps == 0 ? step : length / static_cast<double>(steps);
  HazardTrajectory out;
  out.start = start;
  out.step = h;
  out.values.resize(steps + 1);
  out.values[0] = gamma0;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sqrt_h = std::sqrt(h);
  double x = gamma0;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = start + h * static_cast<double>(i);
    while (seg + 1 < path.times.size() && path.times[seg + 1] <= t) ++seg;
    const double pos = std::max(x, 0.0);
    const double level = params.level(path.states[seg], t);
    x += params.kappa * (level - pos) * h + params.sigma * std::sqrt(pos) * sqrt_h * normal(rng);
    out.values[i + 1] = std::max(x, 0.0);
  }
  for (double v : out.values)
    if (!std::isfinite(v)) throw NumericalError("hazard simulation produced a non-finite value");
  return out;
}

struct DefaultSample {
  double time = std::numeric_limits<double>::infinity();  // ∞ = no default on the horizon
  std::size_t period = 0;                                  // n with τ ∈ (t_{n−1}, t_n]; 0 = none

  bool defaulted() const { return period != 0; }
};

// τ = first time the integrated hazard reaches a unit-exponential threshold.
template <class Gen>
DefaultSample sample_default(const HazardTrajectory& hazard, const PaymentSchedule& schedule, Gen& rng) {
  std::exponential_distribution<double> unit(1.0);
  const double threshold = unit(rng);
  const auto cum = hazard.integrated();
  DefaultSample out;
  for (std::size_t i = 1; i < cum.size(); ++i) {
    if (cum[i] >= threshold) {
      const double frac = (threshold - cum[i - 1]) / std::max(cum[i] - cum[i - 1], 1e-300);
      const double tau = hazard.start + hazard.step * (static_cast<double>(i - 1) + frac);
      if (tau <= schedule.maturity() && tau > schedule.start()) {
        out.time = tau;
        out.period = schedule.period_containing(tau);
      }
      break;
    }
  }
  return out;
}

template <class Gen>
std::vector<DefaultSample> sample_defaults(std::span<const HazardTrajectory> hazards,
                                           const PaymentSchedule& schedule, Gen& rng) {
  std::vector<DefaultSample> out;
  out.reserve(hazards.size());
  for (const auto& h : hazards) {
    require(h.end() >= schedule.maturity() - 1e-9, "hazard trajectory does not cover the schedule");
    out.push_back(sample_default(h, schedule, rng));
  }
  return out;
}

struct SimulatedPath {
  ChainPath chain;
  std::vector<HazardTrajectory> hazards;
  std::vector<DefaultSample> defaults;
  std::vector<double> loss;  // terminal per-sovereign loss
  double portfolio_loss = 0.0;
};

// A sovereign defaulted at the start with a random LGD, drawn per path.
struct RandomInitialLoss {
  std::size_t sovereign = 0;
  double mean = 0.5;
  double concentration = 1.5;
};

// Full simulation of (X, γ, τ, δ) with Euler hazards; the reference scheme.
template <class Gen>
SimulatedPath simulate_path(const CreditModel& model, const MarketState& state,
                            const PaymentSchedule& schedule, double euler_step, Gen& rng,
                            std::span<const RandomInitialLoss> random_losses = {}) {
  SimulatedPath out;
  out.chain = simulate_chain(model.chain, state.regime, state.date, schedule.maturity(), rng);
  out.loss = state.loss;
  for (const auto& r : random_losses) {
    LgdSpec spec{{r.mean}, r.concentration};
    out.loss[r.sovereign] = spec.sample(0, rng);
  }
  const std::size_t j_count = model.sovereigns();
  out.hazards.reserve(j_count);
  out.defaults.resize(j_count);
  for (std::size_t j = 0; j < j_count; ++j) {
    out.hazards.push_back(
        simulate_hazards(model.portfolio.sovereigns[j], out.chain, state.gamma[j], euler_step, rng));
    if (out.loss[j] > 0.0) continue;
    out.defaults[j] = sample_default(out.hazards[j], schedule, rng);
    if (out.defaults[j].defaulted()) {
      const std::size_t regime = out.chain.state_at(schedule.time(out.defaults[j].period));
      out.loss[j] = model.portfolio.lgd[j].sample(regime, rng);
    }
  }
  out.portfolio_loss = portfolio_loss(out.loss, model.portfolio.weights);
  return out;
}

// ∫_a^b e^{ω θ} β(s − θ) dθ for one sovereign and one horizon s.
class AlphaIntegrator {
 public:
  AlphaIntegrator(const SovereignParams& params) : riccati_(0.0, 1.0, params.kappa, params.sigma), omega_(params.omega) {}

  double integral(double s, double a, double b) const {
    if (b <= a) return 0.0;
    if (omega_ == 0.0) return riccati_.integral(s - a) - riccati_.integral(s - b);
    double total = 0.0;
    const auto pieces = static_cast<int>(std::ceil(b - a - 1e-12));
    const double width = (b - a) / std::max(pieces, 1);
    for (int p = 0; p < std::max(pieces, 1); ++p) {
      const double lo = a + p * width;
      const double mid = lo + 0.5 * width;
      double piece = 0.0;
      for (std::size_t i = 0; i < kNodes.size(); ++i) {
        const double theta = mid + 0.5 * width * kNodes[i];
        piece += kWeights[i] * std::exp(omega_ * theta) * riccati_.beta(s - theta);
      }
      total += 0.5 * width * piece;
    }
    return total;
  }

  const RiccatiSolution& riccati() const { return riccati_; }

 private:
  // 16-point Gauss–Legendre.
  static constexpr std::array<double, 16> kNodes = {
      -0.9894009349916499, -0.9445750230732326, -0.8656312023878318, -0.7554044083550030,
      -0.6178762444026438, -0.4580167776572274, -0.2816035507792589, -0.0950125098376374,
      0.0950125098376374,  0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
      0.7554044083550030,  0.8656312023878318,  0.9445750230732326,  0.9894009349916499};
  static constexpr std::array<double, 16> kWeights = {
      0.0271524594117541, 0.0622535239386479, 0.0951585116824928, 0.1246289712555339,
      0.1495959888165767, 0.1691565193950025, 0.1826034150449236, 0.1894506104550685,
      0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
      0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

  RiccatiSolution riccati_;
  double omega_;
};

// Paths of the regime chain with, per sovereign j and payment date t_n,
//   log P(τ^j > t_n | X) = α_{j,n}(X) + β_{j,n} γ^j_0,
// plus a unit-exponential default threshold and an LGD uniform per sovereign.
// Defaults and losses can then be evaluated for any initial hazard vector with
// common random numbers. Keeps a pointer to `model`, which must outlive it.
struct PathSetOptions {
  bool independent_chains = false;  // one chain copy per sovereign
  // Precompute the LGD quantile for every regime instead of inverting the
  // beta CDF at each default; pays off when the set is evaluated many times.
  bool cache_lgd = false;
};

class ConditionalPathSet {
 public:


  ConditionalPathSet(const CreditModel& model, std::size_t regime, const PaymentSchedule& schedule,
                     std::size_t paths, std::uint64_t seed, std::uint64_t stream = 0,
                     PathSetOptions options = {}, std::span<const RandomInitialLoss> random_losses = {})
      : model_(&model), times_(schedule.times()), paths_(paths), options_(options) {
    model.chain.check_state(regime);
    const std::size_t j_count = model.sovereigns();
    const std::size_t n = times_.size() - 1;
    const std::size_t chains = options.independent_chains ? j_count : 1;
    chains_ = chains;
    beta_.assign(j_count * (n + 1), 0.0);
    std::vector<AlphaIntegrator> integrators;
    for (std::size_t j = 0; j < j_count; ++j) {
      integrators.emplace_back(model.portfolio.sovereigns[j]);
      for (std::size_t i = 1; i <= n; ++i)
        beta_[j * (n + 1) + i] = integrators[j].riccati().beta(times_[i] - times_[0]);
    }
    alpha_.assign(paths * j_count * (n + 1), 0.0);
    threshold_.assign(paths * j_count, 0.0);
    uniform_.assign(paths * j_count, 0.0);
    states_.assign(paths * chains * n, 0);
    const std::size_t k_count = model.states();
    if (options.cache_lgd) lgd_cache_.assign(paths * j_count * k_count, 0.0);
    random_loss_.assign(paths * j_count, 0.0);
    // Chains get their own generator, reseeded per path, so that sets built
    // for different generators keep the thresholds and LGD uniforms aligned
    // path by path.
    Rng rng = block_rng(seed, stream);
    Rng chain_rng;
    const std::uint64_t chain_seed = mix_seed(seed, stream, 0x636861696eULL);
    std::exponential_distribution<double> unit(1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<ChainPath> chain_paths(chains);
    for (std::size_t p = 0; p < paths; ++p) {
      chain_rng.seed(mix_seed(chain_seed + p));
      for (std::size_t c = 0; c < chains; ++c)
        chain_paths[c] = simulate_chain(model.chain, regime, times_.front(), times_.back(), chain_rng);
      for (std::size_t j = 0; j < j_count; ++j) {
        const ChainPath& path = chain_paths[options.independent_chains ? j : 0];
        const auto& sp = model.portfolio.sovereigns[j];
        double* alpha = &alpha_[(p * j_count + j) * (n + 1)];
        for (std::size_t i = 1; i <= n; ++i) {
          const double s = times_[i];
          double acc = 0.0;
          for (std::size_t seg = 0; seg < path.states.size(); ++seg) {
            const double a = path.times[seg];
            if (a >= s) break;
            const double b = std::min(seg + 1 < path.times.size() ? path.times[seg + 1] : path.end, s);
            acc += sp.mu[path.states[seg]] * integrators[j].integral(s, a, b);
          }
          alpha[i] = sp.kappa * acc;
        }
        threshold_[p * j_count + j] = unit(rng);
        const double v = uniform(rng);
        uniform_[p * j_count + j] = v;
        if (options.cache_lgd)
          for (std::size_t k = 0; k < k_count; ++k)
            lgd_cache_[(p * j_count + j) * k_count + k] = model.portfolio.lgd[j].quantile(k, v);
      }
      for (std::size_t c = 0; c < chains; ++c)
        for (std::size_t i = 1; i <= n; ++i)
          states_[(p * chains + c) * n + (i - 1)] =
              static_cast<std::uint8_t>(chain_paths[c].state_at(times_[i]));
      for (const auto& r : random_losses) {
        LgdSpec spec{{r.mean}, r.concentration};
        random_loss_[p * j_count + r.sovereign] = spec.quantile(0, uniform(rng));
      }
    }
    for (const auto& r : random_losses) random_sovereigns_.push_back(r.sovereign);
  }

  std::size_t size() const { return paths_; }
  std::size_t periods() const { return times_.size() - 1; }

  // Per-sovereign terminal losses of path p for hazards γ and realized losses L0.
  // Returns the period of default per sovereign (0 = none) through `period` if given.
  void losses(std::size_t p, std::span<const double> gamma, std::span<const double> loss0,
              std::span<double> out, std::span<std::size_t> period = {}) const {
    const std::size_t j_count = model_->sovereigns();
    const std::size_t n = periods();
    for (std::size_t j = 0; j < j_count; ++j) {
      if (!period.empty()) period[j] = 0;
      if (is_random(j)) {
        out[j] = random_loss_[p * j_count + j];
        continue;
      }
      if (loss0[j] > 0.0) {
        out[j] = loss0[j];
        continue;
      }
      const double* alpha = &alpha_[(p * j_count + j) * (n + 1)];
      const double* beta = &beta_[j * (n + 1)];
      const double barrier = -threshold_[p * j_count + j];
      if (alpha[n] + beta[n] * gamma[j] >= barrier) {
        out[j] = 0.0;
        continue;
      }
      std::size_t lo = 1, hi = n;  // first i with log-survival below the barrier
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (alpha[mid] + beta[mid] * gamma[j] < barrier)
          hi = mid;
        else
          lo = mid + 1;
      }
      const std::size_t c = options_.independent_chains ? j : 0;
      const std::size_t regime = states_[(p * chains_ + c) * n + (lo - 1)];
      out[j] = options_.cache_lgd
                   ? lgd_cache_[(p * j_count + j) * model_->states() + regime]
                   : model_->portfolio.lgd[j].quantile(regime, uniform_[p * j_count + j]);
      if (!period.empty()) period[j] = lo;
    }
  }

  double portfolio_loss(std::size_t p, std::span<const double> gamma, std::span<const double> loss0,
                        std::vector<double>& scratch) const {
    scratch.resize(model_->sovereigns());
    losses(p, gamma, loss0, scratch);
    return esb::portfolio_loss(scratch, model_->portfolio.weights);
  }

 private:
  bool is_random(std::size_t j) const {
    return std::find(random_sovereigns_.begin(), random_sovereigns_.end(), j) != random_sovereigns_.end();
  }

  const CreditModel* model_;
  std::vector<double> times_;
  std::size_t paths_;
  PathSetOptions options_;
  std::size_t chains_ = 1;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> threshold_;
  std::vector<double> uniform_;
  std::vector<std::uint8_t> states_;
  std::vector<double> lgd_cache_;
  std::vector<double> random_loss_;
  std::vector<std::size_t> random_sovereigns_;
};

}  // namespace esb
