#pragma once

// Calibration of the risk-neutral model to a panel of CDS spreads. Blocks of
// variables are fitted in turn: hazard paths per date, volatilities from
// quadratic variation, the regime path, the generator by maximum likelihood,
// then the per-sovereign dynamics Θ = (μ(1..K), κ, ω). A block update is kept
// only if it does not increase the total squared spread error.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esb/core.hpp"
#include "esb/io.hpp"
#include "esb/optimize.hpp"
#include "esb/parallel.hpp"
#include "esb/pricing.hpp"

namespace esb {

// ---------------------------------------------------------------------------
// Initialization by k-means

struct KMeansResult {
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> centroids;
  std::vector<double> objective;  // after each Lloyd iteration
  std::size_t clusters = 0;
};

// k-means++ seeding followed by Lloyd iterations. Clusters are relabelled in
// increasing order of their mean coordinate. If there are fewer distinct
// points than clusters every point goes to cluster 0.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iterations = 200) {
  require(!points.empty() && k >= 1, "k-means needs points and at least one cluster");
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  KMeansResult out;
  std::vector<std::vector<double>> distinct;
  for (const auto& p : points) {
    bool seen = false;
    for (const auto& q : distinct) seen = seen || dist2(p, q) == 0.0;
    if (!seen) distinct.push_back(p);
    if (distinct.size() >= k) break;
  }
  if (distinct.size() < k) {
    out.clusters = 1;
    out.labels.assign(n, 0);
    std::vector<double> mean(dim, 0.0);
    for (const auto& p : points)
      for (std::size_t i = 0; i < dim; ++i) mean[i] += p[i] / static_cast<double>(n);
    out.centroids = {mean};
    double obj = 0.0;
    for (const auto& p : points) obj += dist2(p, mean);
    out.objective = {obj};
    return out;
  }
  out.clusters = k;
  Rng rng = block_rng(seed, 0, 0x6b6d);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<std::vector<double>> c;
  c.push_back(points[static_cast<std::size_t>(uniform(rng) * n) % n]);
  std::vector<double> d(n);
  while (c.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = std::numeric_limits<double>::infinity();
      for (const auto& ci : c) d[i] = std::min(d[i], dist2(points[i], ci));
      total += d[i];
    }
    double target = uniform(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d[i];
      if (target < 0.0 && d[i] > 0.0) {
        pick = i;
        break;
      }
    }
    c.push_back(points[pick]);
  }
  std::vector<std::size_t> labels(n, 0);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = labels[i];
      double bd = dist2(points[i], c[best]);
      for (std::size_t l = 0; l < k; ++l) {
        const double v = dist2(points[i], c[l]);
        if (v < bd) {
          bd = v;
          best = l;
        }
      }
      changed = changed || best != labels[i] || it == 0;
      labels[i] = best;
      obj += bd;
    }
    std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[labels[i]];
      for (std::size_t a = 0; a < dim; ++a) sum[labels[i]][a] += points[i][a];
    }
    for (std::size_t l = 0; l < k; ++l)
      if (count[l] > 0)
        for (std::size_t a = 0; a < dim; ++a) c[l][a] = sum[l][a] / static_cast<double>(count[l]);
    double after = 0.0;
    for (std::size_t i = 0; i < n; ++i) after += dist2(points[i], c[labels[i]]);
    out.objective.push_back(std::min(obj, after));
    if (!changed) break;
  }
  // Relabel by increasing mean level.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  auto level = [&](std::size_t l) { return std::accumulate(c[l].begin(), c[l].end(), 0.0); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return level(a) < level(b); });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = r;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = rank[labels[i]];
  for (std::size_t r = 0; r < k; ++r) out.centroids.push_back(c[order[r]]);
  return out;
}

struct InitialGuess {
  std::vector<std::size_t> regimes;
  std::vector<std::vector<double>> gamma;  // [j][date]
  KMeansResult clustering;
};

// Dates are clustered on the shortest-maturity spreads (missing cells take the
// sovereign's mean); γ ≈ spread / mean LGD in the assigned regime.
inline InitialGuess kmeans_init(const CdsPanel& panel, std::span<const LgdSpec> lgd, std::size_t states,
                                std::uint64_t seed) {
  panel.validate();
  require(lgd.size() == panel.sovereign_count(), "one LGD spec per sovereign required");
  const std::size_t j_count = panel.sovereign_count();
  const std::size_t dates = panel.date_count();
  const std::size_t short_m = static_cast<std::size_t>(
      std::min_element(panel.maturities.begin(), panel.maturities.end()) - panel.maturities.begin());
  std::vector<double> mean(j_count, 0.0);
  for (std::size_t j = 0; j < j_count; ++j) {
    double s = 0.0, c = 0.0;
    for (std::size_t d = 0; d < dates; ++d)
      if (!panel.missing(j, short_m, d)) {
        s += panel.at(j, short_m, d);
        c += 1.0;
      }
    mean[j] = c > 0.0 ? s / c : 0.0;
  }
  std::vector<std::vector<double>> features(dates, std::vector<double>(j_count));
  for (std::size_t d = 0; d < dates; ++d)
    for (std::size_t j = 0; j < j_count; ++j)
      features[d][j] = panel.missing(j, short_m, d) ? mean[j] : panel.at(j, short_m, d);
  InitialGuess out;
  out.clustering = kmeans(features, states, seed);
  out.regimes = out.clustering.labels;
  out.gamma.assign(j_count, std::vector<double>(dates, 0.0));
  for (std::size_t j = 0; j < j_count; ++j) {
    double last = mean[j] / lgd[j].mean[0];
    for (std::size_t d = 0; d < dates; ++d) {
      if (!panel.missing(j, short_m, d)) last = panel.at(j, short_m, d) / lgd[j].mean[out.regimes[d]];
      out.gamma[j][d] = last;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Volatility and generator estimates

// σ̂² = Σ (Δγ)² / Σ γ_{m−1} Δt.
inline double estimate_sigma(std::span<const double> gamma, std::span<const double> dates) {
  require(gamma.size() >= 2 && gamma.size() == dates.size(), "need at least two observations");
  double qv = 0.0, integral = 0.0;
  for (std::size_t m = 1; m < gamma.size(); ++m) {
    const double dt = dates[m] - dates[m - 1];
    require(dt > 0.0, "observation dates must increase");
    qv += (gamma[m] - gamma[m - 1]) * (gamma[m] - gamma[m - 1]);
    integral += std::max(gamma[m - 1], 0.0) * dt;
  }
  if (!(integral > 0.0)) throw NumericalError("hazard trajectory is identically zero");
  return std::sqrt(qv / integral);
}

struct GeneratorEstimate {
  Eigen::MatrixXd generator;
  Eigen::MatrixXd jumps;
  Eigen::VectorXd occupation;
  std::vector<std::string> warnings;
};

// q̂_kl = (number of k→l jumps) / (time spent in k); the regime observed at
// s_m is taken to hold on [s_m, s_{m+1}).
inline GeneratorEstimate mle_generator(std::span<const std::size_t> path, std::span<const double> dates,
                                       std::size_t states) {
  require(path.size() == dates.size() && path.size() >= 2, "regime path needs at least two dates");
  require(dates.back() > dates.front(), "regime path must cover positive time");
  const auto k = static_cast<Eigen::Index>(states);
  GeneratorEstimate out;
  out.generator = Eigen::MatrixXd::Zero(k, k);
  out.jumps = Eigen::MatrixXd::Zero(k, k);
  out.occupation = Eigen::VectorXd::Zero(k);
  for (std::size_t m = 0; m + 1 < path.size(); ++m) {
    require(path[m] < states && path[m + 1] < states, "regime index out of range");
    out.occupation[static_cast<Eigen::Index>(path[m])] += dates[m + 1] - dates[m];
    if (path[m + 1] != path[m]) out.jumps(static_cast<Eigen::Index>(path[m]), static_cast<Eigen::Index>(path[m + 1])) += 1.0;
  }
  for (Eigen::Index a = 0; a < k; ++a) {
    if (out.occupation[a] <= 0.0) {
      out.warnings.push_back("regime " + std::to_string(a + 1) + " never visited; its generator row is zero");
      continue;
    }
    for (Eigen::Index b = 0; b < k; ++b)
      if (a != b) out.generator(a, b) = out.jumps(a, b) / out.occupation[a];
    out.generator(a, a) = -out.generator.row(a).sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model spreads on the panel dates

struct ThetaBounds {
  double mu_min = 1e-5;
  double mu_max = 2.0;
  double kappa_min = 0.1;
  double kappa_max = 20.0;
  double omega_max = 0.5;
};

// Θ ↔ [0, 1]^{K+2}: μ and κ on a log scale, ω linear.
inline std::vector<double> theta_to_unit(const SovereignParams& p, const ThetaBounds& b) {
  std::vector<double> x;
  auto logpos = [](double v, double lo, double hi) {
    return std::clamp((std::log(std::clamp(v, lo, hi)) - std::log(lo)) / (std::log(hi) - std::log(lo)), 0.0, 1.0);
  };
  for (double m : p.mu) x.push_back(logpos(m, b.mu_min, b.mu_max));
  x.push_back(logpos(p.kappa, b.kappa_min, b.kappa_max));
  x.push_back(std::clamp(p.omega / b.omega_max, 0.0, 1.0));
  return x;
}

inline void unit_to_theta(std::span<const double> x, const ThetaBounds& b, SovereignParams& p) {
  const std::size_t k = x.size() - 2;
  p.mu.resize(k);
  auto expos = [](double u, double lo, double hi) {
    return std::exp(std::log(lo) + std::clamp(u, 0.0, 1.0) * (std::log(hi) - std::log(lo)));
  };
  for (std::size_t i = 0; i < k; ++i) p.mu[i] = expos(x[i], b.mu_min, b.mu_max);
  p.kappa = expos(x[k], b.kappa_min, b.kappa_max);
  p.omega = std::clamp(x[k + 1], 0.0, 1.0) * b.omega_max;
}

struct SpreadModelOptions {
  double step = 1.0 / 52.0;     // RK4 step of the transform ODE
  std::size_t level_nodes = 12;  // interpolation nodes across e^{ωt}
  double rate = 0.0;
};

// CDS spread kernels for one sovereign at every panel date. The kernel at
// date t equals the date-0 kernel with levels scaled by e^{ωt}; kernels are
// built at Chebyshev nodes of that scale and interpolated (barycentric).
class SpreadModel {
 public:
  SpreadModel(const RegimeChain& chain, const SovereignParams& params, const LgdSpec& lgd,
              std::span<const double> dates, std::span<const double> maturities, const SpreadModelOptions& options) {
    double longest = 0.0;
    for (double u : maturities) longest = std::max(longest, u);
    const auto grid = PaymentSchedule::regular(longest, 4.0, 0.0);
    TransformOptions topt;
    topt.max_step = options.step;
    const Eigen::VectorXd payoff = lgd_mean_vector(lgd);
    auto build = [&](double scale) {
      SovereignParams p = params;
      for (double& m : p.mu) m *= scale;
      return CdsKernel(chain, p, payoff, grid.times(), options.rate, topt);
    };
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double t : dates) {
      lo = std::min(lo, std::exp(params.omega * t));
      hi = std::max(hi, std::exp(params.omega * t));
    }
    const std::size_t nodes = std::min(options.level_nodes, dates.size());
    if (params.omega == 0.0 || hi - lo < 1e-12 * hi || nodes < 2) {
      const CdsKernel k = build(params.omega == 0.0 ? 1.0 : std::exp(params.omega * dates.front()));
      if (params.omega == 0.0 || dates.size() == 1 || hi - lo < 1e-12 * hi) {
        kernels_.assign(dates.size(), k);
      } else {
        for (double t : dates) kernels_.push_back(build(std::exp(params.omega * t)));
      }
    } else {
      // Chebyshev points of the second kind on [lo, hi].
      const std::size_t n = nodes - 1;
      std::vector<double> c(nodes), w(nodes);
      std::vector<CdsKernel> node_kernels;
      for (std::size_t i = 0; i <= n; ++i) {
        c[i] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * std::cos(M_PI * static_cast<double>(i) / static_cast<double>(n));
        w[i] = (i % 2 ? -1.0 : 1.0) * (i == 0 || i == n ? 0.5 : 1.0);
        node_kernels.push_back(build(c[i]));
      }
      std::vector<const CdsKernel*> ptrs;
      for (const auto& k : node_kernels) ptrs.push_back(&k);
      std::vector<double> weights(nodes);
      for (double t : dates) {
        const double x = std::exp(params.omega * t);
        std::size_t exact = nodes;
        double total = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
          if (x == c[i]) exact = i;
          weights[i] = w[i] / (x - c[i]);
          total += weights[i];
        }
        if (exact < nodes) {
          kernels_.push_back(node_kernels[exact]);
          continue;
        }
        for (double& v : weights) v /= total;
        kernels_.push_back(CdsKernel::combine(ptrs, weights));
      }
    }
    for (double u : maturities) last_.push_back(kernels_.front().periods_until(u));
  }

  double spread(std::size_t date, std::size_t maturity, std::size_t regime, double gamma) const {
    return kernels_[date].fair_spread(last_[maturity], regime, gamma);
  }

  const CdsKernel& kernel(std::size_t date) const { return kernels_[date]; }

 private:
  std::vector<CdsKernel> kernels_;
  std::vector<std::size_t> last_;
};

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationConfig {
  std::size_t states = 3;
  double gamma_max = 2.0;
  double tolerance_bp = 1.0;  // stop once Σ errors² < (tolerance_bp · 1e-4)² × cells
  std::size_t max_iterations = 20;
  std::size_t global_budget = 5000;
  std::size_t local_budget = 500;
  std::size_t final_budget = 500;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  ThetaBounds bounds;
  SpreadModelOptions pricing;
};

struct IterationLog {
  std::size_t iteration = 0;
  std::string step;
  double objective = 0.0;
  bool accepted = true;
};

struct CalibrationResult {
  std::vector<SovereignParams> params;  // risk-neutral, σ included
  RegimeChain chain;
  std::vector<std::vector<double>> gamma;  // [j][date]
  std::vector<std::size_t> regimes;
  std::vector<std::vector<double>> rmse_bp;  // [j][maturity]
  std::vector<std::vector<double>> mape;     // [j][maturity], fraction
  std::vector<IterationLog> log;
  std::vector<std::string> warnings;
  double objective = 0.0;
  bool converged = false;
};

// Root-mean-square and mean absolute percentage errors; cells with a zero
// observation are left out of the MAPE.
struct FitErrors {
  double rmse = 0.0;
  double mape = 0.0;
};

inline FitErrors fit_errors(std::span<const double> observed, std::span<const double> fitted) {
  require(observed.size() == fitted.size(), "observed and fitted series differ in length");
  double sse = 0.0, ape = 0.0;
  std::size_t n = 0, np = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (std::isnan(observed[i])) continue;
    const double e = observed[i] - fitted[i];
    sse += e * e;
    ++n;
    if (observed[i] != 0.0) {
      ape += std::abs(e / observed[i]);
      ++np;
    }
  }
  FitErrors out;
  out.rmse = n ? std::sqrt(sse / static_cast<double>(n)) : 0.0;
  out.mape = np ? ape / static_cast<double>(np) : 0.0;
  return out;
}

class Calibrator {
 public:
  Calibrator(const CdsPanel& panel, std::vector<LgdSpec> lgd, CalibrationConfig config)
      : panel_(panel), lgd_(std::move(lgd)), config_(std::move(config)) {
    panel_.validate();
    require(lgd_.size() == panel_.sovereign_count(), "one LGD spec per sovereign required");
    require(panel_.date_count() >= 2, "calibration needs at least two dates");
    for (const auto& l : lgd_) l.validate(config_.states);
    for (double u : panel_.maturities)
      require(std::abs(u * 4.0 - std::round(u * 4.0)) < 1e-9 && u > 0.0, "maturities must be whole quarters");
  }

  // Sum of squared spread errors of sovereign j at date d in regime x.
  double cell_error(const SpreadModel& model, std::size_t j, std::size_t d, std::size_t x, double gamma) const {
    double s = 0.0;
    for (std::size_t m = 0; m < panel_.maturity_count(); ++m) {
      if (panel_.missing(j, m, d)) continue;
      const double e = panel_.at(j, m, d) - model.spread(d, m, x, gamma);
      s += e * e;
    }
    return s;
  }

  SpreadModel spread_model(const RegimeChain& chain, const SovereignParams& p, std::size_t j) const {
    return SpreadModel(chain, p, lgd_[j], panel_.dates, panel_.maturities, config_.pricing);
  }

  double sovereign_objective(const SpreadModel& model, std::size_t j, std::span<const double> gamma,
                             std::span<const std::size_t> regimes) const {
    double s = 0.0;
    for (std::size_t d = 0; d < panel_.date_count(); ++d) s += cell_error(model, j, d, regimes[d], gamma[d]);
    return s;
  }

  // Residual vector of sovereign j for Θ given in unit coordinates.
  void theta_residuals(std::size_t j, const RegimeChain& chain, SovereignParams p, std::span<const double> x,
                       std::span<const double> gamma, std::span<const std::size_t> regimes,
                       std::vector<double>& out) const {
    unit_to_theta(x, config_.bounds, p);
    out.clear();
    const SpreadModel model = spread_model(chain, p, j);
    for (std::size_t d = 0; d < panel_.date_count(); ++d)
      for (std::size_t m = 0; m < panel_.maturity_count(); ++m)
        if (!panel_.missing(j, m, d)) out.push_back(panel_.at(j, m, d) - model.spread(d, m, regimes[d], gamma[d]));
  }

  // Θ-fit for sovereign j. Returns the better of the start and the optimum.
  SovereignParams fit_theta(std::size_t j, const RegimeChain& chain, const SovereignParams& start,
                            std::span<const double> gamma, std::span<const std::size_t> regimes, bool global,
                            std::size_t budget, double& objective) const {
    const std::size_t dim = config_.states + 2;
    const std::vector<double> lower(dim, 0.0), upper(dim, 1.0);
    const auto x0 = theta_to_unit(start, config_.bounds);
    auto residuals = [&](std::span<const double> x, std::vector<double>& r) {
      try {
        theta_residuals(j, chain, start, x, gamma, regimes, r);
      } catch (const NumericalError&) {
        r.assign(r.size() ? r.size() : 1, 1.0);
      }
    };
    OptimizeResult best;
    if (global) {
      IsresOptions opt;
      opt.max_evaluations = budget;
      opt.seed = mix_seed(config_.seed, j, 0x7468);
      std::vector<double> r;
      best = isres([&](std::span<const double> x) {
                     residuals(x, r);
                     double s = 0.0;
                     for (double v : r) s += v * v;
                     return s;
                   },
                   {}, lower, upper, x0, opt);
    } else {
      TrustRegionOptions opt;
      opt.max_evaluations = budget;
      opt.initial_radius = 0.05;
      best = least_squares_trust_region(residuals, lower, upper, x0, opt);
    }
    SovereignParams p = start;
    if (best.value < objective) {
      unit_to_theta(best.x, config_.bounds, p);
      objective = best.value;
    }
    return p;
  }

  CalibrationResult run() const {
    const std::size_t j_count = panel_.sovereign_count();
    const std::size_t dates = panel_.date_count();
    const std::size_t k_count = config_.states;
    CalibrationResult res;
    const auto init = kmeans_init(panel_, lgd_, k_count, config_.seed);
    res.regimes = init.regimes;
    res.gamma = init.gamma;
    for (std::size_t j = 0; j < j_count; ++j) {
      SovereignParams p;
      p.id = panel_.sovereigns[j];
      p.measure = Measure::risk_neutral;
      p.kappa = 1.0;
      p.omega = 0.0;
      p.mu.assign(k_count, 0.0);
      std::vector<double> count(k_count, 0.0);
      double all = 0.0;
      for (std::size_t d = 0; d < dates; ++d) {
        p.mu[res.regimes[d]] += res.gamma[j][d];
        count[res.regimes[d]] += 1.0;
        all += res.gamma[j][d] / static_cast<double>(dates);
      }
      for (std::size_t k = 0; k < k_count; ++k)
        p.mu[k] = std::clamp(count[k] > 0.0 ? p.mu[k] / count[k] : all, config_.bounds.mu_min, config_.bounds.mu_max);
      p.sigma = sigma_or_default(res.gamma[j], 0.1);
      res.params.push_back(p);
    }
    auto gen = mle_generator(res.regimes, panel_.dates, k_count);
    res.chain = RegimeChain(gen.generator, default_labels(k_count));
    res.warnings.insert(res.warnings.end(), gen.warnings.begin(), gen.warnings.end());

    std::vector<double> per_sovereign(j_count);
    auto total_objective = [&](const RegimeChain& chain, const std::vector<SovereignParams>& params,
                               const std::vector<std::vector<double>>& gamma, const std::vector<std::size_t>& regimes) {
      std::vector<double> parts(j_count);
      parallel_for(j_count, config_.threads, [&](std::size_t j) {
        parts[j] = sovereign_objective(spread_model(chain, params[j], j), j, gamma[j], regimes);
      });
      return std::accumulate(parts.begin(), parts.end(), 0.0);
    };
    double objective = total_objective(res.chain, res.params, res.gamma, res.regimes);
    res.log.push_back({0, "initial", objective, true});
    const double epsilon = std::pow(config_.tolerance_bp * 1e-4, 2) * static_cast<double>(panel_.observed_cells());

    auto theta_step = [&](std::size_t iteration, bool global, std::size_t budget, const std::string& name) {
      std::vector<SovereignParams> next = res.params;
      parallel_for(j_count, config_.threads, [&](std::size_t j) {
        double obj = sovereign_objective(spread_model(res.chain, res.params[j], j), j, res.gamma[j], res.regimes);
        next[j] = fit_theta(j, res.chain, res.params[j], res.gamma[j], res.regimes, global, budget, obj);
        per_sovereign[j] = obj;
      });
      res.params = next;
      objective = std::accumulate(per_sovereign.begin(), per_sovereign.end(), 0.0);
      res.log.push_back({iteration, name, objective, true});
    };

    for (std::size_t it = 1; it <= config_.max_iterations; ++it) {
      // Hazards, date by date.
      parallel_for(j_count, config_.threads, [&](std::size_t j) {
        const auto model = spread_model(res.chain, res.params[j], j);
        for (std::size_t d = 0; d < dates; ++d) {
          const std::size_t x = res.regimes[d];
          const double current = cell_error(model, j, d, x, res.gamma[j][d]);
          const auto best = minimize_scalar([&](double g) { return cell_error(model, j, d, x, g); }, 0.0,
                                            config_.gamma_max);
          if (best.value < current) res.gamma[j][d] = best.x;
        }
      });
      objective = total_objective(res.chain, res.params, res.gamma, res.regimes);
      res.log.push_back({it, "gamma", objective, true});

      // Volatilities.
      {
        auto trial = res.params;
        for (std::size_t j = 0; j < j_count; ++j) trial[j].sigma = sigma_or_default(res.gamma[j], trial[j].sigma);
        const double obj = total_objective(res.chain, trial, res.gamma, res.regimes);
        const bool accept = obj <= objective;
        if (accept) {
          res.params = trial;
          objective = obj;
        }
        res.log.push_back({it, "sigma", accept ? obj : objective, accept});
      }

      // Regime path; ties keep the previous date's regime.
      if (k_count > 1) {
        std::vector<SpreadModel> models;
        for (std::size_t j = 0; j < j_count; ++j) models.push_back(spread_model(res.chain, res.params[j], j));
        auto trial = res.regimes;
        for (std::size_t d = 0; d < dates; ++d) {
          std::vector<double> cost(k_count, 0.0);
          for (std::size_t x = 0; x < k_count; ++x)
            for (std::size_t j = 0; j < j_count; ++j) cost[x] += cell_error(models[j], j, d, x, res.gamma[j][d]);
          const std::size_t keep = d == 0 ? res.regimes[0] : trial[d - 1];
          std::size_t best = keep;
          for (std::size_t x = 0; x < k_count; ++x)
            if (cost[x] < cost[best] - 1e-15 * std::max(cost[best], 1e-300)) best = x;
          trial[d] = best;
        }
        const double obj = total_objective(res.chain, res.params, res.gamma, trial);
        const bool accept = obj <= objective;
        if (accept) {
          res.regimes = trial;
          objective = obj;
        }
        res.log.push_back({it, "regimes", objective, accept});

        auto est = mle_generator(res.regimes, panel_.dates, k_count);
        const RegimeChain chain(est.generator, default_labels(k_count));
        const double qobj = total_objective(chain, res.params, res.gamma, res.regimes);
        const bool qaccept = qobj <= objective;
        if (qaccept) {
          res.chain = chain;
          objective = qobj;
        }
        res.log.push_back({it, "generator", objective, qaccept});
      }
      theta_step(it, it == 1, it == 1 ? config_.global_budget : config_.local_budget, "theta");
      if (objective < epsilon) {
        res.converged = true;
        break;
      }
    }
    theta_step(config_.max_iterations + 1, false, config_.final_budget, "final-theta");
    if (objective < epsilon) res.converged = true;
    res.objective = objective;

    res.rmse_bp.assign(j_count, std::vector<double>(panel_.maturity_count()));
    res.mape.assign(j_count, std::vector<double>(panel_.maturity_count()));
    for (std::size_t j = 0; j < j_count; ++j) {
      const auto model = spread_model(res.chain, res.params[j], j);
      for (std::size_t m = 0; m < panel_.maturity_count(); ++m) {
        std::vector<double> obs(dates), fit(dates);
        for (std::size_t d = 0; d < dates; ++d) {
          obs[d] = panel_.at(j, m, d);
          fit[d] = model.spread(d, m, res.regimes[d], res.gamma[j][d]);
        }
        const auto e = fit_errors(obs, fit);
        res.rmse_bp[j][m] = e.rmse * 1e4;
        res.mape[j][m] = e.mape;
      }
    }
    if (!res.converged)
      res.warnings.push_back("objective " + format_number(objective) + " above tolerance " + format_number(epsilon));
    return res;
  }

  // Model spreads of a calibration result at every panel cell, in decimals.
  CdsPanel fitted_panel(const CalibrationResult& res) const {
    CdsPanel out = panel_;
    for (std::size_t j = 0; j < panel_.sovereign_count(); ++j) {
      const auto model = spread_model(res.chain, res.params[j], j);
      for (std::size_t m = 0; m < panel_.maturity_count(); ++m)
        for (std::size_t d = 0; d < panel_.date_count(); ++d)
          out.at(j, m, d) = model.spread(d, m, res.regimes[d], res.gamma[j][d]);
    }
    return out;
  }

  const CdsPanel& panel() const { return panel_; }
  const CalibrationConfig& config() const { return config_; }

 private:
  double sigma_or_default(std::span<const double> gamma, double fallback) const {
    try {
      const double s = estimate_sigma(gamma, panel_.dates);
      return s > 0.0 ? s : fallback;
    } catch (const NumericalError&) {
      return fallback;
    }
  }

  static std::vector<std::string> default_labels(std::size_t k) {
    std::vector<std::string> labels;
    for (std::size_t i = 1; i <= k; ++i) labels.push_back("state" + std::to_string(i));
    return labels;
  }

  CdsPanel panel_;
  std::vector<LgdSpec> lgd_;
  CalibrationConfig config_;
};

inline CalibrationResult calibrate(const CdsPanel& panel, const std::vector<LgdSpec>& lgd,
                                   const CalibrationConfig& config) {
  return Calibrator(panel, lgd, config).run();
}

}  // namespace esb
