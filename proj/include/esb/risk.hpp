#pragma once

// Scenario analysis, crisis parameter sets, historical spread series and
// VaR/ES of short-horizon relative losses of the senior tranche.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "esb/core.hpp"
#include "esb/parallel.hpp"
#include "esb/pricing.hpp"
#include "esb/simulation.hpp"
#include "esb/tranche.hpp"

namespace esb {

// ---------------------------------------------------------------------------
// Scenarios

struct ScenarioSpec {
  std::string name = "base";
  std::optional<std::size_t> regime;      // override of X_0 (0-based)
  std::vector<double> hazard_multiplier;  // empty = all ones
  std::vector<double> initial_loss;       // empty = keep the state's losses
  std::vector<RandomInitialLoss> random_losses;
  std::string parameter_set = "base";     // base | crisis1 | crisis2

  void validate(std::size_t sovereigns) const {
    require(hazard_multiplier.empty() || hazard_multiplier.size() == sovereigns,
            "hazard multiplier must have one entry per sovereign");
    for (double m : hazard_multiplier) require(m > 0.0, "hazard multipliers must be positive");
    require(initial_loss.empty() || initial_loss.size() == sovereigns, "initial loss must have length J");
    for (double l : initial_loss) require(l >= 0.0 && l <= 1.0, "initial losses must lie in [0, 1]");
    for (const auto& r : random_losses) {
      require(r.sovereign < sovereigns, "random initial loss refers to an unknown sovereign");
      require(r.mean > 0.0 && r.mean <= 1.0 && r.concentration > 0.0, "invalid random initial loss");
    }
  }

  MarketState apply(const MarketState& base) const {
    validate(base.gamma.size());
    MarketState s = base;
    if (regime) s.regime = *regime;
    for (std::size_t j = 0; j < hazard_multiplier.size(); ++j) s.gamma[j] *= hazard_multiplier[j];
    if (!initial_loss.empty()) s.loss = initial_loss;
    return s;
  }
};

// The named scenarios of the scenario study. `defaulter` is the sovereign
// whose default drives the contagion cases.
inline ScenarioSpec named_scenario(const std::string& name, std::size_t sovereigns, std::size_t defaulter,
                                   std::size_t states = 3) {
  ScenarioSpec s;
  s.name = name;
  const RandomInitialLoss default_loss{defaulter, 0.5, 1.5};
  const std::size_t worst = states - 1;
  if (name == "base") {
  } else if (name == "hazard110") {
    s.hazard_multiplier.assign(sovereigns, 1.1);
  } else if (name == "italy_default") {
    s.random_losses.push_back(default_loss);
  } else if (name == "state2") {
    s.regime = 1;
  } else if (name == "state3") {
    s.regime = worst;
  } else if (name == "contagion1") {
    s.random_losses.push_back(default_loss);
    s.regime = 1;
  } else if (name == "contagion2") {
    s.random_losses.push_back(default_loss);
    s.regime = worst;
  } else if (name == "contagion3") {
    s.random_losses.push_back(default_loss);
    s.regime = worst;
    s.parameter_set = "crisis2";
  } else {
    throw ValidationError("unknown scenario '" + name + "'");
  }
  return s;
}

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"base",   "hazard110",  "italy_default", "state2",
                                              "state3", "contagion1", "contagion2",    "contagion3"};
  return names;
}

struct LossProbability {
  double attachment = 0.0;
  double probability = 0.0;
  double stderr_value = 0.0;
};

// Q(L_T > κ) for each κ from one simulated loss sample.
inline std::vector<LossProbability> loss_probability(const MarketState& state, const CreditModel& model,
                                                     std::span<const double> attachments,
                                                     const PaymentSchedule& schedule, const McConfig& mc,
                                                     std::span<const RandomInitialLoss> random_losses = {}) {
  const auto sample = simulate_losses(state, model, schedule, mc, random_losses);
  std::vector<LossProbability> out;
  const double n = static_cast<double>(sample.size());
  for (double a : attachments) {
    double hits = 0.0;
    for (double l : sample.portfolio) hits += l > a ? 1.0 : 0.0;
    const double p = hits / n;
    out.push_back({a, p, std::sqrt(p * (1.0 - p) / n)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crisis parameter sets

// For each sovereign, finds μ̃(K) such that E[L_T^j] under the generator
// `crisis` equals its value under `base` (other parameters unchanged).
inline CreditModel match_crisis_parameters(const CreditModel& base, const RegimeChain& crisis,
                                           const MarketState& state, const PaymentSchedule& schedule,
                                           double tolerance = 1e-8) {
  require(crisis.states() == base.states(), "crisis generator must have the same number of states");
  CreditModel out = base;
  out.chain = crisis;
  const std::size_t last = base.states() - 1;
  for (std::size_t j = 0; j < base.sovereigns(); ++j) {
    if (state.defaulted(j)) continue;
    const auto target_kernel = make_cds_kernel(base, j, schedule);
    const double target = target_kernel.expected_loss(target_kernel.periods(), state.regime, state.gamma[j]);
    auto expected = [&](double mu_last) {
      SovereignParams p = base.portfolio.sovereigns[j];
      p.mu[last] = mu_last;
      const CdsKernel k(crisis, p, lgd_mean_vector(base.portfolio.lgd[j]), schedule.times(), 0.0);
      return k.expected_loss(k.periods(), state.regime, state.gamma[j]) - target;
    };
    double lo = base.portfolio.sovereigns[j].mu[last];
    double hi = lo;
    double f_lo = expected(lo);
    if (f_lo == 0.0) continue;
    // E[L_T] is increasing in μ(K); walk outward until the sign changes.
    double f_hi = f_lo;
    int guard = 0;
    if (f_lo < 0.0) {
      while (f_hi < 0.0 && guard++ < 60) {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = expected(hi);
      }
    } else {
      while (f_lo > 0.0 && guard++ < 60) {
        hi = lo;
        f_hi = f_lo;
        lo *= 0.5;
        f_lo = expected(lo);
      }
    }
    if (!(f_lo <= 0.0 && f_hi >= 0.0))
      throw NumericalError("could not bracket the crisis level for " + base.portfolio.sovereigns[j].id);
    std::uintmax_t iterations = 200;
    const auto root = boost::math::tools::toms748_solve(
        expected, lo, hi, f_lo, f_hi,
        [](double a, double b) { return std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(a)); }, iterations);
    const double mu = 0.5 * (root.first + root.second);
    if (std::abs(expected(mu)) > tolerance)
      throw NumericalError("crisis level match failed for " + base.portfolio.sovereigns[j].id);
    out.portfolio.sovereigns[j].mu[last] = mu;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Repricing with common random numbers

// Prices the tranches at many market states on one date with the same chain
// paths, thresholds and LGD draws, so that prices are smooth in the state.
// Each evaluation goes through tranche_from_losses, the same estimator used by
// price_tranche_grid.
class TranchePricer {
 public:
  TranchePricer(const CreditModel& model, const PaymentSchedule& schedule, std::size_t paths, std::uint64_t seed,
                const TransformOptions& options = {})
      : model_(&model), schedule_(schedule) {
    require(paths >= 2, "pricer needs at least two paths");
    PathSetOptions set_options;
    set_options.cache_lgd = true;
    for (std::size_t k = 0; k < model.states(); ++k)
      sets_.emplace_back(model, k, schedule, paths, seed, k, set_options);
    for (std::size_t j = 0; j < model.sovereigns(); ++j) kernels_.push_back(make_cds_kernel(model, j, schedule, options));
  }

  double expected_terminal_loss(const MarketState& state) const {
    double total = 0.0;
    for (std::size_t j = 0; j < model_->sovereigns(); ++j) {
      const double l = state.defaulted(j) ? state.loss[j]
                                          : kernels_[j].expected_loss(kernels_[j].periods(), state.regime, state.gamma[j]);
      total += model_->portfolio.weights[j] * l;
    }
    return total;
  }

  std::vector<TranchePrice> price(const MarketState& state, std::span<const double> attachments,
                                  std::vector<double>& buffer) const {
    const auto& set = sets_[state.regime];
    buffer.resize(set.size());
    std::vector<double> scratch;
    for (std::size_t p = 0; p < set.size(); ++p) buffer[p] = set.portfolio_loss(p, state.gamma, state.loss, scratch);
    const double el = expected_terminal_loss(state);
    const double horizon = schedule_.maturity() - schedule_.start();
    const double discount = model_->curve.discount(schedule_.start(), schedule_.maturity());
    std::vector<TranchePrice> out;
    for (double a : attachments) out.push_back(tranche_from_losses(buffer, a, horizon, discount, el));
    return out;
  }

  std::vector<TranchePrice> price(const MarketState& state, std::span<const double> attachments) const {
    std::vector<double> buffer;
    return price(state, attachments, buffer);
  }

  const PaymentSchedule& schedule() const { return schedule_; }

 private:
  const CreditModel* model_;
  PaymentSchedule schedule_;
  std::vector<ConditionalPathSet> sets_;
  std::vector<CdsKernel> kernels_;
};

// ---------------------------------------------------------------------------
// Historical simulation

struct SpreadSeries {
  double attachment = 0.0;
  std::vector<double> dates;
  std::vector<double> spreads;  // c^{ESB,κ}
  double volatility = 0.0;      // sample standard deviation of the series
};

struct HistoricalSpreads {
  std::vector<SpreadSeries> series;
  std::vector<std::string> warnings;
};

inline double sample_stdev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

// Re-prices the tranche at each historical state with a fixed time to
// maturity. States with non-finite or negative hazards are skipped.
inline HistoricalSpreads historical_spread_trajectory(std::span<const MarketState> states, const CreditModel& model,
                                                      std::span<const double> attachments, double maturity,
                                                      std::size_t paths, std::uint64_t seed, unsigned threads) {
  const auto schedule = PaymentSchedule::regular(maturity);
  const TranchePricer pricer(model, schedule, paths, seed);
  HistoricalSpreads out;
  for (double a : attachments) out.series.push_back({a, {}, {}, 0.0});
  std::vector<std::optional<std::vector<TranchePrice>>> prices(states.size());
  parallel_for(states.size(), threads, [&](std::size_t d) {
    MarketState s = states[d];
    bool ok = s.regime < model.states() && s.gamma.size() == model.sovereigns();
    for (double g : s.gamma) ok = ok && std::isfinite(g) && g >= 0.0;
    if (!ok) return;
    if (s.loss.size() != s.gamma.size()) s.loss.assign(s.gamma.size(), 0.0);
    s.date = 0.0;
    prices[d] = pricer.price(s, attachments);
  });
  for (std::size_t d = 0; d < states.size(); ++d) {
    if (!prices[d]) {
      out.warnings.push_back("skipping date index " + std::to_string(d) + ": incomplete state");
      continue;
    }
    for (std::size_t i = 0; i < attachments.size(); ++i) {
      out.series[i].dates.push_back(states[d].date);
      out.series[i].spreads.push_back((*prices[d])[i].spread);
    }
  }
  for (auto& s : out.series) s.volatility = sample_stdev(s.spreads);
  return out;
}

// ---------------------------------------------------------------------------
// VaR / ES

struct RiskReport {
  double alpha = 0.0;
  double var = 0.0;
  double es = 0.0;
  double horizon = 0.25;
  std::size_t paths = 0;
};

// VaR = ⌈Nα⌉-th order statistic, ES = mean of the ⌈N(1−α)⌉ largest values.
inline RiskReport var_es(std::vector<double> sample, double alpha, double horizon = 0.25) {
  require(!sample.empty(), "empty loss sample");
  require(alpha > 0.0 && alpha < 1.0, "confidence level must lie in (0, 1)");
  for (double x : sample) if (!std::isfinite(x)) throw NumericalError("non-finite relative loss");
  std::sort(sample.begin(), sample.end());
  const std::size_t n = sample.size();
  const auto rank = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(n * alpha - 1e-9)), 1, n);
  const auto tail = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(n * (1.0 - alpha) - 1e-9)), 1, n);
  RiskReport r;
  r.alpha = alpha;
  r.horizon = horizon;
  r.paths = n;
  r.var = sample[rank - 1];
  double s = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) s += sample[i];
  r.es = s / static_cast<double>(tail);
  return r;
}

struct RelativeLossConfig {
  double horizon = 0.25;
  double maturity = 5.0;
  std::size_t outer_paths = 100000;
  std::size_t inner_paths = 10000;
  double euler_step = 1e-3;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  std::size_t block_size = 1024;
};

// Simulates (X, γ, L) at the horizon under the real-world model: exact chain,
// Euler hazards and bucketed defaults on the quarterly grid.
inline std::vector<MarketState> simulate_horizon_states(const MarketState& start, const CreditModel& real_world,
                                                        double horizon, std::size_t paths, double euler_step,
                                                        std::uint64_t seed, unsigned threads, std::size_t block_size) {
  for (const auto& p : real_world.portfolio.sovereigns)
    require(p.measure == Measure::real_world, "horizon simulation needs real-world parameters (" + p.id + ")");
  const PaymentSchedule grid({start.date, start.date + horizon});
  auto blocks = run_blocks(paths, block_size, threads, [&](BlockRange range) {
    Rng rng = block_rng(seed, range.index, 7);
    std::vector<MarketState> part;
    part.reserve(range.size());
    for (std::size_t p = 0; p < range.size(); ++p) {
      const auto path = simulate_path(real_world, start, grid, euler_step, rng);
      MarketState s;
      s.date = start.date + horizon;
      s.regime = path.chain.state_at(start.date + horizon);
      s.loss = path.loss;
      s.gamma.resize(real_world.sovereigns());
      for (std::size_t j = 0; j < real_world.sovereigns(); ++j) s.gamma[j] = path.hazards[j].values.back();
      part.push_back(std::move(s));
    }
    return part;
  });
  std::vector<MarketState> out;
  out.reserve(paths);
  for (auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

struct RelativeLosses {
  std::vector<double> attachments;
  std::vector<double> initial_prices;         // h(0)
  std::vector<std::vector<double>> losses;    // [κ][path] R = 1 − h(horizon)/h(0)
};

// Horizon states come from the real-world model, prices from the risk-neutral
// one; the measure tags are checked.
inline RelativeLosses relative_losses(const MarketState& start, const CreditModel& risk_neutral,
                                      const CreditModel& real_world, std::span<const double> attachments,
                                      const RelativeLossConfig& config) {
  for (const auto& p : risk_neutral.portfolio.sovereigns)
    require(p.measure == Measure::risk_neutral, "repricing needs risk-neutral parameters (" + p.id + ")");
  require(config.horizon > 0.0 && config.horizon < config.maturity, "horizon must precede maturity");
  const auto now = PaymentSchedule::regular(config.maturity, 4.0, start.date);
  std::vector<double> later_times;
  for (double t : now.times())
    if (t >= start.date + config.horizon - 1e-12) later_times.push_back(t);
  require(std::abs(later_times.front() - start.date - config.horizon) < 1e-9, "horizon must be a payment date");
  const PaymentSchedule later(later_times);

  const TranchePricer pricer_now(risk_neutral, now, config.inner_paths, config.seed);
  const TranchePricer pricer_later(risk_neutral, later, config.inner_paths, config.seed + 1);
  RelativeLosses out;
  out.attachments.assign(attachments.begin(), attachments.end());
  for (const auto& p : pricer_now.price(start, attachments)) out.initial_prices.push_back(p.esb);

  const auto states = simulate_horizon_states(start, real_world, config.horizon, config.outer_paths,
                                              config.euler_step, config.seed + 2, config.threads, config.block_size);
  out.losses.assign(attachments.size(), std::vector<double>(states.size()));
  run_blocks(states.size(), config.block_size, config.threads, [&](BlockRange range) {
    std::vector<double> buffer;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      const auto prices = pricer_later.price(states[i], attachments, buffer);
      for (std::size_t a = 0; a < attachments.size(); ++a)
        out.losses[a][i] = 1.0 - prices[a].esb / out.initial_prices[a];
    }
    return 0;
  });
  return out;
}

}  // namespace esb
