#pragma once

// Monte Carlo pricing of the senior (ESB) and junior (EJB) tranches of the
// pooled portfolio and of pooled senior national tranches (PSNT).
//
// The EJB is estimated by simulation with the portfolio loss as a regression
// control variate (its mean is known analytically); the ESB then follows from
// parity with the analytic expected terminal loss, so ESB + EJB equals
// B^{-1} E[1 − L_T] by construction. The plain simulated ESB is reported too.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "esb/core.hpp"
#include "esb/parallel.hpp"
#include "esb/pricing.hpp"
#include "esb/simulation.hpp"

namespace esb {

enum class McScheme { conditional, euler };

struct McConfig {
  std::size_t paths = 100000;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  std::size_t block_size = 2048;
  McScheme scheme = McScheme::conditional;
  double euler_step = 1e-3;
  bool independent_chains = false;

  void validate() const {
    require(paths >= 1000, "at least 1000 Monte Carlo paths required");
    require(block_size >= 1 && euler_step > 0.0, "invalid Monte Carlo configuration");
  }
};

// Terminal losses per path; `sovereign` is row-major paths × J.
struct LossSample {
  std::size_t sovereigns = 0;
  std::vector<double> portfolio;
  std::vector<double> sovereign;

  std::size_t size() const { return portfolio.size(); }
};

inline LossSample simulate_losses(const MarketState& state, const CreditModel& model,
                                  const PaymentSchedule& schedule, const McConfig& mc,
                                  std::span<const RandomInitialLoss> random_losses = {}) {
  mc.validate();
  model.validate();
  state.validate(model.sovereigns(), model.states());
  check_schedule_start(state, schedule);
  if (mc.scheme == McScheme::euler)
    require(!mc.independent_chains, "independent chains are only supported by the conditional scheme");
  const std::size_t j_count = model.sovereigns();
  auto blocks = run_blocks(mc.paths, mc.block_size, mc.threads, [&](BlockRange range) {
    LossSample part;
    part.sovereigns = j_count;
    part.portfolio.resize(range.size());
    part.sovereign.resize(range.size() * j_count);
    if (mc.scheme == McScheme::conditional) {
      PathSetOptions options;
      options.independent_chains = mc.independent_chains;
      ConditionalPathSet set(model, state.regime, schedule, range.size(), mc.seed, range.index, options,
                             random_losses);
      for (std::size_t p = 0; p < range.size(); ++p) {
        std::span<double> out(&part.sovereign[p * j_count], j_count);
        set.losses(p, state.gamma, state.loss, out);
        part.portfolio[p] = portfolio_loss(out, model.portfolio.weights);
      }
    } else {
      Rng rng = block_rng(mc.seed, range.index, 1);
      for (std::size_t p = 0; p < range.size(); ++p) {
        const auto path = simulate_path(model, state, schedule, mc.euler_step, rng, random_losses);
        std::copy(path.loss.begin(), path.loss.end(), part.sovereign.begin() + static_cast<std::ptrdiff_t>(p * j_count));
        part.portfolio[p] = path.portfolio_loss;
      }
    }
    for (double l : part.portfolio)
      if (!std::isfinite(l)) throw NumericalError("simulated loss is not finite");
    return part;
  });
  LossSample out;
  out.sovereigns = j_count;
  out.portfolio.reserve(mc.paths);
  out.sovereign.reserve(mc.paths * j_count);
  for (auto& b : blocks) {
    out.portfolio.insert(out.portfolio.end(), b.portfolio.begin(), b.portfolio.end());
    out.sovereign.insert(out.sovereign.end(), b.sovereign.begin(), b.sovereign.end());
  }
  return out;
}

struct TranchePrice {
  double attachment = 0.0;
  double horizon = 0.0;               // T − t
  double discount = 1.0;              // B(t, T)^{-1}
  double expected_terminal_loss = 0;  // analytic E[L_T]
  double esb = 0.0;
  double ejb = 0.0;
  double stderr_value = 0.0;  // shared by ESB and EJB
  double esb_raw = 0.0;       // plain simulation, diagnostic
  double esb_raw_stderr = 0.0;
  double expected_loss = 0.0;  // ℓ = 1 − ESB / ((1 − κ) B^{-1})
  double expected_loss_stderr = 0.0;
  double spread = 0.0;         // −(1/T) ln(1 − ℓ)
  double spread_linear = 0.0;  // ℓ / T
  std::size_t paths = 0;
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double stderr_value = 0.0;
};

inline Moments sample_moments(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace detail

// ESB/EJB estimators at attachment κ from simulated terminal losses.
inline TranchePrice tranche_from_losses(std::span<const double> losses, double attachment, double horizon,
                                        double discount, double expected_loss_analytic) {
  require(attachment > 0.0 && attachment < 1.0, "attachment point must lie in (0, 1)");
  require(losses.size() >= 2, "need at least two loss samples");
  const double n = static_cast<double>(losses.size());
  double my = 0.0, mc = 0.0, raw = 0.0;
  for (double l : losses) {
    my += ejb_payoff(l, attachment);
    mc += l;
    raw += esb_payoff(l, attachment);
  }
  my /= n;
  mc /= n;
  raw /= n;
  double syy = 0.0, scc = 0.0, syc = 0.0, sraw = 0.0;
  for (double l : losses) {
    const double dy = ejb_payoff(l, attachment) - my;
    const double dc = l - mc;
    const double dr = esb_payoff(l, attachment) - raw;
    syy += dy * dy;
    scc += dc * dc;
    syc += dy * dc;
    sraw += dr * dr;
  }
  const double b = scc > 0.0 ? syc / scc : 0.0;
  const double ejb = my - b * (mc - expected_loss_analytic);
  const double resid = std::max(syy - b * syc, 0.0);
  const double dof = scc > 0.0 ? n - 2.0 : n - 1.0;
  TranchePrice out;
  out.attachment = attachment;
  out.horizon = horizon;
  out.discount = discount;
  out.expected_terminal_loss = expected_loss_analytic;
  out.ejb = discount * ejb;
  out.stderr_value = discount * std::sqrt(resid / dof / n);
  out.esb = discount * (1.0 - expected_loss_analytic) - out.ejb;
  out.esb_raw = discount * raw;
  out.esb_raw_stderr = discount * std::sqrt(sraw / (n - 1.0) / n);
  const double cap = (1.0 - attachment) * discount;
  // Rounding can push ℓ a few ulps below zero when no path reaches κ.
  out.expected_loss = std::clamp(1.0 - out.esb / cap, 0.0, 1.0);
  out.expected_loss_stderr = out.stderr_value / cap;
  out.spread = -std::log(std::max(1.0 - out.expected_loss, 1e-300)) / horizon;
  out.spread_linear = out.expected_loss / horizon;
  out.paths = losses.size();
  return out;
}

inline double expected_loss_with_random(const MarketState& state, const CreditModel& model,
                                        const PaymentSchedule& schedule,
                                        std::span<const RandomInitialLoss> random_losses) {
  MarketState adjusted = state;
  for (const auto& r : random_losses) adjusted.loss[r.sovereign] = r.mean;
  return expected_terminal_loss(adjusted, model, schedule);
}

inline std::vector<TranchePrice> price_tranche_grid(const MarketState& state, const CreditModel& model,
                                                    std::span<const double> attachments,
                                                    const PaymentSchedule& schedule, const McConfig& mc,
                                                    std::span<const RandomInitialLoss> random_losses = {}) {
  const auto sample = simulate_losses(state, model, schedule, mc, random_losses);
  const double el = expected_loss_with_random(state, model, schedule, random_losses);
  const double horizon = schedule.maturity() - state.date;
  const double discount = model.curve.discount(state.date, schedule.maturity());
  std::vector<TranchePrice> out;
  for (double a : attachments) out.push_back(tranche_from_losses(sample.portfolio, a, horizon, discount, el));
  return out;
}

inline TranchePrice price_tranches(const MarketState& state, const CreditModel& model, const TrancheSpec& tranche,
                                   const PaymentSchedule& schedule, const McConfig& mc) {
  tranche.validate();
  require(std::abs(schedule.maturity() - state.date - tranche.maturity) < 1e-9,
          "tranche maturity does not match the schedule");
  const double a[1] = {tranche.attachment};
  return price_tranche_grid(state, model, a, schedule, mc).front();
}

struct PsntPrice {
  double attachment = 0.0;
  double expected_loss = 0.0;  // (1/(1−κ)) Σ w_j E[(L_T^j − κ)^+]
  double stderr_value = 0.0;
  double spread = 0.0;  // −(1/T) ln(1 − ℓ)
  double spread_linear = 0.0;
};

inline PsntPrice psnt_from_losses(const LossSample& sample, std::span<const double> weights, double attachment,
                                  double horizon) {
  require(attachment > 0.0 && attachment < 1.0, "attachment point must lie in (0, 1)");
  std::vector<double> per_path(sample.size());
  for (std::size_t p = 0; p < sample.size(); ++p) {
    double v = 0.0;
    for (std::size_t j = 0; j < sample.sovereigns; ++j)
      v += weights[j] * std::max(sample.sovereign[p * sample.sovereigns + j] - attachment, 0.0);
    per_path[p] = v / (1.0 - attachment);
  }
  const auto m = detail::sample_moments(per_path);
  PsntPrice out;
  out.attachment = attachment;
  out.expected_loss = m.mean;
  out.stderr_value = m.stderr_value;
  out.spread = -std::log(std::max(1.0 - m.mean, 1e-300)) / horizon;
  out.spread_linear = m.mean / horizon;
  return out;
}

inline PsntPrice psnt_spread(const MarketState& state, const CreditModel& model, double attachment,
                             const PaymentSchedule& schedule, const McConfig& mc) {
  const auto sample = simulate_losses(state, model, schedule, mc);
  return psnt_from_losses(sample, model.portfolio.weights, attachment, schedule.maturity() - state.date);
}

// Same quantity through the default-leg kernel with the per-regime payoff
// E[(δ − κ)^+ | X = k] in place of the mean LGD.
inline PsntPrice psnt_spread_analytic(const MarketState& state, const CreditModel& model, double attachment,
                                      const PaymentSchedule& schedule, const TransformOptions& options = {}) {
  require(attachment > 0.0 && attachment < 1.0, "attachment point must lie in (0, 1)");
  state.validate(model.sovereigns(), model.states());
  check_schedule_start(state, schedule);
  double total = 0.0;
  for (std::size_t j = 0; j < model.sovereigns(); ++j) {
    const auto& lgd = model.portfolio.lgd[j];
    double value;
    if (state.defaulted(j)) {
      value = std::max(state.loss[j] - attachment, 0.0);
    } else {
      Eigen::VectorXd payoff(static_cast<Eigen::Index>(model.states()));
      for (std::size_t k = 0; k < model.states(); ++k)
        payoff[static_cast<Eigen::Index>(k)] = lgd.call_value(k, attachment);
      const CdsKernel kernel(model.chain, model.portfolio.sovereigns[j], payoff, schedule.times(), 0.0, options);
      value = kernel.expected_loss(kernel.periods(), state.regime, state.gamma[j]);
    }
    total += model.portfolio.weights[j] * value;
  }
  PsntPrice out;
  out.attachment = attachment;
  out.expected_loss = total / (1.0 - attachment);
  const double horizon = schedule.maturity() - state.date;
  out.spread = -std::log(std::max(1.0 - out.expected_loss, 1e-300)) / horizon;
  out.spread_linear = out.expected_loss / horizon;
  return out;
}

}  // namespace esb
