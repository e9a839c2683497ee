#pragma once

// Synthetic CDS panels: simulate the regime chain and the hazards, price CDS
// at every date and maturity, then add Gaussian noise in basis points.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "esb/core.hpp"
#include "esb/em.hpp"
#include "esb/io.hpp"
#include "esb/parallel.hpp"
#include "esb/pricing.hpp"
#include "esb/simulation.hpp"

namespace esb {

struct SyntheticConfig {
  std::size_t dates = 200;
  int spacing_days = 7;
  std::string first_date = "2009-01-05";
  std::vector<double> maturities{1.0, 5.0};
  double noise_bp = 0.0;
  std::size_t initial_regime = 0;
  double euler_step = 1e-3;
  std::uint64_t seed = 1;
  TransformOptions pricing;
};

struct SyntheticPanel {
  CdsPanel panel;
  std::vector<std::size_t> regimes;        // true X at each date
  std::vector<std::vector<double>> gamma;  // true γ [j][date]
};

inline std::string iso_date_plus(const std::string& first, int offset) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0, d = 0;
  require(std::sscanf(first.c_str(), "%d-%u-%u", &y, &m, &d) == 3, "invalid first date '" + first + "'");
  const year_month_day start{year{y}, month{m}, day{d}};
  require(start.ok(), "invalid first date '" + first + "'");
  const year_month_day out{sys_days{start} + days{offset}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(out.year()), static_cast<unsigned>(out.month()),
                static_cast<unsigned>(out.day()));
  return buf;
}

// Calendar time starts at the first panel date; γ_0 = μ(X_0).
inline SyntheticPanel generate_synthetic_panel(const CreditModel& model, const SyntheticConfig& config) {
  model.validate();
  require(config.dates >= 2 && config.spacing_days >= 1, "synthetic panel needs at least two dates");
  require(config.noise_bp >= 0.0, "noise must be nonnegative");
  model.chain.check_state(config.initial_regime);
  const std::size_t j_count = model.sovereigns();
  SyntheticPanel out;
  auto& panel = out.panel;
  for (std::size_t d = 0; d < config.dates; ++d) {
    const int days = static_cast<int>(d) * config.spacing_days;
    panel.date_labels.push_back(iso_date_plus(config.first_date, days));
    panel.dates.push_back(static_cast<double>(days) / 365.0);
  }
  for (const auto& p : model.portfolio.sovereigns) panel.sovereigns.push_back(p.id);
  panel.maturities = config.maturities;
  panel.resize();

  Rng rng = block_rng(config.seed, 0, 0x5e);
  const double horizon = panel.dates.back();
  const ChainPath chain = simulate_chain(model.chain, config.initial_regime, 0.0, horizon, rng);
  for (double t : panel.dates) out.regimes.push_back(chain.state_at(t));
  out.gamma.assign(j_count, std::vector<double>(config.dates));
  for (std::size_t j = 0; j < j_count; ++j) {
    const auto& p = model.portfolio.sovereigns[j];
    const auto path = simulate_hazards(p, chain, p.level(config.initial_regime, 0.0), config.euler_step, rng);
    for (std::size_t d = 0; d < config.dates; ++d) {
      const double pos = panel.dates[d] / path.step;
      const auto i = std::min(static_cast<std::size_t>(std::llround(pos)), path.values.size() - 1);
      out.gamma[j][d] = path.values[i];
    }
  }

  double longest = 0.0;
  for (double u : config.maturities) longest = std::max(longest, u);
  std::normal_distribution<double> noise(0.0, config.noise_bp * 1e-4);
  for (std::size_t d = 0; d < config.dates; ++d) {
    const auto grid = PaymentSchedule::regular(longest, 4.0, panel.dates[d]);
    for (std::size_t j = 0; j < j_count; ++j) {
      const auto kernel = CdsKernel(model.chain, model.portfolio.sovereigns[j], lgd_mean_vector(model.portfolio.lgd[j]),
                                    grid.times(), model.curve.rate, config.pricing);
      for (std::size_t m = 0; m < config.maturities.size(); ++m) {
        double s = kernel.fair_spread(kernel.periods_until(config.maturities[m]), out.regimes[d], out.gamma[j][d]);
        if (config.noise_bp > 0.0) s = std::max(s + noise(rng), 0.0);
        panel.at(j, m, d) = s;
      }
    }
  }
  return out;
}

struct SyntheticHazards {
  HazardPanel panel;
  std::vector<std::size_t> regimes;
};

// Hazard trajectories sampled every `spacing_days` for `years`, each sample
// interval split into `substeps` Euler steps. γ_0 = μ(X_0).
inline SyntheticHazards simulate_hazard_panel(const CreditModel& model, double years, int spacing_days,
                                              std::size_t initial_regime, std::uint64_t seed,
                                              std::size_t substeps = 20) {
  model.validate();
  require(years > 0.0 && spacing_days >= 1 && substeps >= 1, "invalid hazard panel layout");
  model.chain.check_state(initial_regime);
  const double h = static_cast<double>(spacing_days) / 365.0;
  const auto n = static_cast<std::size_t>(std::floor(years / h + 1e-9)) + 1;
  SyntheticHazards out;
  for (std::size_t m = 0; m < n; ++m) out.panel.dates.push_back(h * static_cast<double>(m));
  Rng rng = block_rng(seed, 0, 0x656d);
  const ChainPath chain = simulate_chain(model.chain, initial_regime, 0.0, out.panel.dates.back(), rng);
  for (double t : out.panel.dates) out.regimes.push_back(chain.state_at(t));
  for (const auto& p : model.portfolio.sovereigns) {
    const auto path = simulate_hazards(p, chain, p.level(initial_regime, 0.0), h / static_cast<double>(substeps), rng);
    std::vector<double> g(n);
    for (std::size_t m = 0; m < n; ++m) g[m] = path.values[std::min(m * substeps, path.values.size() - 1)];
    out.panel.sovereigns.push_back(p.id);
    out.panel.gamma.push_back(std::move(g));
  }
  return out;
}

}  // namespace esb
