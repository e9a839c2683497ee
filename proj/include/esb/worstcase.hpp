#pragma once

// Model-independent lower bound for the senior tranche: the comonotone loss
// law that puts as much mass as possible on joint defaults given the
// single-name expected losses ℓ̄, and a regime-switching model that
// approximates it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "esb/core.hpp"
#include "esb/pricing.hpp"

namespace esb {

// J+1 atoms with 0/1 losses. With ℓ̄ sorted as ℓ̄¹ ≤ ... ≤ ℓ̄^J, atom m lets the
// names of rank m..J−1 default and carries mass ℓ̄^{m+1} − ℓ̄^m (ℓ̄^0 = 0);
// atom J is the no-default state with mass 1 − ℓ̄^J.
struct WorstCaseDistribution {
  std::vector<double> ellbar;            // as given
  std::vector<std::size_t> order;        // order[r] = sovereign of rank r (ascending ℓ̄)
  std::vector<std::vector<int>> atoms;   // atoms[m][j] ∈ {0, 1}
  std::vector<double> probabilities;
  std::vector<double> portfolio_losses;  // Σ_j w_j atoms[m][j]

  std::size_t size() const { return atoms.size(); }

  double marginal_mean(std::size_t j) const {
    double s = 0.0;
    for (std::size_t m = 0; m < atoms.size(); ++m) s += probabilities[m] * atoms[m][j];
    return s;
  }
};

inline WorstCaseDistribution build_worst_case(std::span<const double> ellbar, std::span<const double> weights) {
  require(!ellbar.empty() && ellbar.size() == weights.size(), "expected losses and weights must match");
  for (double l : ellbar) require(l >= 0.0 && l <= 1.0, "expected losses must lie in [0, 1]");
  const std::size_t j_count = ellbar.size();
  WorstCaseDistribution d;
  d.ellbar.assign(ellbar.begin(), ellbar.end());
  d.order.resize(j_count);
  std::iota(d.order.begin(), d.order.end(), 0);
  std::stable_sort(d.order.begin(), d.order.end(), [&](std::size_t a, std::size_t b) { return ellbar[a] < ellbar[b]; });
  double previous = 0.0;
  for (std::size_t m = 0; m <= j_count; ++m) {
    std::vector<int> atom(j_count, 0);
    for (std::size_t r = m; r < j_count; ++r) atom[d.order[r]] = 1;
    const double level = m < j_count ? ellbar[d.order[m]] : 1.0;
    d.probabilities.push_back(level - previous);
    previous = level;
    double loss = 0.0;
    for (std::size_t j = 0; j < j_count; ++j) loss += weights[j] * atom[j];
    d.portfolio_losses.push_back(loss);
    d.atoms.push_back(std::move(atom));
  }
  return d;
}

struct WorstCaseTranche {
  double esb = 0.0;
  double ejb = 0.0;
  double expected_loss = 0.0;  // 1 − ESB / (1 − κ)
};

// Undiscounted values under π*; the ESB value is the lowest attainable for the
// given single-name expected losses.
inline WorstCaseTranche worst_case_tranche_values(const WorstCaseDistribution& dist, double attachment) {
  require(attachment >= 0.0 && attachment <= 1.0, "attachment point must lie in [0, 1]");
  WorstCaseTranche out;
  for (std::size_t m = 0; m < dist.size(); ++m) {
    out.esb += dist.probabilities[m] * esb_payoff(dist.portfolio_losses[m], attachment);
    out.ejb += dist.probabilities[m] * ejb_payoff(dist.portfolio_losses[m], attachment);
  }
  out.expected_loss = attachment < 1.0 ? 1.0 - out.esb / (1.0 - attachment) : 0.0;
  return out;
}

// ES_α of the worst-case single-name loss; an upper bound for ES_α of any loss
// on [0, 1] with mean ℓ̄.
inline double es_of_worst_case_marginal(double ellbar, double alpha) {
  require(alpha >= 0.0 && alpha < 1.0, "ES level must lie in [0, 1)");
  require(ellbar >= 0.0 && ellbar <= 1.0, "expected loss must lie in [0, 1]");
  return std::min(1.0 - alpha, ellbar) / (1.0 - alpha);
}

// Empirical ES_α: mean of the ⌈N(1−α)⌉ largest values (α = 0 gives the mean).
inline double empirical_es(std::vector<double> sample, double alpha) {
  require(!sample.empty(), "empty sample");
  std::sort(sample.begin(), sample.end(), std::greater<>());
  const auto tail = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(sample.size() * (1.0 - alpha) - 1e-9)));
  double s = 0.0;
  for (std::size_t i = 0; i < tail; ++i) s += sample[i];
  return s / static_cast<double>(tail);
}

// Single-name expected losses E[L_T^j] at r = 0 from a dynamic model.
inline std::vector<double> match_ellbar(const MarketState& state, const CreditModel& model,
                                        const PaymentSchedule& schedule) {
  return expected_terminal_losses(state, model, schedule);
}

struct WorstCaseModel {
  CreditModel model;              // LGD ≡ 1, K = J + 1
  MarketState initial;            // regime 0, γ = 1/n
  WorstCaseDistribution target;
  std::vector<std::size_t> atom_of_state;  // regime k ≥ 1 → atom index
};

// Regime 0 stands for "no default"; from it the chain jumps at most once into
// an absorbing regime per remaining atom, with P(X_T = k) equal to the atom's
// mass. Mean-reversion levels are n for the names defaulting in that atom and
// 1/n otherwise.
inline WorstCaseModel approximate_worst_case_model(std::span<const double> ellbar, std::span<const double> weights,
                                                   double maturity, double severity, double speed, double sigma) {
  require(maturity > 0.0, "maturity must be positive");
  require(severity >= 1.0, "severity level n must be at least 1");
  require(speed > 0.0 && sigma > 0.0, "speed and volatility must be positive");
  const auto target = build_worst_case(ellbar, weights);
  const std::size_t j_count = ellbar.size();
  const std::size_t k_count = j_count + 1;
  const double p1 = target.probabilities.back();
  if (!(p1 > 0.0)) throw NumericalError("no-default probability is zero; the generator diverges");
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k_count), static_cast<Eigen::Index>(k_count));
  WorstCaseModel out;
  out.atom_of_state.assign(k_count, j_count);
  if (p1 < 1.0) {
    const double q11 = std::log(p1) / maturity;
    for (std::size_t k = 1; k < k_count; ++k) {
      const double pk = target.probabilities[k - 1];
      q(0, static_cast<Eigen::Index>(k)) = -pk * q11 / (1.0 - p1);
    }
  }
  for (std::size_t k = 1; k < k_count; ++k) out.atom_of_state[k] = k - 1;
  std::vector<std::string> labels{"none"};
  for (std::size_t k = 1; k < k_count; ++k) labels.push_back("cluster" + std::to_string(k));
  out.model.chain = RegimeChain::with_consistent_diagonal(q, labels);
  out.model.portfolio.weights.assign(weights.begin(), weights.end());
  for (std::size_t j = 0; j < j_count; ++j) {
    SovereignParams p;
    p.id = "S" + std::to_string(j + 1);
    p.kappa = speed;
    p.sigma = sigma;
    p.omega = 0.0;
    p.mu.assign(k_count, 1.0 / severity);
    for (std::size_t k = 1; k < k_count; ++k)
      if (target.atoms[out.atom_of_state[k]][j]) p.mu[k] = severity;
    out.model.portfolio.sovereigns.push_back(p);
    out.model.portfolio.lgd.push_back(LgdSpec{std::vector<double>(k_count, 1.0), 1.5});
  }
  out.initial = MarketState::initial(0, std::vector<double>(j_count, 1.0 / severity));
  out.target = target;
  return out;
}

// Frequencies of the π* default patterns among simulated 0/1 loss vectors;
// the last entry collects patterns that are not atoms.
inline std::vector<double> cluster_frequencies(const WorstCaseDistribution& dist, std::span<const double> sovereign_losses,
                                               std::size_t sovereigns) {
  const std::size_t paths = sovereign_losses.size() / sovereigns;
  std::vector<double> freq(dist.size() + 1, 0.0);
  for (std::size_t p = 0; p < paths; ++p) {
    std::size_t defaults = 0;
    for (std::size_t j = 0; j < sovereigns; ++j) defaults += sovereign_losses[p * sovereigns + j] > 0.0;
    // The atom with d defaults is m = J − d; it matches iff exactly the d riskiest names defaulted.
    const std::size_t m = sovereigns - defaults;
    bool match = true;
    for (std::size_t j = 0; j < sovereigns && match; ++j)
      match = (sovereign_losses[p * sovereigns + j] > 0.0) == (dist.atoms[m][j] == 1);
    freq[match ? m : dist.size()] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(paths);
  return freq;
}

}  // namespace esb
