#pragma once

// The shipped parameter sets: published risk-neutral dynamics, their crisis
// variants, and the real-world estimate.

#include <string>

#include "esb/core.hpp"
#include "esb/io.hpp"
#include "esb/risk.hpp"

namespace esb {

inline CreditModel load_model(const std::string& hazard_file, const std::string& generator_file,
                              const std::string& lgd_file, const std::string& weights_file) {
  CreditModel m{load_generator(generator_file),
                assemble_portfolio(load_hazard_params(hazard_file), load_lgd(lgd_file), load_weights(weights_file)),
                {}};
  m.validate();
  return m;
}

// Published risk-neutral parameters including the time trend ω.
inline CreditModel published_model() {
  return load_model(data_path("hazard_rn.tsv"), data_path("generator_base.tsv"), data_path("lgd_means.tsv"),
                    data_path("weights_gdp2018.tsv"));
}

// Published parameters with ω = 0: the base set for pricing, scenarios and risk.
inline CreditModel base_model() {
  auto m = published_model();
  for (auto& p : m.portfolio.sovereigns) p.omega = 0.0;
  return m;
}

inline CreditModel real_world_model() {
  return load_model(data_path("hazard_rw_em.tsv"), data_path("generator_rw_em.tsv"), data_path("lgd_means.tsv"),
                    data_path("weights_gdp2018.tsv"));
}

// Expansion regime with every hazard at its expansion level.
inline MarketState representative_state(const CreditModel& model) {
  std::vector<double> gamma;
  for (const auto& p : model.portfolio.sovereigns) gamma.push_back(p.mu[0]);
  return MarketState::initial(0, gamma);
}

// "base", "crisis1" or "crisis2"; crisis levels are matched at `state`.
inline CreditModel parameter_set(const std::string& name, const MarketState& state,
                                 const PaymentSchedule& schedule = PaymentSchedule::standard()) {
  auto base = base_model();
  if (name == "base") return base;
  if (name == "crisis1" || name == "crisis2")
    return match_crisis_parameters(base, load_generator(data_path("generator_" + name + ".tsv")), state, schedule);
  if (name == "published") return published_model();
  if (name == "real-world") return real_world_model();
  throw ValidationError("unknown parameter set '" + name + "'");
}

}  // namespace esb
