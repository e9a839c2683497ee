// Command-line front end. Every run writes its outputs and a manifest.json
// into the output directory.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "esb/esb.hpp"
#include "esb/manifest.hpp"
#include "esb/trace.hpp"

namespace fs = std::filesystem;
using namespace esb;

namespace {

std::string num(double x) { return format_number(x); }

struct Globals {
  std::string out = "out";
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
};

struct ModelOptions {
  std::string params = "base";
  std::string hazard, generator, lgd, weights;
  std::optional<std::size_t> regime;  // 1-based on the command line
};

void add_model_options(CLI::App* app, ModelOptions& m) {
  app->add_option("--params", m.params, "Parameter set: base, crisis1, crisis2, published, real-world")
      ->check(CLI::IsMember({"base", "crisis1", "crisis2", "published", "real-world"}));
  app->add_option("--hazard", m.hazard, "Hazard parameter file (overrides --params)")->check(CLI::ExistingFile);
  app->add_option("--generator", m.generator, "Generator file, required with --hazard")->check(CLI::ExistingFile);
  app->add_option("--lgd", m.lgd, "LGD table")->check(CLI::ExistingFile);
  app->add_option("--weights", m.weights, "Portfolio weights")->check(CLI::ExistingFile);
  app->add_option("--regime", m.regime, "Initial regime (1-based); hazards stay at their expansion levels")
      ->check(CLI::PositiveNumber);
}

struct LoadedModel {
  CreditModel model;
  MarketState state;
  std::vector<std::string> inputs;
};

std::string or_default(const std::string& path, const std::string& name) {
  return path.empty() ? data_path(name) : path;
}

LoadedModel load(const ModelOptions& m) {
  LoadedModel out;
  const std::string lgd = or_default(m.lgd, "lgd_means.tsv");
  const std::string weights = or_default(m.weights, "weights_gdp2018.tsv");
  if (!m.hazard.empty()) {
    if (m.generator.empty()) throw ValidationError("--hazard requires --generator");
    out.model = load_model(m.hazard, m.generator, lgd, weights);
    out.inputs = {m.hazard, m.generator, lgd, weights};
  } else {
    const bool custom = !m.lgd.empty() || !m.weights.empty();
    std::string hazard = data_path("hazard_rn.tsv"), generator = data_path("generator_base.tsv");
    if (m.params == "real-world") {
      hazard = data_path("hazard_rw_em.tsv");
      generator = data_path("generator_rw_em.tsv");
    }
    if (custom) {
      out.model = load_model(hazard, generator, lgd, weights);
      if (m.params != "published" && m.params != "real-world")
        for (auto& p : out.model.portfolio.sovereigns) p.omega = 0.0;
      if (m.params == "crisis1" || m.params == "crisis2")
        out.model = match_crisis_parameters(out.model, load_generator(data_path("generator_" + m.params + ".tsv")),
                                            representative_state(out.model), PaymentSchedule::standard());
    } else {
      out.model = parameter_set(m.params, representative_state(base_model()));
    }
    out.inputs = {hazard, generator, lgd, weights};
    if (m.params == "crisis1" || m.params == "crisis2") out.inputs.push_back(data_path("generator_" + m.params + ".tsv"));
  }
  out.state = representative_state(out.model);
  if (m.regime) {
    require(*m.regime >= 1 && *m.regime <= out.model.states(), "--regime out of range");
    out.state.regime = *m.regime - 1;
  }
  return out;
}

void check_grid(const std::vector<double>& kappas) {
  require(!kappas.empty(), "empty attachment grid");
  for (double k : kappas) require(k > 0.0 && k < 1.0, "attachment points must lie in (0, 1)");
}

CreditModel subset(const CreditModel& full, const std::vector<std::string>& ids) {
  if (ids.empty()) return full;
  CreditModel m;
  m.chain = full.chain;
  m.curve = full.curve;
  for (const auto& id : ids) {
    const auto j = full.portfolio.index_of(id);
    m.portfolio.sovereigns.push_back(full.portfolio.sovereigns[j]);
    m.portfolio.lgd.push_back(full.portfolio.lgd[j]);
    m.portfolio.weights.push_back(full.portfolio.weights[j]);
  }
  double total = 0.0;
  for (double w : m.portfolio.weights) total += w;
  for (double& w : m.portfolio.weights) w /= total;
  return m;
}

// Hazard trajectories as written by `calibrate` or `synth --kind hazard`.
HazardPanel read_gamma_csv(const std::string& path) {
  const auto csv = read_csv(path);
  const auto cd = csv.column("date"), cs = csv.column("sovereign"), cg = csv.column("gamma");
  std::map<double, std::string> dates;
  std::vector<std::string> ids;
  std::map<std::pair<double, std::string>, double> cells;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = path + ": row " + std::to_string(r + 2);
    require(row.size() == csv.header.size(), where + ": wrong field count");
    const double t = parse_date_years(row[cd], where);
    dates.emplace(t, row[cd]);
    if (std::find(ids.begin(), ids.end(), row[cs]) == ids.end()) ids.push_back(row[cs]);
    if (!cells.emplace(std::make_pair(t, row[cs]), parse_number(row[cg], where)).second)
      throw ValidationError(where + ": duplicate cell");
  }
  HazardPanel panel;
  panel.sovereigns = ids;
  require(!dates.empty(), path + ": no rows");
  const double origin = dates.begin()->first;
  for (const auto& [t, label] : dates) panel.dates.push_back(t - origin);
  for (const auto& id : ids) {
    std::vector<double> g;
    for (const auto& [t, label] : dates) {
      auto it = cells.find({t, id});
      if (it == cells.end()) throw ValidationError(path + ": no value for " + id + " on " + label);
      g.push_back(it->second);
    }
    panel.gamma.push_back(std::move(g));
  }
  panel.validate();
  return panel;
}

void write_gamma_csv(const std::string& path, const std::vector<std::string>& labels,
                     const std::vector<std::string>& ids, const std::vector<std::vector<double>>& gamma) {
  CsvWriter w(path, {"date", "sovereign", "gamma"});
  for (std::size_t d = 0; d < labels.size(); ++d)
    for (std::size_t j = 0; j < ids.size(); ++j) w.row({labels[d], ids[j], num(gamma[j][d])});
}

void write_regimes_csv(const std::string& path, const std::vector<std::string>& labels,
                       const std::vector<std::size_t>& regimes) {
  CsvWriter w(path, {"date", "regime"});
  for (std::size_t d = 0; d < labels.size(); ++d) w.row({labels[d], std::to_string(regimes[d] + 1)});
}

std::vector<std::string> dates_from(const std::string& first, std::size_t n, int spacing) {
  std::vector<std::string> out;
  for (std::size_t d = 0; d < n; ++d) out.push_back(iso_date_plus(first, static_cast<int>(d) * spacing));
  return out;
}

// One command invocation: the outputs it produced and the inputs it read.
struct RunRecord {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

class Cli {
 public:
  Cli() : app_("Senior/junior sovereign bond tranche model") { build(); }

  int run(std::vector<std::string> args);

 private:
  void build();
  std::string out_file(const std::string& name) { return (fs::path(g_.out) / name).string(); }
  McConfig mc() const {
    McConfig c;
    c.paths = paths_;
    c.seed = g_.seed;
    c.threads = g_.threads;
    return c;
  }

  void cmd_price();
  void cmd_worst_case();
  void cmd_scenario();
  void cmd_risk();
  void cmd_calibrate();
  void cmd_em();
  void cmd_synth();

  CLI::App app_;
  Globals g_;
  RunRecord rec_;
  std::function<void()> action_;
  CLI::App* selected_ = nullptr;

  ModelOptions model_;
  std::vector<double> kappas_{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  std::size_t paths_ = 100000;
  double maturity_ = 5.0;
  std::string scheme_ = "conditional";
  bool independent_ = false;
  double concentration_ = 0.0;

  std::string ellbar_from_ = "params";
  std::vector<double> ellbar_;

  std::vector<std::string> specs_{"all"};
  std::string defaulter_ = "ITA";
  std::string trace_;

  std::size_t outer_ = 100000, inner_ = 10000;
  std::vector<double> alphas_{0.95, 0.99};
  double horizon_ = 0.25;
  std::string rw_hazard_, rw_generator_;

  std::string panel_path_;
  CalibrationConfig cal_;

  std::string gamma_path_;
  std::size_t em_states_ = 3;
  std::size_t em_iterations_ = 200;
  double factor_ = 1.0;
  std::vector<std::string> flagged_;
  std::string start_hazard_, start_generator_;

  std::string kind_ = "cds";
  std::vector<std::string> sovereigns_;
  SyntheticConfig synth_;
  double years_ = 10.0;
  std::size_t initial_regime_ = 1;

  std::string manifest_path_;
};

void Cli::build() {
  app_.require_subcommand(1);
  app_.fallthrough();
  app_.option_defaults()->always_capture_default();
  app_.set_config("--config", "", "TOML configuration file");
  app_.add_option("--out", g_.out, "Output directory");
  app_.add_option("--seed", g_.seed, "Random seed");
  app_.add_option("--threads", g_.threads, "Worker threads (default from ESB_THREADS)")->check(CLI::PositiveNumber);

  auto* price = app_.add_subcommand("price", "Tranche prices, expected losses and spreads over a grid of attachments");
  add_model_options(price, model_);
  price->add_option("--kappa", kappas_, "Attachment points")->delimiter(',');
  price->add_option("--paths", paths_, "Monte Carlo paths");
  price->add_option("--maturity", maturity_, "Maturity in years (whole quarters)");
  price->add_option("--scheme", scheme_, "Simulation scheme")->check(CLI::IsMember({"conditional", "euler"}));
  price->add_flag("--independent-chains", independent_, "Give every sovereign its own copy of the chain");
  price->add_option("--lgd-concentration", concentration_, "Override the LGD concentration ν");
  price->callback([this] { action_ = [this] { cmd_price(); }; });

  auto* wc = app_.add_subcommand("worst-case", "Worst-case tranche values for given single-name expected losses");
  add_model_options(wc, model_);
  wc->add_option("--kappa", kappas_, "Attachment points")->delimiter(',');
  wc->add_option("--ellbar-from", ellbar_from_, "Source of single-name expected losses")
      ->check(CLI::IsMember({"params", "list"}));
  wc->add_option("--ellbar", ellbar_, "Expected losses in portfolio order (with --ellbar-from list)")->delimiter(',');
  wc->callback([this] { action_ = [this] { cmd_worst_case(); }; });

  auto* sc = app_.add_subcommand("scenario", "Loss probabilities Q(L_T > κ) under stress scenarios");
  add_model_options(sc, model_);
  sc->add_option("--spec", specs_, "Scenario names, or 'all'")->delimiter(',');
  sc->add_option("--kappa", kappas_, "Attachment points")->delimiter(',');
  sc->add_option("--paths", paths_, "Monte Carlo paths");
  sc->add_option("--defaulter", defaulter_, "Sovereign defaulting in the default scenarios");
  sc->add_option("--trace", trace_, "Dump per-path losses of each scenario to <name>_<trace>.csv.gz");
  sc->callback([this] { action_ = [this] { cmd_scenario(); }; });

  auto* risk = app_.add_subcommand("risk", "VaR and ES of relative tranche losses over a short horizon");
  add_model_options(risk, model_);
  risk->add_option("--kappa", kappas_, "Attachment points")->delimiter(',');
  risk->add_option("--alpha", alphas_, "Confidence levels")->delimiter(',');
  risk->add_option("--outer-paths", outer_, "Real-world scenarios");
  risk->add_option("--inner-paths", inner_, "Repricing paths");
  risk->add_option("--horizon", horizon_, "Risk horizon in years (a payment date)");
  risk->add_option("--rw-hazard", rw_hazard_, "Real-world hazard parameters")->check(CLI::ExistingFile);
  risk->add_option("--rw-generator", rw_generator_, "Real-world generator")->check(CLI::ExistingFile);
  risk->callback([this] { action_ = [this] { cmd_risk(); }; });

  auto* cal = app_.add_subcommand("calibrate", "Fit the risk-neutral model to a CDS panel");
  cal->add_option("--panel", panel_path_, "CSV panel: date,sovereign,maturity_years,spread_bp")
      ->required()
      ->check(CLI::ExistingFile);
  cal->add_option("--lgd", model_.lgd, "LGD table")->check(CLI::ExistingFile);
  cal->add_option("--states", cal_.states, "Number of regimes")->check(CLI::PositiveNumber);
  cal->add_option("--max-iterations", cal_.max_iterations, "Outer iterations");
  cal->add_option("--tolerance-bp", cal_.tolerance_bp, "Stop when the RMSE falls below this level");
  cal->add_option("--global-budget", cal_.global_budget, "Evaluations of the global search per sovereign");
  cal->add_option("--local-budget", cal_.local_budget, "Evaluations of each local search per sovereign");
  cal->add_option("--final-budget", cal_.final_budget, "Evaluations of the final refinement per sovereign");
  cal->add_option("--gamma-max", cal_.gamma_max, "Upper bound of the hazard search");
  cal->add_option("--pricing-step", cal_.pricing.step, "Largest ODE step used in pricing");
  cal->callback([this] { action_ = [this] { cmd_calibrate(); }; });

  auto* em = app_.add_subcommand("em", "Real-world dynamics from hazard trajectories by EM");
  em->add_option("--gamma", gamma_path_, "CSV: date,sovereign,gamma")->required()->check(CLI::ExistingFile);
  em->add_option("--states", em_states_, "Number of regimes")->check(CLI::PositiveNumber);
  em->add_option("--max-iterations", em_iterations_, "EM iterations");
  em->add_option("--sigma-factor", factor_, "Scaling of the quadratic-variation volatility for flagged sovereigns");
  em->add_option("--flag", flagged_, "Sovereigns whose volatility is scaled")->delimiter(',');
  em->add_option("--start-hazard", start_hazard_, "Starting levels and speeds")->check(CLI::ExistingFile);
  em->add_option("--start-generator", start_generator_, "Starting generator")->check(CLI::ExistingFile);
  em->callback([this] { action_ = [this] { cmd_em(); }; });

  auto* sy = app_.add_subcommand("synth", "Synthetic CDS panel or hazard panel with ground truth");
  add_model_options(sy, model_);
  sy->add_option("--kind", kind_, "cds or hazard")->check(CLI::IsMember({"cds", "hazard"}));
  sy->add_option("--sovereigns", sovereigns_, "Subset of sovereigns")->delimiter(',');
  sy->add_option("--dates", synth_.dates, "Number of dates (cds)");
  sy->add_option("--years", years_, "Length in years (hazard)");
  sy->add_option("--spacing-days", synth_.spacing_days, "Days between observations");
  sy->add_option("--first-date", synth_.first_date, "First date, YYYY-MM-DD");
  sy->add_option("--noise-bp", synth_.noise_bp, "Gaussian noise in basis points (cds)");
  sy->add_option("--maturities", synth_.maturities, "CDS maturities in years")->delimiter(',');
  sy->add_option("--initial-regime", initial_regime_, "Regime at the first date (1-based)")->check(CLI::PositiveNumber);
  sy->callback([this] { action_ = [this] { cmd_synth(); }; });

  auto* re = app_.add_subcommand("rerun", "Repeat a run from its manifest and compare the outputs");
  re->add_option("--manifest", manifest_path_, "manifest.json of the original run")->required()->check(CLI::ExistingFile);
  re->callback([this] { action_ = nullptr; });
}

void Cli::cmd_price() {
  check_grid(kappas_);
  auto lm = load(model_);
  if (concentration_ > 0.0)
    for (auto& l : lm.model.portfolio.lgd) l.concentration = concentration_;
  rec_.inputs = lm.inputs;
  const auto schedule = PaymentSchedule::regular(maturity_);
  auto c = mc();
  c.scheme = scheme_ == "euler" ? McScheme::euler : McScheme::conditional;
  c.independent_chains = independent_;
  const auto sample = simulate_losses(lm.state, lm.model, schedule, c);
  const double el = expected_terminal_loss(lm.state, lm.model, schedule);
  const double discount = lm.model.curve.discount(0.0, maturity_);
  CsvWriter w(out_file("prices.csv"), {"kappa", "esb", "ejb", "stderr", "expected_loss", "expected_loss_stderr",
                                       "spread_bp", "psnt_expected_loss", "psnt_stderr", "psnt_spread_bp", "paths"});
  for (double k : kappas_) {
    const auto p = tranche_from_losses(sample.portfolio, k, maturity_, discount, el);
    const auto q = psnt_from_losses(sample, lm.model.portfolio.weights, k, maturity_);
    w.row({num(k), num(p.esb), num(p.ejb), num(p.stderr_value), num(p.expected_loss), num(p.expected_loss_stderr),
           num(p.spread * 1e4), num(q.expected_loss), num(q.stderr_value), num(q.spread * 1e4),
           std::to_string(p.paths)});
  }
  rec_.outputs.push_back(out_file("prices.csv"));
}

void Cli::cmd_worst_case() {
  check_grid(kappas_);
  auto lm = load(model_);
  rec_.inputs = lm.inputs;
  std::vector<double> ellbar;
  if (ellbar_from_ == "params") {
    ellbar = match_ellbar(lm.state, lm.model, PaymentSchedule::standard());
  } else {
    require(ellbar_.size() == lm.model.sovereigns(), "--ellbar needs one value per sovereign");
    ellbar = ellbar_;
  }
  const auto dist = build_worst_case(ellbar, lm.model.portfolio.weights);
  CsvWriter w(out_file("worst_case.csv"), {"kappa", "esb", "ejb", "expected_loss"});
  for (double k : kappas_) {
    const auto v = worst_case_tranche_values(dist, k);
    w.row({num(k), num(v.esb), num(v.ejb), num(v.expected_loss)});
  }
  CsvWriter a(out_file("worst_case_atoms.csv"), {"atom", "probability", "portfolio_loss", "defaulted"});
  for (std::size_t m = 0; m < dist.size(); ++m) {
    std::string names;
    for (std::size_t j = 0; j < dist.atoms[m].size(); ++j)
      if (dist.atoms[m][j]) names += (names.empty() ? "" : " ") + lm.model.portfolio.sovereigns[j].id;
    a.row({std::to_string(m), num(dist.probabilities[m]), num(dist.portfolio_losses[m]), names});
  }
  rec_.outputs = {out_file("worst_case.csv"), out_file("worst_case_atoms.csv")};
}

void Cli::cmd_scenario() {
  check_grid(kappas_);
  auto specs = specs_;
  if (specs.size() == 1 && specs[0] == "all") specs = scenario_names();
  auto lm = load(model_);
  rec_.inputs = lm.inputs;
  const auto schedule = PaymentSchedule::standard();
  const std::size_t defaulter = lm.model.portfolio.index_of(defaulter_);
  std::map<std::string, CreditModel> sets;
  sets.emplace(model_.params, lm.model);
  CsvWriter w(out_file("scenarios.csv"), {"scenario", "kappa", "probability", "stderr"});
  rec_.outputs.push_back(out_file("scenarios.csv"));
  for (const auto& name : specs) {
    const auto spec = named_scenario(name, lm.model.sovereigns(), defaulter, lm.model.states());
    auto it = sets.find(spec.parameter_set);
    if (it == sets.end()) {
      it = sets.emplace(spec.parameter_set, parameter_set(spec.parameter_set, representative_state(base_model()))).first;
      const auto extra = data_path("generator_" + spec.parameter_set + ".tsv");
      if (std::find(rec_.inputs.begin(), rec_.inputs.end(), extra) == rec_.inputs.end() && fs::exists(extra))
        rec_.inputs.push_back(extra);
    }
    const auto state = spec.apply(lm.state);
    const auto sample = simulate_losses(state, it->second, schedule, mc(), spec.random_losses);
    const double n = static_cast<double>(sample.size());
    for (double k : kappas_) {
      double hits = 0.0;
      for (double l : sample.portfolio) hits += l > k ? 1.0 : 0.0;
      const double p = hits / n;
      w.row({name, num(k), num(p), num(std::sqrt(p * (1.0 - p) / n))});
    }
    if (!trace_.empty()) {
      const auto path = out_file(name + "_" + trace_ + ".csv.gz");
      std::vector<std::string> header{"path", "loss"};
      for (const auto& p : it->second.portfolio.sovereigns) header.push_back(p.id);
      GzipCsvWriter t(path, header);
      std::vector<std::string> row;
      for (std::size_t p = 0; p < sample.size(); ++p) {
        row = {std::to_string(p), num(sample.portfolio[p])};
        for (std::size_t j = 0; j < sample.sovereigns; ++j) row.push_back(num(sample.sovereign[p * sample.sovereigns + j]));
        t.row(row);
      }
      t.close();
      rec_.outputs.push_back(path);
    }
  }
}

void Cli::cmd_risk() {
  check_grid(kappas_);
  for (double a : alphas_) require(a > 0.0 && a < 1.0, "confidence levels must lie in (0, 1)");
  auto lm = load(model_);
  rec_.inputs = lm.inputs;
  CreditModel rw;
  if (!rw_hazard_.empty() || !rw_generator_.empty()) {
    require(!rw_hazard_.empty() && !rw_generator_.empty(), "--rw-hazard and --rw-generator go together");
    const auto lgd = or_default(model_.lgd, "lgd_means.tsv");
    const auto weights = or_default(model_.weights, "weights_gdp2018.tsv");
    rw = load_model(rw_hazard_, rw_generator_, lgd, weights);
    rec_.inputs.insert(rec_.inputs.end(), {rw_hazard_, rw_generator_});
  } else {
    rw = real_world_model();
    rec_.inputs.insert(rec_.inputs.end(), {data_path("hazard_rw_em.tsv"), data_path("generator_rw_em.tsv")});
  }
  RelativeLossConfig cfg;
  cfg.horizon = horizon_;
  cfg.outer_paths = outer_;
  cfg.inner_paths = inner_;
  cfg.seed = g_.seed;
  cfg.threads = g_.threads;
  const auto rl = relative_losses(lm.state, lm.model, rw, kappas_, cfg);
  CsvWriter w(out_file("risk.csv"), {"kappa", "alpha", "var", "es", "initial_price"});
  for (std::size_t i = 0; i < kappas_.size(); ++i)
    for (double a : alphas_) {
      const auto r = var_es(rl.losses[i], a, horizon_);
      w.row({num(kappas_[i]), num(a), num(r.var), num(r.es), num(rl.initial_prices[i])});
    }
  rec_.outputs.push_back(out_file("risk.csv"));
}

void Cli::cmd_calibrate() {
  const auto panel = ingest_panel(panel_path_);
  const std::string lgd_path = or_default(model_.lgd, "lgd_means.tsv");
  rec_.inputs = {panel_path_, lgd_path};
  const auto table = load_lgd(lgd_path);
  std::vector<LgdSpec> lgd;
  for (const auto& id : panel.sovereigns) {
    auto it = table.find(id);
    if (it == table.end()) throw ValidationError("no LGD entry for " + id);
    lgd.push_back(it->second);
  }
  auto cfg = cal_;
  cfg.seed = g_.seed;
  cfg.threads = g_.threads;
  const Calibrator cal(panel, lgd, cfg);
  const auto res = cal.run();
  write_hazard_params(out_file("params_rn.tsv"), res.params, "calibrated risk-neutral dynamics");
  write_generator(out_file("generator_rn.tsv"), res.chain, Measure::risk_neutral, "calibrated generator");
  write_gamma_csv(out_file("gamma.csv"), panel.date_labels, panel.sovereigns, res.gamma);
  write_regimes_csv(out_file("regimes.csv"), panel.date_labels, res.regimes);
  {
    CsvWriter w(out_file("errors.csv"), {"sovereign", "maturity", "rmse_bp", "mape"});
    for (std::size_t j = 0; j < panel.sovereign_count(); ++j)
      for (std::size_t m = 0; m < panel.maturity_count(); ++m)
        w.row({panel.sovereigns[j], num(panel.maturities[m]), num(res.rmse_bp[j][m]), num(res.mape[j][m])});
    CsvWriter l(out_file("iterations.csv"), {"iteration", "step", "objective", "accepted"});
    for (const auto& e : res.log)
      l.row({std::to_string(e.iteration), e.step, num(e.objective), e.accepted ? "1" : "0"});
  }
  write_panel(out_file("fitted.csv"), cal.fitted_panel(res));
  for (const auto& msg : res.warnings) std::cerr << "warning: " << msg << "\n";
  rec_.outputs = {out_file("params_rn.tsv"), out_file("generator_rn.tsv"), out_file("gamma.csv"),
                  out_file("regimes.csv"),   out_file("errors.csv"),       out_file("iterations.csv"),
                  out_file("fitted.csv")};
}

void Cli::cmd_em() {
  const auto panel = read_gamma_csv(gamma_path_);
  rec_.inputs = {gamma_path_};
  const auto sigma = estimate_sigma_qv(panel, factor_, flagged_);
  EmParameters start;
  if (!start_hazard_.empty()) {
    require(!start_generator_.empty(), "--start-hazard requires --start-generator");
    const auto params = load_hazard_params(start_hazard_);
    const auto chain = load_generator(start_generator_);
    rec_.inputs.insert(rec_.inputs.end(), {start_hazard_, start_generator_});
    start.generator = chain.generator();
    start.initial = Eigen::VectorXd::Constant(chain.generator().rows(), 1.0 / static_cast<double>(chain.states()));
    for (std::size_t j = 0; j < panel.sovereign_count(); ++j) {
      auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.id == panel.sovereigns[j]; });
      if (it == params.end()) throw ValidationError("no starting parameters for " + panel.sovereigns[j]);
      start.mu.push_back(it->mu);
      start.kappa.push_back(it->kappa);
      start.sigma.push_back(sigma[j]);
    }
  } else {
    start = em_initial_kmeans(panel, em_states_, sigma, g_.seed);
  }
  EmOptions opt;
  opt.max_iterations = em_iterations_;
  const auto res = em_estimate(panel, start, opt);
  write_hazard_params(out_file("params_rw.tsv"), em_to_params(res.params, panel.sovereigns), "EM estimate");
  std::vector<std::string> labels;
  for (std::size_t k = 1; k <= res.params.states(); ++k) labels.push_back("state" + std::to_string(k));
  write_generator(out_file("generator_rw.tsv"), RegimeChain(res.params.generator, labels), Measure::real_world,
                  "EM estimate");
  {
    std::vector<std::string> header{"t"};
    for (const auto& l : labels) header.push_back("filtered_" + l);
    for (const auto& l : labels) header.push_back("smoothed_" + l);
    CsvWriter w(out_file("probabilities.csv"), header);
    for (std::size_t m = 0; m < panel.date_count(); ++m) {
      std::vector<std::string> row{num(panel.dates[m])};
      for (Eigen::Index k = 0; k < res.filter.filtered[m].size(); ++k) row.push_back(num(res.filter.filtered[m][k]));
      for (Eigen::Index k = 0; k < res.filter.smoothed[m].size(); ++k) row.push_back(num(res.filter.smoothed[m][k]));
      w.row(row);
    }
    CsvWriter l(out_file("loglik.csv"), {"iteration", "log_likelihood"});
    for (std::size_t i = 0; i < res.log_likelihood.size(); ++i) l.row({std::to_string(i), num(res.log_likelihood[i])});
    CsvWriter s(out_file("generator_stderr.csv"), {"from", "to", "rate", "stderr"});
    for (std::size_t a = 0; a < labels.size(); ++a)
      for (std::size_t b = 0; b < labels.size(); ++b)
        if (a != b)
          s.row({labels[a], labels[b], num(res.params.generator(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))),
                 num(res.generator_stderr(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)))});
  }
  for (const auto& msg : res.warnings) std::cerr << "warning: " << msg << "\n";
  if (!res.converged) std::cerr << "warning: EM stopped after " << res.iterations << " iterations without converging\n";
  rec_.outputs = {out_file("params_rw.tsv"), out_file("generator_rw.tsv"), out_file("probabilities.csv"),
                  out_file("loglik.csv"), out_file("generator_stderr.csv")};
}

void Cli::cmd_synth() {
  if (kind_ == "hazard" && !app_.get_subcommand("synth")->get_option("--params")->count()) model_.params = "real-world";
  if (kind_ == "cds" && !app_.get_subcommand("synth")->get_option("--params")->count()) model_.params = "published";
  auto lm = load(model_);
  rec_.inputs = lm.inputs;
  const auto model = subset(lm.model, sovereigns_);
  require(initial_regime_ >= 1 && initial_regime_ <= model.states(), "--initial-regime out of range");
  std::vector<std::string> ids;
  for (const auto& p : model.portfolio.sovereigns) ids.push_back(p.id);
  if (kind_ == "cds") {
    auto cfg = synth_;
    cfg.initial_regime = initial_regime_ - 1;
    cfg.seed = g_.seed;
    const auto syn = generate_synthetic_panel(model, cfg);
    write_panel(out_file("panel.csv"), syn.panel);
    write_gamma_csv(out_file("truth_gamma.csv"), syn.panel.date_labels, ids, syn.gamma);
    write_regimes_csv(out_file("truth_regimes.csv"), syn.panel.date_labels, syn.regimes);
    rec_.outputs = {out_file("panel.csv"), out_file("truth_gamma.csv"), out_file("truth_regimes.csv")};
  } else {
    const auto syn = simulate_hazard_panel(model, years_, synth_.spacing_days, initial_regime_ - 1, g_.seed);
    const auto labels = dates_from(synth_.first_date, syn.panel.date_count(), synth_.spacing_days);
    write_gamma_csv(out_file("gamma.csv"), labels, ids, syn.panel.gamma);
    write_regimes_csv(out_file("truth_regimes.csv"), labels, syn.regimes);
    rec_.outputs = {out_file("gamma.csv"), out_file("truth_regimes.csv")};
  }
}

std::vector<std::string> without_out(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    out.push_back(args[i]);
  }
  return out;
}

int Cli::run(std::vector<std::string> args) {
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app_.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
      return app_.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app_.exit(e);
    } catch (const CLI::ParseError& e) {
      app_.exit(e);
      return 2;
    }
    if (!manifest_path_.empty()) {
      const auto m = Manifest::read(manifest_path_);
      const bool out_given = app_.get_option("--out")->count() > 0;
      auto replay = without_out(m.arguments);
      const std::string out = out_given ? g_.out : (fs::path(manifest_path_).parent_path() / "rerun").string();
      replay.insert(replay.begin(), {"--out", out});
      Cli inner;
      const int code = inner.run(replay);
      if (code != 0) return code;
      const auto fresh = Manifest::read((fs::path(out) / "manifest.json").string());
      std::size_t same = 0;
      bool ok = fresh.outputs.size() == m.outputs.size();
      for (std::size_t i = 0; ok && i < m.outputs.size(); ++i) {
        if (fs::path(m.outputs[i].path).filename() != fs::path(fresh.outputs[i].path).filename() ||
            m.outputs[i].hash != fresh.outputs[i].hash) {
          std::cerr << "output differs: " << fs::path(m.outputs[i].path).filename().string() << "\n";
          ok = false;
        } else {
          ++same;
        }
      }
      for (const auto& in : m.inputs)
        if (fs::exists(in.path) && file_hash(in.path) != in.hash) std::cerr << "input changed since the run: " << in.path << "\n";
      if (!ok) return 3;
      std::cout << "reproduced " << same << " outputs\n";
      return 0;
    }
    fs::create_directories(g_.out);
    action_();
    Manifest m;
    selected_ = app_.get_subcommands().front();
    m.command = selected_->get_name();
    m.arguments = args;
    auto record = [&](const CLI::App* app, nlohmann::json& j) {
      for (const auto* opt : app->get_options()) {
        if (opt->get_name().empty() || opt->get_name() == "--help" || opt->get_name() == "--config") continue;
        const auto& res = opt->results();
        if (!res.empty()) {
          j[opt->get_name()] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
        } else if (!opt->get_default_str().empty()) {
          j[opt->get_name()] = opt->get_default_str();
        }
      }
    };
    record(&app_, m.config);
    m.config["--threads"] = g_.threads;
    m.config["--seed"] = g_.seed;
    record(selected_, m.config[m.command]);
    for (const auto& p : rec_.inputs) m.add_input(p);
    for (const auto& p : rec_.outputs) m.add_output(p);
    m.write(out_file("manifest.json"));
    for (const auto& p : rec_.outputs) std::cout << p << "\n";
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Cli cli;
  return cli.run(args);
}
