#pragma once

// Plain-text tables, reference parameter files, CDS panels and CSV output.
//
// Table files: '#' comment lines, '@key value' metadata lines, then a header
// row and data rows, all whitespace separated.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esb/core.hpp"
#include "esb/errors.hpp"

namespace esb {

inline std::string format_number(double x) {
  if (std::isnan(x)) return "NA";
  std::ostringstream os;
  os << std::setprecision(12) << x;
  return os.str();
}

inline double parse_number(const std::string& text, const std::string& where) {
  if (text.empty()) throw ValidationError(where + ": empty number");
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || !std::isfinite(v))
    throw ValidationError(where + ": not a number '" + text + "'");
  return v;
}

struct Table {
  std::string source;
  std::map<std::string, std::string> meta;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ValidationError(source + ": missing column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    for (const auto& c : columns)
      if (c == name) return true;
    return false;
  }
  double number(std::size_t row, std::size_t col) const {
    return parse_number(rows[row][col], source + ":" + std::to_string(lines[row]));
  }
  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

inline Table parse_table(std::istream& in, const std::string& source) {
  Table t;
  t.source = source;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> cells;
    for (std::string cell; fields >> cell;) cells.push_back(cell);
    if (cells.empty()) continue;
    if (cells[0][0] == '@') {
      std::string value;
      for (std::size_t i = 1; i < cells.size(); ++i) value += (i > 1 ? " " : "") + cells[i];
      t.meta[cells[0].substr(1)] = value;
      continue;
    }
    if (t.columns.empty()) {
      t.columns = cells;
      continue;
    }
    if (cells.size() != t.columns.size())
      throw ValidationError(source + ":" + std::to_string(number) + ": expected " +
                            std::to_string(t.columns.size()) + " fields, got " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(number);
  }
  if (t.columns.empty()) throw ValidationError(source + ": no header row");
  return t;
}

inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_table(in, path);
}

inline std::string data_dir() {
  if (const char* env = std::getenv("ESB_DATA_DIR")) return env;
#ifdef ESB_DATA_DIR
  return ESB_DATA_DIR;
#else
  return "data";
#endif
}

inline std::string data_path(const std::string& name) { return data_dir() + "/" + name; }

// Columns id kappa sigma omega mu1..muK.
inline std::vector<SovereignParams> load_hazard_params(const std::string& path) {
  const Table t = read_table(path);
  const Measure measure = measure_from_string(t.meta_or("measure", "risk-neutral"));
  std::vector<std::size_t> mu_cols;
  for (std::size_t k = 1; t.has_column("mu" + std::to_string(k)); ++k) mu_cols.push_back(t.column("mu" + std::to_string(k)));
  require(!mu_cols.empty(), path + ": no mu columns");
  std::vector<SovereignParams> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    SovereignParams p;
    p.id = t.rows[r][t.column("id")];
    p.kappa = t.number(r, t.column("kappa"));
    p.sigma = t.number(r, t.column("sigma"));
    p.omega = t.number(r, t.column("omega"));
    for (auto c : mu_cols) p.mu.push_back(t.number(r, c));
    p.measure = measure;
    p.validate(mu_cols.size());
    out.push_back(std::move(p));
  }
  return out;
}

// Square table with a leading 'state' label column. Diagonal entries are
// recomputed from the off-diagonal rates (see RegimeChain).
inline RegimeChain load_generator(const std::string& path) {
  const Table t = read_table(path);
  const std::size_t k = t.columns.size() - 1;
  require(t.rows.size() == k, path + ": generator must be square");
  Eigen::MatrixXd q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c) q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.number(r, c + 1);
  std::vector<std::string> labels(t.columns.begin() + 1, t.columns.end());
  return RegimeChain::with_consistent_diagonal(q, labels);
}

inline std::map<std::string, LgdSpec> load_lgd(const std::string& path) {
  const Table t = read_table(path);
  const double nu = parse_number(t.meta_or("concentration", "1.5"), path + ": concentration");
  std::map<std::string, LgdSpec> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    LgdSpec spec;
    spec.concentration = nu;
    for (std::size_t k = 1; t.has_column("mean" + std::to_string(k)); ++k)
      spec.mean.push_back(t.number(r, t.column("mean" + std::to_string(k))));
    out[t.rows[r][t.column("id")]] = spec;
  }
  return out;
}

inline std::map<std::string, double> load_weights(const std::string& path) {
  const Table t = read_table(path);
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) out[t.rows[r][t.column("id")]] = t.number(r, t.column("weight"));
  return out;
}

inline Portfolio assemble_portfolio(const std::vector<SovereignParams>& params,
                                    const std::map<std::string, LgdSpec>& lgd,
                                    const std::map<std::string, double>& weights) {
  Portfolio p;
  for (const auto& s : params) {
    auto l = lgd.find(s.id);
    auto w = weights.find(s.id);
    require(l != lgd.end(), "no LGD entry for " + s.id);
    require(w != weights.end(), "no weight for " + s.id);
    p.sovereigns.push_back(s);
    p.lgd.push_back(l->second);
    p.weights.push_back(w->second);
  }
  return p;
}

inline void write_hazard_params(const std::string& path, const std::vector<SovereignParams>& params,
                                const std::string& comment = {}) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "# schema esb-params 1\n";
  out << "@measure " << to_string(params.empty() ? Measure::risk_neutral : params.front().measure) << "\n";
  out << "id\tkappa\tsigma\tomega";
  const std::size_t k = params.empty() ? 0 : params.front().mu.size();
  for (std::size_t i = 1; i <= k; ++i) out << "\tmu" << i;
  out << "\n";
  for (const auto& p : params) {
    out << p.id << "\t" << format_number(p.kappa) << "\t" << format_number(p.sigma) << "\t" << format_number(p.omega);
    for (double m : p.mu) out << "\t" << format_number(m);
    out << "\n";
  }
}

inline void write_generator(const std::string& path, const RegimeChain& chain, Measure measure,
                            const std::string& comment = {}) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "# schema esb-generator 1\n@measure " << to_string(measure) << "\nstate";
  for (const auto& l : chain.labels()) out << "\t" << l;
  out << "\n";
  for (std::size_t r = 0; r < chain.states(); ++r) {
    out << chain.labels()[r];
    for (std::size_t c = 0; c < chain.states(); ++c) out << "\t" << format_number(chain.rate(r, c));
    out << "\n";
  }
}

// Days between two ISO dates (YYYY-MM-DD), ACT/365 year fraction.
inline double parse_date_years(const std::string& text, const std::string& where) {
  int y = 0, m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  std::istringstream in(text);
  if (text.size() == 10 && (in >> y >> dash1 >> m >> dash2 >> d) && dash1 == '-' && dash2 == '-') {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw ValidationError(where + ": invalid date '" + text + "'");
    return static_cast<double>(sys_days{ymd}.time_since_epoch().count()) / 365.0;
  }
  return parse_number(text, where);
}

// Weekly (or any) panel of CDS spreads in decimals; NaN marks a missing cell.
struct CdsPanel {
  std::vector<std::string> date_labels;
  std::vector<double> dates;  // year fractions relative to the first date
  std::vector<std::string> sovereigns;
  std::vector<double> maturities;
  std::vector<double> spreads;  // [j][m][d]

  std::size_t date_count() const { return dates.size(); }
  std::size_t sovereign_count() const { return sovereigns.size(); }
  std::size_t maturity_count() const { return maturities.size(); }
  std::size_t cell_count() const { return spreads.size(); }

  double& at(std::size_t j, std::size_t m, std::size_t d) {
    return spreads[(j * maturities.size() + m) * dates.size() + d];
  }
  double at(std::size_t j, std::size_t m, std::size_t d) const {
    return spreads[(j * maturities.size() + m) * dates.size() + d];
  }
  bool missing(std::size_t j, std::size_t m, std::size_t d) const { return std::isnan(at(j, m, d)); }

  std::size_t observed_cells() const {
    std::size_t n = 0;
    for (double s : spreads) n += std::isnan(s) ? 0 : 1;
    return n;
  }

  void resize() { spreads.assign(sovereigns.size() * maturities.size() * dates.size(), std::numeric_limits<double>::quiet_NaN()); }

  std::size_t sovereign_index(const std::string& id) const {
    for (std::size_t j = 0; j < sovereigns.size(); ++j)
      if (sovereigns[j] == id) return j;
    throw ValidationError("panel has no sovereign '" + id + "'");
  }

  void validate() const {
    require(!dates.empty() && !sovereigns.empty() && !maturities.empty(), "panel is empty");
    for (std::size_t d = 1; d < dates.size(); ++d) require(dates[d] > dates[d - 1], "panel dates must increase");
    for (double s : spreads) require(std::isnan(s) || s >= 0.0, "panel spreads must be nonnegative");
  }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

// CSV with header date,sovereign,maturity_years,spread_bp. Spreads are
// converted from bp to decimals here and nowhere else.
inline CdsPanel parse_panel(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] != '#') break;
  }
  const auto header = detail::split_csv(line);
  if (header != std::vector<std::string>{"date", "sovereign", "maturity_years", "spread_bp"})
    throw ValidationError(source + ":" + std::to_string(number) + ": expected header date,sovereign,maturity_years,spread_bp");
  struct Row {
    std::string date;
    double years;
    std::string sovereign;
    double maturity;
    double spread;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::map<std::tuple<std::string, std::string, double>, std::size_t> seen;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split_csv(line);
    const std::string where = source + ":" + std::to_string(number);
    if (cells.size() != 4) throw ValidationError(where + ": expected 4 fields, got " + std::to_string(cells.size()));
    Row r;
    r.date = cells[0];
    r.years = parse_date_years(cells[0], where);
    r.sovereign = cells[1];
    if (r.sovereign.empty()) throw ValidationError(where + ": empty sovereign");
    r.maturity = parse_number(cells[2], where);
    if (r.maturity <= 0.0) throw ValidationError(where + ": maturity must be positive");
    if (cells[3].empty() || cells[3] == "NA") {
      r.spread = std::numeric_limits<double>::quiet_NaN();
    } else {
      const double bp = parse_number(cells[3], where);
      if (bp < 0.0) throw ValidationError(where + ": negative spread " + cells[3]);
      r.spread = bp * 1e-4;
    }
    r.line = number;
    auto key = std::make_tuple(r.date, r.sovereign, r.maturity);
    auto [it, inserted] = seen.emplace(key, number);
    if (!inserted)
      throw ValidationError(source + ": duplicate cell (" + r.date + ", " + r.sovereign + ", " + cells[2] +
                            ") on lines " + std::to_string(it->second) + " and " + std::to_string(number));
    rows.push_back(r);
  }
  if (rows.empty()) throw ValidationError(source + ": no data rows");
  CdsPanel panel;
  std::map<double, std::string> dates;
  std::vector<std::string> sovereigns;
  std::vector<double> maturities;
  for (const auto& r : rows) {
    auto [it, inserted] = dates.emplace(r.years, r.date);
    if (!inserted && it->second != r.date)
      throw ValidationError(source + ":" + std::to_string(r.line) + ": date '" + r.date + "' collides with '" + it->second + "'");
    if (std::find(sovereigns.begin(), sovereigns.end(), r.sovereign) == sovereigns.end()) sovereigns.push_back(r.sovereign);
    if (std::find(maturities.begin(), maturities.end(), r.maturity) == maturities.end()) maturities.push_back(r.maturity);
  }
  std::sort(maturities.begin(), maturities.end());
  const double origin = dates.begin()->first;
  for (const auto& [years, label] : dates) {
    panel.dates.push_back(years - origin);
    panel.date_labels.push_back(label);
  }
  panel.sovereigns = sovereigns;
  panel.maturities = maturities;
  panel.resize();
  for (const auto& r : rows) {
    const auto d = static_cast<std::size_t>(std::distance(dates.begin(), dates.find(r.years)));
    const auto m = static_cast<std::size_t>(std::find(maturities.begin(), maturities.end(), r.maturity) - maturities.begin());
    panel.at(panel.sovereign_index(r.sovereign), m, d) = r.spread;
  }
  panel.validate();
  return panel;
}

inline CdsPanel ingest_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_panel(in, path);
}

inline void write_panel(std::ostream& out, const CdsPanel& panel) {
  out << "date,sovereign,maturity_years,spread_bp\n";
  for (std::size_t d = 0; d < panel.date_count(); ++d)
    for (std::size_t j = 0; j < panel.sovereign_count(); ++j)
      for (std::size_t m = 0; m < panel.maturity_count(); ++m) {
        const double s = panel.at(j, m, d);
        out << panel.date_labels[d] << "," << panel.sovereigns[j] << "," << format_number(panel.maturities[m]) << ","
            << (std::isnan(s) ? std::string("NA") : format_number(s * 1e4)) << "\n";
      }
}

inline void write_panel(const std::string& path, const CdsPanel& panel) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  write_panel(out, panel);
}

// Minimal CSV writer; numbers are printed with 12 significant digits.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw ValidationError("cannot write " + path);
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ValidationError("missing CSV column '" + name + "'");
  }
};

inline CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  CsvData data;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv(line);
    if (first) {
      data.header = cells;
      first = false;
    } else {
      data.rows.push_back(cells);
    }
  }
  return data;
}

}  // namespace esb
