#pragma once

// HMD 1x1 table ingestion and the rectangular log-rate panel.

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcagee/csv.hpp"
#include "pcagee/error.hpp"

namespace pcagee {

enum class Sex { female, male };

inline std::string_view to_string(Sex s) { return s == Sex::female ? "female" : "male"; }

inline Sex parse_sex(std::string_view s) {
  if (s == "female") return Sex::female;
  if (s == "male") return Sex::male;
  throw ConfigError("unknown gender '" + std::string(s) + "' (expected female or male)");
}

/// Which rate the panel stores the logarithm of: q = 1 - exp(-d/e), m = d/e.
enum class RateKind { q, m };

inline std::string_view to_string(RateKind k) { return k == RateKind::q ? "q" : "m"; }

inline RateKind parse_rate_kind(std::string_view s) {
  if (s == "q") return RateKind::q;
  if (s == "m") return RateKind::m;
  throw ConfigError("unknown rate_kind '" + std::string(s) + "' (expected q or m)");
}

enum class AgeBand { children, young_adults, older_adults };

inline constexpr AgeBand kAllBands[] = {AgeBand::children, AgeBand::young_adults,
                                        AgeBand::older_adults};

inline std::string_view to_string(AgeBand b) {
  switch (b) {
    case AgeBand::children: return "children";
    case AgeBand::young_adults: return "young_adults";
    case AgeBand::older_adults: return "older_adults";
  }
  return "?";
}

inline AgeBand parse_band(std::string_view s) {
  for (AgeBand b : kAllBands)
    if (to_string(b) == s) return b;
  throw DataError("unknown age band '" + std::string(s) + "'");
}

/// Upper ages (inclusive) of the children and young-adult bands.
struct BandBoundaries {
  int children_max = 19;
  int young_adults_max = 50;
};

inline AgeBand band_of(int age, BandBoundaries b = {}) {
  if (age <= b.children_max) return AgeBand::children;
  if (age <= b.young_adults_max) return AgeBand::young_adults;
  return AgeBand::older_adults;
}

/// Inclusive age interval of `band` clipped to [age_min, age_max]; empty if
/// first > last.
inline std::pair<int, int> band_ages(AgeBand band, int age_min, int age_max, BandBoundaries b = {}) {
  int lo = 0, hi = 0;
  switch (band) {
    case AgeBand::children: lo = std::numeric_limits<int>::min(); hi = b.children_max; break;
    case AgeBand::young_adults: lo = b.children_max + 1; hi = b.young_adults_max; break;
    case AgeBand::older_adults: lo = b.young_adults_max + 1; hi = std::numeric_limits<int>::max(); break;
  }
  return {std::max(lo, age_min), std::min(hi, age_max)};
}

// ---------------------------------------------------------------------------
// Raw HMD tables

enum class CountKind { deaths, exposures };

struct CountRow {
  int year = 0;
  int age = 0;
  bool open_interval = false;  // age token was "NNN+"
  std::optional<double> female;
  std::optional<double> male;
  std::optional<double> total;

  const std::optional<double>& value(Sex s) const { return s == Sex::female ? female : male; }
};

class RawCountTable {
 public:
  RawCountTable() = default;
  explicit RawCountTable(CountKind kind) : kind_(kind) {}

  CountKind kind() const { return kind_; }
  const std::vector<CountRow>& rows() const { return rows_; }
  std::string_view title() const { return title_; }
  void set_title(std::string t) { title_ = std::move(t); }

  /// Throws IntegrityError on a duplicate (year, age).
  void add(CountRow row) {
    auto [it, inserted] = index_.emplace(std::make_pair(row.year, row.age), rows_.size());
    if (!inserted)
      throw IntegrityError("duplicate (year, age) = (" + std::to_string(row.year) + ", " +
                           std::to_string(row.age) + ")");
    rows_.push_back(row);
  }

  const CountRow* find(int year, int age) const {
    auto it = index_.find({year, age});
    return it == index_.end() ? nullptr : &rows_[it->second];
  }

 private:
  CountKind kind_ = CountKind::deaths;
  std::string title_;
  std::vector<CountRow> rows_;
  std::map<std::pair<int, int>, std::size_t> index_;
};

namespace detail {

inline std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_int(std::string_view tok, int& out) {
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc{} && p == tok.data() + tok.size();
}

inline std::optional<double> parse_count(std::string_view tok, std::size_t line) {
  if (tok == ".") return std::nullopt;
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size() || !std::isfinite(v))
    throw ParseError(line, "invalid numeric token '" + std::string(tok) + "'");
  if (v < 0.0) throw ParseError(line, "negative value '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

/// Parses an HMD 1x1 table: two preamble lines, the header
/// `Year Age Female Male Total`, then whitespace-separated rows.
inline RawCountTable parse_hmd_table(std::istream& in, CountKind kind) {
  RawCountTable table(kind);
  std::string line;
  std::size_t lineno = 0;
  std::string title;
  for (int i = 0; i < 2; ++i) {
    if (!std::getline(in, line)) throw ParseError(lineno + 1, "truncated preamble");
    ++lineno;
    if (i == 0) title = line;
  }
  table.set_title(title);
  if (!std::getline(in, line)) throw ParseError(lineno + 1, "missing header row");
  ++lineno;
  const auto header = detail::tokenize(line);
  static constexpr std::string_view kHeader[] = {"Year", "Age", "Female", "Male", "Total"};
  if (header.size() != 5 || !std::equal(header.begin(), header.end(), std::begin(kHeader)))
    throw ParseError(lineno, "expected header 'Year Age Female Male Total'");

  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::tokenize(line);
    if (tok.empty()) continue;
    if (tok.size() != 5)
      throw ParseError(lineno, "expected 5 fields, found " + std::to_string(tok.size()));
    CountRow row;
    if (!detail::parse_int(tok[0], row.year))
      throw ParseError(lineno, "invalid year '" + std::string(tok[0]) + "'");
    std::string_view age = tok[1];
    if (!age.empty() && age.back() == '+') {
      row.open_interval = true;
      age.remove_suffix(1);
    }
    if (!detail::parse_int(age, row.age) || row.age < 0)
      throw ParseError(lineno, "invalid age '" + std::string(tok[1]) + "'");
    row.female = detail::parse_count(tok[2], lineno);
    row.male = detail::parse_count(tok[3], lineno);
    row.total = detail::parse_count(tok[4], lineno);
    try {
      table.add(row);
    } catch (const IntegrityError& e) {
      throw IntegrityError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

inline RawCountTable parse_hmd_table(std::string_view text, CountKind kind) {
  std::istringstream in{std::string(text)};
  return parse_hmd_table(in, kind);
}

/// Inverse of parse_hmd_table; values are written in shortest round-trip form.
inline void write_hmd_table(std::ostream& out, const RawCountTable& table) {
  out << (table.title().empty() ? std::string_view("pcagee table") : table.title()) << "\n\n";
  out << "  Year      Age      Female        Male       Total\n";
  auto val = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string("."); };
  for (const auto& r : table.rows()) {
    out << "  " << r.year << "  " << r.age << (r.open_interval ? "+" : "") << "  " << val(r.female)
        << "  " << val(r.male) << "  " << val(r.total) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Rates

inline double asdr_from_counts(double deaths, double exposure) {
  if (!(exposure > 0.0)) throw DomainError("exposure must be positive");
  if (!(deaths >= 0.0)) throw DomainError("deaths must be non-negative");
  return -std::expm1(-deaths / exposure);
}

inline double rate_from_counts(double deaths, double exposure, RateKind kind) {
  if (kind == RateKind::q) return asdr_from_counts(deaths, exposure);
  if (!(exposure > 0.0)) throw DomainError("exposure must be positive");
  if (!(deaths >= 0.0)) throw DomainError("deaths must be non-negative");
  return deaths / exposure;
}

// ---------------------------------------------------------------------------
// Panel

struct Population {
  std::string country;
  Sex sex = Sex::female;

  std::string key() const { return country + ":" + std::string(to_string(sex)); }

  friend bool operator==(const Population&, const Population&) = default;
  friend auto operator<=>(const Population& a, const Population& b) {
    if (auto c = a.country <=> b.country; c != 0) return c;
    return static_cast<int>(a.sex) <=> static_cast<int>(b.sex);
  }
};

struct YearRange {
  int first = 0;
  int last = 0;
  int count() const { return last - first + 1; }
  bool contains(int y) const { return y >= first && y <= last; }
};

struct PanelConfig {
  int age_min = 20;
  int age_max = 80;
  YearRange train_years{1991, 2010};
  YearRange test_years{2011, 2019};
  std::vector<Population> populations;
  BandBoundaries bands;
  RateKind rate_kind = RateKind::q;
  /// Substitute d <- 0.5 for zero-death cells instead of failing.
  bool zero_cell_rule = false;

  void validate() const {
    if (age_min < 0 || age_max < age_min) throw ConfigError("invalid age window");
    if (train_years.count() < 2) throw ConfigError("training window needs at least 2 years");
    if (test_years.count() < 1) throw ConfigError("test window is empty");
    if (test_years.first <= train_years.last)
      throw ConfigError("test years must lie strictly after the training years");
    if (populations.empty()) throw ConfigError("no populations selected");
    auto sorted = populations;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ConfigError("duplicate population selector");
    if (bands.young_adults_max <= bands.children_max) throw ConfigError("invalid band boundaries");
  }
};

struct ZeroCellSubstitution {
  Population population;
  int age = 0;
  int year = 0;
};

/// Rectangular log-rate panel. Each population holds (ages x years) matrices
/// with row = age - age_min and column = year - year_first.
struct MortalityPanel {
  std::vector<Population> populations;
  int age_min = 0;
  int age_max = -1;
  int year_first = 0;
  int year_last = -1;
  RateKind rate_kind = RateKind::q;
  BandBoundaries bands;
  std::vector<Eigen::MatrixXd> log_rates;
  std::vector<Eigen::MatrixXd> deaths;
  std::vector<Eigen::MatrixXd> exposures;
  std::vector<ZeroCellSubstitution> substitutions;

  int n_ages() const { return age_max - age_min + 1; }
  int n_years() const { return year_last - year_first + 1; }
  std::size_t n_cells() const {
    return populations.size() * static_cast<std::size_t>(n_ages()) * static_cast<std::size_t>(n_years());
  }

  double y(std::size_t pop, int age, int year) const {
    return log_rates[pop](age - age_min, year - year_first);
  }

  std::optional<std::size_t> find(const Population& p) const {
    for (std::size_t i = 0; i < populations.size(); ++i)
      if (populations[i] == p) return i;
    return std::nullopt;
  }

  std::vector<std::string> countries() const {
    std::vector<std::string> out;
    for (const auto& p : populations) out.push_back(p.country);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Copy restricted to [first, last]; the only way fitting code sees data.
  MortalityPanel restrict_years(int first, int last) const {
    if (first < year_first || last > year_last || last < first)
      throw DomainError("year restriction outside panel");
    MortalityPanel out = *this;
    const int c0 = first - year_first, n = last - first + 1;
    out.year_first = first;
    out.year_last = last;
    for (std::size_t i = 0; i < populations.size(); ++i) {
      out.log_rates[i] = log_rates[i].middleCols(c0, n);
      if (!deaths.empty()) out.deaths[i] = deaths[i].middleCols(c0, n);
      if (!exposures.empty()) out.exposures[i] = exposures[i].middleCols(c0, n);
    }
    std::erase_if(out.substitutions, [&](const ZeroCellSubstitution& s) { return s.year < first || s.year > last; });
    return out;
  }

  MortalityPanel select(const std::vector<Population>& pops) const {
    MortalityPanel out = *this;
    out.populations.clear();
    out.log_rates.clear();
    out.deaths.clear();
    out.exposures.clear();
    for (const auto& p : pops) {
      auto idx = find(p);
      if (!idx) throw IntegrityError("population " + p.key() + " not in panel");
      out.populations.push_back(p);
      out.log_rates.push_back(log_rates[*idx]);
      if (!deaths.empty()) out.deaths.push_back(deaths[*idx]);
      if (!exposures.empty()) out.exposures.push_back(exposures[*idx]);
    }
    std::erase_if(out.substitutions, [&](const ZeroCellSubstitution& s) {
      return std::find(pops.begin(), pops.end(), s.population) == pops.end();
    });
    return out;
  }

  /// Checks shapes and finiteness of every cell.
  void validate() const {
    if (n_ages() < 1 || n_years() < 1) throw IntegrityError("empty panel rectangle");
    if (log_rates.size() != populations.size()) throw IntegrityError("panel population count mismatch");
    for (std::size_t i = 0; i < populations.size(); ++i) {
      const auto& m = log_rates[i];
      if (m.rows() != n_ages() || m.cols() != n_years())
        throw IntegrityError("panel matrix shape mismatch for " + populations[i].key());
      if (!m.allFinite()) throw IntegrityError("non-finite log rate in " + populations[i].key());
    }
  }
};

struct CountryTables {
  std::string country;
  RawCountTable deaths{CountKind::deaths};
  RawCountTable exposures{CountKind::exposures};
};

/// Builds the panel over ages [age_min, age_max] and years from the first
/// training year to the last test year.
inline MortalityPanel build_panel(const std::vector<CountryTables>& data, const PanelConfig& cfg) {
  cfg.validate();
  MortalityPanel panel;
  panel.populations = cfg.populations;
  std::sort(panel.populations.begin(), panel.populations.end());
  panel.age_min = cfg.age_min;
  panel.age_max = cfg.age_max;
  panel.year_first = cfg.train_years.first;
  panel.year_last = cfg.test_years.last;
  panel.rate_kind = cfg.rate_kind;
  panel.bands = cfg.bands;

  const int na = panel.n_ages(), ny = panel.n_years();
  for (const auto& pop : panel.populations) {
    auto it = std::find_if(data.begin(), data.end(), [&](const CountryTables& c) { return c.country == pop.country; });
    if (it == data.end()) throw IntegrityError("no tables for country " + pop.country);
    Eigen::MatrixXd y(na, ny), d(na, ny), e(na, ny);
    for (int ai = 0; ai < na; ++ai) {
      const int age = cfg.age_min + ai;
      for (int ti = 0; ti < ny; ++ti) {
        const int year = panel.year_first + ti;
        const std::string cell = pop.key() + " age " + std::to_string(age) + " year " + std::to_string(year);
        const CountRow* dr = it->deaths.find(year, age);
        const CountRow* er = it->exposures.find(year, age);
        if (!dr || !er) throw IntegrityError("missing cell " + cell);
        const auto& dv = dr->value(pop.sex);
        const auto& ev = er->value(pop.sex);
        if (!dv || !ev) throw IntegrityError("missing value at cell " + cell);
        double deaths = *dv;
        const double exposure = *ev;
        if (!(exposure > 0.0)) throw IntegrityError("non-positive exposure at cell " + cell);
        if (deaths == 0.0) {
          if (!cfg.zero_cell_rule) throw IntegrityError("zero deaths at cell " + cell);
          deaths = 0.5;
          panel.substitutions.push_back({pop, age, year});
        }
        const double rate = rate_from_counts(deaths, exposure, cfg.rate_kind);
        if (!(rate > 0.0) || (cfg.rate_kind == RateKind::q && !(rate < 1.0)))
          throw IntegrityError("rate outside (0,1) at cell " + cell);
        y(ai, ti) = std::log(rate);
        d(ai, ti) = deaths;
        e(ai, ti) = exposure;
      }
    }
    panel.log_rates.push_back(std::move(y));
    panel.deaths.push_back(std::move(d));
    panel.exposures.push_back(std::move(e));
  }
  panel.validate();
  return panel;
}

inline MortalityPanel build_panel(const CountryTables& data, const PanelConfig& cfg) {
  return build_panel(std::vector<CountryTables>{data}, cfg);
}

/// CSV dump: country,gender,age,year,cohort,band,deaths,exposure,q,y.
/// `q` is always the probability-form ASDR; `y` is the log of the panel's rate.
inline void write_panel_csv(std::ostream& out, const MortalityPanel& panel) {
  csv::Writer w(out);
  w.header({"country", "gender", "age", "year", "cohort", "band", "deaths", "exposure", "q", "y"});
  const bool counts = !panel.deaths.empty() && !panel.exposures.empty();
  for (std::size_t p = 0; p < panel.populations.size(); ++p) {
    const auto& pop = panel.populations[p];
    for (int age = panel.age_min; age <= panel.age_max; ++age) {
      for (int year = panel.year_first; year <= panel.year_last; ++year) {
        const int ai = age - panel.age_min, ti = year - panel.year_first;
        w.field(pop.country).field(to_string(pop.sex)).field(age).field(year).field(year - age)
            .field(to_string(band_of(age, panel.bands)));
        if (counts) {
          const double d = panel.deaths[p](ai, ti), e = panel.exposures[p](ai, ti);
          w.field(d).field(e).field(asdr_from_counts(d, e));
        } else {
          w.field("NA").field("NA").field(panel.rate_kind == RateKind::q ? csv::format_number(std::exp(panel.log_rates[p](ai, ti))) : std::string("NA"));
        }
        w.field(panel.log_rates[p](ai, ti));
        w.end_row();
      }
    }
  }
}

}  // namespace pcagee
