#pragma once

// Seeded synthetic panels from the three regression formulas, with
// cluster-correlated Gaussian noise and random-walk-with-drift covariates.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pcagee/covariates.hpp"
#include "pcagee/design.hpp"
#include "pcagee/error.hpp"
#include "pcagee/gee.hpp"
#include "pcagee/mortality_data.hpp"

namespace pcagee {

struct SimulationConfig {
  FormulaVariant variant = FormulaVariant::single_population;
  std::vector<Population> populations{{"SIM", Sex::female}};
  int age_min = 20;
  int age_max = 80;
  int year_first = 1991;
  int year_last = 2019;
  BandBoundaries bands;
  RateKind rate_kind = RateKind::q;

  CorrelationKind noise = CorrelationKind::ar1;  // independence, exchangeable or ar1
  double rho = 0.5;
  double sigma = 0.05;  // marginal sd of the noise

  double k_start = 1.0;
  double k_drift = -0.1;
  double k_sigma = 0.02;  // sd of the k innovations

  double exposure = 1e5;
  std::uint64_t seed = 1;

  void validate() const {
    if (populations.empty()) throw ConfigError("simulation needs at least one population");
    if (variant != FormulaVariant::multi_population && populations.size() != 1)
      throw ConfigError("single-population formulas simulate exactly one population");
    if (age_max < age_min || age_min < 1) throw ConfigError("invalid simulation age window");
    if (year_last - year_first < 2) throw ConfigError("simulation needs at least 3 years");
    if (!(sigma >= 0.0) || !(k_sigma >= 0.0)) throw ConfigError("noise sd must be non-negative");
    if (noise == CorrelationKind::ar1 && !(std::abs(rho) < 1.0)) throw ConfigError("AR(1) rho must lie in (-1, 1)");
    if (noise == CorrelationKind::exchangeable && !(rho >= 0.0 && rho < 1.0))
      throw ConfigError("exchangeable noise rho must lie in [0, 1)");
    if (noise != CorrelationKind::independence && noise != CorrelationKind::ar1 &&
        noise != CorrelationKind::exchangeable)
      throw ConfigError("simulation noise must be independence, exchangeable or ar1");
    if (!(exposure > 0.0)) throw ConfigError("simulation exposure must be positive");
  }
};

/// Mean model y = intercept + country + sex + age + b k + c k^2 + gamma (t - x - cohort_origin).
/// For single-population formulas the country and sex terms are zero.
struct SimulationTruth {
  double intercept = 0.0;
  std::map<std::string, double> country_effect;  // reference level 0
  std::map<Sex, double> sex_effect;              // reference level 0
  Eigen::VectorXd age_effect;                    // first age 0
  std::map<Sex, Eigen::VectorXd> b;
  std::map<Sex, Eigen::VectorXd> c;  // zero for the reduced formula
  double gamma = 0.0;                // zero for the reduced formula
  double cohort_origin = 1950.0;
  CovariateSet k;                    // all simulated years
};

struct SimulatedPanel {
  SimulationConfig config;
  SimulationTruth truth;
  MortalityPanel panel;
  std::vector<Eigen::MatrixXd> mean_log_rates;  // noise-free, per population
};

namespace detail {

inline std::vector<Sex> sorted_sexes(const std::vector<Population>& pops) {
  std::vector<Sex> out;
  for (const auto& p : pops)
    if (std::find(out.begin(), out.end(), p.sex) == out.end()) out.push_back(p.sex);
  std::sort(out.begin(), out.end(), [](Sex a, Sex b) { return to_string(a) < to_string(b); });
  return out;
}

}  // namespace detail

/// Default truth: a Gompertz-like age profile, smooth b and c, small cohort slope.
inline SimulationTruth default_truth(const SimulationConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  SimulationTruth t;
  const int na = cfg.age_max - cfg.age_min + 1;
  const bool multi = cfg.variant == FormulaVariant::multi_population;
  t.intercept = -8.0;
  t.age_effect.resize(na);
  for (int i = 0; i < na; ++i) t.age_effect(i) = 0.09 * i + 0.02 * z(rng);
  t.age_effect(0) = 0.0;
  std::vector<std::string> countries;
  for (const auto& p : cfg.populations) countries.push_back(p.country);
  std::sort(countries.begin(), countries.end());
  countries.erase(std::unique(countries.begin(), countries.end()), countries.end());
  for (std::size_t i = 0; i < countries.size(); ++i) t.country_effect[countries[i]] = multi && i > 0 ? 0.1 * z(rng) : 0.0;
  const auto sexes = detail::sorted_sexes(cfg.populations);
  for (std::size_t i = 0; i < sexes.size(); ++i) t.sex_effect[sexes[i]] = multi && i > 0 ? 0.4 + 0.05 * z(rng) : 0.0;
  for (Sex s : sexes) {
    Eigen::VectorXd b(na), c(na);
    for (int i = 0; i < na; ++i) {
      const double u = static_cast<double>(i) / std::max(1, na - 1);
      b(i) = 0.6 + 0.4 * std::sin(3.0 * u) + 0.05 * z(rng);
      c(i) = cfg.variant == FormulaVariant::reduced ? 0.0 : 0.1 * std::cos(2.0 * u) + 0.02 * z(rng);
    }
    t.b[s] = b;
    t.c[s] = c;
  }
  t.gamma = cfg.variant == FormulaVariant::reduced ? 0.0 : 0.002;
  return t;
}

/// Cluster noise of length n with marginal sd `sigma`.
inline std::vector<double> cluster_noise(CorrelationKind kind, double rho, double sigma, int n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> e(static_cast<std::size_t>(n));
  if (kind == CorrelationKind::ar1) {
    const double innov = std::sqrt(1.0 - rho * rho);
    double prev = z(rng);
    e[0] = sigma * prev;
    for (int t = 1; t < n; ++t) {
      prev = rho * prev + innov * z(rng);
      e[static_cast<std::size_t>(t)] = sigma * prev;
    }
  } else if (kind == CorrelationKind::exchangeable) {
    const double shared = std::sqrt(rho) * z(rng);
    for (auto& v : e) v = sigma * (shared + std::sqrt(1.0 - rho) * z(rng));
  } else {
    for (auto& v : e) v = sigma * z(rng);
  }
  return e;
}

/// Simulates with `truth` if given, otherwise with default_truth drawn from
/// the seed. Covariates are drawn first, then truth, then noise per cluster
/// in (population, age) order, so results depend only on the config.
inline SimulatedPanel simulate_panel(const SimulationConfig& cfg, const SimulationTruth* truth = nullptr) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  SimulatedPanel sim;
  sim.config = cfg;
  const int na = cfg.age_max - cfg.age_min + 1;
  const int ny = cfg.year_last - cfg.year_first + 1;

  std::vector<std::string> countries;
  for (const auto& p : cfg.populations) countries.push_back(p.country);
  std::sort(countries.begin(), countries.end());
  countries.erase(std::unique(countries.begin(), countries.end()), countries.end());

  CovariateSet k;
  for (const auto& country : countries)
    for (AgeBand band : kAllBands) {
      const auto [lo, hi] = band_ages(band, cfg.age_min, cfg.age_max, cfg.bands);
      if (lo > hi) continue;
      CovariateSeries s;
      s.country = country;
      s.band = band;
      s.method = CovariateMethod::external;
      double v = cfg.k_start;
      for (int t = 0; t < ny; ++t) {
        if (t > 0) v += cfg.k_drift + cfg.k_sigma * z(rng);
        s.years.push_back(cfg.year_first + t);
        s.values.push_back(v);
      }
      k.add(std::move(s));
    }

  sim.truth = truth ? *truth : default_truth(cfg, rng);
  sim.truth.k = k;
  const SimulationTruth& tr = sim.truth;
  if (tr.age_effect.size() != na) throw ConfigError("truth age profile length does not match the age window");

  MortalityPanel& panel = sim.panel;
  panel.populations = cfg.populations;
  std::sort(panel.populations.begin(), panel.populations.end());
  panel.age_min = cfg.age_min;
  panel.age_max = cfg.age_max;
  panel.year_first = cfg.year_first;
  panel.year_last = cfg.year_last;
  panel.rate_kind = cfg.rate_kind;
  panel.bands = cfg.bands;
  for (const auto& pop : panel.populations) {
    Eigen::MatrixXd mean(na, ny), y(na, ny), d(na, ny), e(na, ny);
    const double level = tr.intercept + tr.country_effect.at(pop.country) + tr.sex_effect.at(pop.sex);
    const Eigen::VectorXd& b = tr.b.at(pop.sex);
    const Eigen::VectorXd& c = tr.c.at(pop.sex);
    for (int ai = 0; ai < na; ++ai) {
      const int age = cfg.age_min + ai;
      const CovariateSeries& ks = k.at(pop.country, band_of(age, cfg.bands));
      const auto noise = cluster_noise(cfg.noise, cfg.rho, cfg.sigma, ny, rng);
      for (int ti = 0; ti < ny; ++ti) {
        const int year = cfg.year_first + ti;
        const double kv = ks.values[static_cast<std::size_t>(ti)];
        mean(ai, ti) = level + tr.age_effect(ai) + b(ai) * kv + c(ai) * kv * kv + tr.gamma * (year - age - tr.cohort_origin);
        y(ai, ti) = mean(ai, ti) + noise[static_cast<std::size_t>(ti)];
        const double rate = std::exp(y(ai, ti));
        if (cfg.rate_kind == RateKind::q && !(rate < 1.0))
          throw DomainError("simulated q is not below 1 at " + pop.key() + " age " + std::to_string(age));
        e(ai, ti) = cfg.exposure;
        d(ai, ti) = cfg.rate_kind == RateKind::q ? -cfg.exposure * std::log1p(-rate) : rate * cfg.exposure;
      }
    }
    sim.mean_log_rates.push_back(std::move(mean));
    panel.log_rates.push_back(std::move(y));
    panel.deaths.push_back(std::move(d));
    panel.exposures.push_back(std::move(e));
  }
  panel.validate();
  return sim;
}

/// Truth expressed in the coefficient order of `enc` (centred cohort).
inline Eigen::VectorXd truth_coefficients(const SimulationTruth& t, const DesignEncoding& enc) {
  const std::size_t p = enc.labels.size();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  const bool multi = enc.formula.variant == FormulaVariant::multi_population;
  const Sex single_sex = enc.sexes.empty() ? Sex::female : enc.sexes.front();
  const auto age_index = [&](const std::string& label, std::size_t from) {
    const auto open = label.find("age[", from);
    return std::stoi(label.substr(open + 4)) - enc.age_min;
  };
  const auto sex_of = [&](const std::string& label) {
    return label.rfind("gender[male]", 0) == 0 ? Sex::male : Sex::female;
  };
  for (std::size_t j = 0; j < p; ++j) {
    const std::string& l = enc.labels[j];
    double v = 0.0;
    if (l == "(Intercept)") {
      v = t.intercept + t.gamma * (enc.cohort_center - t.cohort_origin);
      if (multi) {
        v += t.country_effect.at(enc.countries.front()) + t.sex_effect.at(enc.sexes.front());
      } else {
        if (auto it = t.country_effect.find(enc.countries.front()); it != t.country_effect.end()) v += it->second;
        if (auto it = t.sex_effect.find(single_sex); it != t.sex_effect.end()) v += it->second;
      }
    } else if (l == "cohort") {
      v = t.gamma;
    } else if (l.rfind("country[", 0) == 0) {
      const std::string c = l.substr(8, l.size() - 9);
      v = t.country_effect.at(c) - t.country_effect.at(enc.countries.front());
    } else if (l.rfind("gender[", 0) == 0 && l.find(":k") == std::string::npos) {
      const Sex s = sex_of(l);
      v = t.sex_effect.at(s) - t.sex_effect.at(enc.sexes.front());
    } else if (l.rfind("age[", 0) == 0 && l.find(":k") == std::string::npos) {
      v = t.age_effect(age_index(l, 0));
    } else {
      const Sex s = multi ? sex_of(l) : single_sex;
      const int ai = age_index(l, 0);
      const bool squared = l.size() >= 4 && l.compare(l.size() - 4, 4, ":k^2") == 0;
      v = squared ? t.c.at(s)(ai) : t.b.at(s)(ai);
    }
    beta(static_cast<Eigen::Index>(j)) = v;
  }
  return beta;
}

/// HMD-style deaths/exposures tables for each simulated country; sexes not
/// simulated are written as missing.
inline std::vector<CountryTables> to_country_tables(const SimulatedPanel& sim) {
  const MortalityPanel& p = sim.panel;
  std::vector<CountryTables> out;
  for (const auto& country : p.countries()) {
    CountryTables ct;
    ct.country = country;
    ct.deaths.set_title(country + ", Deaths (simulated 1x1)");
    ct.exposures.set_title(country + ", Exposures (simulated 1x1)");
    const auto fi = p.find({country, Sex::female});
    const auto mi = p.find({country, Sex::male});
    for (int year = p.year_first; year <= p.year_last; ++year)
      for (int age = p.age_min; age <= p.age_max; ++age) {
        const int ai = age - p.age_min, ti = year - p.year_first;
        for (int which = 0; which < 2; ++which) {
          const auto& mats = which == 0 ? p.deaths : p.exposures;
          CountRow r;
          r.year = year;
          r.age = age;
          if (fi) r.female = mats[*fi](ai, ti);
          if (mi) r.male = mats[*mi](ai, ti);
          if (r.female && r.male) r.total = *r.female + *r.male;
          (which == 0 ? ct.deaths : ct.exposures).add(r);
        }
      }
    out.push_back(std::move(ct));
  }
  return out;
}

/// CSV `term,value` of the truth in the order of `enc`.
inline void write_truth_csv(std::ostream& out, const SimulationTruth& t, const DesignEncoding& enc) {
  const Eigen::VectorXd beta = truth_coefficients(t, enc);
  csv::Writer w(out);
  w.header({"term", "value"});
  for (std::size_t j = 0; j < enc.labels.size(); ++j) {
    w.field(enc.labels[j]).field(beta(static_cast<Eigen::Index>(j)));
    w.end_row();
  }
}

}  // namespace pcagee
