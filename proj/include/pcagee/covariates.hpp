#pragma once

// Mortality covariate k per (country, age band): first principal component
// scores or band averages of log rates, plus random-walk-with-drift
// extrapolation.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcagee/csv.hpp"
#include "pcagee/error.hpp"
#include "pcagee/mortality_data.hpp"

namespace pcagee {

enum class CovariateMethod { pca, avg, external };

inline std::string_view to_string(CovariateMethod m) {
  switch (m) {
    case CovariateMethod::pca: return "pca";
    case CovariateMethod::avg: return "avg";
    case CovariateMethod::external: return "external";
  }
  return "?";
}

struct Pc1Result {
  Eigen::VectorXd scores;       // one per row of X
  Eigen::VectorXd loadings;     // unit norm, one per column
  Eigen::VectorXd col_means;
  Eigen::VectorXd eigenvalues;  // descending, covariance scale (divisor n-1)
  double variance_explained = 0.0;
  bool sign_flipped = false;
};

/// PC1 of the column-centred covariance of X (rows = years, columns = series).
/// The sign makes the scores correlate non-negatively with the row means of
/// the centred matrix; if that correlation is exactly zero the largest
/// absolute loading is made positive.
inline Pc1Result pc1_scores(const Eigen::MatrixXd& X) {
  if (X.rows() < 2 || X.cols() < 1) throw DomainError("pc1_scores needs at least 2 rows and 1 column");
  if (!X.allFinite()) throw DomainError("pc1_scores input contains non-finite values");
  Pc1Result out;
  out.col_means = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - out.col_means.transpose();
  const double scale = std::max(1.0, X.cwiseAbs().maxCoeff());
  if (centered.cwiseAbs().maxCoeff() <= 1e-13 * scale)
    throw DegenerateError("pc1_scores: all columns are constant");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const double denom = static_cast<double>(X.rows() - 1);
  out.eigenvalues = s.array().square() / denom;
  const double trace = centered.squaredNorm() / denom;
  out.variance_explained = std::clamp(out.eigenvalues(0) / trace, 0.0, 1.0);
  out.loadings = svd.matrixV().col(0);
  out.scores = centered * out.loadings;

  const Eigen::VectorXd row_means = centered.rowwise().mean();
  double agreement = out.scores.dot(row_means);
  if (std::abs(agreement) <= 1e-14 * out.scores.norm() * row_means.norm()) {
    Eigen::Index imax = 0;
    out.loadings.cwiseAbs().maxCoeff(&imax);
    agreement = out.loadings(imax);
  }
  if (agreement < 0.0) {
    out.loadings = -out.loadings;
    out.scores = -out.scores;
    out.sign_flipped = true;
  }
  return out;
}

struct Pc1Meta {
  std::vector<std::string> column_labels;  // "gender:age"
  Eigen::VectorXd col_means;
  Eigen::VectorXd loadings;
  bool sign_rule_applied = false;
  double variance_explained = 0.0;
};

struct CovariateSeries {
  std::string country;
  AgeBand band = AgeBand::young_adults;
  CovariateMethod method = CovariateMethod::pca;
  std::vector<int> years;  // ascending, contiguous
  std::vector<double> values;
  std::optional<Pc1Meta> pc1;

  double at(int year) const {
    if (years.empty() || year < years.front() || year > years.back())
      throw IntegrityError("covariate " + country + "/" + std::string(to_string(band)) + " has no value for year " +
                           std::to_string(year));
    return values[static_cast<std::size_t>(year - years.front())];
  }
};

/// Covariate series keyed by (country, band).
class CovariateSet {
 public:
  void add(CovariateSeries s) {
    auto key = std::make_pair(s.country, s.band);
    series_.insert_or_assign(std::move(key), std::move(s));
  }

  const CovariateSeries* find(const std::string& country, AgeBand band) const {
    auto it = series_.find({country, band});
    return it == series_.end() ? nullptr : &it->second;
  }

  const CovariateSeries& at(const std::string& country, AgeBand band) const {
    if (const auto* s = find(country, band)) return *s;
    throw IntegrityError("missing covariate series for " + country + "/" + std::string(to_string(band)));
  }

  auto begin() const { return series_.begin(); }
  auto end() const { return series_.end(); }
  std::size_t size() const { return series_.size(); }
  bool empty() const { return series_.empty(); }

 private:
  std::map<std::pair<std::string, AgeBand>, CovariateSeries> series_;
};

namespace detail {

/// Rows = panel years, one column per (population of `country`, band age).
inline Eigen::MatrixXd band_matrix(const MortalityPanel& panel, const std::string& country, AgeBand band,
                                   std::vector<std::string>* labels = nullptr) {
  const auto [lo, hi] = band_ages(band, panel.age_min, panel.age_max, panel.bands);
  if (lo > hi)
    throw DomainError("band " + std::string(to_string(band)) + " is empty in the age window");
  std::vector<std::size_t> pops;
  for (std::size_t p = 0; p < panel.populations.size(); ++p)
    if (panel.populations[p].country == country) pops.push_back(p);
  if (pops.empty()) throw IntegrityError("country " + country + " not in panel");
  const int width = hi - lo + 1;
  Eigen::MatrixXd X(panel.n_years(), static_cast<Eigen::Index>(pops.size()) * width);
  Eigen::Index col = 0;
  for (std::size_t p : pops) {
    for (int age = lo; age <= hi; ++age, ++col) {
      X.col(col) = panel.log_rates[p].row(age - panel.age_min).transpose();
      if (labels) labels->push_back(std::string(to_string(panel.populations[p].sex)) + ":" + std::to_string(age));
    }
  }
  return X;
}

inline std::vector<int> panel_years(const MortalityPanel& panel) {
  std::vector<int> years;
  for (int y = panel.year_first; y <= panel.year_last; ++y) years.push_back(y);
  return years;
}

}  // namespace detail

inline CovariateSeries build_pca_covariate(const MortalityPanel& panel, const std::string& country, AgeBand band) {
  CovariateSeries out;
  out.country = country;
  out.band = band;
  out.method = CovariateMethod::pca;
  out.years = detail::panel_years(panel);
  Pc1Meta meta;
  const Eigen::MatrixXd X = detail::band_matrix(panel, country, band, &meta.column_labels);
  const Pc1Result pc = pc1_scores(X);
  out.values.assign(pc.scores.data(), pc.scores.data() + pc.scores.size());
  meta.col_means = pc.col_means;
  meta.loadings = pc.loadings;
  meta.sign_rule_applied = pc.sign_flipped;
  meta.variance_explained = pc.variance_explained;
  out.pc1 = std::move(meta);
  return out;
}

/// Mean log rate over every (population of `country`, band age) cell per year.
inline CovariateSeries build_avg_covariate(const MortalityPanel& panel, const std::string& country, AgeBand band) {
  CovariateSeries out;
  out.country = country;
  out.band = band;
  out.method = CovariateMethod::avg;
  out.years = detail::panel_years(panel);
  const Eigen::MatrixXd X = detail::band_matrix(panel, country, band);
  const Eigen::VectorXd k = X.rowwise().mean();
  out.values.assign(k.data(), k.data() + k.size());
  return out;
}

/// Covariates for every country and every band present in the age window.
inline CovariateSet build_covariates(const MortalityPanel& panel, CovariateMethod method) {
  if (method == CovariateMethod::external)
    throw DomainError("external covariates are supplied by the caller, not built from a panel");
  CovariateSet set;
  for (const auto& country : panel.countries()) {
    for (AgeBand band : kAllBands) {
      const auto [lo, hi] = band_ages(band, panel.age_min, panel.age_max, panel.bands);
      if (lo > hi) continue;
      set.add(method == CovariateMethod::pca ? build_pca_covariate(panel, country, band)
                                             : build_avg_covariate(panel, country, band));
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Random walk with drift

struct DriftModel {
  double drift = 0.0;
  double sigma = 0.0;  // sd of first differences around the drift
  bool sigma_defined = true;  // false when only one difference exists
  double last_value = 0.0;
  int last_year = 0;
  int n_obs = 0;
};

inline DriftModel fit_rw_drift(std::span<const double> values, int last_year) {
  const std::size_t n = values.size();
  if (n < 2) throw DomainError("random walk with drift needs at least 2 observations");
  DriftModel m;
  m.n_obs = static_cast<int>(n);
  m.drift = (values[n - 1] - values[0]) / static_cast<double>(n - 1);
  m.last_value = values[n - 1];
  m.last_year = last_year;
  if (n == 2) {
    m.sigma = 0.0;
    m.sigma_defined = false;
  } else {
    double ss = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double dev = (values[i] - values[i - 1]) - m.drift;
      ss += dev * dev;
    }
    m.sigma = std::sqrt(ss / static_cast<double>(n - 2));
  }
  return m;
}

inline DriftModel fit_rw_drift(const CovariateSeries& series) {
  if (series.years.empty()) throw DomainError("empty covariate series");
  return fit_rw_drift(series.values, series.years.back());
}

/// Point forecasts for years last_year+1 .. last_year+horizon.
inline std::vector<double> forecast_rw(const DriftModel& model, int horizon) {
  if (horizon < 1) throw DomainError("forecast horizon must be at least 1");
  std::vector<double> out(static_cast<std::size_t>(horizon));
  for (int h = 1; h <= horizon; ++h) out[static_cast<std::size_t>(h - 1)] = model.last_value + h * model.drift;
  return out;
}

inline CovariateSeries forecast_covariate(const CovariateSeries& series, int horizon) {
  const DriftModel m = fit_rw_drift(series);
  CovariateSeries out;
  out.country = series.country;
  out.band = series.band;
  out.method = series.method;
  out.pc1 = series.pc1;
  out.values = forecast_rw(m, horizon);
  for (int h = 1; h <= horizon; ++h) out.years.push_back(m.last_year + h);
  return out;
}

inline CovariateSet forecast_covariates(const CovariateSet& set, int horizon) {
  CovariateSet out;
  for (const auto& [key, s] : set) out.add(forecast_covariate(s, horizon));
  return out;
}

/// Concatenates two sets covering adjacent year ranges (training + forecast).
inline CovariateSet concat_covariates(const CovariateSet& first, const CovariateSet& second) {
  CovariateSet out;
  for (const auto& [key, a] : first) {
    const CovariateSeries* b = second.find(key.first, key.second);
    if (!b) throw IntegrityError("covariate sets cover different (country, band) pairs");
    if (!a.years.empty() && !b->years.empty() && b->years.front() != a.years.back() + 1)
      throw IntegrityError("covariate year ranges are not adjacent");
    CovariateSeries s = a;
    s.years.insert(s.years.end(), b->years.begin(), b->years.end());
    s.values.insert(s.values.end(), b->values.begin(), b->values.end());
    out.add(std::move(s));
  }
  return out;
}

/// Copy of `set` with every series cut to [first, last]; each must cover it.
inline CovariateSet restrict_covariates(const CovariateSet& set, int first, int last) {
  CovariateSet out;
  for (const auto& [key, s] : set) {
    if (s.years.empty() || s.years.front() > first || s.years.back() < last)
      throw IntegrityError("covariate " + s.country + "/" + std::string(to_string(s.band)) + " does not cover " +
                           std::to_string(first) + "-" + std::to_string(last));
    CovariateSeries c = s;
    const auto off = static_cast<std::ptrdiff_t>(first - s.years.front());
    const auto n = static_cast<std::ptrdiff_t>(last - first + 1);
    c.years.assign(s.years.begin() + off, s.years.begin() + off + n);
    c.values.assign(s.values.begin() + off, s.values.begin() + off + n);
    out.add(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// CSV `country,band,method,year,k`.
inline void write_covariates_csv(std::ostream& out, const CovariateSet& set) {
  csv::Writer w(out);
  w.header({"country", "band", "method", "year", "k"});
  for (const auto& [key, s] : set) {
    for (std::size_t i = 0; i < s.years.size(); ++i) {
      w.field(s.country).field(to_string(s.band)).field(to_string(s.method)).field(s.years[i]).field(s.values[i]);
      w.end_row();
    }
  }
}

/// Sidecar metadata as CSV `country,band,method,field,index,label,value`
/// covering variance_explained, sign flag, drift, sigma, col_means, loadings.
inline void write_covariate_metadata_csv(std::ostream& out, const CovariateSet& set) {
  csv::Writer w(out);
  w.header({"country", "band", "method", "field", "index", "label", "value"});
  for (const auto& [key, s] : set) {
    auto row = [&](std::string_view field, int index, const std::string& label, double value) {
      w.field(s.country).field(to_string(s.band)).field(to_string(s.method)).field(field).field(index).field(label).field(value);
      w.end_row();
    };
    if (s.values.size() >= 2) {
      const DriftModel m = fit_rw_drift(s);
      row("drift", 0, "", m.drift);
      row("sigma", 0, "", m.sigma);
    }
    if (s.pc1) {
      row("variance_explained", 0, "", s.pc1->variance_explained);
      row("sign_rule_applied", 0, "", s.pc1->sign_rule_applied ? 1.0 : 0.0);
      for (Eigen::Index j = 0; j < s.pc1->loadings.size(); ++j) {
        const std::string label = j < static_cast<Eigen::Index>(s.pc1->column_labels.size())
                                      ? s.pc1->column_labels[static_cast<std::size_t>(j)] : "";
        row("col_mean", static_cast<int>(j), label, s.pc1->col_means(j));
        row("loading", static_cast<int>(j), label, s.pc1->loadings(j));
      }
    }
  }
}

}  // namespace pcagee
