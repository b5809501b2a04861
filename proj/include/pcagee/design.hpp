#pragma once

// Encodes the three regression variants into a numeric design with cluster
// layout (id = country:gender:age, waves = year) and age-proportional prior
// weights. Factors use treatment coding with the lexicographically first
// level as reference.

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pcagee/covariates.hpp"
#include "pcagee/csv.hpp"
#include "pcagee/error.hpp"
#include "pcagee/mortality_data.hpp"

namespace pcagee {

enum class FormulaVariant {
  multi_population,   // country + gender + age + gender:age:k + gender:age:k^2 + cohort
  single_population,  // age + age:k + age:k^2 + cohort
  reduced,     // age + age:k
};

inline std::string_view to_string(FormulaVariant v) {
  switch (v) {
    case FormulaVariant::multi_population: return "multi";
    case FormulaVariant::single_population: return "single";
    case FormulaVariant::reduced: return "reduced";
  }
  return "?";
}

inline FormulaVariant parse_formula_variant(std::string_view s) {
  if (s == "multi" || s == "multi_population") return FormulaVariant::multi_population;
  if (s == "single" || s == "single_population") return FormulaVariant::single_population;
  if (s == "reduced") return FormulaVariant::reduced;
  throw ConfigError("unknown formula variant '" + std::string(s) + "' (expected multi, single or reduced)");
}

struct ModelFormula {
  FormulaVariant variant = FormulaVariant::multi_population;
  CovariateMethod covariate_method = CovariateMethod::pca;

  bool include_cohort() const { return variant != FormulaVariant::reduced; }
  bool include_k_squared() const { return variant != FormulaVariant::reduced; }
  bool single_population() const { return variant != FormulaVariant::multi_population; }
};

/// Everything learnt from the training rows that a prediction design must
/// reuse unchanged.
struct DesignEncoding {
  ModelFormula formula;
  std::vector<std::string> countries;  // factor levels, sorted
  std::vector<Sex> sexes;              // factor levels, sorted
  int age_min = 0;
  int age_max = -1;
  BandBoundaries bands;
  double cohort_center = 0.0;  // training mean of (year - age)
  std::vector<std::string> labels;

  int n_ages() const { return age_max - age_min + 1; }
};

struct ClusterLayout {
  std::vector<std::string> keys;  // one per cluster
  std::vector<int> cluster;       // per row, index into keys
  std::vector<int> wave;          // per row: year
  std::vector<double> weight;     // per row

  std::size_t n_clusters() const { return keys.size(); }
};

struct DesignRow {
  std::size_t population = 0;  // index into the panel's populations
  int age = 0;
  int year = 0;
};

struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;  // zeros for prediction designs without observations
  std::vector<std::string> labels;
  ClusterLayout layout;
  DesignEncoding encoding;
  std::vector<DesignRow> rows;
  std::vector<Population> populations;

  Eigen::Index n_rows() const { return X.rows(); }
  Eigen::Index n_cols() const { return X.cols(); }
};

/// weight_i = age_i / mean(age).
inline std::vector<double> weights_from_age(std::span<const int> ages) {
  if (ages.empty()) return {};
  const double mean = std::accumulate(ages.begin(), ages.end(), 0.0) / static_cast<double>(ages.size());
  if (!(mean > 0.0)) throw DomainError("age weights need a positive mean age");
  std::vector<double> w(ages.size());
  for (std::size_t i = 0; i < ages.size(); ++i) w[i] = ages[i] / mean;
  return w;
}

namespace detail {

inline std::vector<std::string> design_labels(const DesignEncoding& enc) {
  std::vector<std::string> labels{"(Intercept)"};
  const auto age_label = [](int a) { return "age[" + std::to_string(a) + "]"; };
  const auto sex_label = [](Sex s) { return "gender[" + std::string(to_string(s)) + "]"; };
  if (enc.formula.variant == FormulaVariant::multi_population) {
    for (std::size_t i = 1; i < enc.countries.size(); ++i) labels.push_back("country[" + enc.countries[i] + "]");
    for (std::size_t i = 1; i < enc.sexes.size(); ++i) labels.push_back(sex_label(enc.sexes[i]));
    for (int a = enc.age_min + 1; a <= enc.age_max; ++a) labels.push_back(age_label(a));
    for (const char* pow : {":k", ":k^2"})
      for (Sex s : enc.sexes)
        for (int a = enc.age_min; a <= enc.age_max; ++a) labels.push_back(sex_label(s) + ":" + age_label(a) + pow);
  } else {
    for (int a = enc.age_min + 1; a <= enc.age_max; ++a) labels.push_back(age_label(a));
    for (int a = enc.age_min; a <= enc.age_max; ++a) labels.push_back(age_label(a) + ":k");
    if (enc.formula.include_k_squared())
      for (int a = enc.age_min; a <= enc.age_max; ++a) labels.push_back(age_label(a) + ":k^2");
  }
  if (enc.formula.include_cohort()) labels.push_back("cohort");
  return labels;
}

/// Row-by-row assembly shared by training and prediction designs.
inline Design assemble(const DesignEncoding& enc, const std::vector<Population>& pops, const CovariateSet& covariates,
                       int year_first, int year_last, const MortalityPanel* observed) {
  Design d;
  d.encoding = enc;
  d.labels = enc.labels;
  d.populations = pops;
  const int na = enc.n_ages(), ny = year_last - year_first + 1;
  const bool multi = enc.formula.variant == FormulaVariant::multi_population;
  const Eigen::Index n = static_cast<Eigen::Index>(pops.size()) * na * ny;
  const Eigen::Index p = static_cast<Eigen::Index>(enc.labels.size());
  d.X = Eigen::MatrixXd::Zero(n, p);
  d.y = Eigen::VectorXd::Zero(n);
  d.rows.reserve(static_cast<std::size_t>(n));

  const auto level = [](const auto& levels, const auto& v) -> Eigen::Index {
    auto it = std::find(levels.begin(), levels.end(), v);
    if (it == levels.end()) throw IntegrityError("factor level not present in the training encoding");
    return static_cast<Eigen::Index>(it - levels.begin());
  };
  const Eigen::Index nc = static_cast<Eigen::Index>(enc.countries.size());
  const Eigen::Index ns = static_cast<Eigen::Index>(enc.sexes.size());
  const Eigen::Index off_country = 1;
  const Eigen::Index off_sex = multi ? off_country + nc - 1 : 1;
  const Eigen::Index off_age = multi ? off_sex + ns - 1 : 1;
  const Eigen::Index off_k = off_age + na - 1;
  const Eigen::Index k_block = multi ? ns * na : na;
  const Eigen::Index off_k2 = off_k + k_block;
  const Eigen::Index off_cohort = p - 1;

  Eigen::Index r = 0;
  std::vector<int> ages;
  ages.reserve(static_cast<std::size_t>(n));
  for (std::size_t pi = 0; pi < pops.size(); ++pi) {
    const Population& pop = pops[pi];
    const Eigen::Index ci = level(enc.countries, pop.country);
    const Eigen::Index si = level(enc.sexes, pop.sex);
    for (int age = enc.age_min; age <= enc.age_max; ++age) {
      const Eigen::Index ai = age - enc.age_min;
      const CovariateSeries& k = covariates.at(pop.country, band_of(age, enc.bands));
      const std::string key = multi ? pop.key() + ":" + std::to_string(age) : std::to_string(age);
      const int cluster = static_cast<int>(d.layout.keys.size());
      d.layout.keys.push_back(key);
      for (int year = year_first; year <= year_last; ++year, ++r) {
        const double kv = k.at(year);
        d.X(r, 0) = 1.0;
        if (multi) {
          if (ci > 0) d.X(r, off_country + ci - 1) = 1.0;
          if (si > 0) d.X(r, off_sex + si - 1) = 1.0;
        }
        if (ai > 0) d.X(r, off_age + ai - 1) = 1.0;
        const Eigen::Index cell = multi ? si * na + ai : ai;
        d.X(r, off_k + cell) = kv;
        if (enc.formula.include_k_squared()) d.X(r, off_k2 + cell) = kv * kv;
        if (enc.formula.include_cohort()) d.X(r, off_cohort) = (year - age) - enc.cohort_center;
        if (observed) {
          auto op = observed->find(pop);
          if (!op) throw IntegrityError("population " + pop.key() + " missing from observed panel");
          d.y(r) = observed->y(*op, age, year);
        }
        d.layout.cluster.push_back(cluster);
        d.layout.wave.push_back(year);
        ages.push_back(age);
        d.rows.push_back({pi, age, year});
      }
    }
  }
  d.layout.weight = weights_from_age(ages);
  return d;
}

}  // namespace detail

/// Throws NumericalError naming the columns that column-pivoted QR finds to be
/// linearly dependent on the others.
inline void check_full_rank(const Eigen::MatrixXd& X, const std::vector<std::string>& labels) {
  if (X.rows() < X.cols())
    throw NumericalError("design has fewer rows (" + std::to_string(X.rows()) + ") than columns (" +
                         std::to_string(X.cols()) + ")");
  Eigen::MatrixXd scaled = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double nrm = X.col(j).norm();
    if (nrm == 0.0) throw NumericalError("rank-deficient design: column '" + labels[static_cast<std::size_t>(j)] + "' is zero");
    scaled.col(j) /= nrm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank == X.cols()) return;
  std::string msg = "rank-deficient design (rank " + std::to_string(rank) + " of " + std::to_string(X.cols()) +
                    "); collinear columns:";
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index j = rank; j < X.cols(); ++j) msg += " '" + labels[static_cast<std::size_t>(perm(j))] + "'";
  throw NumericalError(msg);
}

/// Training design from `panel` (all its years) and covariates covering them.
inline Design build_design(const MortalityPanel& panel, const CovariateSet& covariates, const ModelFormula& formula,
                           bool check_rank = true) {
  panel.validate();
  if (formula.single_population() && panel.populations.size() != 1)
    throw DomainError("single-population formulas need a panel with exactly one population");
  DesignEncoding enc;
  enc.formula = formula;
  enc.countries = panel.countries();
  for (const auto& p : panel.populations)
    if (std::find(enc.sexes.begin(), enc.sexes.end(), p.sex) == enc.sexes.end()) enc.sexes.push_back(p.sex);
  std::sort(enc.sexes.begin(), enc.sexes.end(), [](Sex a, Sex b) { return to_string(a) < to_string(b); });
  enc.age_min = panel.age_min;
  enc.age_max = panel.age_max;
  enc.bands = panel.bands;
  // Mean of (year - age) over a rectangle = mean(year) - mean(age).
  enc.cohort_center = 0.5 * (panel.year_first + panel.year_last) - 0.5 * (panel.age_min + panel.age_max);
  enc.labels = detail::design_labels(enc);
  Design d = detail::assemble(enc, panel.populations, covariates, panel.year_first, panel.year_last, &panel);
  if (check_rank) check_full_rank(d.X, d.labels);
  return d;
}

/// Prediction design for [year_first, year_last] using the training encoding
/// (same levels, same cohort centre). `observed` may supply y for scoring.
inline Design build_prediction_design(const DesignEncoding& enc, const std::vector<Population>& pops,
                                      const CovariateSet& covariates, int year_first, int year_last,
                                      const MortalityPanel* observed = nullptr) {
  if (year_last < year_first) throw DomainError("empty prediction year range");
  return detail::assemble(enc, pops, covariates, year_first, year_last, observed);
}

/// Debug export: one column per design label, then cluster,wave,weight,y.
inline void write_design_csv(std::ostream& out, const Design& d) {
  csv::Writer w(out);
  auto header = d.labels;
  for (const char* c : {"cluster", "wave", "weight", "y"}) header.emplace_back(c);
  w.header(header);
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) w.field(d.X(r, j));
    const auto ri = static_cast<std::size_t>(r);
    w.field(d.layout.keys[static_cast<std::size_t>(d.layout.cluster[ri])]).field(d.layout.wave[ri])
        .field(d.layout.weight[ri]).field(d.y(r));
    w.end_row();
  }
}

}  // namespace pcagee
