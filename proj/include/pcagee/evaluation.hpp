#pragma once

// Train/test orchestration, forecast scoring and model comparison.

#include <Eigen/Dense>
#include <atomic>
#include <exception>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pcagee/baselines.hpp"
#include "pcagee/covariates.hpp"
#include "pcagee/csv.hpp"
#include "pcagee/design.hpp"
#include "pcagee/error.hpp"
#include "pcagee/gee.hpp"
#include "pcagee/mortality_data.hpp"

namespace pcagee {

enum class ModelKind { pca_gee, avg_gee, lc, ll };

inline constexpr ModelKind kAllModels[] = {ModelKind::pca_gee, ModelKind::avg_gee, ModelKind::lc, ModelKind::ll};

inline std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::pca_gee: return "pca-gee";
    case ModelKind::avg_gee: return "avg-gee";
    case ModelKind::lc: return "lc";
    case ModelKind::ll: return "ll";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  for (ModelKind m : kAllModels)
    if (s == to_string(m)) return m;
  throw ConfigError("unknown model '" + std::string(s) + "' (expected pca-gee, avg-gee, lc or ll)");
}

inline bool is_gee(ModelKind m) { return m == ModelKind::pca_gee || m == ModelKind::avg_gee; }

inline CovariateMethod covariate_method(ModelKind m) {
  return m == ModelKind::avg_gee ? CovariateMethod::avg : CovariateMethod::pca;
}

// ---------------------------------------------------------------------------
// Scores

/// Mean of (exp(a) - exp(b))^2 over all cells.
inline double mse_rates(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols())
    throw DomainError("mse: predicted and actual cover different cells");
  if (predicted.size() == 0) throw DomainError("mse: no cells");
  return (predicted.array().exp() - actual.array().exp()).square().mean();
}

inline double mse_log(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols())
    throw DomainError("mse: predicted and actual cover different cells");
  if (predicted.size() == 0) throw DomainError("mse: no cells");
  return (predicted - actual).array().square().mean();
}

struct MseEntry {
  Population population;
  ModelKind model = ModelKind::lc;
  double mse_rate = 0.0;
  double mse_log = 0.0;
};

struct EvalReport {
  std::vector<MseEntry> entries;  // population-major, models in request order

  const MseEntry* find(const Population& pop, ModelKind model) const {
    for (const auto& e : entries)
      if (e.population == pop && e.model == model) return &e;
    return nullptr;
  }

  bool has_model(ModelKind model) const {
    for (const auto& e : entries)
      if (e.model == model) return true;
    return false;
  }

  std::vector<Population> populations() const {
    std::vector<Population> out;
    for (const auto& e : entries)
      if (std::find(out.begin(), out.end(), e.population) == out.end()) out.push_back(e.population);
    return out;
  }
};

struct RatioRow {
  Population population;
  double ratio = 0.0;  // mse(baseline) / mse(candidate)
};

struct RatioTable {
  ModelKind baseline = ModelKind::lc;
  ModelKind candidate = ModelKind::pca_gee;
  std::vector<RatioRow> rows;
  int wins = 0;  // rows with ratio > 1
};

inline RatioTable compare(const EvalReport& report, ModelKind baseline, ModelKind candidate) {
  for (ModelKind m : {baseline, candidate})
    if (!report.has_model(m)) throw DomainError("compare: model " + std::string(to_string(m)) + " not in report");
  RatioTable t;
  t.baseline = baseline;
  t.candidate = candidate;
  for (const auto& pop : report.populations()) {
    const MseEntry* b = report.find(pop, baseline);
    const MseEntry* c = report.find(pop, candidate);
    if (!b || !c) throw DomainError("compare: population " + pop.key() + " lacks one of the models");
    RatioRow r{pop, b->mse_rate / c->mse_rate};
    if (r.ratio > 1.0) ++t.wins;
    t.rows.push_back(r);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Experiment

enum class ExperimentMode { multi, single };

inline ExperimentMode parse_experiment_mode(std::string_view s) {
  if (s == "multi") return ExperimentMode::multi;
  if (s == "single") return ExperimentMode::single;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected multi or single)");
}

struct ExperimentConfig {
  PanelConfig panel;
  ExperimentMode mode = ExperimentMode::multi;
  std::vector<ModelKind> models{ModelKind::pca_gee, ModelKind::avg_gee, ModelKind::lc, ModelKind::ll};
  GeeOptions gee;
  /// Formula used in single mode; multi mode always uses the multi-population formula.
  FormulaVariant single_variant = FormulaVariant::reduced;
  bool weights = true;
  KDynamics ll_k_dynamics = KDynamics::ar1;
  bool allow_nonconverged = false;
  /// Fit an extra independence model per GEE run so QIC can be reported.
  bool compute_qic = false;
  /// (baseline, candidate) pairs; empty means every baseline against every GEE model.
  std::vector<std::pair<ModelKind, ModelKind>> comparisons;
  int jobs = 1;

  void validate() const {
    panel.validate();
    if (models.empty()) throw ConfigError("model list is empty");
    for (std::size_t i = 0; i < models.size(); ++i)
      for (std::size_t j = i + 1; j < models.size(); ++j)
        if (models[i] == models[j]) throw ConfigError("duplicate model " + std::string(to_string(models[i])));
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    if (gee.tol <= 0.0 || gee.max_iter < 1) throw ConfigError("GEE tolerance and iteration limit must be positive");
  }

  std::vector<std::pair<ModelKind, ModelKind>> resolved_comparisons() const {
    if (!comparisons.empty()) return comparisons;
    std::vector<std::pair<ModelKind, ModelKind>> out;
    for (ModelKind b : models)
      if (!is_gee(b))
        for (ModelKind c : models)
          if (is_gee(c)) out.emplace_back(b, c);
    return out;
  }
};

/// Ages x years forecast of log rates for one population and model.
struct PopulationForecast {
  ModelKind model = ModelKind::lc;
  Population population;
  int year_first = 0;
  Eigen::MatrixXd log_rates;
};

struct GeeRun {
  ModelKind model = ModelKind::pca_gee;
  std::string scope;  // "all" in multi mode, else the population key
  GeeFit fit;
  DesignEncoding encoding;
  CovariateSet train_covariates;
  CovariateSet forecast_covariates;
  std::optional<QicReport> qic;
};

struct ExperimentResult {
  EvalReport report;
  std::vector<GeeRun> gee_runs;
  std::vector<PopulationForecast> forecasts;
  std::vector<std::pair<std::string, LeeCarterFit>> lee_carter;
  std::vector<LiLeeFit> li_lee;
  std::vector<RatioTable> ratios;
};

/// Training design for a GEE model. `external` supplies covariates for
/// CovariateMethod::external; otherwise they are built from `train`.
inline Design gee_training_design(const MortalityPanel& train, const ModelFormula& formula, bool weights,
                                  CovariateSet& covariates, const CovariateSet* external = nullptr) {
  if (formula.covariate_method == CovariateMethod::external) {
    if (!external) throw ConfigError("external covariate method needs a covariate set");
    covariates = restrict_covariates(*external, train.year_first, train.year_last);
  } else {
    covariates = build_covariates(train, formula.covariate_method);
  }
  Design d = build_design(train, covariates, formula);
  if (!weights) std::fill(d.layout.weight.begin(), d.layout.weight.end(), 1.0);
  return d;
}

inline GeeFit fit_checked(const Design& d, const GeeOptions& opt, bool allow_nonconverged, const std::string& what) {
  GeeFit fit = fit_gee(d, opt);
  if (!fit.converged && !allow_nonconverged)
    throw ConvergenceError(what + ": GEE did not converge in " + std::to_string(fit.n_iter) +
                           " iterations (last change " + csv::format_number(fit.last_delta) + ")");
  return fit;
}

/// Reshapes a prediction vector (rows in design order) into per-population matrices.
inline std::vector<Eigen::MatrixXd> reshape_predictions(const Design& d, const Eigen::VectorXd& yhat, int n_ages,
                                                        int year_first, int n_years) {
  std::vector<Eigen::MatrixXd> out(d.populations.size(), Eigen::MatrixXd::Zero(n_ages, n_years));
  for (std::size_t r = 0; r < d.rows.size(); ++r) {
    const auto& row = d.rows[r];
    out[row.population](row.age - d.encoding.age_min, row.year - year_first) = yhat(static_cast<Eigen::Index>(r));
  }
  return out;
}

namespace detail {

struct ScopeResult {
  std::vector<GeeRun> gee_runs;
  std::vector<PopulationForecast> forecasts;
  std::vector<std::pair<std::string, LeeCarterFit>> lee_carter;
  std::vector<LiLeeFit> li_lee;
};

/// Fits every requested model on `train` (one scope: all populations in multi
/// mode, a single population in single mode) and forecasts the test years.
inline ScopeResult run_scope(const MortalityPanel& train, const ExperimentConfig& cfg, const std::string& scope,
                             const CovariateSet* external) {
  ScopeResult out;
  const int y0 = cfg.panel.test_years.first, y1 = cfg.panel.test_years.last;
  const int horizon = y1 - y0 + 1;
  if (y0 != train.year_last + 1) throw ConfigError("test years must start right after the training years");
  const FormulaVariant variant =
      cfg.mode == ExperimentMode::multi ? FormulaVariant::multi_population : cfg.single_variant;

  for (ModelKind m : cfg.models) {
    if (is_gee(m)) {
      GeeRun run;
      run.model = m;
      run.scope = scope;
      ModelFormula formula{variant, external ? CovariateMethod::external : covariate_method(m)};
      const Design d = gee_training_design(train, formula, cfg.weights, run.train_covariates, external);
      run.fit = fit_checked(d, cfg.gee, cfg.allow_nonconverged, std::string(to_string(m)) + " " + scope);
      if (cfg.compute_qic) {
        GeeOptions ind = cfg.gee;
        ind.corstr = CorrelationKind::independence;
        const GeeFit indep =
            cfg.gee.corstr == CorrelationKind::independence ? run.fit : fit_checked(d, ind, true, "independence");
        run.qic = qic_report(run.fit, indep);
      }
      run.encoding = d.encoding;
      run.forecast_covariates = forecast_covariates(run.train_covariates, horizon);
      Design pd;
      try {
        pd = build_prediction_design(d.encoding, train.populations, run.forecast_covariates, y0, y1);
      } catch (const IntegrityError& e) {
        throw NumericalError(std::string("forecast: ") + e.what());
      }
      const auto mats = reshape_predictions(pd, predict(run.fit, pd), train.n_ages(), y0, horizon);
      for (std::size_t i = 0; i < mats.size(); ++i) out.forecasts.push_back({m, train.populations[i], y0, mats[i]});
      out.gee_runs.push_back(std::move(run));
    } else if (m == ModelKind::lc) {
      for (std::size_t i = 0; i < train.populations.size(); ++i) {
        LeeCarterFit lc = fit_lee_carter(train.log_rates[i], train.year_first);
        out.forecasts.push_back({m, train.populations[i], y0, forecast_lee_carter(lc, horizon)});
        out.lee_carter.emplace_back(train.populations[i].key(), std::move(lc));
      }
    } else {
      LiLeeFit ll = fit_li_lee(train, cfg.ll_k_dynamics);
      const auto mats = forecast_li_lee(ll, horizon);
      for (std::size_t i = 0; i < mats.size(); ++i) out.forecasts.push_back({m, train.populations[i], y0, mats[i]});
      out.li_lee.push_back(std::move(ll));
    }
  }
  return out;
}

/// Runs `task(i)` for i in [0, n) on up to `jobs` threads. Exceptions are
/// rethrown for the lowest failing index so failures are deterministic.
template <class F>
void parallel_for(std::size_t n, int jobs, F task) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Fits on the training years of `panel`, forecasts the test years and scores
/// against them. Only a training-restricted copy of the panel reaches any
/// fitting code. `external` (training years only) replaces built covariates.
inline ExperimentResult run_experiment(const MortalityPanel& panel, const ExperimentConfig& cfg,
                                       const CovariateSet* external = nullptr) {
  cfg.validate();
  const MortalityPanel train = panel.restrict_years(cfg.panel.train_years.first, cfg.panel.train_years.last);
  const MortalityPanel test = panel.restrict_years(cfg.panel.test_years.first, cfg.panel.test_years.last);

  std::vector<detail::ScopeResult> scopes;
  if (cfg.mode == ExperimentMode::multi) {
    scopes.push_back(detail::run_scope(train, cfg, "all", external));
  } else {
    scopes.resize(train.populations.size());
    detail::parallel_for(scopes.size(), cfg.jobs, [&](std::size_t i) {
      const Population& pop = train.populations[i];
      scopes[i] = detail::run_scope(train.select({pop}), cfg, pop.key(), external);
    });
  }

  ExperimentResult res;
  for (auto& s : scopes) {
    for (auto& r : s.gee_runs) res.gee_runs.push_back(std::move(r));
    for (auto& f : s.forecasts) res.forecasts.push_back(std::move(f));
    for (auto& l : s.lee_carter) res.lee_carter.push_back(std::move(l));
    for (auto& l : s.li_lee) res.li_lee.push_back(std::move(l));
  }
  // Population-major order, models in request order.
  for (const auto& pop : train.populations) {
    const std::size_t pi = *test.find(pop);
    for (ModelKind m : cfg.models)
      for (const auto& f : res.forecasts)
        if (f.model == m && f.population == pop)
          res.report.entries.push_back(
              {pop, m, mse_rates(f.log_rates, test.log_rates[pi]), mse_log(f.log_rates, test.log_rates[pi])});
  }
  for (const auto& [b, c] : cfg.resolved_comparisons()) res.ratios.push_back(compare(res.report, b, c));
  return res;
}

/// One fitted working-correlation structure with its QIC family.
struct GeeFamilyFit {
  ModelKind model = ModelKind::pca_gee;
  std::string scope;
  CorrelationKind corstr = CorrelationKind::independence;
  GeeFit fit;
  QicReport qic;
};

/// Fits `corstrs` for every GEE model in `cfg` on the training years only.
/// Results are ordered by scope, then model, then the order of `corstrs`.
inline std::vector<GeeFamilyFit> fit_gee_families(const MortalityPanel& panel, const ExperimentConfig& cfg,
                                                  const std::vector<CorrelationKind>& corstrs,
                                                  const CovariateSet* external = nullptr) {
  cfg.validate();
  if (corstrs.empty()) throw ConfigError("no correlation structures requested");
  const MortalityPanel train = panel.restrict_years(cfg.panel.train_years.first, cfg.panel.train_years.last);
  const auto fit_scope = [&](const MortalityPanel& part, const std::string& scope) {
    std::vector<GeeFamilyFit> out;
    const FormulaVariant variant =
        cfg.mode == ExperimentMode::multi ? FormulaVariant::multi_population : cfg.single_variant;
    for (ModelKind m : cfg.models) {
      if (!is_gee(m)) continue;
      CovariateSet covs;
      const ModelFormula formula{variant, external ? CovariateMethod::external : covariate_method(m)};
      const Design d = gee_training_design(part, formula, cfg.weights, covs, external);
      const std::string what = std::string(to_string(m)) + " " + scope;
      GeeOptions ind = cfg.gee;
      ind.corstr = CorrelationKind::independence;
      const GeeFit indep = fit_checked(d, ind, cfg.allow_nonconverged, what + " independence");
      for (CorrelationKind k : corstrs) {
        GeeOptions opt = cfg.gee;
        opt.corstr = k;
        GeeFamilyFit f;
        f.model = m;
        f.scope = scope;
        f.corstr = k;
        f.fit = k == CorrelationKind::independence
                    ? indep
                    : fit_checked(d, opt, cfg.allow_nonconverged, what + " " + std::string(to_string(k)));
        f.qic = qic_report(f.fit, indep);
        out.push_back(std::move(f));
      }
    }
    return out;
  };
  if (cfg.mode == ExperimentMode::multi) return fit_scope(train, "all");
  std::vector<std::vector<GeeFamilyFit>> parts(train.populations.size());
  detail::parallel_for(parts.size(), cfg.jobs, [&](std::size_t i) {
    const Population& pop = train.populations[i];
    parts[i] = fit_scope(train.select({pop}), pop.key());
  });
  std::vector<GeeFamilyFit> out;
  for (auto& p : parts)
    for (auto& f : p) out.push_back(std::move(f));
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline void write_mse_report(std::ostream& out, const EvalReport& r) {
  csv::Writer w(out);
  w.header({"country", "gender", "model", "mse_rate", "mse_log"});
  for (const auto& e : r.entries) {
    w.field(e.population.country).field(to_string(e.population.sex)).field(to_string(e.model));
    w.field(e.mse_rate).field(e.mse_log);
    w.end_row();
  }
}

inline void write_ratio_report(std::ostream& out, const std::vector<RatioTable>& tables) {
  csv::Writer w(out);
  w.header({"country", "gender", "baseline", "candidate", "ratio"});
  for (const auto& t : tables)
    for (const auto& r : t.rows) {
      w.field(r.population.country).field(to_string(r.population.sex));
      w.field(to_string(t.baseline)).field(to_string(t.candidate)).field(r.ratio);
      w.end_row();
    }
}

inline void write_summary(std::ostream& out, const std::vector<RatioTable>& tables) {
  csv::Writer w(out);
  w.header({"baseline", "candidate", "wins", "populations"});
  for (const auto& t : tables) {
    w.field(to_string(t.baseline)).field(to_string(t.candidate)).field(t.wins).field(t.rows.size());
    w.end_row();
  }
}

/// Wide layout, one row per population and one `baseline/candidate` column per table.
inline void write_ratios_by_population(std::ostream& out, const std::vector<RatioTable>& tables) {
  csv::Writer w(out);
  std::vector<std::string> header{"country", "gender"};
  for (const auto& t : tables) header.push_back(std::string(to_string(t.baseline)) + "/" + std::string(to_string(t.candidate)));
  w.header(header);
  if (tables.empty()) return;
  for (std::size_t i = 0; i < tables.front().rows.size(); ++i) {
    const auto& pop = tables.front().rows[i].population;
    w.field(pop.country).field(to_string(pop.sex));
    for (const auto& t : tables) w.field(t.rows.at(i).ratio);
    w.end_row();
  }
}

/// `model,country,gender,age,year,log_rate,rate`.
inline void write_forecast_csv(std::ostream& out, const std::vector<PopulationForecast>& forecasts, int age_min) {
  csv::Writer w(out);
  w.header({"model", "country", "gender", "age", "year", "log_rate", "rate"});
  for (const auto& f : forecasts)
    for (Eigen::Index a = 0; a < f.log_rates.rows(); ++a)
      for (Eigen::Index t = 0; t < f.log_rates.cols(); ++t) {
        const double v = f.log_rates(a, t);
        w.field(to_string(f.model)).field(f.population.country).field(to_string(f.population.sex));
        w.field(age_min + static_cast<int>(a)).field(f.year_first + static_cast<int>(t)).field(v).field(std::exp(v));
        w.end_row();
      }
}

}  // namespace pcagee
