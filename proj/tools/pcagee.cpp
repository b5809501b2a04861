// pcagee: ingest, fit, forecast, evaluate and simulate mortality panels.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical or convergence error.

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "pcagee/pcagee.hpp"

namespace fs = std::filesystem;
using namespace pcagee;

namespace {

struct Options {
  std::string config;
  std::string out;
  int jobs = 0;
  bool allow_nonconverged = false;
};

RunConfig load(const Options& o) {
  RunConfig rc = load_run_config(o.config);
  if (!o.out.empty()) rc.output_dir = o.out;
  if (o.jobs > 0) rc.experiment.jobs = o.jobs;
  if (o.allow_nonconverged) rc.experiment.allow_nonconverged = true;
  return rc;
}

template <class F>
void write_output(const fs::path& path, F body) {
  std::ostringstream os;
  body(os);
  fs::create_directories(path.parent_path());
  csv::write_file_atomic(path, os.str());
}

/// The only output that carries a timestamp.
void write_manifest(const RunConfig& rc, const std::string& command, const Options& o) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  nlohmann::json j;
  j["command"] = command;
  j["config"] = fs::absolute(o.config).string();
  j["output_dir"] = fs::absolute(rc.output_dir).string();
  j["timestamp"] = ts.str();
  j["jobs"] = rc.experiment.jobs;
  write_output(rc.output_dir / "run_manifest.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

void write_integrity(std::ostream& os, const MortalityPanel& p) {
  csv::Writer w(os);
  w.header({"field", "value"});
  const auto row = [&](const std::string& k, const std::string& v) {
    w.field(k).field(v);
    w.end_row();
  };
  row("populations", std::to_string(p.populations.size()));
  row("ages", std::to_string(p.n_ages()));
  row("years", std::to_string(p.n_years()));
  row("cells", std::to_string(p.n_cells()));
  row("zero_death_cells", std::to_string(p.substitutions.size()));
  for (const auto& s : p.substitutions)
    row("substituted", s.population.key() + ":" + std::to_string(s.age) + ":" + std::to_string(s.year));
}

int cmd_ingest(const Options& o) {
  const RunConfig rc = load(o);
  const MortalityPanel panel = load_panel(rc);
  write_output(rc.output_dir / "panel.csv", [&](std::ostream& os) { write_panel_csv(os, panel); });
  write_output(rc.output_dir / "integrity_summary.csv", [&](std::ostream& os) { write_integrity(os, panel); });
  write_manifest(rc, "ingest", o);
  std::cout << "panel: " << panel.populations.size() << " populations, " << panel.n_cells() << " cells, "
            << panel.substitutions.size() << " zero-death cells\n";
  return 0;
}

void do_fit(const RunConfig& rc, const MortalityPanel& panel) {
  const ExperimentConfig& ex = rc.experiment;
  const auto fits = fit_gee_families(panel, ex, rc.fit_corstrs);
  write_output(rc.output_dir / "coefficients.csv", [&](std::ostream& os) {
    csv::Writer w(os);
    w.header({"model", "scope", "corstr", "term", "estimate", "naive_se", "robust_se"});
    for (const auto& f : fits) {
      const Eigen::VectorXd nse = f.fit.naive_se(), rse = f.fit.robust_se();
      for (Eigen::Index j = 0; j < f.fit.beta.size(); ++j) {
        w.field(to_string(f.model)).field(f.scope).field(to_string(f.corstr));
        w.field(f.fit.labels[static_cast<std::size_t>(j)]).field(f.fit.beta(j)).field(nse(j)).field(rse(j));
        w.end_row();
      }
    }
  });
  write_output(rc.output_dir / "qic.csv", [&](std::ostream& os) {
    csv::Writer w(os);
    std::vector<std::string> header{"model", "scope", "corstr"};
    for (const auto& c : qic_columns()) header.push_back(c);
    header.insert(header.end(), {"phi", "rho", "iterations", "converged"});
    w.header(header);
    for (const auto& f : fits) {
      w.field(to_string(f.model)).field(f.scope).field(to_string(f.corstr));
      write_qic_fields(w, f.qic);
      w.field(f.fit.phi).field(f.fit.corr.rho).field(f.fit.n_iter).field(f.fit.converged ? "true" : "false");
      w.end_row();
    }
  });

  // Benchmark parameters, fitted on the training years as well.
  const MortalityPanel train = panel.restrict_years(ex.panel.train_years.first, ex.panel.train_years.last);
  const bool want_lc = std::find(ex.models.begin(), ex.models.end(), ModelKind::lc) != ex.models.end();
  const bool want_ll = std::find(ex.models.begin(), ex.models.end(), ModelKind::ll) != ex.models.end();
  if (want_lc || want_ll)
    write_output(rc.output_dir / "baselines.csv", [&](std::ostream& os) {
      csv::Writer w(os);
      w.header({"model", "population", "term", "index", "value"});
      if (want_lc)
        for (std::size_t i = 0; i < train.populations.size(); ++i)
          write_lee_carter_params(w, train.populations[i].key(), fit_lee_carter(train.log_rates[i], train.year_first));
      if (want_ll) {
        if (ex.mode == ExperimentMode::multi) {
          write_li_lee_params(w, fit_li_lee(train, ex.ll_k_dynamics));
        } else {
          for (const auto& pop : train.populations) write_li_lee_params(w, fit_li_lee(train.select({pop}), ex.ll_k_dynamics));
        }
      }
    });

  for (const auto& f : fits)
    std::cout << to_string(f.model) << " " << f.scope << " " << to_string(f.corstr) << ": QIC "
              << csv::format_number(f.qic.qic) << ", params " << f.qic.params << (f.fit.converged ? "" : " (not converged)")
              << '\n';
}

int cmd_fit(const Options& o) {
  const RunConfig rc = load(o);
  const MortalityPanel panel = load_panel(rc);
  do_fit(rc, panel);
  write_manifest(rc, "fit", o);
  return 0;
}

void write_forecast_outputs(const RunConfig& rc, const MortalityPanel& panel, const ExperimentResult& res) {
  write_output(rc.output_dir / "forecast.csv",
               [&](std::ostream& os) { write_forecast_csv(os, res.forecasts, panel.age_min); });
  write_output(rc.output_dir / "covariate_forecast.csv", [&](std::ostream& os) {
    csv::Writer w(os);
    w.header({"model", "scope", "country", "band", "year", "k", "drift", "sigma"});
    for (const auto& run : res.gee_runs)
      for (const auto& [key, s] : run.forecast_covariates) {
        const DriftModel dm = fit_rw_drift(run.train_covariates.at(key.first, key.second));
        for (std::size_t i = 0; i < s.years.size(); ++i) {
          w.field(to_string(run.model)).field(run.scope).field(s.country).field(to_string(s.band));
          w.field(s.years[i]).field(s.values[i]).field(dm.drift);
          if (dm.sigma_defined) w.field(dm.sigma);
          else w.field("NA");
          w.end_row();
        }
      }
  });
  write_output(rc.output_dir / "covariates_train.csv", [&](std::ostream& os) {
    csv::Writer w(os);
    w.header({"model", "scope", "country", "band", "year", "k"});
    for (const auto& run : res.gee_runs)
      for (const auto& [key, s] : run.train_covariates)
        for (std::size_t i = 0; i < s.years.size(); ++i) {
          w.field(to_string(run.model)).field(run.scope).field(s.country).field(to_string(s.band));
          w.field(s.years[i]).field(s.values[i]);
          w.end_row();
        }
  });
}

int cmd_forecast(const Options& o) {
  const RunConfig rc = load(o);
  const MortalityPanel panel = load_panel(rc);
  const ExperimentResult res = run_experiment(panel, rc.experiment);
  write_forecast_outputs(rc, panel, res);
  write_manifest(rc, "forecast", o);
  std::cout << "forecast: " << res.forecasts.size() << " population forecasts for "
            << rc.experiment.panel.test_years.first << "-" << rc.experiment.panel.test_years.last << '\n';
  return 0;
}

void write_evaluation_outputs(const RunConfig& rc, const ExperimentResult& res) {
  write_output(rc.output_dir / "mse_report.csv", [&](std::ostream& os) { write_mse_report(os, res.report); });
  write_output(rc.output_dir / "ratio_report.csv", [&](std::ostream& os) { write_ratio_report(os, res.ratios); });
  write_output(rc.output_dir / "summary.csv", [&](std::ostream& os) { write_summary(os, res.ratios); });
  write_output(rc.output_dir / "ratios_by_population.csv",
               [&](std::ostream& os) { write_ratios_by_population(os, res.ratios); });
}

void print_summary(const ExperimentResult& res) {
  for (const auto& t : res.ratios)
    std::cout << to_string(t.baseline) << " vs " << to_string(t.candidate) << ": candidate better in " << t.wins
              << " of " << t.rows.size() << " populations\n";
}

int cmd_evaluate(const Options& o) {
  const RunConfig rc = load(o);
  const MortalityPanel panel = load_panel(rc);
  const ExperimentResult res = run_experiment(panel, rc.experiment);
  write_evaluation_outputs(rc, res);
  write_manifest(rc, "evaluate", o);
  print_summary(res);
  return 0;
}

int cmd_simulate(const Options& o) {
  const RunConfig rc = load(o);
  const SimulatedPanel sim = simulate_panel(rc.simulation);
  for (const auto& ct : to_country_tables(sim)) {
    const fs::path dir = rc.output_dir / "data" / ct.country;
    write_output(dir / "Deaths_1x1.txt", [&](std::ostream& os) { write_hmd_table(os, ct.deaths); });
    write_output(dir / "Exposures_1x1.txt", [&](std::ostream& os) { write_hmd_table(os, ct.exposures); });
  }
  // Truth in the coefficient order the fitting code uses for the training years.
  const MortalityPanel train = sim.panel.restrict_years(rc.experiment.panel.train_years.first,
                                                        std::min(rc.experiment.panel.train_years.last, sim.panel.year_last));
  CovariateSet covs;
  const Design d = gee_training_design(train, {sim.config.variant, CovariateMethod::external}, true, covs, &sim.truth.k);
  write_output(rc.output_dir / "truth.csv", [&](std::ostream& os) { write_truth_csv(os, sim.truth, d.encoding); });
  write_output(rc.output_dir / "truth_k.csv", [&](std::ostream& os) { write_covariates_csv(os, sim.truth.k); });
  write_manifest(rc, "simulate", o);
  std::cout << "simulated " << sim.panel.populations.size() << " populations, " << sim.panel.n_cells()
            << " cells (seed " << sim.config.seed << ")\n";
  return 0;
}

int cmd_report(const Options& o) {
  const RunConfig rc = load(o);
  const MortalityPanel panel = load_panel(rc);
  write_output(rc.output_dir / "panel.csv", [&](std::ostream& os) { write_panel_csv(os, panel); });
  write_output(rc.output_dir / "integrity_summary.csv", [&](std::ostream& os) { write_integrity(os, panel); });
  do_fit(rc, panel);
  const ExperimentResult res = run_experiment(panel, rc.experiment);
  write_forecast_outputs(rc, panel, res);
  write_evaluation_outputs(rc, res);
  write_manifest(rc, "report", o);
  for (const auto& e : res.report.entries)
    std::cout << e.population.key() << " " << to_string(e.model) << ": mse_rate " << csv::format_number(e.mse_rate)
              << ", mse_log " << csv::format_number(e.mse_log) << '\n';
  print_summary(res);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PCA-GEE mortality forecasting"};
  app.require_subcommand(1);
  Options opt;
  int (*handler)(const Options&) = nullptr;

  const auto add = [&](const char* name, const char* help, int (*fn)(const Options&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "JSON run configuration")->required();
    sub->add_option("--out", opt.out, "output directory (overrides the config)");
    sub->add_option("--jobs", opt.jobs, "worker threads for per-population runs")->check(CLI::PositiveNumber);
    sub->add_flag("--allow-nonconverged", opt.allow_nonconverged, "keep fits that hit the iteration limit");
    sub->callback([&handler, fn] { handler = fn; });
  };
  add("ingest", "parse tables, build the panel, write panel.csv", cmd_ingest);
  add("fit", "fit GEE models on the training years, write coefficients and QIC", cmd_fit);
  add("forecast", "forecast the test years", cmd_forecast);
  add("evaluate", "score forecasts against the test years", cmd_evaluate);
  add("simulate", "write a synthetic panel and its true parameters", cmd_simulate);
  add("report", "run ingest, fit, forecast and evaluate in one pass", cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return handler(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
