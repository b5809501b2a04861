#pragma once

// JSON run configuration. Relative paths resolve against the config file's
// directory. Unknown keys are rejected so typos do not silently fall back to
// defaults.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcagee/error.hpp"
#include "pcagee/evaluation.hpp"
#include "pcagee/gee.hpp"
#include "pcagee/mortality_data.hpp"
#include "pcagee/simulate.hpp"

namespace pcagee {

struct CountryPaths {
  std::string country;
  std::filesystem::path deaths;
  std::filesystem::path exposures;
};

struct RunConfig {
  ExperimentConfig experiment;
  std::filesystem::path data_dir;
  std::vector<CountryPaths> data;  // one per country in the panel
  std::filesystem::path output_dir = "out";
  /// Structures fitted by `fit`, each reported with QIC.
  std::vector<CorrelationKind> fit_corstrs{CorrelationKind::independence, CorrelationKind::exchangeable,
                                           CorrelationKind::ar1};
  SimulationConfig simulation;
  std::uint64_t seed = 1;

  std::vector<std::string> countries() const {
    std::vector<std::string> out;
    for (const auto& p : experiment.panel.populations)
      if (std::find(out.begin(), out.end(), p.country) == out.end()) out.push_back(p.country);
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Throws DataError when an input file is missing.
  void check_data_paths() const {
    if (data.empty()) throw DataError("no data files configured");
    for (const auto& c : data)
      for (const auto& p : {c.deaths, c.exposures})
        if (!std::filesystem::is_regular_file(p))
          throw DataError("missing data file for " + c.country + ": " + p.string());
  }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline YearRange year_range(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    throw ConfigError(where + " must be [first, last]");
  return {v[0].get<int>(), v[1].get<int>()};
}

inline Population parse_population(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("population '" + s + "' must be COUNTRY:gender");
  return {s.substr(0, colon), parse_sex(s.substr(colon + 1))};
}

inline std::vector<Population> parse_populations(const json& panel) {
  std::vector<Population> pops;
  if (panel.contains("populations")) {
    if (panel.contains("countries")) throw ConfigError("panel: give either populations or countries, not both");
    for (const auto& v : get_or<std::vector<std::string>>(panel, "populations", {}, "panel"))
      pops.push_back(parse_population(v));
  } else {
    const auto countries = get_or<std::vector<std::string>>(panel, "countries", {}, "panel");
    const auto genders = get_or<std::vector<std::string>>(panel, "genders", {"female", "male"}, "panel");
    for (const auto& c : countries)
      for (const auto& g : genders) pops.push_back({c, parse_sex(g)});
  }
  return pops;
}

inline PanelConfig parse_panel(const json& j) {
  reject_unknown(j, {"age_min", "age_max", "train", "test", "populations", "countries", "genders", "rate_kind",
                     "zero_cell_rule", "bands"},
                 "panel");
  PanelConfig p;
  p.age_min = get_or(j, "age_min", p.age_min, "panel");
  p.age_max = get_or(j, "age_max", p.age_max, "panel");
  if (j.contains("train")) p.train_years = year_range(j["train"], "panel.train");
  if (j.contains("test")) p.test_years = year_range(j["test"], "panel.test");
  p.populations = parse_populations(j);
  p.rate_kind = parse_rate_kind(get_or<std::string>(j, "rate_kind", "q", "panel"));
  p.zero_cell_rule = get_or(j, "zero_cell_rule", false, "panel");
  if (j.contains("bands")) {
    reject_unknown(j["bands"], {"children_max", "young_adults_max"}, "panel.bands");
    p.bands.children_max = get_or(j["bands"], "children_max", p.bands.children_max, "panel.bands");
    p.bands.young_adults_max = get_or(j["bands"], "young_adults_max", p.bands.young_adults_max, "panel.bands");
  }
  return p;
}

inline GeeOptions parse_gee(const json& j, std::vector<CorrelationKind>& fit_corstrs) {
  reject_unknown(j, {"corstr", "tol", "max_iter", "small_sample_correction", "quasi_lik_scale", "fit_corstrs",
                     "user_matrix"},
                 "gee");
  GeeOptions g;
  g.corstr = parse_correlation_kind(get_or<std::string>(j, "corstr", "ar1", "gee"));
  g.tol = get_or(j, "tol", g.tol, "gee");
  g.max_iter = get_or(j, "max_iter", g.max_iter, "gee");
  g.small_sample_correction = get_or(j, "small_sample_correction", g.small_sample_correction, "gee");
  const auto scale = get_or<std::string>(j, "quasi_lik_scale", "dispersion", "gee");
  if (scale == "dispersion") g.quasi_lik_scale = QuasiLikScale::dispersion;
  else if (scale == "unit") g.quasi_lik_scale = QuasiLikScale::unit;
  else throw ConfigError("gee.quasi_lik_scale must be dispersion or unit");
  if (j.contains("fit_corstrs")) {
    fit_corstrs.clear();
    for (const auto& s : get_or<std::vector<std::string>>(j, "fit_corstrs", {}, "gee"))
      fit_corstrs.push_back(parse_correlation_kind(s));
    if (fit_corstrs.empty()) throw ConfigError("gee.fit_corstrs is empty");
  }
  if (j.contains("user_matrix")) {
    const auto rows = get_or<std::vector<std::vector<double>>>(j, "user_matrix", {}, "gee");
    const auto n = static_cast<Eigen::Index>(rows.size());
    g.user_matrix.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != n)
        throw ConfigError("gee.user_matrix must be square");
      for (Eigen::Index c = 0; c < n; ++c) g.user_matrix(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }
  return g;
}

inline SimulationConfig parse_simulation(const json& j, const PanelConfig& panel, std::uint64_t seed) {
  reject_unknown(j, {"formula", "populations", "noise", "rho", "sigma", "k_start", "k_drift", "k_sigma", "exposure"},
                 "simulate");
  SimulationConfig s;
  s.age_min = panel.age_min;
  s.age_max = panel.age_max;
  s.year_first = panel.train_years.first;
  s.year_last = panel.test_years.last;
  s.bands = panel.bands;
  s.rate_kind = panel.rate_kind;
  s.seed = seed;
  s.populations = panel.populations;
  s.variant = parse_formula_variant(get_or<std::string>(j, "formula", s.populations.size() > 1 ? "multi" : "single",
                                                        "simulate"));
  if (j.contains("populations")) {
    s.populations.clear();
    for (const auto& v : get_or<std::vector<std::string>>(j, "populations", {}, "simulate"))
      s.populations.push_back(parse_population(v));
  }
  s.noise = parse_correlation_kind(get_or<std::string>(j, "noise", "ar1", "simulate"));
  s.rho = get_or(j, "rho", s.rho, "simulate");
  s.sigma = get_or(j, "sigma", s.sigma, "simulate");
  s.k_start = get_or(j, "k_start", s.k_start, "simulate");
  s.k_drift = get_or(j, "k_drift", s.k_drift, "simulate");
  s.k_sigma = get_or(j, "k_sigma", s.k_sigma, "simulate");
  s.exposure = get_or(j, "exposure", s.exposure, "simulate");
  return s;
}

}  // namespace detail

/// Parses `text`; `base` is the directory relative paths resolve against.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base = ".") {
  using detail::get_or;
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  detail::reject_unknown(j, {"data", "panel", "mode", "models", "gee", "formula", "weights", "ll_k_dynamics",
                             "comparisons", "output_dir", "seed", "jobs", "allow_nonconverged", "simulate"},
                         "config");
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  RunConfig rc;
  ExperimentConfig& ex = rc.experiment;
  ex.panel = detail::parse_panel(j.value("panel", json::object()));
  ex.mode = parse_experiment_mode(get_or<std::string>(j, "mode", "multi", "config"));
  // Multi-population runs model q, single-population runs m, unless set explicitly.
  if (!j.value("panel", json::object()).contains("rate_kind"))
    ex.panel.rate_kind = ex.mode == ExperimentMode::multi ? RateKind::q : RateKind::m;
  if (j.contains("models")) {
    ex.models.clear();
    for (const auto& m : get_or<std::vector<std::string>>(j, "models", {}, "config")) ex.models.push_back(parse_model_kind(m));
  }
  ex.gee = detail::parse_gee(j.value("gee", json::object()), rc.fit_corstrs);
  ex.single_variant = parse_formula_variant(get_or<std::string>(j, "formula", "reduced", "config"));
  if (ex.single_variant == FormulaVariant::multi_population)
    throw ConfigError("config.formula selects the single-mode formula: single or reduced");
  ex.weights = get_or(j, "weights", true, "config");
  ex.ll_k_dynamics = parse_k_dynamics(get_or<std::string>(j, "ll_k_dynamics", "ar1", "config"));
  ex.allow_nonconverged = get_or(j, "allow_nonconverged", false, "config");
  ex.jobs = get_or(j, "jobs", 1, "config");
  if (j.contains("comparisons")) {
    for (const auto& pair : get_or<std::vector<std::vector<std::string>>>(j, "comparisons", {}, "config")) {
      if (pair.size() != 2) throw ConfigError("each comparison is [baseline, candidate]");
      ex.comparisons.emplace_back(parse_model_kind(pair[0]), parse_model_kind(pair[1]));
    }
  }
  rc.output_dir = resolve(get_or<std::string>(j, "output_dir", "out", "config"));
  rc.seed = get_or<std::uint64_t>(j, "seed", 1, "config");

  const json data = j.value("data", json::object());
  detail::reject_unknown(data, {"dir", "files"}, "data");
  rc.data_dir = resolve(get_or<std::string>(data, "dir", ".", "data"));
  const json files = data.value("files", json::object());
  for (const auto& country : rc.countries()) {
    CountryPaths cp{country, rc.data_dir / country / "Deaths_1x1.txt", rc.data_dir / country / "Exposures_1x1.txt"};
    if (files.contains(country)) {
      detail::reject_unknown(files[country], {"deaths", "exposures"}, "data.files." + country);
      if (files[country].contains("deaths")) cp.deaths = resolve(files[country]["deaths"].get<std::string>());
      if (files[country].contains("exposures")) cp.exposures = resolve(files[country]["exposures"].get<std::string>());
    }
    rc.data.push_back(cp);
  }
  rc.simulation = detail::parse_simulation(j.value("simulate", json::object()), ex.panel, rc.seed);
  ex.validate();
  for (const auto& [b, c] : ex.comparisons)
    for (ModelKind m : {b, c})
      if (std::find(ex.models.begin(), ex.models.end(), m) == ex.models.end())
        throw ConfigError("comparison uses model " + std::string(to_string(m)) + " which is not in the model list");
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

/// Reads every configured country's tables and builds the panel.
inline MortalityPanel load_panel(const RunConfig& rc) {
  rc.check_data_paths();
  std::vector<CountryTables> tables;
  for (const auto& c : rc.data) {
    CountryTables ct;
    ct.country = c.country;
    for (const auto& [path, kind] : {std::pair{c.deaths, CountKind::deaths}, std::pair{c.exposures, CountKind::exposures}}) {
      std::ifstream in(path);
      if (!in) throw DataError("cannot open " + path.string());
      try {
        (kind == CountKind::deaths ? ct.deaths : ct.exposures) = parse_hmd_table(in, kind);
      } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
      }
    }
    tables.push_back(std::move(ct));
  }
  return build_panel(tables, rc.experiment.panel);
}

}  // namespace pcagee
