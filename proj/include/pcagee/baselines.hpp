#pragma once

// Lee-Carter and two-stage Li-Lee benchmark models. All matrices are
// (ages x years) log rates.

#include <Eigen/Dense>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pcagee/covariates.hpp"
#include "pcagee/csv.hpp"
#include "pcagee/error.hpp"
#include "pcagee/mortality_data.hpp"

namespace pcagee {

struct LeeCarterFit {
  Eigen::VectorXd a;  // row means
  Eigen::VectorXd b;  // sums to 1
  Eigen::VectorXd k;  // sums to 0
  double singular_value = 0.0;
  bool degenerate = false;  // no time variation: b uniform, k = 0
  DriftModel drift;
  int year_first = 0;

  Eigen::MatrixXd fitted() const { return (a * Eigen::RowVectorXd::Ones(k.size())) + b * k.transpose(); }
};

namespace detail {

/// Leading rank-1 term b k' of a row-centred matrix, normalized so sum(b) = 1.
inline bool rank1_normalized(const Eigen::MatrixXd& Z, Eigen::VectorXd& b, Eigen::VectorXd& k, double& s) {
  const double scale = std::max(1.0, Z.cwiseAbs().maxCoeff());
  if (Z.cwiseAbs().maxCoeff() <= 1e-13 * scale || Z.cwiseAbs().maxCoeff() == 0.0) {
    b = Eigen::VectorXd::Constant(Z.rows(), 1.0 / static_cast<double>(Z.rows()));
    k = Eigen::VectorXd::Zero(Z.cols());
    s = 0.0;
    return false;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd u = svd.matrixU().col(0);
  const Eigen::VectorXd v = svd.matrixV().col(0);
  s = svd.singularValues()(0);
  const double su = u.sum();
  if (std::abs(su) <= 1e-12 * u.cwiseAbs().sum())
    throw DegenerateError("leading age profile sums to zero; sum(b) = 1 normalization impossible");
  b = u / su;
  k = (s * su) * v;
  return true;
}

}  // namespace detail

inline LeeCarterFit fit_lee_carter(const Eigen::MatrixXd& Y, int year_first = 0) {
  if (Y.rows() < 2 || Y.cols() < 3) throw DomainError("Lee-Carter needs at least 2 ages and 3 years");
  if (!Y.allFinite()) throw DomainError("Lee-Carter input contains non-finite values");
  LeeCarterFit fit;
  fit.year_first = year_first;
  fit.a = Y.rowwise().mean();
  const Eigen::MatrixXd Z = Y.colwise() - fit.a;
  fit.degenerate = !detail::rank1_normalized(Z, fit.b, fit.k, fit.singular_value);
  fit.drift = fit_rw_drift(std::span<const double>(fit.k.data(), static_cast<std::size_t>(fit.k.size())),
                           year_first + static_cast<int>(Y.cols()) - 1);
  return fit;
}

/// ages x horizon log rates a + b k_hat with k_hat the drift continuation.
inline Eigen::MatrixXd forecast_lee_carter(const LeeCarterFit& fit, int horizon) {
  const auto k = forecast_rw(fit.drift, horizon);
  const Eigen::Map<const Eigen::RowVectorXd> kh(k.data(), static_cast<Eigen::Index>(k.size()));
  return (fit.a * Eigen::RowVectorXd::Ones(horizon)) + fit.b * kh;
}

// ---------------------------------------------------------------------------
// Li-Lee

enum class KDynamics { ar1, rw_drift };

inline KDynamics parse_k_dynamics(std::string_view s) {
  if (s == "ar1") return KDynamics::ar1;
  if (s == "rw_drift" || s == "rw") return KDynamics::rw_drift;
  throw ConfigError("unknown k dynamics '" + std::string(s) + "' (expected ar1 or rw_drift)");
}

/// k_t = intercept + phi k_{t-1} + e_t, fit by least squares.
struct Ar1Model {
  double intercept = 0.0;
  double phi = 0.0;
  double last_value = 0.0;
  int last_year = 0;
};

inline Ar1Model fit_ar1(std::span<const double> k, int last_year) {
  if (k.size() < 3) throw DomainError("AR(1) fit needs at least 3 observations");
  const std::size_t m = k.size() - 1;
  double mx = 0.0, my = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    mx += k[t];
    my += k[t + 1];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    sxy += (k[t] - mx) * (k[t + 1] - my);
    sxx += (k[t] - mx) * (k[t] - mx);
  }
  Ar1Model ar;
  ar.phi = sxx > 0.0 ? sxy / sxx : 0.0;
  ar.intercept = my - ar.phi * mx;
  ar.last_value = k.back();
  ar.last_year = last_year;
  return ar;
}

inline std::vector<double> forecast_ar1(const Ar1Model& ar, int horizon) {
  if (horizon < 1) throw DomainError("forecast horizon must be at least 1");
  std::vector<double> out(static_cast<std::size_t>(horizon));
  double prev = ar.last_value;
  for (auto& v : out) v = prev = ar.intercept + ar.phi * prev;
  return out;
}

struct LiLeePopulationFit {
  std::string name;
  Eigen::VectorXd a;  // own row means
  Eigen::VectorXd b;  // sums to 1 unless degenerate
  Eigen::VectorXd k;  // sums to 0
  bool degenerate = false;
  Ar1Model ar;
  DriftModel drift;
};

struct LiLeeFit {
  Eigen::VectorXd A;  // common: row means of the cross-population mean
  Eigen::VectorXd B;
  Eigen::VectorXd K;
  DriftModel K_drift;
  std::vector<LiLeePopulationFit> populations;
  KDynamics k_dynamics = KDynamics::ar1;
  int year_first = 0;
};

inline LiLeeFit fit_li_lee(const std::vector<Eigen::MatrixXd>& Ys, KDynamics dyn = KDynamics::ar1,
                           std::vector<std::string> names = {}, int year_first = 0) {
  if (Ys.empty()) throw DomainError("Li-Lee needs at least one population");
  const Eigen::Index na = Ys.front().rows(), ny = Ys.front().cols();
  for (const auto& Y : Ys)
    if (Y.rows() != na || Y.cols() != ny) throw DomainError("Li-Lee populations must share one age/year rectangle");
  names.resize(Ys.size());

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(na, ny);
  for (const auto& Y : Ys) mean += Y;
  mean /= static_cast<double>(Ys.size());
  const LeeCarterFit common = fit_lee_carter(mean, year_first);

  LiLeeFit fit;
  fit.A = common.a;
  fit.B = common.b;
  fit.K = common.k;
  fit.K_drift = common.drift;
  fit.k_dynamics = dyn;
  fit.year_first = year_first;
  const int last_year = year_first + static_cast<int>(ny) - 1;
  for (std::size_t i = 0; i < Ys.size(); ++i) {
    LiLeePopulationFit pf;
    pf.name = names[i];
    pf.a = Ys[i].rowwise().mean();
    const Eigen::MatrixXd resid = (Ys[i].colwise() - pf.a) - fit.B * fit.K.transpose();
    // Row means of resid vanish because K sums to zero; recentre for exactness.
    const Eigen::MatrixXd Z = resid.colwise() - resid.rowwise().mean();
    double s = 0.0;
    pf.degenerate = !detail::rank1_normalized(Z, pf.b, pf.k, s);
    const std::span<const double> ks(pf.k.data(), static_cast<std::size_t>(pf.k.size()));
    pf.ar = fit_ar1(ks, last_year);
    pf.drift = fit_rw_drift(ks, last_year);
    fit.populations.push_back(std::move(pf));
  }
  return fit;
}

inline LiLeeFit fit_li_lee(const MortalityPanel& panel, KDynamics dyn = KDynamics::ar1) {
  std::vector<std::string> names;
  for (const auto& p : panel.populations) names.push_back(p.key());
  return fit_li_lee(panel.log_rates, dyn, names, panel.year_first);
}

/// Per-population (ages x horizon) forecasts a + B K_hat + b k_hat.
inline std::vector<Eigen::MatrixXd> forecast_li_lee(const LiLeeFit& fit, int horizon) {
  const auto K = forecast_rw(fit.K_drift, horizon);
  const Eigen::Map<const Eigen::RowVectorXd> Kh(K.data(), horizon);
  std::vector<Eigen::MatrixXd> out;
  for (const auto& pf : fit.populations) {
    const auto k = fit.k_dynamics == KDynamics::ar1 ? forecast_ar1(pf.ar, horizon) : forecast_rw(pf.drift, horizon);
    const Eigen::Map<const Eigen::RowVectorXd> kh(k.data(), horizon);
    out.push_back((pf.a * Eigen::RowVectorXd::Ones(horizon)) + fit.B * Kh + pf.b * kh);
  }
  return out;
}

/// Rows of `model,population,term,index,value` with terms a, b, k, A, B, K.
inline void write_baseline_rows(csv::Writer& w, const std::string& model, const std::string& population,
                                const std::string& term, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    w.field(model).field(population).field(term).field(static_cast<int>(i)).field(v(i));
    w.end_row();
  }
}

inline void write_lee_carter_params(csv::Writer& w, const std::string& population, const LeeCarterFit& fit) {
  write_baseline_rows(w, "lc", population, "a", fit.a);
  write_baseline_rows(w, "lc", population, "b", fit.b);
  write_baseline_rows(w, "lc", population, "k", fit.k);
}

inline void write_li_lee_params(csv::Writer& w, const LiLeeFit& fit) {
  write_baseline_rows(w, "ll", "common", "A", fit.A);
  write_baseline_rows(w, "ll", "common", "B", fit.B);
  write_baseline_rows(w, "ll", "common", "K", fit.K);
  for (const auto& pf : fit.populations) {
    write_baseline_rows(w, "ll", pf.name, "a", pf.a);
    write_baseline_rows(w, "ll", pf.name, "b", pf.b);
    write_baseline_rows(w, "ll", pf.name, "k", pf.k);
  }
}

}  // namespace pcagee
