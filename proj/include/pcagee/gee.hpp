#pragma once

// Gaussian identity-link generalized estimating equations with prior weights
// (Var(y_i) = phi / w_i), moment estimators for the working correlation,
// model-based and sandwich covariances, and the QIC family.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pcagee/csv.hpp"
#include "pcagee/design.hpp"
#include "pcagee/error.hpp"

namespace pcagee {

enum class CorrelationKind { independence, exchangeable, ar1, unstructured, userdefined };

inline std::string_view to_string(CorrelationKind k) {
  switch (k) {
    case CorrelationKind::independence: return "independence";
    case CorrelationKind::exchangeable: return "exchangeable";
    case CorrelationKind::ar1: return "ar1";
    case CorrelationKind::unstructured: return "unstructured";
    case CorrelationKind::userdefined: return "userdefined";
  }
  return "?";
}

inline CorrelationKind parse_correlation_kind(std::string_view s) {
  if (s == "independence" || s == "independenc" || s == "ind") return CorrelationKind::independence;
  if (s == "exchangeable" || s == "exchangeabl" || s == "ex") return CorrelationKind::exchangeable;
  if (s == "ar1") return CorrelationKind::ar1;
  if (s == "unstructured") return CorrelationKind::unstructured;
  if (s == "userdefined") return CorrelationKind::userdefined;
  throw ConfigError("unknown correlation structure '" + std::string(s) + "'");
}

struct WorkingCorrelation {
  CorrelationKind kind = CorrelationKind::independence;
  double rho = 0.0;
  /// Unstructured/userdefined: correlations over `grid` (ascending waves).
  Eigen::MatrixXd matrix;
  std::vector<int> grid;
  /// Set when a moment estimate fell outside the admissible range.
  bool clamped = false;
};

namespace detail {

inline void check_rho(CorrelationKind kind, double rho, int n_max) {
  if (kind == CorrelationKind::ar1 && !(std::abs(rho) < 1.0))
    throw DomainError("ar1 correlation must satisfy |rho| < 1");
  if (kind == CorrelationKind::exchangeable) {
    const double lower = n_max > 1 ? -1.0 / (n_max - 1) : -1.0;
    if (!(rho < 1.0) || (n_max > 1 && !(rho > lower)))
      throw DomainError("exchangeable correlation outside (-1/(n-1), 1)");
  }
}

inline void check_correlation_matrix(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DomainError("correlation matrix must be square");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (std::abs(m(i, i) - 1.0) > 1e-12) throw DomainError("correlation matrix must have unit diagonal");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw DomainError("correlation matrix must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw DomainError("correlation matrix must be positive definite");
}

}  // namespace detail

/// n x n working correlation for consecutive waves.
inline Eigen::MatrixXd correlation_matrix(CorrelationKind kind, double rho, int n) {
  if (n < 1) throw DomainError("cluster size must be positive");
  if (kind == CorrelationKind::unstructured || kind == CorrelationKind::userdefined)
    throw DomainError("matrix-valued structures need a WorkingCorrelation with a stored matrix");
  detail::check_rho(kind, rho, n);
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (kind == CorrelationKind::exchangeable) R(i, j) = rho;
      if (kind == CorrelationKind::ar1) R(i, j) = std::pow(rho, std::abs(i - j));
    }
  return R;
}

/// Working correlation restricted to a cluster's waves (years).
inline Eigen::MatrixXd correlation_matrix(const WorkingCorrelation& c, std::span<const int> waves) {
  const auto n = static_cast<Eigen::Index>(waves.size());
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
  switch (c.kind) {
    case CorrelationKind::independence: break;
    case CorrelationKind::exchangeable:
      detail::check_rho(c.kind, c.rho, static_cast<int>(n));
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          if (i != j) R(i, j) = c.rho;
      break;
    case CorrelationKind::ar1:
      detail::check_rho(c.kind, c.rho, static_cast<int>(n));
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          if (i != j) R(i, j) = std::pow(c.rho, std::abs(waves[i] - waves[j]));
      break;
    case CorrelationKind::unstructured:
    case CorrelationKind::userdefined: {
      std::vector<Eigen::Index> pos(waves.size());
      for (std::size_t i = 0; i < waves.size(); ++i) {
        auto it = std::lower_bound(c.grid.begin(), c.grid.end(), waves[i]);
        if (it == c.grid.end() || *it != waves[i])
          throw DomainError("wave " + std::to_string(waves[i]) + " not on the correlation grid");
        pos[i] = it - c.grid.begin();
      }
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) R(i, j) = c.matrix(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
      break;
    }
  }
  return R;
}

/// phi = sum w_i r_i^2 / (N - p), r_i = y_i - mu_i. Without the small-sample
/// correction the divisor is N.
inline double estimate_dispersion(std::span<const double> residuals, std::span<const double> weights, int p,
                                  bool small_sample_correction = true) {
  if (residuals.size() != weights.size()) throw DomainError("residual and weight lengths differ");
  const auto n = static_cast<long>(residuals.size());
  const long denom = small_sample_correction ? n - p : n;
  if (denom <= 0) throw DomainError("dispersion needs more observations than parameters");
  double ss = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) ss += weights[i] * residuals[i] * residuals[i];
  return ss / static_cast<double>(denom);
}

/// Standardized residuals sqrt(w)(y - mu)/sqrt(phi) of one cluster with waves.
struct ClusterResiduals {
  std::vector<double> r;
  std::vector<int> wave;
};

inline WorkingCorrelation estimate_correlation(std::span<const ClusterResiduals> clusters, CorrelationKind kind, int p,
                                               bool small_sample_correction = true) {
  WorkingCorrelation out;
  out.kind = kind;
  const double pc = small_sample_correction ? static_cast<double>(p) : 0.0;
  std::size_t n_max = 0;
  for (const auto& c : clusters) n_max = std::max(n_max, c.r.size());

  switch (kind) {
    case CorrelationKind::independence:
    case CorrelationKind::userdefined:
      throw DomainError("no moment estimator for " + std::string(to_string(kind)));
    case CorrelationKind::exchangeable: {
      double num = 0.0, pairs = 0.0;
      for (const auto& c : clusters) {
        double s = 0.0, s2 = 0.0;
        for (double v : c.r) {
          s += v;
          s2 += v * v;
        }
        num += 0.5 * (s * s - s2);
        const double n = static_cast<double>(c.r.size());
        pairs += 0.5 * n * (n - 1.0);
      }
      if (pairs == 0.0) return out;  // singleton clusters: correlation is vacuous
      const double denom = pairs - pc;
      if (!(denom > 0.0)) throw NumericalError("exchangeable correlation: non-positive denominator");
      out.rho = num / denom;
      const double lower = n_max > 1 ? -1.0 / static_cast<double>(n_max - 1) : -1.0;
      if (out.rho >= 1.0) {
        out.rho = 1.0 - 1e-6;
        out.clamped = true;
      } else if (out.rho <= lower) {
        out.rho = lower + 1e-6;
        out.clamped = true;
      }
      return out;
    }
    case CorrelationKind::ar1: {
      double num = 0.0, pairs = 0.0;
      for (const auto& c : clusters) {
        for (std::size_t j = 0; j + 1 < c.r.size(); ++j) {
          if (c.wave[j + 1] - c.wave[j] != 1) continue;
          num += c.r[j] * c.r[j + 1];
          pairs += 1.0;
        }
      }
      if (pairs == 0.0) return out;
      const double denom = pairs - pc;
      if (!(denom > 0.0)) throw NumericalError("ar1 correlation: non-positive denominator");
      out.rho = num / denom;
      if (std::abs(out.rho) >= 1.0) {
        out.rho = std::copysign(1.0 - 1e-6, out.rho);
        out.clamped = true;
      }
      return out;
    }
    case CorrelationKind::unstructured: {
      if (clusters.empty()) throw NumericalError("unstructured correlation: no clusters");
      out.grid = clusters.front().wave;
      for (const auto& c : clusters)
        if (c.wave != out.grid) throw NumericalError("unstructured correlation needs a common wave grid in every cluster");
      const auto n = static_cast<Eigen::Index>(out.grid.size());
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
      for (const auto& c : clusters) {
        const Eigen::Map<const Eigen::VectorXd> r(c.r.data(), n);
        S.noalias() += r * r.transpose();
      }
      S /= static_cast<double>(clusters.size());
      const Eigen::VectorXd d = S.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
      Eigen::MatrixXd R = d.asDiagonal() * S * d.asDiagonal();
      R.diagonal().setOnes();
      // Shrink toward the identity until positive definite.
      double lambda = 0.0;
      while (Eigen::LLT<Eigen::MatrixXd>(R).info() != Eigen::Success ||
             Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(R, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() < 1e-8) {
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        if (lambda >= 1.0) {
          R.setIdentity();
          break;
        }
        Eigen::MatrixXd off = d.asDiagonal() * S * d.asDiagonal();
        off.diagonal().setOnes();
        R = (1.0 - lambda) * off + lambda * Eigen::MatrixXd::Identity(n, n);
        out.clamped = true;
      }
      out.matrix = R;
      return out;
    }
  }
  return out;
}

enum class QuasiLikScale {
  dispersion,  // Q = -1/2 sum w (y - mu)^2 / phi
  unit,        // Q = -1/2 sum w (y - mu)^2
};

struct GeeOptions {
  CorrelationKind corstr = CorrelationKind::ar1;
  double tol = 1e-8;
  int max_iter = 50;
  bool small_sample_correction = true;
  /// Userdefined structure: correlations over the ascending set of all waves.
  Eigen::MatrixXd user_matrix;
  QuasiLikScale quasi_lik_scale = QuasiLikScale::dispersion;
};

struct GeeFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd naive_cov;   // bread^-1
  Eigen::MatrixXd robust_cov;  // bread^-1 meat bread^-1
  Eigen::MatrixXd bread;       // sum X' V^-1 X at the final phi and correlation
  double phi = 1.0;
  WorkingCorrelation corr;
  double quasi_lik = 0.0;
  QuasiLikScale quasi_lik_scale = QuasiLikScale::dispersion;
  int n_iter = 0;
  bool converged = false;
  double last_delta = 0.0;
  std::size_t n_clusters = 0;
  std::size_t n_obs = 0;
  int p = 0;
  std::vector<std::string> labels;
  Eigen::VectorXd fitted;

  Eigen::VectorXd naive_se() const { return naive_cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  Eigen::VectorXd robust_se() const { return robust_cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

namespace detail {

struct ClusterSpan {
  Eigen::Index begin = 0;
  Eigen::Index size = 0;
};

inline std::vector<ClusterSpan> cluster_spans(const ClusterLayout& layout, Eigen::Index n_rows) {
  if (static_cast<Eigen::Index>(layout.cluster.size()) != n_rows || static_cast<Eigen::Index>(layout.wave.size()) != n_rows ||
      static_cast<Eigen::Index>(layout.weight.size()) != n_rows)
    throw DomainError("cluster layout does not match the design rows");
  std::vector<ClusterSpan> spans;
  std::vector<bool> seen(layout.n_clusters() + 1, false);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const auto c = static_cast<std::size_t>(layout.cluster[static_cast<std::size_t>(r)]);
    if (r == 0 || layout.cluster[static_cast<std::size_t>(r - 1)] != layout.cluster[static_cast<std::size_t>(r)]) {
      if (c < seen.size() && seen[c]) throw DomainError("cluster rows must be contiguous");
      if (c < seen.size()) seen[c] = true;
      spans.push_back({r, 0});
    } else if (layout.wave[static_cast<std::size_t>(r)] <= layout.wave[static_cast<std::size_t>(r - 1)]) {
      throw DomainError("waves must be strictly increasing within a cluster");
    }
    ++spans.back().size;
  }
  for (double w : layout.weight)
    if (!(w > 0.0)) throw DomainError("prior weights must be positive");
  return spans;
}

/// Whitened system for a fixed working correlation: rows of cluster i become
/// L_i^-1 W_i^1/2 (X_i, y_i) with R_i = L_i L_i'.
struct Whitened {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

class Whitener {
 public:
  Whitener(const std::vector<ClusterSpan>& spans, const ClusterLayout& layout, const WorkingCorrelation& corr)
      : spans_(spans), layout_(layout), corr_(corr) {}

  template <typename Derived>
  void apply(Eigen::MatrixBase<Derived>& block, const ClusterSpan& s) {
    for (Eigen::Index j = 0; j < s.size; ++j)
      block.row(j) *= std::sqrt(layout_.weight[static_cast<std::size_t>(s.begin + j)]);
    if (corr_.kind == CorrelationKind::independence) return;
    factor(s).matrixL().solveInPlace(block);
  }

 private:
  const Eigen::LLT<Eigen::MatrixXd>& factor(const ClusterSpan& s) {
    std::vector<int> rel(static_cast<std::size_t>(s.size));
    const int w0 = layout_.wave[static_cast<std::size_t>(s.begin)];
    for (Eigen::Index j = 0; j < s.size; ++j) rel[static_cast<std::size_t>(j)] = layout_.wave[static_cast<std::size_t>(s.begin + j)] - w0;
    // AR(1)/exchangeable depend only on relative waves; matrix structures on absolute ones.
    const bool absolute = corr_.kind == CorrelationKind::unstructured || corr_.kind == CorrelationKind::userdefined;
    if (absolute) rel.push_back(w0);
    auto it = cache_.find(rel);
    if (it != cache_.end()) return it->second;
    std::vector<int> waves(layout_.wave.begin() + s.begin, layout_.wave.begin() + s.begin + s.size);
    Eigen::LLT<Eigen::MatrixXd> llt(correlation_matrix(corr_, waves));
    if (llt.info() != Eigen::Success) throw NumericalError("working correlation is not positive definite");
    return cache_.emplace(std::move(rel), std::move(llt)).first->second;
  }

  const std::vector<ClusterSpan>& spans_;
  const ClusterLayout& layout_;
  const WorkingCorrelation& corr_;
  std::map<std::vector<int>, Eigen::LLT<Eigen::MatrixXd>> cache_;
};

inline Whitened whiten(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<ClusterSpan>& spans,
                       const ClusterLayout& layout, const WorkingCorrelation& corr) {
  Whitened w{X, y};
  Whitener wh(spans, layout, corr);
  for (const auto& s : spans) {
    auto xb = w.X.middleRows(s.begin, s.size);
    wh.apply(xb, s);
    auto yb = w.y.segment(s.begin, s.size);
    wh.apply(yb, s);
  }
  return w;
}

/// Solves (X'X) beta = X'y with one step of iterative refinement.
inline Eigen::VectorXd solve_normal(const Eigen::MatrixXd& XtX, const Whitened& w, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(XtX);
  if (llt.info() != Eigen::Success) throw NumericalError("singular bread matrix (design not of full rank)");
  Eigen::VectorXd beta = llt.solve(w.X.transpose() * w.y);
  const Eigen::VectorXd resid = w.y - w.X * beta;
  beta += llt.solve(w.X.transpose() * resid);
  if (!beta.allFinite()) throw NumericalError("non-finite coefficients");
  return beta;
}

inline std::vector<ClusterResiduals> standardized_residuals(const Eigen::VectorXd& resid, const ClusterLayout& layout,
                                                            const std::vector<ClusterSpan>& spans, double phi) {
  std::vector<ClusterResiduals> out(spans.size());
  const double inv_sd = phi > 0.0 ? 1.0 / std::sqrt(phi) : 0.0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    out[i].r.resize(static_cast<std::size_t>(s.size));
    out[i].wave.resize(static_cast<std::size_t>(s.size));
    for (Eigen::Index j = 0; j < s.size; ++j) {
      const auto r = static_cast<std::size_t>(s.begin + j);
      out[i].r[static_cast<std::size_t>(j)] = std::sqrt(layout.weight[r]) * resid(s.begin + j) * inv_sd;
      out[i].wave[static_cast<std::size_t>(j)] = layout.wave[r];
    }
  }
  return out;
}

}  // namespace detail

inline double quasi_likelihood(std::span<const double> residuals, std::span<const double> weights, double phi,
                               QuasiLikScale scale = QuasiLikScale::dispersion) {
  double ss = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) ss += weights[i] * residuals[i] * residuals[i];
  if (ss == 0.0) return 0.0;
  return scale == QuasiLikScale::unit ? -0.5 * ss : -0.5 * ss / phi;
}

/// Quasi-likelihood of `fit` on its own training design.
inline double quasi_likelihood(const GeeFit& fit, const Design& design) {
  const Eigen::VectorXd resid = design.y - design.X * fit.beta;
  return quasi_likelihood(std::span<const double>(resid.data(), static_cast<std::size_t>(resid.size())),
                          design.layout.weight, fit.phi, fit.quasi_lik_scale);
}

inline GeeFit fit_gee(const Design& design, const GeeOptions& opt = {}) {
  const Eigen::MatrixXd& X = design.X;
  const Eigen::VectorXd& y = design.y;
  const ClusterLayout& layout = design.layout;
  const auto spans = detail::cluster_spans(layout, X.rows());
  const int p = static_cast<int>(X.cols());

  GeeFit fit;
  fit.p = p;
  fit.n_obs = static_cast<std::size_t>(X.rows());
  fit.n_clusters = spans.size();
  fit.labels = design.labels;
  fit.quasi_lik_scale = opt.quasi_lik_scale;

  WorkingCorrelation corr;
  corr.kind = CorrelationKind::independence;
  if (opt.corstr == CorrelationKind::userdefined) {
    corr.kind = CorrelationKind::userdefined;
    corr.grid = layout.wave;
    std::sort(corr.grid.begin(), corr.grid.end());
    corr.grid.erase(std::unique(corr.grid.begin(), corr.grid.end()), corr.grid.end());
    if (opt.user_matrix.rows() != static_cast<Eigen::Index>(corr.grid.size()))
      throw DomainError("userdefined correlation matrix must match the number of distinct waves");
    detail::check_correlation_matrix(opt.user_matrix);
    corr.matrix = opt.user_matrix;
  }

  Eigen::LLT<Eigen::MatrixXd> llt;
  detail::Whitened w = detail::whiten(X, y, spans, layout, corr);
  Eigen::MatrixXd XtX = w.X.transpose() * w.X;
  Eigen::VectorXd beta = detail::solve_normal(XtX, w, llt);

  std::span<const double> wts(layout.weight);
  Eigen::VectorXd resid;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    resid = y - X * beta;
    const double phi = estimate_dispersion({resid.data(), static_cast<std::size_t>(resid.size())}, wts, p,
                                           opt.small_sample_correction);
    if (opt.corstr != CorrelationKind::independence && opt.corstr != CorrelationKind::userdefined) {
      const auto std_resid = detail::standardized_residuals(resid, layout, spans, phi);
      corr = estimate_correlation(std_resid, opt.corstr, p, opt.small_sample_correction);
    }
    w = detail::whiten(X, y, spans, layout, corr);
    XtX.noalias() = w.X.transpose() * w.X;
    const Eigen::VectorXd beta_new = detail::solve_normal(XtX, w, llt);
    fit.last_delta = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    fit.n_iter = iter;
    if (fit.last_delta < opt.tol) {
      fit.converged = true;
      break;
    }
  }

  resid = y - X * beta;
  fit.beta = beta;
  fit.fitted = X * beta;
  fit.corr = corr;
  fit.phi = estimate_dispersion({resid.data(), static_cast<std::size_t>(resid.size())}, wts, p,
                                opt.small_sample_correction);
  if (!(fit.phi > 0.0)) fit.phi = std::numeric_limits<double>::min();

  // Covariances with V_i = phi A_i^1/2 R_i A_i^1/2: bread = X~'X~ / phi and
  // each cluster score is X~_i' e~_i / phi, so phi cancels in the sandwich.
  const Eigen::MatrixXd XtX_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::VectorXd wresid = w.y - w.X * beta;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (const auto& s : spans) {
    const Eigen::VectorXd score = w.X.middleRows(s.begin, s.size).transpose() * wresid.segment(s.begin, s.size);
    meat.selfadjointView<Eigen::Lower>().rankUpdate(score);
  }
  meat = meat.selfadjointView<Eigen::Lower>();
  fit.bread = XtX / fit.phi;
  fit.naive_cov = fit.phi * XtX_inv;
  fit.naive_cov = (0.5 * (fit.naive_cov + fit.naive_cov.transpose())).eval();
  fit.robust_cov = XtX_inv * meat * XtX_inv;
  fit.robust_cov = (0.5 * (fit.robust_cov + fit.robust_cov.transpose())).eval();
  fit.quasi_lik = quasi_likelihood({resid.data(), static_cast<std::size_t>(resid.size())}, wts, fit.phi,
                                   opt.quasi_lik_scale);
  return fit;
}

/// Estimating-equation residual sum_i X_i' V_i^-1 (y_i - mu_i) at `fit`.
inline Eigen::VectorXd estimating_equations(const GeeFit& fit, const Design& design) {
  const auto spans = detail::cluster_spans(design.layout, design.X.rows());
  const auto w = detail::whiten(design.X, design.y, spans, design.layout, fit.corr);
  return w.X.transpose() * (w.y - w.X * fit.beta) / fit.phi;
}

inline Eigen::VectorXd predict(const GeeFit& fit, const Eigen::MatrixXd& X_new) {
  if (X_new.cols() != fit.beta.size())
    throw DomainError("prediction design has " + std::to_string(X_new.cols()) + " columns, fit has " +
                      std::to_string(fit.beta.size()));
  return X_new * fit.beta;
}

inline Eigen::VectorXd predict(const GeeFit& fit, const Design& design) {
  if (!fit.labels.empty() && design.labels != fit.labels) throw DomainError("prediction design columns do not match the fit");
  return predict(fit, design.X);
}

struct QicReport {
  double qic = 0.0;
  double qicu = 0.0;
  double quasi_lik = 0.0;
  double cic = 0.0;
  int params = 0;
  std::optional<double> qicc;  // undefined when n_obs <= p + 1
};

/// CIC = trace(Omega_I V_R) with Omega_I the model-based information of the
/// independence refit and V_R the sandwich covariance of `fit`.
inline QicReport qic_report(const GeeFit& fit, const GeeFit& independence_refit) {
  if (independence_refit.corr.kind != CorrelationKind::independence)
    throw DomainError("qic_report needs an independence refit");
  if (independence_refit.p != fit.p) throw DomainError("qic_report: refit has a different number of parameters");
  QicReport q;
  q.params = fit.p;
  q.quasi_lik = fit.quasi_lik;
  q.cic = (independence_refit.bread * fit.robust_cov).trace();
  q.qic = -2.0 * q.quasi_lik + 2.0 * q.cic;
  q.qicu = -2.0 * q.quasi_lik + 2.0 * q.params;
  const double n = static_cast<double>(fit.n_obs), p = fit.p;
  if (n > p + 1.0) q.qicc = q.qic + 2.0 * p * (p + 1.0) / (n - p - 1.0);
  return q;
}

/// `term,estimate,naive_se,robust_se`.
inline void write_coefficients_csv(std::ostream& out, const GeeFit& fit) {
  csv::Writer w(out);
  w.header({"term", "estimate", "naive_se", "robust_se"});
  const Eigen::VectorXd nse = fit.naive_se(), rse = fit.robust_se();
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    w.field(fit.labels.empty() ? "b" + std::to_string(j) : fit.labels[static_cast<std::size_t>(j)])
        .field(fit.beta(j)).field(nse(j)).field(rse(j));
    w.end_row();
  }
}

inline const std::vector<std::string>& qic_columns() {
  static const std::vector<std::string> cols{"QIC", "QICu", "QuasiLik", "CIC", "Params", "QICC"};
  return cols;
}

inline void write_qic_fields(csv::Writer& w, const QicReport& q) {
  w.field(q.qic).field(q.qicu).field(q.quasi_lik).field(q.cic).field(q.params).field(csv::format_optional(q.qicc));
}

}  // namespace pcagee
