#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gee_sim.hpp"
#include "oracles.hpp"
#include "pcagee/gee.hpp"

using namespace pcagee;

namespace {

const CorrelationKind kIterated[] = {CorrelationKind::independence, CorrelationKind::exchangeable,
                                     CorrelationKind::ar1, CorrelationKind::unstructured};

GeeOptions with(CorrelationKind k) {
  GeeOptions o;
  o.corstr = k;
  return o;
}

Design tiny_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int> cluster) {
  Design d;
  d.X = X;
  d.y = y;
  for (Eigen::Index j = 0; j < X.cols(); ++j) d.labels.push_back("x" + std::to_string(j));
  int max_cluster = 0;
  for (int c : cluster) max_cluster = std::max(max_cluster, c);
  for (int c = 0; c <= max_cluster; ++c) d.layout.keys.push_back(std::to_string(c));
  std::vector<int> seen(static_cast<std::size_t>(max_cluster + 1), 0);
  for (int c : cluster) {
    d.layout.cluster.push_back(c);
    d.layout.wave.push_back(++seen[static_cast<std::size_t>(c)]);
    d.layout.weight.push_back(1.0);
  }
  return d;
}

double min_eigen_ratio(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues();
  return ev.minCoeff() / std::max(m.trace(), 1e-300);
}

}  // namespace

TEST(CorrelationMatrix, Examples) {
  Eigen::Matrix3d ar;
  ar << 1, .5, .25, .5, 1, .5, .25, .5, 1;
  EXPECT_EQ(correlation_matrix(CorrelationKind::ar1, 0.5, 3), Eigen::MatrixXd(ar));
  EXPECT_EQ(correlation_matrix(CorrelationKind::exchangeable, 0.0, 5), Eigen::MatrixXd::Identity(5, 5));
  EXPECT_EQ(correlation_matrix(CorrelationKind::independence, 0.7, 4), Eigen::MatrixXd::Identity(4, 4));
  const auto ex = correlation_matrix(CorrelationKind::exchangeable, 0.3, 3);
  EXPECT_EQ(ex(0, 2), 0.3);
  EXPECT_EQ(ex(1, 1), 1.0);
}

TEST(CorrelationMatrix, ParameterRange) {
  EXPECT_THROW(correlation_matrix(CorrelationKind::ar1, 1.0, 3), DomainError);
  EXPECT_THROW(correlation_matrix(CorrelationKind::ar1, -1.2, 3), DomainError);
  EXPECT_THROW(correlation_matrix(CorrelationKind::exchangeable, -0.5, 3), DomainError);
  EXPECT_NO_THROW(correlation_matrix(CorrelationKind::exchangeable, -0.49, 3));
  EXPECT_THROW(correlation_matrix(CorrelationKind::exchangeable, 1.0, 3), DomainError);
  EXPECT_THROW(correlation_matrix(CorrelationKind::unstructured, 0.0, 3), DomainError);
}

TEST(CorrelationMatrix, StoredMatrixRestrictedToWaves) {
  WorkingCorrelation c;
  c.kind = CorrelationKind::unstructured;
  c.grid = {2001, 2002, 2003};
  c.matrix.resize(3, 3);
  c.matrix << 1, .1, .2, .1, 1, .3, .2, .3, 1;
  const std::vector<int> waves{2001, 2003};
  const auto R = correlation_matrix(c, waves);
  EXPECT_EQ(R(0, 1), 0.2);
  EXPECT_EQ(R(1, 1), 1.0);
  const std::vector<int> off{2004};
  EXPECT_THROW(correlation_matrix(c, off), DomainError);
}

TEST(Dispersion, Examples) {
  const std::vector<double> zero(4, 0.0), ones(4, 1.0);
  EXPECT_EQ(estimate_dispersion(zero, ones, 1), 0.0);
  EXPECT_EQ(estimate_dispersion(std::vector<double>{1, -1, 1, -1}, ones, 0), 1.0);
  EXPECT_EQ(estimate_dispersion(std::vector<double>{1, 1}, std::vector<double>{2, 2}, 0), 2.0);
  EXPECT_EQ(estimate_dispersion(std::vector<double>{1, -1, 1, -1}, ones, 2), 2.0);
  EXPECT_EQ(estimate_dispersion(std::vector<double>{1, -1, 1, -1}, ones, 2, false), 1.0);
  EXPECT_THROW(estimate_dispersion(std::vector<double>{1, 2}, std::vector<double>{1, 1}, 2), DomainError);
}

TEST(EstimateCorrelation, PerfectlyExchangeableIsClamped) {
  std::vector<ClusterResiduals> cl;
  for (int i = 0; i < 50; ++i) {
    const double v = i % 2 ? 1.0 : -1.0;
    cl.push_back({{v, v, v}, {1, 2, 3}});
  }
  const auto c = estimate_correlation(cl, CorrelationKind::exchangeable, 1);
  EXPECT_TRUE(c.clamped);
  EXPECT_DOUBLE_EQ(c.rho, 1.0 - 1e-6);
  EXPECT_THROW(estimate_correlation(cl, CorrelationKind::independence, 1), DomainError);
  std::vector<ClusterResiduals> two{{{1.0, 1.0}, {1, 2}}};
  EXPECT_THROW(estimate_correlation(two, CorrelationKind::ar1, 3), NumericalError);
}

TEST(EstimateCorrelation, MonteCarloRecovery) {
  std::mt19937_64 rng(11);
  for (double rho : {0.0, 0.6}) {
    sim::Spec s;
    s.clusters = 500;
    s.waves = 20;
    s.errors = sim::Errors::ar1;
    s.rho = rho;
    const auto fit = fit_gee(sim::clustered_design(s, rng), with(CorrelationKind::ar1));
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.corr.rho, rho, 0.05);
  }
  sim::Spec s;
  s.clusters = 500;
  s.waves = 20;
  s.errors = sim::Errors::exchangeable;
  s.rho = 0.4;
  const auto fit = fit_gee(sim::clustered_design(s, rng), with(CorrelationKind::exchangeable));
  EXPECT_NEAR(fit.corr.rho, 0.4, 0.05);
}

TEST(FitGee, IndependenceEqualsLeastSquares) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    sim::Spec s;
    s.clusters = 40;
    s.waves = 5 + rep;
    s.p = 2 + rep;
    s.errors = sim::Errors::ar1;
    s.rho = 0.4;
    const auto d = sim::clustered_design(s, rng);
    const auto fit = fit_gee(d, with(CorrelationKind::independence));
    const Eigen::VectorXd ols = oracle::least_squares(d.X, d.y);
    EXPECT_LT((fit.beta - ols).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_TRUE(fit.converged);
  }
}

TEST(FitGee, WeightedIndependenceEqualsWeightedLeastSquares) {
  std::mt19937_64 rng(4);
  sim::Spec s;
  s.unit_weights = false;
  const auto d = sim::clustered_design(s, rng);
  const Eigen::VectorXd sw = Eigen::Map<const Eigen::VectorXd>(d.layout.weight.data(), d.X.rows()).cwiseSqrt();
  const Eigen::VectorXd wls = oracle::least_squares(sw.asDiagonal() * d.X, sw.asDiagonal() * d.y);
  EXPECT_LT((fit_gee(d, with(CorrelationKind::independence)).beta - wls).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitGee, InterceptOnlyMean) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(2, 1);
  Eigen::VectorXd y(2);
  y << 0, 2;
  const auto d = tiny_design(X, y, {0, 0});
  GeeOptions o = with(CorrelationKind::independence);
  o.small_sample_correction = false;
  for (auto k : {CorrelationKind::independence, CorrelationKind::exchangeable, CorrelationKind::ar1,
                 CorrelationKind::unstructured}) {
    o.corstr = k;
    const auto fit = fit_gee(d, o);
    EXPECT_NEAR(fit.beta(0), 1.0, 1e-12) << to_string(k);
  }
}

TEST(FitGee, EstimatingEquationsVanish) {
  std::mt19937_64 rng(5);
  sim::Spec s;
  s.clusters = 60;
  s.waves = 8;
  s.p = 4;
  s.errors = sim::Errors::ar1;
  s.rho = 0.5;
  s.unit_weights = false;
  const auto d = sim::clustered_design(s, rng);
  for (auto k : kIterated) {
    const auto fit = fit_gee(d, with(k));
    ASSERT_TRUE(fit.converged) << to_string(k);
    const Eigen::VectorXd u = estimating_equations(fit, d);
    const double scale = (d.X.transpose() * d.y).cwiseAbs().maxCoeff() / fit.phi;
    EXPECT_LT(u.cwiseAbs().maxCoeff(), 1e-6 * scale) << to_string(k);
  }
}

TEST(FitGee, CovariancesSymmetricPsd) {
  std::mt19937_64 rng(6);
  sim::Spec s;
  s.clusters = 30;
  s.waves = 6;
  s.p = 5;
  s.errors = sim::Errors::exchangeable;
  s.rho = 0.3;
  const auto d = sim::clustered_design(s, rng);
  for (auto k : kIterated) {
    const auto fit = fit_gee(d, with(k));
    EXPECT_EQ(fit.naive_cov, fit.naive_cov.transpose());
    EXPECT_EQ(fit.robust_cov, fit.robust_cov.transpose());
    EXPECT_GE(min_eigen_ratio(fit.naive_cov), -1e-10);
    EXPECT_GE(min_eigen_ratio(fit.robust_cov), -1e-10);
  }
}

TEST(FitGee, ColumnRescaling) {
  std::mt19937_64 rng(7);
  sim::Spec s;
  s.clusters = 50;
  s.waves = 6;
  s.p = 3;
  s.errors = sim::Errors::ar1;
  s.rho = 0.4;
  auto d = sim::clustered_design(s, rng);
  for (auto k : kIterated) {
    const auto a = fit_gee(d, with(k));
    auto scaled = d;
    scaled.X.col(2) *= 7.5;
    const auto b = fit_gee(scaled, with(k));
    EXPECT_NEAR(b.beta(2), a.beta(2) / 7.5, 1e-9);
    EXPECT_LT((predict(a, d) - predict(b, scaled)).cwiseAbs().maxCoeff(), 1e-8) << to_string(k);
  }
}

TEST(FitGee, SingletonClustersMakeCorrelationVacuous) {
  std::mt19937_64 rng(8);
  sim::Spec s;
  s.clusters = 200;
  s.waves = 1;
  s.p = 3;
  const auto d = sim::clustered_design(s, rng);
  const auto ind = fit_gee(d, with(CorrelationKind::independence));
  for (auto k : kIterated) EXPECT_LT((fit_gee(d, with(k)).beta - ind.beta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitGee, ExchangeableOnIndependentErrors) {
  std::mt19937_64 rng(9);
  sim::Spec s;
  s.clusters = 300;
  s.waves = 8;
  const auto d = sim::clustered_design(s, rng);
  const auto ind = fit_gee(d, with(CorrelationKind::independence));
  const auto ex = fit_gee(d, with(CorrelationKind::exchangeable));
  EXPECT_NEAR(ex.corr.rho, 0.0, 0.03);
  const Eigen::VectorXd se = ind.robust_se();
  for (Eigen::Index j = 0; j < ex.beta.size(); ++j) EXPECT_LT(std::abs(ex.beta(j) - ind.beta(j)), se(j));
}

TEST(FitGee, UserDefinedMatchesSuppliedAr1) {
  std::mt19937_64 rng(10);
  sim::Spec s;
  s.clusters = 80;
  s.waves = 5;
  s.errors = sim::Errors::ar1;
  s.rho = 0.5;
  const auto d = sim::clustered_design(s, rng);
  GeeOptions o = with(CorrelationKind::userdefined);
  o.user_matrix = correlation_matrix(CorrelationKind::ar1, 0.5, 5);
  const auto fit = fit_gee(d, o);
  EXPECT_TRUE(fit.converged);
  EXPECT_EQ(fit.corr.kind, CorrelationKind::userdefined);
  // Same fixed correlation applied by hand: GLS closed form.
  const Eigen::LLT<Eigen::MatrixXd> L(o.user_matrix);
  Eigen::MatrixXd Xw(d.X.rows(), d.X.cols());
  Eigen::VectorXd yw(d.y.size());
  for (int c = 0; c < s.clusters; ++c) {
    Xw.middleRows(c * 5, 5) = L.matrixL().solve(d.X.middleRows(c * 5, 5));
    yw.segment(c * 5, 5) = L.matrixL().solve(d.y.segment(c * 5, 5));
  }
  EXPECT_LT((fit.beta - oracle::least_squares(Xw, yw)).cwiseAbs().maxCoeff(), 1e-10);
  o.user_matrix = Eigen::MatrixXd::Identity(4, 4);
  EXPECT_THROW(fit_gee(d, o), DomainError);
}

TEST(FitGee, NonConvergenceIsReported) {
  std::mt19937_64 rng(12);
  sim::Spec s;
  s.errors = sim::Errors::ar1;
  s.rho = 0.5;
  GeeOptions o = with(CorrelationKind::ar1);
  o.max_iter = 1;
  o.tol = 0.0;
  const auto fit = fit_gee(sim::clustered_design(s, rng), o);
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.n_iter, 1);
}

TEST(QuasiLik, Examples) {
  const std::vector<double> ones{1.0, 1.0};
  EXPECT_EQ(quasi_likelihood(std::vector<double>{0.0, 0.0}, ones, 2.0), 0.0);
  EXPECT_EQ(quasi_likelihood(std::vector<double>{1.0, 1.0}, ones, 1.0), -1.0);
  EXPECT_EQ(quasi_likelihood(std::vector<double>{1.0, 1.0}, ones, 4.0, QuasiLikScale::unit), -1.0);

  // y = [1, 2, 3, 6]: null model mean 3, residuals [-2, -1, 0, 3], SS = 14,
  // phi = 14 / 3, Q = -3/2 (unit scale: -7). Saturated model: Q = 0.
  Eigen::VectorXd y(4);
  y << 1, 2, 3, 6;
  const auto null_d = tiny_design(Eigen::MatrixXd::Ones(4, 1), y, {0, 1, 2, 3});
  const auto null_fit = fit_gee(null_d, with(CorrelationKind::independence));
  EXPECT_DOUBLE_EQ(null_fit.beta(0), 3.0);
  EXPECT_DOUBLE_EQ(null_fit.phi, 14.0 / 3.0);
  EXPECT_DOUBLE_EQ(null_fit.quasi_lik, -1.5);
  GeeOptions unit = with(CorrelationKind::independence);
  unit.quasi_lik_scale = QuasiLikScale::unit;
  EXPECT_DOUBLE_EQ(fit_gee(null_d, unit).quasi_lik, -7.0);
  GeeOptions sat = unit;
  sat.small_sample_correction = false;
  const auto sat_fit = fit_gee(tiny_design(Eigen::MatrixXd::Identity(4, 4), y, {0, 1, 2, 3}), sat);
  EXPECT_NEAR(sat_fit.quasi_lik, 0.0, 1e-24);
}

TEST(Qic, IdentitiesHoldExactly) {
  std::mt19937_64 rng(13);
  sim::Spec s;
  s.clusters = 40;
  s.waves = 6;
  s.p = 4;
  s.errors = sim::Errors::ar1;
  s.rho = 0.3;
  const auto d = sim::clustered_design(s, rng);
  const auto ind = fit_gee(d, with(CorrelationKind::independence));
  for (auto k : kIterated) {
    const auto fit = fit_gee(d, with(k));
    const auto q = qic_report(fit, ind);
    EXPECT_EQ(q.qicu, -2.0 * q.quasi_lik + 2.0 * q.params);
    EXPECT_EQ(q.qic, -2.0 * q.quasi_lik + 2.0 * q.cic);
    EXPECT_NEAR(q.qicu - q.qic, 2.0 * q.params - 2.0 * q.cic, 1e-9);
    ASSERT_TRUE(q.qicc.has_value());
    EXPECT_DOUBLE_EQ(*q.qicc, q.qic + 2.0 * 4 * 5 / (240.0 - 4 - 1));
    EXPECT_EQ(q.params, 4);
  }
  EXPECT_THROW(qic_report(ind, fit_gee(d, with(CorrelationKind::ar1))), DomainError);
}

TEST(Qic, QiccUndefinedForTinySamples) {
  Eigen::VectorXd y(3);
  y << 1, 2, 4;
  Eigen::MatrixXd X(3, 2);
  X << 1, 0, 1, 1, 1, 2;
  const auto d = tiny_design(X, y, {0, 1, 2});
  const auto fit = fit_gee(d, with(CorrelationKind::independence));
  EXPECT_FALSE(qic_report(fit, fit).qicc.has_value());
}

TEST(Qic, CicNearParameterCountWhenWellSpecified) {
  std::mt19937_64 rng(14);
  sim::Spec s;
  s.clusters = 500;
  s.waves = 4;
  s.p = 5;
  const auto d = sim::clustered_design(s, rng);
  const auto ind = fit_gee(d, with(CorrelationKind::independence));
  const double cic = qic_report(ind, ind).cic;
  EXPECT_GE(cic, 0.9 * 5);
  EXPECT_LE(cic, 1.1 * 5);
}

TEST(Predict, Examples) {
  GeeFit fit;
  fit.beta = Eigen::Vector2d(1.0, 2.0);
  Eigen::MatrixXd row(1, 2);
  row << 1, 3;
  EXPECT_EQ(predict(fit, row)(0), 7.0);
  EXPECT_THROW(predict(fit, Eigen::MatrixXd::Ones(1, 3)), DomainError);

  Eigen::VectorXd y(4);
  y << 1, 2, 3, 6;
  const auto d = tiny_design(Eigen::MatrixXd::Ones(4, 1), y, {0, 0, 1, 1});
  const auto f = fit_gee(d, with(CorrelationKind::exchangeable));
  const Eigen::VectorXd yhat = predict(f, d);
  EXPECT_EQ(yhat, f.fitted);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(yhat(i), f.beta(0));
}

TEST(Export, CoefficientAndQicColumns) {
  std::mt19937_64 rng(15);
  const auto d = sim::clustered_design({}, rng);
  const auto fit = fit_gee(d, with(CorrelationKind::ar1));
  std::ostringstream os;
  write_coefficients_csv(os, fit);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "term,estimate,naive_se,robust_se");
  EXPECT_NE(os.str().find("\nx2,"), std::string::npos);
  EXPECT_EQ(qic_columns(), (std::vector<std::string>{"QIC", "QICu", "QuasiLik", "CIC", "Params", "QICC"}));
  EXPECT_EQ(parse_correlation_kind("ex"), CorrelationKind::exchangeable);
  EXPECT_THROW(parse_correlation_kind("toeplitz"), ConfigError);
}

TEST(FitGee, SandwichMatchesEmpiricalSpread) {
  std::mt19937_64 rng(16);
  sim::Spec s;
  s.clusters = 100;
  s.waves = 10;
  s.p = 3;
  s.errors = sim::Errors::ar1;
  s.rho = 0.5;
  std::vector<std::vector<double>> est(3), se(3);
  for (int rep = 0; rep < 200; ++rep) {
    const auto fit = fit_gee(sim::clustered_design(s, rng), with(CorrelationKind::ar1));
    const Eigen::VectorXd rse = fit.robust_se();
    for (int j = 0; j < 3; ++j) {
      est[static_cast<std::size_t>(j)].push_back(fit.beta(j));
      se[static_cast<std::size_t>(j)].push_back(rse(j));
    }
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const double ratio = oracle::sample_sd(est[j]) / oracle::median(se[j]);
    EXPECT_GT(ratio, 0.8) << j;
    EXPECT_LT(ratio, 1.2) << j;
  }
}
