#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "dlnflow/fixedpoint.hpp"
#include "dlnflow/model.hpp"
#include "dlnflow/rates.hpp"
#include "oracles.hpp"

using namespace dlnflow;

namespace {

// Errors of dw/dt = -(1/delta) X^T (X w - y) from w = 0, by eigendecomposition.
std::pair<double, double> linear_flow_errors(const Dataset& ds, double sigma2, double t) {
  const double delta = ds.delta();
  const Mat K = ds.X.transpose() * ds.X / delta;
  Eigen::SelfAdjointEigenSolver<Mat> es(K);
  const Vec b = es.eigenvectors().transpose() * (ds.X.transpose() * ds.y / delta);
  Vec c(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double x = es.eigenvalues()(i);
    c(i) = x > 1e-10 ? -std::expm1(-x * t) / x * b(i) : t * b(i);
  }
  const Vec w = es.eigenvectors() * c;
  return {oracle::naive_train_error(ds.X, ds.y, w),
          (w - ds.w_star).squaredNorm() / static_cast<double>(ds.d()) + sigma2};
}

}  // namespace

TEST(MarchenkoPastur, MassMeanAndSecondMoment) {
  for (double delta : {0.5, 2.0, 4.0}) {
    const MPLaw law(delta);
    EXPECT_NEAR(mp_integrate(law, [](double) { return 1.0; }), 1.0, 1e-12) << delta;
    EXPECT_NEAR(mp_integrate(law, [](double x) { return x; }), 1.0, 1e-12) << delta;
    EXPECT_NEAR(mp_integrate(law, [](double x) { return x * x; }), 1.0 + 1.0 / delta, 1e-12);
  }
  EXPECT_DOUBLE_EQ(MPLaw(0.25).atom(), 0.75);
  EXPECT_DOUBLE_EQ(MPLaw(4.0).lambda_minus(), 0.25);
  EXPECT_DOUBLE_EQ(MPLaw(4.0).lambda_plus(), 2.25);
  EXPECT_THROW(MPLaw(0.0), std::invalid_argument);
}

TEST(MarchenkoPastur, MatchesEmpiricalSpectrum) {
  const double delta = 2.0;
  const auto ds = sample_dataset(ModelConfig{}, 1600, 800, Design::gaussian, 4);
  const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(ds.X.transpose() * ds.X / delta).eigenvalues();
  const MPLaw law(delta);
  EXPECT_NEAR(ev.minCoeff(), law.lambda_minus(), 0.03);
  EXPECT_NEAR(ev.maxCoeff(), law.lambda_plus(), 0.1);
  const double emp_inv = ev.cwiseInverse().mean();
  EXPECT_NEAR(emp_inv, mp_integrate(law, [](double x) { return 1.0 / x; }), 0.03);
  EXPECT_NEAR(mp_integrate(law, [](double x) { return 1.0 / x; }), delta / (delta - 1.0), 1e-9);
}

TEST(LazyCurves, EndpointLimits) {
  const double rho2 = 0.1, s2 = 0.1;
  for (double delta : {2.0, 0.5}) {
    const auto c = lazy_curves(delta, rho2, s2, {0.0, 400.0});
    EXPECT_NEAR(c.e_train.front(), rho2 + s2, 1e-12);
    EXPECT_NEAR(c.e_test.front(), rho2 + s2, 1e-12);
    if (delta > 1.0) {
      EXPECT_NEAR(c.e_train.back(), s2 * (delta - 1.0) / delta, 1e-9);
      EXPECT_NEAR(c.e_test.back(), s2 / (delta - 1.0) + s2, 1e-9);
    } else {
      // Min-norm interpolation: train error vanishes, test risk has the closed form.
      EXPECT_NEAR(c.e_train.back(), 0.0, 1e-9);
      EXPECT_NEAR(c.e_test.back(), rho2 * (1.0 - delta) + s2 * delta / (1.0 - delta) + s2, 1e-6);
    }
  }
}

TEST(LazyCurves, MatchLinearFlowOnData) {
  ModelConfig cfg;
  cfg.delta = 2.0;
  const std::vector<double> tb{0.5, 2.0, 8.0};
  const auto c = lazy_curves(cfg.delta, cfg.rho2(), cfg.sigma2, tb);
  double tr[3] = {0, 0, 0}, te[3] = {0, 0, 0};
  for (int sd = 0; sd < 3; ++sd) {
    const auto ds = sample_dataset(cfg, 2000, 1000, Design::gaussian, 30 + sd);
    for (int k = 0; k < 3; ++k) {
      const auto [a, b] = linear_flow_errors(ds, cfg.sigma2, tb[static_cast<std::size_t>(k)]);
      tr[k] += a / 3;
      te[k] += b / 3;
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(tr[k], c.e_train[k], 0.03 * c.e_train[k]) << tb[k];
    EXPECT_NEAR(te[k], c.e_test[k], 0.03 * c.e_test[k]) << tb[k];
  }
}

TEST(Rate, PositiveAndIncreasingInScale) {
  const GaussHermite gh(61);
  for (double delta : {0.5, 2.0}) {
    double prev = 0.0;
    for (double alpha : {0.25, 0.5, 1.0, 2.0}) {
      ModelConfig cfg;
      cfg.delta = delta;
      cfg.alpha = alpha;
      const auto rs = solve_rate(solve_fixed_point(cfg), cfg, gh);
      EXPECT_GT(rs.gamma, 0.0);
      EXPECT_GT(rs.gamma, prev) << delta << " " << alpha;
      EXPECT_GT(rs.u_star * (1.0 - delta), 0.0);
      prev = rs.gamma;
    }
  }
}

TEST(Rate, LazyLimitIsSmallestEigenvalue) {
  ModelConfig cfg;
  cfg.delta = 4.0;
  cfg.alpha = 10.0;
  const auto rs = solve_rate(solve_fixed_point(cfg), cfg);
  // For alpha^2 >> |w| every node sits at alpha^2, giving alpha^2 (1 - 1/sqrt(delta))^2.
  EXPECT_NEAR(rs.gamma, 25.0, 0.05 * 25.0);
}

TEST(Rate, IdentityAndQuadratureStability) {
  ModelConfig cfg;
  cfg.delta = 2.0;
  cfg.alpha = 0.7;
  const auto fp = solve_fixed_point(cfg);
  const GaussHermite g61(61), g121(121);
  const auto rs = solve_rate(fp, cfg, g61);
  EXPECT_NEAR(rs.gamma * cfg.delta, rate_identity_rhs(rs, fp, cfg, g61), 1e-10);
  const auto rs2 = solve_rate(fp, cfg, g121);
  EXPECT_NEAR(rs2.gamma, rs.gamma, 1e-6 * rs.gamma);
}

TEST(Rate, RejectsUnsupportedCases) {
  ModelConfig cfg;
  cfg.lambda = 0.1;
  EXPECT_THROW(solve_rate(solve_fixed_point(cfg), cfg), std::invalid_argument);
}

TEST(Timescales, ClosedForms) {
  EXPECT_NEAR(grokking_time(std::exp(5.0), 1.0), 10.0, 1e-12);
  EXPECT_NEAR(descent_time(std::exp(-5.0), 2.0), 5.0, 1e-12);
  EXPECT_THROW(grokking_time(0.5, 1.0), std::domain_error);
  EXPECT_THROW(descent_time(2.0, 1.0), std::domain_error);
}

TEST(Timescales, SearchPathLimits) {
  EXPECT_EQ(search_path(0.7, 0.1, 0.0), 0.0);
  EXPECT_EQ(search_path(0.0, 0.1, 3.0), 0.0);
  const double slope = oracle::central_diff([](double t) { return search_path(-0.7, 0.1, t); }, 0.0, 1e-6);
  EXPECT_NEAR(slope, -0.7, 1e-6);
  // Long times: 0.5 sgn(w) exp((|w| - lambda) t).
  EXPECT_NEAR(search_path(0.7, 0.2, 20.0) / (0.5 * std::exp(0.5 * 20.0)), 1.0, 1e-10);
  EXPECT_DOUBLE_EQ(search_path(-0.7, 0.2, 3.0), -search_path(0.7, 0.2, 3.0));
}

TEST(LambdaPositiveRate, ExponentExamples) {
  // tau = 2: active branch |w| / (1 + chi), inactive branch lambda - |obs| / (1 + chi).
  EXPECT_DOUBLE_EQ(lambda_pos_exponent(3.0, 1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(lambda_pos_exponent(-1.0, 1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(lambda_pos_exponent(0.0, 1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(lambda_pos_exponent(2.0, 1.0, 1.0), 0.0);
}

TEST(LambdaPositiveRate, LawIsConsistent) {
  ModelConfig cfg;
  cfg.lambda = 0.05;
  const auto fp = solve_fixed_point(cfg);
  const auto law = lambda_pos_rate_law(fp, cfg.target);
  double mass = 0.0, act = 0.0, minexp = HUGE_VAL;
  for (const auto& n : law.nodes) {
    mass += n.weight;
    act += n.active ? n.weight : 0.0;
    minexp = std::min(minexp, n.exponent);
    EXPECT_DOUBLE_EQ(n.exponent, lambda_pos_exponent(n.observation, cfg.lambda, fp.chi_or_Rw));
  }
  EXPECT_NEAR(mass, 1.0, 1e-12);
  EXPECT_EQ(minexp, law.min_exponent);
  EXPECT_GE(law.min_exponent, 0.0);
  EXPECT_GT(act, 0.0);
  EXPECT_THROW(lambda_pos_rate_law(solve_fixed_point(ModelConfig{}), cfg.target),
               std::invalid_argument);
}

TEST(RateFitting, RecoversSyntheticExponent) {
  std::vector<double> t, v, ve;
  for (int i = 0; i <= 200; ++i) {
    const double s = 0.1 * i;
    t.push_back(s);
    v.push_back(0.3 + 2.0 * std::exp(-1.4 * s));
    ve.push_back((s > 0 ? std::pow(s, -1.5) : 1.0) * std::exp(-1.4 * s));
  }
  const auto f = fit_rate(t, v, 0.3, 2.0, 15.0);
  EXPECT_NEAR(f.gamma_hat, 0.7, 1e-10);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_NEAR(fit_rate(t, ve, 0.0, 2.0, 15.0, 1.5).gamma_hat, 0.7, 1e-10);
  // Without the edge correction the t^{-3/2} prefactor biases the estimate upward.
  EXPECT_GT(fit_rate(t, ve, 0.0, 2.0, 15.0, 0.0).gamma_hat, 0.7 + 1e-3);
  EXPECT_THROW(fit_rate(t, v, 1.0, 0.0, 15.0), FitError);
  EXPECT_THROW(fit_rate(t, v, 0.3, 5.0, 5.2), FitError);
}

TEST(RateFitting, HorizonAndWindow) {
  std::vector<double> t, v;
  for (int i = 0; i <= 100; ++i) {
    t.push_back(i);
    v.push_back(1.0 + std::exp(-0.2 * i));
  }
  // exp(-0.2 t) <= 1e-6 first at t = 70.
  EXPECT_DOUBLE_EQ(usable_horizon(t, v, 1.0, 1e-6), 69.0);
  const auto [lo, hi] = default_fit_window(t, v, 1.0, 1e-7);
  EXPECT_DOUBLE_EQ(lo, 0.2 * 69.0);
  EXPECT_DOUBLE_EQ(hi, 0.8 * 69.0);
}

TEST(RateFitting, LineFit) {
  const auto f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_THROW(fit_line({1, 1}, {0, 1}), std::invalid_argument);
}

TEST(Transition, DetectsDropAfterPlateau) {
  std::vector<double> t, v;
  for (int i = 0; i <= 100; ++i) {
    const double s = 0.1 * i;
    t.push_back(s);
    v.push_back(s <= 5.0 ? 1.0 : std::max(0.0, 1.0 - (s - 5.0)));
  }
  const auto tr = detect_transition(t, v, 1.0, 4.0, 0.1);
  ASSERT_TRUE(tr.has_value());
  EXPECT_NEAR(*tr, 5.1, 1e-12);
  EXPECT_FALSE(detect_transition(t, std::vector<double>(t.size(), 1.0), 1.0, 4.0).has_value());
}
