#include <gtest/gtest.h>

#include <cmath>

#include "dlnflow/dmft.hpp"
#include "dlnflow/fixedpoint.hpp"
#include "oracles.hpp"

using namespace dlnflow;

namespace {

// Classical RK4 for dw/dt = -sqrt(w^2 + a^4)(w - w*), the large-delta limit at lambda = 0.
double large_delta_ode(double w_star, double alpha, double t, int steps = 4000) {
  const double a4 = std::pow(alpha, 4);
  auto f = [&](double w) { return -std::sqrt(w * w + a4) * (w - w_star); };
  double w = 0.0;
  const double h = t / steps;
  for (int k = 0; k < steps; ++k) {
    const double k1 = f(w), k2 = f(w + 0.5 * h * k1), k3 = f(w + 0.5 * h * k2), k4 = f(w + h * k3);
    w += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return w;
}

DmftOptions fast_opts(Eigen::Index M) {
  DmftOptions o;
  o.M = M;
  o.threads = 1;
  return o;
}

}  // namespace

TEST(DmftSampler, ZeroCovarianceGivesZeroPaths) {
  const GaussianPathSampler s(50, 4, 1);
  EXPECT_EQ(s.sample(Mat::Zero(4, 4)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DmftSampler, IdentityCovariance) {
  const Eigen::Index M = 100000;
  const GaussianPathSampler s(M, 3, 2);
  const Mat z = s.sample(Mat::Identity(3, 3));
  const Mat C = z.transpose() * z / static_cast<double>(M);
  EXPECT_LE((C - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(M));
}

TEST(DmftSampler, InitialFieldVariance) {
  ModelConfig cfg;
  const auto k = initial_kernels(cfg, TimeGrid{0.1, 3});
  const Eigen::Index M = 50000;
  const Mat z = GaussianPathSampler(M, 4, 3).sample(cfg.delta * k.C_f);
  const double var = z.col(0).squaredNorm() / M;
  const double expect = cfg.delta * (cfg.rho2() + cfg.sigma2);
  EXPECT_NEAR(var, expect, 4.0 * expect * std::sqrt(2.0 / M));
}

TEST(DmftSampler, JitterEscalatesForSingularCovariance) {
  Mat C = Mat::Ones(3, 3);  // rank one
  C(2, 2) -= 1e-14;
  double jit = -1.0;
  const Mat L = GaussianPathSampler::factor(C, &jit);
  EXPECT_TRUE(L.allFinite());
  EXPECT_GE(jit, 0.0);
}

TEST(DmftPath, FirstStepUsesInitialScale) {
  ModelConfig cfg;
  cfg.alpha = 1.7;
  const TimeGrid grid{0.05, 4};
  const Mat R_f = Mat::Zero(5, 5);
  std::vector<double> z{0.3, -0.2, 0.1, 0.4, 0.0}, w(5);
  Mat J;
  integrate_path(R_f, cfg, grid, z.data(), 1.0, w.data(), &J);
  const double a2 = cfg.alpha * cfg.alpha;
  const double g0 = z[0] / cfg.delta - 1.0;
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_NEAR(w[1], -0.05 * a2 * g0, 1e-15);
  EXPECT_NEAR(J(1, 0), -0.05 * a2 / cfg.delta, 1e-15);
}

TEST(DmftPath, LargeDeltaSurrogateFollowsLazySolution) {
  ModelConfig cfg;
  cfg.alpha = 2.0;
  const double a2 = 4.0;
  const TimeGrid grid = TimeGrid::covering(3.0 / a2, 1e-4);
  const int N = grid.size();
  const Mat R_f = Mat::Zero(N, N);
  std::vector<double> z(static_cast<std::size_t>(N), 0.0), w(static_cast<std::size_t>(N));
  integrate_path(R_f, cfg, grid, z.data(), 1.0, w.data());
  for (int i = N / 10; i < N; i += N / 10) {
    const double lazy = 1.0 - std::exp(-a2 * grid.t(i));
    EXPECT_NEAR(w[static_cast<std::size_t>(i)], lazy, 0.05 * lazy) << "t=" << grid.t(i);
  }
}

TEST(DmftPath, JacobianMatchesBumpTest) {
  ModelConfig cfg;
  cfg.lambda = 0.2;
  const TimeGrid grid{0.05, 40};
  const int N = grid.size();
  CounterRng rng(5);
  Mat R_f = Mat::Zero(N, N);
  for (int i = 1; i < N; ++i)
    for (int j = 0; j < i; ++j) R_f(i, j) = 0.5 * std::exp(-0.3 * (i - j) * grid.step);
  std::vector<double> z(static_cast<std::size_t>(N)), w(static_cast<std::size_t>(N)),
      wp(static_cast<std::size_t>(N));
  for (auto& x : z) x = 0.7 * rng.normal();
  Mat J;
  integrate_path(R_f, cfg, grid, z.data(), 1.0, w.data(), &J);
  const double eps = 1e-6;
  double worst = 0.0;
  for (int j = 0; j < N - 1; j += 3) {
    auto zp = z;
    zp[static_cast<std::size_t>(j)] += eps;
    integrate_path(R_f, cfg, grid, zp.data(), 1.0, wp.data());
    for (int i = j + 1; i < N; ++i) {
      const double fd = (wp[static_cast<std::size_t>(i)] - w[static_cast<std::size_t>(i)]) / eps;
      const double scale = std::max(std::abs(J(i, j)), 1e-3 * grid.step);
      worst = std::max(worst, std::abs(fd - J(i, j)) / scale);
    }
    for (int i = 0; i <= j; ++i) EXPECT_EQ(J(i, j), 0.0);
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(DmftEstimate, InitialEntries) {
  ModelConfig cfg;
  cfg.alpha = 1.3;
  const TimeGrid grid{0.05, 10};
  const Eigen::Index M = 400;
  const auto k = initial_kernels(cfg, grid);
  const Mat z = GaussianPathSampler(M, grid.size(), 9).sample(cfg.delta * k.C_f);
  const Vec ws = stratified_targets(cfg.target, M, 9);
  const auto ens = integrate_effective_paths(k, cfg, z, ws, {1, 64, false});
  const auto cr = estimate_cw_rw(ens);
  EXPECT_NEAR(cr.C(0, 0), ws.squaredNorm() / M, 1e-15);
  EXPECT_NEAR(cr.R(1, 0), std::pow(cfg.alpha, 2) / cfg.delta, 1e-12);
  EXPECT_TRUE(is_causal(cr.R));
  EXPECT_LE((cr.C - cr.C.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DmftEstimate, StratifiedTargetsMatchProbabilities) {
  const Vec w = stratified_targets(TargetDist::bernoulli(0.1), 2000, 4);
  EXPECT_EQ(w.sum(), 200.0);
}

TEST(DmftVolterra, ZeroResponse) {
  const TimeGrid grid{0.1, 5};
  CounterRng rng(1);
  Mat A(6, 6);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  const Mat C = A * A.transpose();
  const auto fr = solve_cf_rf(C, Mat::Zero(6, 6), 0.3, grid);
  EXPECT_EQ(fr.R.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((fr.C - (C.array() + 0.3).matrix()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DmftVolterra, HandUnrolledThreeStep) {
  const double h = 0.2, c = 0.7;
  Mat R = Mat::Zero(3, 3);
  R(1, 0) = R(2, 0) = R(2, 1) = c;
  const auto fr = solve_cf_rf(Mat::Zero(3, 3), R, 0.0, TimeGrid{h, 2});
  // (I + hR)^{-1} R with R nilpotent: R - h R^2.
  Mat expect = Mat::Zero(3, 3);
  expect(1, 0) = c;
  expect(2, 1) = c;
  expect(2, 0) = c - h * c * c;
  EXPECT_LE((fr.R - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DmftVolterra, CorrelationTransform) {
  const double h = 0.1;
  CounterRng rng(3);
  Mat R = Mat::Zero(5, 5), A(5, 5);
  for (int i = 1; i < 5; ++i)
    for (int j = 0; j < i; ++j) R(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  const Mat C = A * A.transpose();
  const auto fr = solve_cf_rf(C, R, 0.2, TimeGrid{h, 4});
  const Mat Binv = (Mat::Identity(5, 5) + h * R).inverse();
  const Mat expect = Binv * (C.array() + 0.2).matrix() * Binv.transpose();
  EXPECT_LE((fr.C - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DmftVolterra, LaplaceIdentityAtZero) {
  const TimeGrid grid{0.01, 2000};
  const int N = grid.size();
  Mat R = Mat::Zero(N, N);
  for (int i = 1; i < N; ++i)
    for (int j = 0; j < i; ++j) R(i, j) = std::exp(-(i - j) * grid.step);
  const auto fr = solve_cf_rf(Mat::Zero(N, N), R, 0.0, grid);
  const double int_w = grid.step * R.row(N - 1).sum();
  const double int_f = grid.step * fr.R.row(N - 1).sum();
  EXPECT_NEAR(int_f, int_w / (1.0 + int_w), 1e-3);
  EXPECT_NEAR(int_f, 0.5, 2e-3);
}

TEST(DmftSolve, NullProblemStaysZero) {
  ModelConfig cfg;
  cfg.sigma2 = 0.0;
  cfg.target = TargetDist::zero();
  const auto res = solve_dmft(cfg, TimeGrid{0.1, 20}, fast_opts(100));
  EXPECT_EQ(res.kernels.C_w.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(res.kernels.C_f.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(res.diagnostics.converged);
}

TEST(DmftSolve, CausalPsdAndInitialErrors) {
  ModelConfig cfg;
  const auto res = solve_dmft(cfg, TimeGrid::covering(5.0, 0.05), fast_opts(1000));
  const auto& k = res.kernels;
  EXPECT_TRUE(res.diagnostics.converged);
  EXPECT_TRUE(is_causal(k.R_w));
  EXPECT_TRUE(is_causal(k.R_f));
  EXPECT_TRUE(is_psd(k.C_w));
  EXPECT_TRUE(is_psd(k.C_f));
  const auto e = predict_errors(k);
  EXPECT_NEAR(e.e_test.front(), cfg.rho2() + cfg.sigma2, 1e-14);
}

TEST(DmftSolve, SelfConsistencyResidual) {
  ModelConfig cfg;
  const TimeGrid grid = TimeGrid::covering(4.0, 0.05);
  auto opt = fast_opts(800);
  opt.seed = 3;
  const auto res = solve_dmft(cfg, grid, opt);
  ASSERT_TRUE(res.diagnostics.converged);
  const GaussianPathSampler sampler(opt.M, grid.size(), CounterRng(opt.seed).split(11).bits_at(0));
  const Vec ws = stratified_targets(cfg.target, opt.M, opt.seed);
  const auto again = dmft_inner_pass(res.kernels, cfg, sampler, ws, {1, 64, false});
  const double ch = std::max({detail::rel_sup_change(again.C_w, res.kernels.C_w),
                              detail::rel_sup_change(again.C_f, res.kernels.C_f),
                              detail::rel_sup_change(again.R_w, res.kernels.R_w),
                              detail::rel_sup_change(again.R_f, res.kernels.R_f)});
  EXPECT_LE(ch, 2.0 * opt.tol);
}

TEST(DmftSolve, DeterministicAcrossThreadCounts) {
  ModelConfig cfg;
  const TimeGrid grid = TimeGrid::covering(2.0, 0.05);
  auto o1 = fast_opts(300);
  o1.chunk = 16;
  auto o2 = o1;
  o2.threads = 3;
  const auto a = solve_dmft(cfg, grid, o1);
  const auto b = solve_dmft(cfg, grid, o2);
  EXPECT_EQ(a.kernels.C_w, b.kernels.C_w);
  EXPECT_EQ(a.kernels.R_f, b.kernels.R_f);
}

TEST(DmftSolve, LargeDeltaMatchesScalarOde) {
  ModelConfig cfg;
  cfg.delta = 1e4;
  cfg.alpha = 1.0;
  const auto res = solve_dmft(cfg, TimeGrid::covering(5.0, 0.02), fast_opts(100));
  const auto& k = res.kernels;
  double worst = 0.0;
  for (int i = 0; i < k.grid.size(); i += 10) {
    const double w1 = large_delta_ode(1.0, cfg.alpha, k.grid.t(i));
    worst = std::max(worst, std::abs(k.C_w(i, i) - 0.1 * (w1 - 1.0) * (w1 - 1.0)));
  }
  EXPECT_LE(worst, 0.01);
}

TEST(DmftSolve, GridRefinementIsFirstOrder) {
  ModelConfig cfg;
  cfg.delta = 1e4;
  cfg.alpha = 1.0;
  const double T = 3.0;
  auto err = [&](double h) {
    const auto res = solve_dmft(cfg, TimeGrid::covering(T, h), fast_opts(100));
    double worst = 0.0;
    for (int i = 0; i < res.kernels.grid.size(); ++i) {
      const double w1 = large_delta_ode(1.0, cfg.alpha, res.kernels.grid.t(i));
      worst = std::max(worst, std::abs(res.kernels.C_w(i, i) - 0.1 * (w1 - 1.0) * (w1 - 1.0)));
    }
    return worst;
  };
  // Forward Euler: halving h should roughly halve the error (second order would give 4).
  const double e1 = err(0.04), e2 = err(0.02);
  EXPECT_GT(e1 / e2, 1.6);
  EXPECT_LT(e1 / e2, 2.8);
}

TEST(DmftSolve, LazyFitThenSlowImprovement) {
  ModelConfig cfg;
  cfg.lambda = 0.5;
  cfg.alpha = std::exp(1.0);
  const double h = 0.02;
  const auto res = solve_dmft(cfg, TimeGrid::covering(6.0, h), fast_opts(200));
  const auto e = predict_errors(res.kernels);
  auto at = [&](const std::vector<double>& v, double t) {
    return v[static_cast<std::size_t>(std::llround(t / h))];
  };
  // Training error collapses early while the test error stays near its initial value.
  EXPECT_LT(at(e.e_train, 1.0), 0.02 * e.e_train.front());
  EXPECT_NEAR(at(e.e_test, 1.0), e.e_test.front(), 0.05 * e.e_test.front());
  EXPECT_LT(at(e.e_test, 6.0), 0.9 * at(e.e_test, 1.0));
}

TEST(DmftSolve, OverdeterminedTrainLimit) {
  ModelConfig cfg;
  cfg.delta = 2.0;
  const auto res = solve_dmft(cfg, TimeGrid::covering(30.0, 0.2), fast_opts(4000));
  const auto e = predict_errors(res.kernels);
  const double limit = cfg.sigma2 * (cfg.delta - 1.0) / cfg.delta;
  EXPECT_NEAR(e.e_train.back(), limit, 0.05 * limit);
  const auto fp = fixed_point_errors(solve_fixed_point(cfg));
  EXPECT_NEAR(e.e_test.back(), fp.e_test, 0.05 * fp.e_test);
}

TEST(DmftSolve, NoiselessInterpolationTrainsToZero) {
  ModelConfig cfg;
  cfg.sigma2 = 0.0;
  const auto res = solve_dmft(cfg, TimeGrid::covering(20.0, 0.1), fast_opts(300));
  const auto e = predict_errors(res.kernels);
  EXPECT_LT(e.e_train.back(), 1e-3 * e.e_train.front());
}

TEST(DmftSolve, RejectsBadOptions) {
  auto o = fast_opts(0);
  EXPECT_THROW(solve_dmft(ModelConfig{}, TimeGrid{0.1, 3}, o), std::invalid_argument);
  EXPECT_THROW(TimeGrid::covering(0.01, 0.1), std::invalid_argument);
}
