#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dlnflow/errors.hpp"
#include "dlnflow/model.hpp"
#include "dlnflow/parallel.hpp"
#include "dlnflow/rng.hpp"

namespace dlnflow {

struct TimeGrid {
  double step = 0.05;
  int n_steps = 200;

  [[nodiscard]] int size() const { return n_steps + 1; }
  [[nodiscard]] double t(int i) const { return static_cast<double>(i) * step; }
  [[nodiscard]] double t_max() const { return t(n_steps); }

  static TimeGrid covering(double t_max, double step) {
    const auto n = static_cast<int>(std::llround(t_max / step));
    if (n < 1 || !(step > 0.0)) throw std::invalid_argument("time grid needs step > 0 and t_max >= step");
    return {step, n};
  }
};

struct Kernels {
  Mat C_w;
  Mat C_f;
  Mat R_w;  // strictly lower triangular
  Mat R_f;  // strictly lower triangular
  TimeGrid grid;
  double sigma2 = 0.0;
};

// Starting point of the outer iteration: w(t) = 0 on every path, no response.
inline Kernels initial_kernels(const ModelConfig& cfg, const TimeGrid& grid) {
  const int N = grid.size();
  Kernels k;
  k.grid = grid;
  k.sigma2 = cfg.sigma2;
  k.C_w = Mat::Constant(N, N, cfg.rho2());
  k.C_f = Mat::Constant(N, N, cfg.rho2() + cfg.sigma2);
  k.R_w = Mat::Zero(N, N);
  k.R_f = Mat::Zero(N, N);
  return k;
}

// Draws rows from N(0, cov) as L * zeta with fixed base normals zeta, so a new
// covariance re-colours the same randomness.
class GaussianPathSampler {
 public:
  GaussianPathSampler(Eigen::Index M, Eigen::Index N, std::uint64_t seed) : base_(M, N) {
    const CounterRng root(seed);
    for (Eigen::Index p = 0; p < M; ++p) {
      CounterRng rng = root.split(static_cast<std::uint64_t>(p));
      for (Eigen::Index i = 0; i < N; ++i) base_(p, i) = rng.normal();
    }
  }

  [[nodiscard]] const Mat& base() const { return base_; }

  // Lower factor of cov with the smallest jitter from {0, 1e-12, ..., 1e-8} * trace / N
  // that makes it positive definite. A zero matrix factors to zero.
  static Mat factor(const Mat& cov, double* jitter_used = nullptr) {
    const Eigen::Index N = cov.rows();
    const double scale = cov.trace() / static_cast<double>(N);
    if (jitter_used) *jitter_used = 0.0;
    if (scale == 0.0 && cov.cwiseAbs().maxCoeff() == 0.0) return Mat::Zero(N, N);
    const Mat sym = 0.5 * (cov + cov.transpose());
    for (double eps : {0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8}) {
      Mat a = sym;
      a.diagonal().array() += eps * scale;
      Eigen::LLT<Mat> llt(a);
      if (llt.info() == Eigen::Success) {
        Mat L = llt.matrixL();
        if (L.allFinite()) {
          if (jitter_used) *jitter_used = eps;
          return L;
        }
      }
    }
    throw std::runtime_error("covariance factorization failed at maximal jitter");
  }

  [[nodiscard]] Mat sample(const Mat& cov) const {
    if (cov.rows() != base_.cols()) throw std::invalid_argument("sampler: covariance size mismatch");
    const Mat L = factor(cov);
    return base_ * L.transpose();
  }

 private:
  Mat base_;
};

inline Mat sample_gaussian_paths(const Mat& cov, Eigen::Index M, std::uint64_t seed) {
  return GaussianPathSampler(M, cov.rows(), seed).sample(cov);
}

// Ground-truth values for M effective paths. Discrete atoms are assigned in
// proportion to their probabilities (largest remainder), Gaussian targets are sampled.
inline Vec stratified_targets(const TargetDist& target, Eigen::Index M, std::uint64_t seed) {
  Vec w(M);
  if (target.kind == TargetDist::Kind::gaussian) {
    CounterRng rng = CounterRng(seed).split(0x7a67);
    for (Eigen::Index p = 0; p < M; ++p) w(p) = target.sample(rng);
    return w;
  }
  const auto& atoms = target.atoms;
  std::vector<Eigen::Index> counts(atoms.size());
  std::vector<std::pair<double, std::size_t>> rema;
  Eigen::Index used = 0;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    const double exact = atoms[a].prob * static_cast<double>(M);
    counts[a] = static_cast<Eigen::Index>(std::floor(exact));
    used += counts[a];
    rema.emplace_back(exact - std::floor(exact), a);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto& x, auto& y) { return x.first > y.first; });
  for (std::size_t r = 0; used < M; ++r, ++used) ++counts[rema[r % rema.size()].second];
  Eigen::Index p = 0;
  for (std::size_t a = 0; a < atoms.size(); ++a)
    for (Eigen::Index c = 0; c < counts[a]; ++c) w(p++) = atoms[a].value;
  return w;
}

// One effective path on the grid. Writes w (length N) and, when J is given,
// the response matrix J(i, j) = dw(t_i) / dz(t_j) (strictly lower, row-major use).
// Returns g at the grid points in `g` when non-null.
inline void integrate_path(const Mat& R_f, const ModelConfig& cfg, const TimeGrid& grid,
                           const double* z, double w_star, double* w, Mat* J = nullptr,
                           double* g_out = nullptr) {
  const int N = grid.size();
  const double h = grid.step, lam = cfg.lambda, inv_delta = 1.0 / cfg.delta;
  const double a4 = std::pow(cfg.alpha, 4);
  std::vector<double> e(static_cast<std::size_t>(N));
  Eigen::RowVectorXd mem_row;
  if (J) {
    J->setZero(N, N);
    mem_row.resize(N);
  }
  w[0] = 0.0;
  for (int i = 0; i < N; ++i) {
    e[static_cast<std::size_t>(i)] = w[i] - w_star;
    double mem = 0.0;
    for (int j = 0; j < i; ++j) mem += R_f(i, j) * e[static_cast<std::size_t>(j)];
    const double g = z[i] * inv_delta + e[static_cast<std::size_t>(i)] - h * mem;
    if (g_out) g_out[i] = g;
    if (i == N - 1) break;
    const double S = std::sqrt(w[i] * w[i] + a4 * std::exp(-2.0 * lam * grid.t(i)));
    w[i + 1] = w[i] + h * (-S * g - lam * w[i]);
    if (!std::isfinite(w[i + 1]))
      throw DivergenceError("non-finite effective path", grid.t(i + 1));
    if (J) {
      // d g_i / d z_j = [i == j]/delta + J(i, j) - h sum_{k<i} R_f(i, k) J(k, j), for j < i.
      if (i > 0) {
        mem_row.head(i).noalias() = R_f.row(i).head(i) * J->topLeftCorner(i, i);
        const double keep = 1.0 - h * lam - h * (w[i] / S) * g;
        J->row(i + 1).head(i) = keep * J->row(i).head(i) -
                                h * S * (J->row(i).head(i) - h * mem_row.head(i));
      }
      (*J)(i + 1, i) = -h * S * inv_delta;
    }
  }
}

struct PathEnsemble {
  Eigen::Index M = 0;
  Mat w_paths;      // M x N
  Vec w_star;       // M
  Mat g_paths;      // M x N
  Mat jacobian_sum; // N x N, sum over paths of dw(t_i)/dz(t_j)
  std::vector<Mat> jacobians;  // per-path, only when requested
  TimeGrid grid;
};

struct IntegrateOptions {
  unsigned threads = 0;  // 0 = hardware concurrency
  Eigen::Index chunk = 64;
  bool keep_jacobians = false;
};

inline PathEnsemble integrate_effective_paths(const Kernels& k, const ModelConfig& cfg,
                                              const Mat& z, const Vec& w_star,
                                              const IntegrateOptions& opt = {}) {
  if (cfg.truncated_path())
    throw std::invalid_argument("effective-path integration covers the two-layer model only");
  const int N = k.grid.size();
  const Eigen::Index M = z.rows();
  if (z.cols() != N || w_star.size() != M)
    throw std::invalid_argument("integrate_effective_paths: shape mismatch");
  PathEnsemble ens;
  ens.M = M;
  ens.grid = k.grid;
  ens.w_star = w_star;
  ens.w_paths.resize(M, N);
  ens.g_paths.resize(M, N);
  if (opt.keep_jacobians) ens.jacobians.resize(static_cast<std::size_t>(M));

  const Eigen::Index chunk = std::max<Eigen::Index>(1, opt.chunk);
  const auto n_chunks = static_cast<std::size_t>((M + chunk - 1) / chunk);
  std::vector<Mat> partial(n_chunks);
  // Row-major copies keep each path's data contiguous.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat zr = z;
  RowMat wr(M, N), gr(M, N);
  parallel_for(n_chunks, opt.threads ? opt.threads : default_threads(), [&](std::size_t c) {
    const Eigen::Index p0 = static_cast<Eigen::Index>(c) * chunk;
    const Eigen::Index p1 = std::min(M, p0 + chunk);
    Mat acc = Mat::Zero(N, N);
    Mat J;
    for (Eigen::Index p = p0; p < p1; ++p) {
      integrate_path(k.R_f, cfg, k.grid, zr.row(p).data(), w_star(p), wr.row(p).data(), &J,
                     gr.row(p).data());
      acc += J;
      if (opt.keep_jacobians) ens.jacobians[static_cast<std::size_t>(p)] = J;
    }
    partial[c] = std::move(acc);
  });
  ens.jacobian_sum = Mat::Zero(N, N);
  for (const auto& a : partial) ens.jacobian_sum += a;
  ens.w_paths = wr;
  ens.g_paths = gr;
  return ens;
}

struct CorrelationResponse {
  Mat C;
  Mat R;
};

inline CorrelationResponse estimate_cw_rw(const PathEnsemble& ens) {
  const Mat E = ens.w_paths.colwise() - ens.w_star;
  const double M = static_cast<double>(ens.M);
  CorrelationResponse out;
  out.C = E.transpose() * E / M;
  out.C = 0.5 * (out.C + out.C.transpose());
  out.R = -ens.jacobian_sum / (M * ens.grid.step);
  out.R.triangularView<Eigen::Upper>().setZero();
  return out;
}

// Discrete Volterra relations: with A = (I + h R_w)^{-1},
// R_f = A R_w and C_f = A (C_w + sigma^2) A^T.
inline CorrelationResponse solve_cf_rf(const Mat& C_w, const Mat& R_w, double sigma2,
                                       const TimeGrid& grid) {
  const Eigen::Index N = R_w.rows();
  const double h = grid.step;
  Mat Rw = R_w;
  Rw.triangularView<Eigen::Upper>().setZero();
  Mat B = Mat::Identity(N, N) + h * Rw;
  const auto T = B.triangularView<Eigen::UnitLower>();
  CorrelationResponse out;
  out.R = T.solve(Rw);
  out.R.triangularView<Eigen::Upper>().setZero();
  Mat Cs = C_w.array() + sigma2;
  Mat Y = T.solve(Cs);                       // A (C_w + s2)
  Mat Cf = T.solve(Mat(Y.transpose()));      // A (C_w + s2) A^T
  out.C = 0.5 * (Cf + Cf.transpose());
  return out;
}

struct DmftOptions {
  Eigen::Index M = 2000;
  double damping = 0.5;
  double tol = 1e-3;
  int max_outer = 100;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  Eigen::Index chunk = 64;
};

struct DmftDiagnostics {
  int outer_iterations = 0;
  std::vector<double> residual_history;
  bool converged = false;
  double max_jitter = 0.0;
};

struct DmftResult {
  Kernels kernels;
  DmftDiagnostics diagnostics;
};

namespace detail {

inline double rel_sup_change(const Mat& fresh, const Mat& old) {
  const double num = (fresh - old).cwiseAbs().maxCoeff();
  const double den = fresh.cwiseAbs().maxCoeff();
  if (num == 0.0) return 0.0;
  return den == 0.0 ? HUGE_VAL : num / den;
}

}  // namespace detail

// One pass: sample z from the current C_f, integrate, re-estimate all kernels.
inline Kernels dmft_inner_pass(const Kernels& k, const ModelConfig& cfg,
                               const GaussianPathSampler& sampler, const Vec& w_star,
                               const IntegrateOptions& iopt, double* jitter = nullptr) {
  double jit = 0.0;
  const Mat L = GaussianPathSampler::factor(cfg.delta * k.C_f, &jit);
  if (jitter) *jitter = jit;
  const Mat z = sampler.base() * L.transpose();
  const auto ens = integrate_effective_paths(k, cfg, z, w_star, iopt);
  const auto cr = estimate_cw_rw(ens);
  const auto fr = solve_cf_rf(cr.C, cr.R, cfg.sigma2, k.grid);
  Kernels out;
  out.grid = k.grid;
  out.sigma2 = cfg.sigma2;
  out.C_w = cr.C;
  out.R_w = cr.R;
  out.C_f = fr.C;
  out.R_f = fr.R;
  return out;
}

inline DmftResult solve_dmft(const ModelConfig& cfg, const TimeGrid& grid,
                             const DmftOptions& opt = {}) {
  cfg.validate();
  if (opt.M < 1) throw std::invalid_argument("M must be >= 1");
  if (!(opt.damping > 0.0 && opt.damping <= 1.0))
    throw std::invalid_argument("damping must lie in (0, 1]");
  const GaussianPathSampler sampler(opt.M, grid.size(), CounterRng(opt.seed).split(11).bits_at(0));
  const Vec w_star = stratified_targets(cfg.target, opt.M, opt.seed);
  const IntegrateOptions iopt{opt.threads, opt.chunk, false};

  DmftResult res;
  Kernels k = initial_kernels(cfg, grid);
  const double d = opt.damping;
  for (int it = 1; it <= opt.max_outer; ++it) {
    double jit = 0.0;
    const Kernels fresh = dmft_inner_pass(k, cfg, sampler, w_star, iopt, &jit);
    res.diagnostics.max_jitter = std::max(res.diagnostics.max_jitter, jit);
    Kernels next = k;
    next.C_w = d * fresh.C_w + (1.0 - d) * k.C_w;
    next.C_f = d * fresh.C_f + (1.0 - d) * k.C_f;
    next.R_w = d * fresh.R_w + (1.0 - d) * k.R_w;
    next.R_f = d * fresh.R_f + (1.0 - d) * k.R_f;
    const double r = std::max({detail::rel_sup_change(next.C_w, k.C_w),
                               detail::rel_sup_change(next.C_f, k.C_f),
                               detail::rel_sup_change(next.R_w, k.R_w),
                               detail::rel_sup_change(next.R_f, k.R_f)});
    k = std::move(next);
    res.diagnostics.residual_history.push_back(r);
    res.diagnostics.outer_iterations = it;
    if (r <= opt.tol) {
      res.diagnostics.converged = true;
      break;
    }
  }
  res.kernels = std::move(k);
  return res;
}

struct ErrorCurves {
  std::vector<double> times;
  std::vector<double> e_train;
  std::vector<double> e_test;
};

inline ErrorCurves predict_errors(const Kernels& k) {
  ErrorCurves out;
  for (int i = 0; i < k.grid.size(); ++i) {
    out.times.push_back(k.grid.t(i));
    out.e_train.push_back(k.C_f(i, i));
    out.e_test.push_back(k.C_w(i, i) + k.sigma2);
  }
  return out;
}

// Smallest eigenvalue relative floor check: lambda_min >= -tol_rel * trace / N.
inline bool is_psd(const Mat& C, double tol_rel = 1e-8) {
  const Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (C + C.transpose()), Eigen::EigenvaluesOnly);
  const double floor = -tol_rel * std::abs(C.trace()) / static_cast<double>(C.rows());
  return es.eigenvalues().minCoeff() >= floor;
}

inline bool is_causal(const Mat& R) {
  for (Eigen::Index i = 0; i < R.rows(); ++i)
    for (Eigen::Index j = i; j < R.cols(); ++j)
      if (R(i, j) != 0.0) return false;
  return true;
}

}  // namespace dlnflow
