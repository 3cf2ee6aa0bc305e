#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlnflow/errors.hpp"
#include "dlnflow/fixedpoint.hpp"
#include "dlnflow/model.hpp"
#include "dlnflow/quadrature.hpp"

namespace dlnflow {

struct Penalty {
  enum class Kind { l1, none, sinh_link };
  Kind kind = Kind::l1;
  double alpha = 1.0;  // sinh_link only

  static Penalty l1() { return {Kind::l1, 1.0}; }
  static Penalty none() { return {Kind::none, 1.0}; }
  static Penalty sinh_link(double alpha) { return {Kind::sinh_link, alpha}; }
};

inline Penalty parse_penalty(const std::string& s, double alpha) {
  if (s == "l1") return Penalty::l1();
  if (s == "none") return Penalty::none();
  if (s == "sinh" || s == "sinh_link") return Penalty::sinh_link(alpha);
  throw std::invalid_argument("unknown penalty: " + s);
}

// argmin_x 0.5 (x - u)^2 + t J(x)
inline double prox(const Penalty& pen, double u, double t) {
  switch (pen.kind) {
    case Penalty::Kind::l1: return soft_threshold(u, t);
    case Penalty::Kind::none: return u;
    case Penalty::Kind::sinh_link:
      return invert_sinh_link(u, pen.alpha * pen.alpha, t);
  }
  return u;
}

inline double prox_deriv(const Penalty& pen, double u, double t) {
  switch (pen.kind) {
    case Penalty::Kind::l1: return std::abs(u) > t ? 1.0 : 0.0;
    case Penalty::Kind::none: return 1.0;
    case Penalty::Kind::sinh_link: {
      const double x = prox(pen, u, t);
      return 1.0 / (1.0 + t / std::hypot(x, pen.alpha * pen.alpha));
    }
  }
  return 1.0;
}

struct AmpState {
  Vec w_hat;
  Vec r_hat;
  int k = 0;
  double b_k = 0.0;
  double t_k = 0.0;
  double sigma_k = 0.0;
};

struct AmpIterate {
  int k;
  double mse;      // ||w_hat^k - w*||^2 / d
  double b_k;
  double t_k;
  double sigma_k;  // empirical effective noise std of the input that produced w_hat^k
};

struct AmpOptions {
  int iters = 100;
  std::optional<double> b0;  // default 1/delta
  bool keep_states = false;
  double divergence_limit = 1e8;
};

struct AmpRun {
  std::vector<AmpIterate> trace;
  std::vector<AmpState> states;
  AmpState final_state;
};

inline AmpRun run_amp(const Dataset& ds, const Penalty& pen, double lambda,
                      const AmpOptions& opt = {}) {
  if (opt.iters < 0) throw std::invalid_argument("iters must be >= 0");
  const double delta = ds.delta();
  const auto d = static_cast<double>(ds.d());
  const auto n = static_cast<double>(ds.n());
  const double b0 = opt.b0.value_or(1.0 / delta);

  AmpRun run;
  AmpState s;
  s.w_hat = Vec::Zero(ds.d());
  s.r_hat = Vec::Zero(ds.n());
  s.b_k = b0;
  s.t_k = 0.0;
  auto mse = [&](const Vec& w) { return (w - ds.w_star).squaredNorm() / d; };
  run.trace.push_back({0, mse(s.w_hat), s.b_k, s.t_k, 0.0});
  if (opt.keep_states) run.states.push_back(s);

  double t_next = lambda * (1.0 + b0);
  for (int k = 0; k < opt.iters; ++k) {
    const Vec r = ds.y - ds.X * s.w_hat + s.b_k * s.r_hat;
    const Vec u = s.w_hat + ds.X.transpose() * r / delta;
    Vec w(ds.d());
    double slope = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w(i) = prox(pen, u(i), t_next);
      slope += prox_deriv(pen, u(i), t_next);
    }
    const double wmax = w.cwiseAbs().maxCoeff();
    if (!std::isfinite(wmax) || wmax > opt.divergence_limit)
      throw DivergenceError("AMP iterate diverged", static_cast<double>(k + 1));
    AmpState next;
    next.w_hat = std::move(w);
    next.r_hat = r;
    next.k = k + 1;
    next.t_k = t_next;
    next.b_k = slope / d / delta;
    next.sigma_k = std::sqrt(r.squaredNorm() / (n * delta));
    t_next = lambda + next.b_k * next.t_k;
    s = std::move(next);
    run.trace.push_back({s.k, mse(s.w_hat), s.b_k, s.t_k, s.sigma_k});
    if (opt.keep_states) run.states.push_back(s);
  }
  run.final_state = std::move(s);
  return run;
}

struct SeStep {
  int k;
  double sigma2;  // sigma_k^2
  double b;       // b_k
  double t;       // t_k
  double mse;     // E[(W* - eta(W* + sigma_k G; t_k))^2]
};

namespace detail {

struct ProxMoments {
  double mse;    // E[(W - eta(W + s G; t))^2]
  double slope;  // E[eta'(W + s G; t)]
};

inline ProxMoments prox_moments(const TargetDist& target, const GaussHermite& gh,
                                const Penalty& pen, double s, double t) {
  const auto atoms = target_atoms(target, gh);
  if (pen.kind == Penalty::Kind::l1) {
    double mse = 0.0, act = 0.0;
    for (const auto& a : atoms) {
      const auto m = st_moments(a.value, s, t);
      mse += a.prob * m.mse;
      act += a.prob * m.active;
    }
    return {mse, act};
  }
  if (pen.kind == Penalty::Kind::none) return {s * s, 1.0};
  double mse = 0.0, slope = 0.0;
  for (const auto& a : atoms) {
    double m = 0.0, sl = 0.0;
    for (int k = 0; k < gh.size(); ++k) {
      const double u = a.value + s * gh.nodes[k];
      const double x = prox(pen, u, t);
      m += gh.weights[k] * (x - a.value) * (x - a.value);
      sl += gh.weights[k] / (1.0 + t / std::hypot(x, pen.alpha * pen.alpha));
    }
    mse += a.prob * m;
    slope += a.prob * sl;
  }
  return {mse, slope};
}

}  // namespace detail

inline std::vector<SeStep> run_state_evolution(const ModelConfig& cfg, const Penalty& pen,
                                               double lambda, int iters, const GaussHermite& gh,
                                               std::optional<double> b0 = std::nullopt) {
  const double delta = cfg.delta;
  std::vector<SeStep> out;
  double sigma2 = (cfg.sigma2 + cfg.rho2()) / delta;
  double t = lambda * (1.0 + b0.value_or(1.0 / delta));
  for (int k = 1; k <= iters; ++k) {
    const auto m = detail::prox_moments(cfg.target, gh, pen, std::sqrt(sigma2), t);
    const double b = m.slope / delta;
    out.push_back({k, sigma2, b, t, m.mse});
    sigma2 = (cfg.sigma2 + m.mse) / delta;
    t = lambda + b * t;
  }
  return out;
}

struct SeFixedPoint {
  double b = 0.0;
  double sigma2 = 0.0;
  double t = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = true;
};

struct SeOptions {
  double damping = 0.5;
  double tol = 1e-13;
  int max_iter = 100000;
};

namespace detail {

// Threshold t with t = lambda + b(sigma, t) t, i.e. 1 - lambda/t = b(sigma, t).
// The left side increases and b decreases in t, so bisection is safe.
inline double se_threshold(const ModelConfig& cfg, const Penalty& pen, double lambda,
                           const GaussHermite& gh, double s) {
  auto phi = [&](double t) {
    return 1.0 - lambda / t - prox_moments(cfg.target, gh, pen, s, t).slope / cfg.delta;
  };
  double lo = 0.0, hi = std::max({1.0, 2.0 * lambda, s});
  while (phi(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw std::runtime_error("state evolution: threshold bracket failed");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (phi(mid) < 0.0) lo = mid;
    else hi = mid;
    if (hi - lo <= 1e-16 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline SeFixedPoint se_fixed_point(const ModelConfig& cfg, const Penalty& pen, double lambda,
                                   const GaussHermite& gh, const SeOptions& opt = {}) {
  const double delta = cfg.delta;
  SeFixedPoint fp;
  if (pen.kind == Penalty::Kind::none) {
    if (!(delta > 1.0)) throw std::invalid_argument("identity prox needs delta > 1");
    fp.b = 1.0 / delta;
    fp.sigma2 = cfg.sigma2 / (delta - 1.0);
    fp.t = lambda * delta / (delta - 1.0);
    return fp;
  }
  double sigma2 = (cfg.sigma2 + cfg.rho2()) / delta;
  const double floor = 1e-15 * (cfg.sigma2 + cfg.rho2() + 1e-300);
  fp.converged = false;
  double t = 0.0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    t = detail::se_threshold(cfg, pen, lambda, gh, std::sqrt(sigma2));
    const auto m = detail::prox_moments(cfg.target, gh, pen, std::sqrt(sigma2), t);
    const double fresh = (cfg.sigma2 + m.mse) / delta;
    fp.residual = std::abs(fresh - sigma2) / std::max(fresh, floor);
    fp.iterations = it;
    sigma2 = opt.damping * fresh + (1.0 - opt.damping) * sigma2;
    if (fp.residual <= opt.tol) {
      fp.converged = true;
      break;
    }
  }
  fp.sigma2 = sigma2;
  fp.t = detail::se_threshold(cfg, pen, lambda, gh, std::sqrt(sigma2));
  fp.b = detail::prox_moments(cfg.target, gh, pen, std::sqrt(sigma2), fp.t).slope / delta;
  return fp;
}

// Expresses an SE fixed point in the order parameters of the corresponding
// gradient-flow fixed point.
inline FixedPoint map_se_to_dmft(const SeFixedPoint& se, FixedPointCase kind,
                                 const ModelConfig& cfg) {
  FixedPoint fp;
  fp.kind = kind;
  fp.alpha = cfg.alpha;
  fp.delta = cfg.delta;
  fp.sigma2 = cfg.sigma2;
  fp.iterations = se.iterations;
  fp.residual = se.residual;
  fp.converged = se.converged;
  fp.noise_var = se.sigma2;
  fp.C_w = cfg.delta * se.sigma2 - cfg.sigma2;
  if (kind == FixedPointCase::interpolating) {
    fp.chi_or_Rw = se.t;
    fp.C_f_or_tilde = se.t > 0.0 ? cfg.delta * se.sigma2 / (se.t * se.t) : 0.0;
    return fp;
  }
  if (se.b >= 1.0) throw std::domain_error("map_se_to_dmft: b >= 1 has no finite susceptibility");
  const double chi = se.b / (1.0 - se.b);
  fp.chi_or_Rw = chi;
  fp.C_f_or_tilde = cfg.delta * se.sigma2 / ((1.0 + chi) * (1.0 + chi));
  fp.threshold = (1.0 + chi) * cfg.lambda;
  return fp;
}

// Linear extrapolation to lambda = 0 through the two smallest lambdas.
inline double lambda_extrapolate(const std::vector<double>& lambdas,
                                 const std::vector<double>& values) {
  if (lambdas.size() != values.size() || lambdas.size() < 2)
    throw std::invalid_argument("lambda_extrapolate needs two or more matching points");
  std::size_t i1 = 0, i2 = 1;
  if (lambdas[i2] > lambdas[i1]) std::swap(i1, i2);
  for (std::size_t k = 2; k < lambdas.size(); ++k) {
    if (lambdas[k] < lambdas[i2]) {
      i1 = i2;
      i2 = k;
    } else if (lambdas[k] < lambdas[i1]) {
      i1 = k;
    }
  }
  const double l1 = lambdas[i1], l2 = lambdas[i2];
  return values[i2] - l2 * (values[i1] - values[i2]) / (l1 - l2);
}

}  // namespace dlnflow
