#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dlnflow/model.hpp"
#include "dlnflow/quadrature.hpp"

namespace dlnflow {

inline double soft_threshold(double x, double tau) {
  if (x > tau) return x - tau;
  if (x < -tau) return x + tau;
  return 0.0;
}

// Solves x + b asinh(x / a) = y. The left side is odd and strictly increasing,
// and |x| <= |y|, so Newton is safeguarded by the bracket between 0 and y.
inline double invert_sinh_link(double y, double a, double b) {
  if (!(a > 0.0)) throw std::invalid_argument("invert_sinh_link: a must be > 0");
  if (y == 0.0 || b == 0.0) return y;
  const bool neg = y < 0.0;
  const double target = std::abs(y);
  double lo = 0.0, hi = target;
  double x = target / (1.0 + b / a);
  const double tol = 0.25e-12 * (1.0 + target);
  for (int it = 0; it < 200; ++it) {
    const double r = x + b * std::asinh(x / a) - target;
    if (std::abs(r) <= tol) break;
    if (r > 0.0) hi = x;
    else lo = x;
    const double slope = 1.0 + b / std::hypot(x, a);
    double next = x - r / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x || hi - lo <= std::numeric_limits<double>::epsilon() * hi) break;
    x = next;
  }
  return neg ? -x : x;
}

inline double sinh_link_forward(double x, double a, double b) { return x + b * std::asinh(x / a); }

// alpha^2 J(x / alpha^2) with J(x) = x asinh(x) - sqrt(1 + x^2) + 1.
inline double penalty_J(double x, double alpha) {
  const double a2 = alpha * alpha;
  const double s = x / a2;
  return a2 * (s * std::asinh(s) - s * s / (std::sqrt(1.0 + s * s) + 1.0));
}

enum class FixedPointCase { regularized, ridgeless, interpolating };

inline const char* to_string(FixedPointCase c) {
  switch (c) {
    case FixedPointCase::regularized: return "regularized";
    case FixedPointCase::ridgeless: return "ridgeless";
    case FixedPointCase::interpolating: return "interpolating";
  }
  return "?";
}

inline FixedPointCase parse_case(const std::string& s) {
  if (s == "regularized" || s == "i") return FixedPointCase::regularized;
  if (s == "ridgeless" || s == "ii") return FixedPointCase::ridgeless;
  if (s == "interpolating" || s == "iii") return FixedPointCase::interpolating;
  throw std::invalid_argument("unknown fixed-point case: " + s);
}

inline FixedPointCase infer_case(const ModelConfig& cfg) {
  if (cfg.lambda > 0.0) return FixedPointCase::regularized;
  if (cfg.delta > 1.0) return FixedPointCase::ridgeless;
  if (cfg.delta < 1.0) return FixedPointCase::interpolating;
  throw std::invalid_argument("lambda = 0 with delta = 1 has no finite fixed point");
}

struct FixedPoint {
  FixedPointCase kind = FixedPointCase::regularized;
  double C_w = 0.0;
  double chi_or_Rw = 0.0;     // chi_w (regularized, ridgeless) or limiting R_w (interpolating)
  double C_f_or_tilde = 0.0;  // C_f, or the integrated C_f for the interpolating case
  double noise_var = 0.0;     // variance of the Gaussian perturbation of w* inside the law
  double threshold = 0.0;     // (1 + chi_w) lambda, regularized case only
  double alpha = 1.0;
  double delta = 1.0;
  double sigma2 = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = true;

  // Limiting coordinate value for a ground-truth value and a standard normal draw.
  [[nodiscard]] double law(double w_star, double g) const {
    const double x = w_star - std::sqrt(noise_var) * g;
    switch (kind) {
      case FixedPointCase::regularized: return soft_threshold(x, threshold);
      case FixedPointCase::ridgeless: return x;
      case FixedPointCase::interpolating: return invert_sinh_link(x, alpha * alpha, chi_or_Rw);
    }
    return x;
  }
};

struct FixedPointOptions {
  double damping = 0.5;
  double tol = 1e-12;
  int max_iter = 100000;
  int quad_nodes = 61;
};

namespace detail {

// E[(sG - c)^2 ; G > b] for standard normal G.
inline double upper_sq_moment(double s, double c, double b) {
  const double q = norm_sf(b), p = norm_pdf(b);
  return s * s * (b * p + q) - 2.0 * s * c * p + c * c * q;
}

struct StMoments {
  double mse;     // E[(ST(a + sG; tau) - a)^2]
  double active;  // P(|a + sG| > tau)
};

// Closed-form soft-threshold moments for one atom, split at the kinks.
inline StMoments st_moments(double a, double s, double tau) {
  if (s == 0.0) {
    const double st = soft_threshold(a, tau);
    return {(st - a) * (st - a), std::abs(a) > tau ? 1.0 : 0.0};
  }
  const double b1 = (tau - a) / s;
  const double b2 = (-tau - a) / s;
  const double up = upper_sq_moment(s, tau, b1);
  const double down = upper_sq_moment(s, tau, -b2);
  const double mid = std::max(0.0, norm_cdf(b1) - norm_cdf(b2));
  return {up + down + a * a * mid, norm_sf(b1) + norm_cdf(b2)};
}

inline double rel_change(double a_new, double a_old, double floor) {
  return std::abs(a_new - a_old) / std::max(std::abs(a_new), floor);
}

}  // namespace detail

inline FixedPoint solve_case_ridgeless(const ModelConfig& cfg) {
  if (cfg.lambda != 0.0) throw std::invalid_argument("ridgeless case needs lambda = 0");
  if (!(cfg.delta > 1.0)) throw std::invalid_argument("ridgeless case needs delta > 1");
  FixedPoint fp;
  fp.kind = FixedPointCase::ridgeless;
  fp.delta = cfg.delta;
  fp.alpha = cfg.alpha;
  fp.sigma2 = cfg.sigma2;
  fp.C_w = cfg.sigma2 / (cfg.delta - 1.0);
  fp.chi_or_Rw = 1.0 / (cfg.delta - 1.0);
  fp.C_f_or_tilde = cfg.sigma2 * (cfg.delta - 1.0) / cfg.delta;
  // z ~ N(0, delta C_f) enters as z / (delta - 1).
  fp.noise_var = cfg.delta * fp.C_f_or_tilde / ((cfg.delta - 1.0) * (cfg.delta - 1.0));
  return fp;
}

inline FixedPoint solve_case_regularized(const ModelConfig& cfg, const FixedPointOptions& opt = {}) {
  if (!(cfg.lambda > 0.0)) throw std::invalid_argument("regularized case needs lambda > 0");
  cfg.validate();
  const GaussHermite gh(opt.quad_nodes);
  const auto atoms = target_atoms(cfg.target, gh);
  const double delta = cfg.delta, lam = cfg.lambda;
  const double rho2 = cfg.rho2();

  auto moments = [&](double C_f, double chi) {
    const double s = (1.0 + chi) * std::sqrt(C_f / delta);
    const double tau = (1.0 + chi) * lam;
    double mse = 0.0, act = 0.0;
    for (const auto& a : atoms) {
      const auto m = detail::st_moments(a.value, s, tau);
      mse += a.prob * m.mse;
      act += a.prob * m.active;
    }
    return std::pair{mse, act};
  };

  double C_f = rho2 + cfg.sigma2, chi = 0.0, C_w = rho2;
  FixedPoint fp;
  fp.kind = FixedPointCase::regularized;
  fp.converged = false;
  const double floor = 1e-14 * (rho2 + cfg.sigma2 + 1e-300);
  for (int it = 1; it <= opt.max_iter; ++it) {
    const auto [mse, act] = moments(C_f, chi);
    const double chi_fresh = (1.0 + chi) * act / delta;
    const double C_f_fresh = (mse + cfg.sigma2) / ((1.0 + chi_fresh) * (1.0 + chi_fresh));
    const double chi_new = opt.damping * chi_fresh + (1.0 - opt.damping) * chi;
    const double C_f_new = opt.damping * C_f_fresh + (1.0 - opt.damping) * C_f;
    const double res = std::max({detail::rel_change(chi_new, chi, 1e-14),
                                 detail::rel_change(C_f_new, C_f, floor),
                                 detail::rel_change(mse, C_w, floor)});
    chi = chi_new;
    C_f = C_f_new;
    C_w = mse;
    fp.iterations = it;
    fp.residual = res;
    if (res <= opt.tol) {
      fp.converged = true;
      break;
    }
  }
  // Final consistent triple at the converged (C_f, chi).
  const auto [mse, act] = moments(C_f, chi);
  (void)act;
  fp.C_w = mse;
  fp.chi_or_Rw = chi;
  fp.C_f_or_tilde = (mse + cfg.sigma2) / ((1.0 + chi) * (1.0 + chi));
  fp.noise_var = (1.0 + chi) * (1.0 + chi) * C_f / delta;
  fp.threshold = (1.0 + chi) * lam;
  fp.alpha = cfg.alpha;
  fp.delta = delta;
  fp.sigma2 = cfg.sigma2;
  return fp;
}

namespace detail {

// (1/delta) E[1 / (1 + R / sqrt(w^2 + alpha^4))] - 1 with w from the case (iii) law.
inline double interp_response_gap(const std::vector<Atom>& atoms, const GaussHermite& gh,
                                  double s, double a2, double R, double delta) {
  double acc = 0.0;
  for (const auto& a : atoms) {
    double inner = 0.0;
    for (int k = 0; k < gh.size(); ++k) {
      const double w = invert_sinh_link(a.value - s * gh.nodes[k], a2, R);
      inner += gh.weights[k] / (1.0 + R / std::hypot(w, a2));
    }
    acc += a.prob * inner;
  }
  return acc / delta - 1.0;
}

inline double interp_mse(const std::vector<Atom>& atoms, const GaussHermite& gh, double s,
                         double a2, double R) {
  double acc = 0.0;
  for (const auto& a : atoms) {
    double inner = 0.0;
    for (int k = 0; k < gh.size(); ++k) {
      const double w = invert_sinh_link(a.value - s * gh.nodes[k], a2, R);
      inner += gh.weights[k] * (w - a.value) * (w - a.value);
    }
    acc += a.prob * inner;
  }
  return acc;
}

// Root of the decreasing map R -> interp_response_gap on (0, inf).
inline double solve_interp_response(const std::vector<Atom>& atoms, const GaussHermite& gh,
                                    double s, double a2, double delta) {
  double lo = 0.0, hi = std::max(1.0, a2 * (1.0 / delta - 1.0));
  while (interp_response_gap(atoms, gh, s, a2, hi, delta) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw std::runtime_error("interpolating case: response bracket failed");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (interp_response_gap(atoms, gh, s, a2, mid, delta) > 0.0) lo = mid;
    else hi = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline FixedPoint solve_case_interpolating(const ModelConfig& cfg,
                                           const FixedPointOptions& opt = {}) {
  if (cfg.lambda != 0.0) throw std::invalid_argument("interpolating case needs lambda = 0");
  if (!(cfg.delta < 1.0)) throw std::invalid_argument("interpolating case needs delta < 1");
  cfg.validate();
  const double delta = cfg.delta, a2 = cfg.alpha * cfg.alpha;
  FixedPoint fp;
  fp.kind = FixedPointCase::interpolating;
  fp.alpha = cfg.alpha;
  fp.delta = delta;
  fp.sigma2 = cfg.sigma2;
  if (cfg.sigma2 == 0.0 && cfg.target.is_zero()) {
    fp.chi_or_Rw = a2 * (1.0 / delta - 1.0);
    return fp;
  }
  const GaussHermite gh(opt.quad_nodes);
  const auto atoms = target_atoms(cfg.target, gh);
  const double rho2 = cfg.rho2();
  const double floor = 1e-14 * (rho2 + cfg.sigma2);
  double C_w = rho2, R = 0.0;
  fp.converged = false;
  for (int it = 1; it <= opt.max_iter; ++it) {
    const double s = std::sqrt((C_w + cfg.sigma2) / delta);
    R = detail::solve_interp_response(atoms, gh, s, a2, delta);
    const double fresh = detail::interp_mse(atoms, gh, s, a2, R);
    const double next = opt.damping * fresh + (1.0 - opt.damping) * C_w;
    fp.residual = detail::rel_change(fresh, C_w, floor);
    fp.iterations = it;
    C_w = next;
    if (fp.residual <= opt.tol) {
      fp.converged = true;
      break;
    }
  }
  const double s2 = (C_w + cfg.sigma2) / delta;
  R = detail::solve_interp_response(atoms, gh, std::sqrt(s2), a2, delta);
  fp.C_w = detail::interp_mse(atoms, gh, std::sqrt(s2), a2, R);
  fp.chi_or_Rw = R;
  fp.C_f_or_tilde = (fp.C_w + cfg.sigma2) / (R * R);
  fp.noise_var = s2;
  return fp;
}

inline FixedPoint solve_fixed_point(const ModelConfig& cfg, const FixedPointOptions& opt = {}) {
  switch (infer_case(cfg)) {
    case FixedPointCase::regularized: return solve_case_regularized(cfg, opt);
    case FixedPointCase::ridgeless: return solve_case_ridgeless(cfg);
    case FixedPointCase::interpolating: return solve_case_interpolating(cfg, opt);
  }
  throw std::logic_error("unreachable");
}

struct ErrorPair {
  double e_train;
  double e_test;
};

inline ErrorPair fixed_point_errors(const FixedPoint& fp) {
  const double e_test = fp.C_w + fp.sigma2;
  if (fp.kind == FixedPointCase::interpolating) return {0.0, e_test};
  return {fp.C_f_or_tilde, e_test};
}

}  // namespace dlnflow
