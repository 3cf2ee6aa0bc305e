#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dlnflow/fixedpoint.hpp"
#include "dlnflow/model.hpp"
#include "dlnflow/quadrature.hpp"

namespace dlnflow {

// Limiting spectrum of X^T X / delta for X with i.i.d. entries of variance 1/d.
struct MPLaw {
  double delta = 1.0;

  explicit MPLaw(double d) : delta(d) {
    if (!(d > 0.0)) throw std::invalid_argument("MP law needs delta > 0");
  }
  [[nodiscard]] double lambda_minus() const {
    const double s = 1.0 - 1.0 / std::sqrt(delta);
    return s * s;
  }
  [[nodiscard]] double lambda_plus() const {
    const double s = 1.0 + 1.0 / std::sqrt(delta);
    return s * s;
  }
  [[nodiscard]] double atom() const { return std::max(1.0 - delta, 0.0); }
  [[nodiscard]] double density(double x) const {
    const double lm = lambda_minus(), lp = lambda_plus();
    if (x <= lm || x >= lp) return 0.0;
    return delta * std::sqrt((lp - x) * (x - lm)) / (2.0 * std::numbers::pi * x);
  }
};

// Integral of f against the continuous part via Gauss-Chebyshev (second kind)
// after x = c + r y, plus the atom at zero. Node count doubles until two
// successive estimates agree to `tol`.
template <class F>
double mp_integrate(const MPLaw& law, F&& f, double tol = 1e-13) {
  const double lm = law.lambda_minus(), lp = law.lambda_plus();
  const double c = 0.5 * (lp + lm), r = 0.5 * (lp - lm);
  auto rule = [&](int n) {
    double s = 0.0;
    for (int k = 1; k <= n; ++k) {
      const double th = k * std::numbers::pi / (n + 1);
      const double y = std::cos(th), sn = std::sin(th);
      const double x = c + r * y;
      s += sn * sn * f(x) / x;
    }
    return s * std::numbers::pi / (n + 1) * law.delta * r * r / (2.0 * std::numbers::pi);
  };
  double prev = rule(32);
  double cur = prev;
  for (int n = 65; n <= (1 << 20); n = 2 * n + 1) {
    cur = rule(n);
    if (!std::isfinite(cur)) throw std::domain_error("mp_integrate: non-finite integrand");
    if (std::abs(cur - prev) <= tol * (1.0 + std::abs(cur))) break;
    prev = cur;
  }
  double atom_part = 0.0;
  if (law.atom() > 0.0) {
    const double f0 = f(0.0);
    if (!std::isfinite(f0)) throw std::domain_error("mp_integrate: integrand not finite at 0");
    atom_part = law.atom() * f0;
  }
  return cur + atom_part;
}

struct LazyCurves {
  std::vector<double> t_bar;
  std::vector<double> e_train;
  std::vector<double> e_test;
};

// Diagonal lazy-phase errors in rescaled time t_bar = alpha^2 t.
inline LazyCurves lazy_curves(double delta, double rho2, double sigma2,
                              const std::vector<double>& t_bar) {
  const MPLaw law(delta);
  LazyCurves out;
  out.t_bar = t_bar;
  for (double tb : t_bar) {
    const double a = mp_integrate(law, [&](double x) { return x * std::exp(-2.0 * x * tb); });
    const double b = mp_integrate(law, [&](double x) { return std::exp(-2.0 * x * tb); });
    const double c = mp_integrate(law, [&](double x) {
      if (x == 0.0) return 0.0;
      const double m = -std::expm1(-x * tb);
      return m * m / x;
    });
    out.e_train.push_back(rho2 * a + sigma2 / delta * b + (delta - 1.0) / delta * sigma2);
    out.e_test.push_back(rho2 * b + sigma2 / delta * c + sigma2);
  }
  return out;
}

enum class RateCase { ridgeless_delta_gt_1, interpolating_delta_lt_1 };

struct RateSolution {
  double u_star = 0.0;
  double A = 0.0;
  double gamma = 0.0;
  RateCase kind = RateCase::interpolating_delta_lt_1;
  double alpha = 1.0;
  double delta = 1.0;
};

// Nodes (x = sqrt(w^2 + alpha^4), weight) of the limiting law of w.
inline std::vector<std::pair<double, double>> rate_nodes(const FixedPoint& fp,
                                                         const TargetDist& target,
                                                         const GaussHermite& gh) {
  std::vector<std::pair<double, double>> out;
  const double a4 = std::pow(fp.alpha, 4);
  for (const auto& a : target_atoms(target, gh))
    for (int k = 0; k < gh.size(); ++k) {
      const double w = fp.law(a.value, gh.nodes[k]);
      out.emplace_back(std::sqrt(w * w + a4), a.prob * gh.weights[k]);
    }
  return out;
}

inline double rate_B(const std::vector<std::pair<double, double>>& nodes, double u) {
  double s = 0.0;
  for (const auto& [x, p] : nodes) {
    const double q = x / (u + x);
    s += p * q * q;
  }
  return s;
}

inline RateSolution solve_rate(const FixedPoint& fp, const ModelConfig& cfg,
                               const GaussHermite& gh = GaussHermite(61)) {
  if (cfg.lambda != 0.0) throw std::invalid_argument("solve_rate covers lambda = 0 only");
  if (fp.kind == FixedPointCase::regularized)
    throw std::invalid_argument("solve_rate needs a ridgeless or interpolating fixed point");
  const double delta = cfg.delta;
  if (delta == 1.0) throw std::invalid_argument("solve_rate: delta = 1 has no positive rate");
  const auto nodes = rate_nodes(fp, cfg.target, gh);
  double xmin = HUGE_VAL;
  for (const auto& nd : nodes) xmin = std::min(xmin, nd.first);

  double lo, hi;
  if (delta < 1.0) {
    lo = 0.0;
    hi = xmin;
    while (rate_B(nodes, hi) > delta) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e300) throw std::runtime_error("solve_rate: bracket failed");
    }
  } else {
    hi = 0.0;
    lo = -xmin;
    // B(u) -> infinity as u -> -xmin; move the lower end inward until it stays finite.
    double eps = 1e-300;
    for (double frac = 1e-12; frac < 1.0; frac *= 10.0) {
      eps = frac * xmin;
      if (std::isfinite(rate_B(nodes, lo + eps)) && rate_B(nodes, lo + eps) > delta) break;
    }
    lo += eps;
    if (!(rate_B(nodes, lo) > delta))
      throw std::runtime_error("solve_rate: expectation never reaches delta; range [" +
                               std::to_string(rate_B(nodes, hi)) + ", " +
                               std::to_string(rate_B(nodes, lo)) + "]");
  }
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (rate_B(nodes, mid) > delta) lo = mid;
    else hi = mid;
    if (std::abs(hi - lo) <= 1e-16 * std::max(std::abs(lo), std::abs(hi))) break;
  }
  RateSolution rs;
  rs.u_star = 0.5 * (lo + hi);
  double A = 0.0;
  for (const auto& [x, p] : nodes) A += p * x / (rs.u_star + x);
  rs.A = A;
  rs.gamma = rs.u_star * (A - delta) / delta;
  rs.kind = delta > 1.0 ? RateCase::ridgeless_delta_gt_1 : RateCase::interpolating_delta_lt_1;
  rs.alpha = cfg.alpha;
  rs.delta = delta;
  if (!(rs.u_star * (1.0 - delta) > 0.0))
    throw std::logic_error("solve_rate: u has the wrong sign for this delta");
  return rs;
}

// gamma * delta expressed as u^2 E[x / (u + x)^2].
inline double rate_identity_rhs(const RateSolution& rs, const FixedPoint& fp,
                                const ModelConfig& cfg, const GaussHermite& gh) {
  double s = 0.0;
  for (const auto& [x, p] : rate_nodes(fp, cfg.target, gh))
    s += p * x / ((rs.u_star + x) * (rs.u_star + x));
  return rs.u_star * rs.u_star * s;
}

struct PathRate {
  double w_star;
  double g_std;       // standard normal draw
  double observation; // w* - (1 + chi) z / delta
  double w;           // limiting coordinate
  double exponent;    // linearized decay exponent of this path
  double weight;
  bool active;
};

struct LambdaPosRateLaw {
  std::vector<PathRate> nodes;
  double min_exponent = 0.0;
};

inline LambdaPosRateLaw lambda_pos_rate_law(const FixedPoint& fp, const TargetDist& target,
                                            const GaussHermite& gh = GaussHermite(61)) {
  if (fp.kind != FixedPointCase::regularized)
    throw std::invalid_argument("lambda_pos_rate_law needs a regularized fixed point");
  const double chi = fp.chi_or_Rw;
  const double lam = fp.threshold / (1.0 + chi);
  LambdaPosRateLaw out;
  out.min_exponent = HUGE_VAL;
  const double s = std::sqrt(fp.noise_var);
  for (const auto& a : target_atoms(target, gh))
    for (int k = 0; k < gh.size(); ++k) {
      PathRate pr;
      pr.w_star = a.value;
      pr.g_std = gh.nodes[k];
      pr.observation = a.value - s * gh.nodes[k];
      pr.w = soft_threshold(pr.observation, fp.threshold);
      pr.weight = a.prob * gh.weights[k];
      pr.active = pr.w != 0.0;
      pr.exponent = pr.active ? std::abs(pr.w) / (1.0 + chi)
                              : std::max(0.0, lam - std::abs(pr.observation) / (1.0 + chi));
      out.min_exponent = std::min(out.min_exponent, pr.exponent);
      out.nodes.push_back(pr);
    }
  return out;
}

// Exponent for one observation value, used to probe the threshold limit directly.
inline double lambda_pos_exponent(double observation, double lambda, double chi) {
  const double tau = (1.0 + chi) * lambda;
  const double w = soft_threshold(observation, tau);
  if (w != 0.0) return std::abs(w) / (1.0 + chi);
  return std::max(0.0, lambda - std::abs(observation) / (1.0 + chi));
}

inline double grokking_time(double alpha, double lambda) {
  if (!(alpha > 1.0)) throw std::domain_error("grokking_time needs alpha > 1");
  if (!(lambda > 0.0)) throw std::domain_error("grokking_time needs lambda > 0");
  return 2.0 * std::log(alpha) / lambda;
}

inline double descent_time(double alpha, double Delta) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("descent_time needs 0 < alpha < 1");
  if (!(Delta > 0.0)) throw std::domain_error("descent_time needs Delta > 0");
  return 2.0 * std::log(1.0 / alpha) / Delta;
}

// Rescaled search-phase trajectory W(t) = w(t) / alpha^2.
inline double search_path(double w_eff, double lambda, double t) {
  if (w_eff == 0.0) return 0.0;
  const double a = std::abs(w_eff);
  const double sgn = w_eff > 0.0 ? 1.0 : -1.0;
  return 0.5 * sgn * (-std::expm1(-2.0 * a * t)) * std::exp((a - lambda) * t);
}

struct RateFit {
  double gamma_hat = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int points = 0;
  double t_lo = 0.0;
  double t_hi = 0.0;
};

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Least-squares slope of ln|e(t) - e_inf| over [t_lo, t_hi]; gamma_hat = -slope / 2.
// edge_power p fits ln|e - e_inf| + p ln t instead, removing a t^{-p} prefactor
// (p = 3/2 for a square-root spectral edge).
inline RateFit fit_rate(const std::vector<double>& times, const std::vector<double>& values,
                        double e_inf, double t_lo, double t_hi, double edge_power = 0.0) {
  if (times.size() != values.size()) throw std::invalid_argument("fit_rate: length mismatch");
  std::vector<double> xs, ys;
  int sign = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t_lo || times[i] > t_hi) continue;
    const double gap = values[i] - e_inf;
    const int s = gap > 0.0 ? 1 : (gap < 0.0 ? -1 : 0);
    if (s == 0 || (sign != 0 && s != sign))
      throw FitError("fit_rate: curve crosses e_inf inside the window");
    sign = s;
    if (edge_power != 0.0 && !(times[i] > 0.0))
      throw FitError("fit_rate: edge correction needs t > 0 in the window");
    xs.push_back(times[i]);
    ys.push_back(std::log(std::abs(gap)) + (edge_power != 0.0 ? edge_power * std::log(times[i]) : 0.0));
  }
  if (xs.size() < 5) throw FitError("fit_rate: fewer than 5 points in the window");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.gamma_hat = -0.5 * fit.slope;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.points = static_cast<int>(xs.size());
  fit.t_lo = xs.front();
  fit.t_hi = xs.back();
  return fit;
}

// Last time before |e - e_inf| first falls to `floor`; the usable horizon of a
// curve whose gap eventually hits round-off or a noise floor.
inline double usable_horizon(const std::vector<double>& times, const std::vector<double>& values,
                             double e_inf, double floor) {
  if (times.empty()) throw std::invalid_argument("usable_horizon: empty curve");
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(values[i] - e_inf) <= floor) return i > 0 ? times[i - 1] : times[0];
  return times.back();
}

// Default window [0.2 T, 0.8 T], with T cut back to the last time the gap still
// exceeds 10x the floor.
inline std::pair<double, double> default_fit_window(const std::vector<double>& times,
                                                    const std::vector<double>& values,
                                                    double e_inf, double noise_floor) {
  const double T = usable_horizon(times, values, e_inf, 10.0 * noise_floor);
  return {0.2 * T, 0.8 * T};
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("fit_line needs two or more matching points");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  return {sxy / sxx, my - sxy / sxx * mx};
}

// First time at or after `t_from` where the curve falls below (1 - drop) times its
// plateau, the plateau being the median over [plateau_lo, plateau_hi]. Linear
// interpolation between samples.
inline std::optional<double> detect_transition(const std::vector<double>& times,
                                               const std::vector<double>& values,
                                               double plateau_lo, double plateau_hi,
                                               double drop = 0.1, double t_from = 0.0) {
  std::vector<double> window;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= plateau_lo && times[i] <= plateau_hi) window.push_back(values[i]);
  if (window.empty()) throw std::invalid_argument("detect_transition: empty plateau window");
  std::sort(window.begin(), window.end());
  const std::size_t m = window.size();
  const double plateau = m % 2 ? window[m / 2] : 0.5 * (window[m / 2 - 1] + window[m / 2]);
  const double level = (1.0 - drop) * plateau;
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] < t_from) continue;
    if (values[i] < level) {
      if (values[i - 1] >= level && times[i - 1] >= t_from) {
        const double f = (values[i - 1] - level) / (values[i - 1] - values[i]);
        return times[i - 1] + f * (times[i] - times[i - 1]);
      }
      return times[i];
    }
  }
  return std::nullopt;
}

}  // namespace dlnflow
