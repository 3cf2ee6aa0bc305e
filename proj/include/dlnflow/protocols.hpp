#pragma once

// Cross-validation protocols shared by the CLI presets and the acceptance suite:
// seed-averaged simulations, curve comparison, rate fits, timescale collapses.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlnflow/amp.hpp"
#include "dlnflow/dmft.hpp"
#include "dlnflow/fixedpoint.hpp"
#include "dlnflow/gfsim.hpp"
#include "dlnflow/model.hpp"
#include "dlnflow/parallel.hpp"
#include "dlnflow/quadrature.hpp"
#include "dlnflow/rates.hpp"

namespace dlnflow {

struct CurveSet {
  std::vector<double> t;
  std::vector<double> e_train;
  std::vector<double> e_test;
  std::vector<double> se_train;  // standard error of the mean, 0 for single or exact curves
  std::vector<double> se_test;
  int runs = 1;
};

inline Eigen::Index samples_for(double delta, Eigen::Index d) {
  const auto n = static_cast<Eigen::Index>(std::llround(delta * static_cast<double>(d)));
  if (d < 1 || n < 1) throw std::invalid_argument("dimensions must be positive");
  return n;
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t first, int count) {
  if (count < 1) throw std::invalid_argument("need at least one seed");
  std::vector<std::uint64_t> s;
  for (int i = 0; i < count; ++i) s.push_back(first + static_cast<std::uint64_t>(i));
  return s;
}

inline CurveSet average_trajectories(const std::vector<Trajectory>& runs) {
  if (runs.empty()) throw std::invalid_argument("average_trajectories: no runs");
  const std::size_t T = runs.front().times.size();
  for (const auto& r : runs)
    if (r.times.size() != T) throw std::invalid_argument("average_trajectories: grid mismatch");
  const auto S = static_cast<double>(runs.size());
  CurveSet c;
  c.runs = static_cast<int>(runs.size());
  c.t = runs.front().times;
  c.e_train.assign(T, 0.0);
  c.e_test.assign(T, 0.0);
  c.se_train.assign(T, 0.0);
  c.se_test.assign(T, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    double a = 0.0, b = 0.0;
    for (const auto& r : runs) a += r.e_train[i], b += r.e_test[i];
    c.e_train[i] = a / S;
    c.e_test[i] = b / S;
    if (runs.size() > 1) {
      double va = 0.0, vb = 0.0;
      for (const auto& r : runs) {
        va += (r.e_train[i] - c.e_train[i]) * (r.e_train[i] - c.e_train[i]);
        vb += (r.e_test[i] - c.e_test[i]) * (r.e_test[i] - c.e_test[i]);
      }
      c.se_train[i] = std::sqrt(va / (S - 1.0) / S);
      c.se_test[i] = std::sqrt(vb / (S - 1.0) / S);
    }
  }
  return c;
}

using DatasetFactory = std::function<Dataset(std::uint64_t seed)>;

inline DatasetFactory synthetic_factory(const ModelConfig& cfg, Eigen::Index d, Design design) {
  const Eigen::Index n = samples_for(cfg.delta, d);
  return [cfg, n, d, design](std::uint64_t seed) { return sample_dataset(cfg, n, d, design, seed); };
}

inline std::vector<Trajectory> simulate_runs(const ModelConfig& cfg, const DatasetFactory& make,
                                             const std::vector<std::uint64_t>& seeds,
                                             const GfOptions& opt, unsigned threads = 0) {
  std::vector<Trajectory> runs(seeds.size());
  parallel_for(seeds.size(), threads ? threads : default_threads(),
               [&](std::size_t i) { runs[i] = run_gf(cfg, make(seeds[i]), opt); });
  return runs;
}

inline CurveSet simulate_curves(const ModelConfig& cfg, Eigen::Index d, Design design,
                                const std::vector<std::uint64_t>& seeds, const GfOptions& opt,
                                unsigned threads = 0) {
  return average_trajectories(simulate_runs(cfg, synthetic_factory(cfg, d, design), seeds, opt, threads));
}

inline CurveSet curves_from_kernels(const Kernels& k) {
  const auto e = predict_errors(k);
  CurveSet c;
  c.t = e.times;
  c.e_train = e.e_train;
  c.e_test = e.e_test;
  c.se_train.assign(c.t.size(), 0.0);
  c.se_test.assign(c.t.size(), 0.0);
  return c;
}

struct ToleranceSpec {
  double rel_peak = 0.05;  // band as a fraction of the larger curve peak
  double se_mult = 3.0;    // or this many combined standard errors, whichever is larger
  double abs_tol = 0.0;
  double time_tol = 1e-9;
};

struct ColumnDiff {
  std::string column;
  double max_diff = 0.0;
  double max_diff_t = 0.0;
  double worst_excess = -HUGE_VAL;  // max over t of diff - allowed
  double worst_t = 0.0;
  double band = 0.0;                // rel_peak * peak
  bool pass = true;
};

struct DiffReport {
  bool pass = true;
  std::size_t aligned = 0;
  std::vector<ColumnDiff> columns;
};

// Aligns the two grids on common times and checks |a - b| <= max(band, k SE) pointwise.
inline DiffReport compare_runs(const CurveSet& a, const CurveSet& b, const ToleranceSpec& tol = {}) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t j = 0;
  for (std::size_t i = 0; i < a.t.size(); ++i) {
    while (j < b.t.size() && b.t[j] < a.t[i] - tol.time_tol) ++j;
    if (j < b.t.size() && std::abs(b.t[j] - a.t[i]) <= tol.time_tol) pairs.emplace_back(i, j);
  }
  if (pairs.size() < 2)
    throw std::invalid_argument("compare_runs: misaligned grids (" + std::to_string(pairs.size()) +
                                " common time points)");
  DiffReport rep;
  rep.aligned = pairs.size();
  auto column = [&](const char* name, const std::vector<double>& ya, const std::vector<double>& yb,
                    const std::vector<double>& sa, const std::vector<double>& sb) {
    ColumnDiff c;
    c.column = name;
    double peak = 0.0;
    for (auto [i, k] : pairs) peak = std::max({peak, std::abs(ya[i]), std::abs(yb[k])});
    c.band = tol.rel_peak * peak;
    for (auto [i, k] : pairs) {
      const double diff = std::abs(ya[i] - yb[k]);
      const double se = std::hypot(sa.empty() ? 0.0 : sa[i], sb.empty() ? 0.0 : sb[k]);
      const double allowed = std::max({c.band, tol.se_mult * se, tol.abs_tol});
      if (diff > c.max_diff || !std::isfinite(diff)) c.max_diff = diff, c.max_diff_t = a.t[i];
      if (diff - allowed > c.worst_excess || !std::isfinite(diff))
        c.worst_excess = diff - allowed, c.worst_t = a.t[i];
    }
    c.pass = c.worst_excess <= 0.0;
    rep.pass = rep.pass && c.pass;
    rep.columns.push_back(c);
  };
  column("e_train", a.e_train, b.e_train, a.se_train, b.se_train);
  column("e_test", a.e_test, b.e_test, a.se_test, b.se_test);
  return rep;
}

// Exact d-finite limit of the training error under unregularized flow:
// the least-squares residual when n > d, zero (interpolation) otherwise.
inline double finite_train_limit(const Dataset& ds) {
  if (ds.n() <= ds.d()) return 0.0;
  const Vec w = ds.X.colPivHouseholderQr().solve(ds.y);
  return train_error(ds, w);
}

struct RateComparison {
  double alpha = 0.0;
  double delta = 0.0;
  double gamma_theory = 0.0;
  double gamma_fit = 0.0;
  double r2 = 0.0;
  double t_lo = 0.0;
  double t_hi = 0.0;
  int points = 0;
};

// Seed-averaged gap e_train - e_inf, with e_inf the exact finite-d limit of each
// instance, fitted over the default window.
inline RateComparison empirical_rate(const ModelConfig& cfg, Eigen::Index d, Design design,
                                     const std::vector<std::uint64_t>& seeds, const GfOptions& opt,
                                     double edge_power = 1.5, double floor = 1e-10,
                                     unsigned threads = 0) {
  if (cfg.lambda != 0.0) throw std::invalid_argument("empirical_rate covers lambda = 0 only");
  const GaussHermite gh(61);
  const auto fp = solve_fixed_point(cfg);
  RateComparison rc;
  rc.alpha = cfg.alpha;
  rc.delta = cfg.delta;
  rc.gamma_theory = solve_rate(fp, cfg, gh).gamma;

  const auto make = synthetic_factory(cfg, d, design);
  std::vector<Trajectory> runs(seeds.size());
  std::vector<double> limits(seeds.size());
  parallel_for(seeds.size(), threads ? threads : default_threads(), [&](std::size_t i) {
    const Dataset ds = make(seeds[i]);
    limits[i] = finite_train_limit(ds);
    runs[i] = run_gf(cfg, ds, opt);
  });
  const auto& times = runs.front().times;
  std::vector<double> gap(times.size(), 0.0);
  for (std::size_t s = 0; s < runs.size(); ++s)
    for (std::size_t i = 0; i < times.size(); ++i)
      gap[i] += (runs[s].e_train[i] - limits[s]) / static_cast<double>(runs.size());
  const auto [lo, hi] = default_fit_window(times, gap, 0.0, floor);
  const auto fit = fit_rate(times, gap, 0.0, lo, hi, edge_power);
  rc.gamma_fit = fit.gamma_hat;
  rc.r2 = fit.r2;
  rc.t_lo = fit.t_lo;
  rc.t_hi = fit.t_hi;
  rc.points = fit.points;
  return rc;
}

struct TransitionPoint {
  double alpha = 0.0;
  double log_scale = 0.0;  // ln(alpha) for grokking, ln(1/alpha) for descent
  double time = 0.0;       // NaN when no transition was detected
  double ratio = 0.0;      // time / log_scale
};

struct CollapseResult {
  std::vector<TransitionPoint> points;
  LineFit fit;             // time against log_scale
  double ratio_spread = 0.0;  // max ratio / min ratio - 1
  std::vector<CurveSet> curves;
};

enum class CollapseKind { grokking, descent };

struct CollapseOptions {
  Eigen::Index d = 400;
  Design design = Design::gaussian;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double drop = 0.1;
  double horizon = 3.0;  // t_max = horizon * ln-scale (/ lambda for grokking)
  double record_every = 0.05;
  double cfl = 0.1;
  unsigned threads = 0;
};

// Grokking watches e_test after the lazy fit, with the plateau measured over
// [1, ln(alpha)/lambda]; descent watches e_train from the start, plateau over
// [0, 0.3 ln(1/alpha)]. Transition times come from the seed-averaged curve.
inline CollapseResult measure_collapse(CollapseKind kind, const ModelConfig& base,
                                       const std::vector<double>& alphas,
                                       const CollapseOptions& opt = {}) {
  CollapseResult res;
  std::vector<double> xs, ys;
  for (double alpha : alphas) {
    ModelConfig cfg = base;
    cfg.alpha = alpha;
    TransitionPoint p;
    p.alpha = alpha;
    GfOptions g;
    g.adaptive = true;
    g.cfl = opt.cfl;
    g.step = opt.record_every;
    g.record_every = opt.record_every;
    double plateau_lo = 0.0, plateau_hi = 0.0;
    if (kind == CollapseKind::grokking) {
      if (!(alpha > 1.0) || !(cfg.lambda > 0.0))
        throw std::invalid_argument("grokking collapse needs alpha > 1 and lambda > 0");
      p.log_scale = std::log(alpha);
      g.w_form = true;
      plateau_lo = 1.0;
      plateau_hi = p.log_scale / cfg.lambda;
      g.t_max = opt.horizon * p.log_scale / cfg.lambda;
    } else {
      if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("descent collapse needs 0 < alpha < 1");
      p.log_scale = std::log(1.0 / alpha);
      plateau_hi = 0.3 * p.log_scale;
      g.t_max = opt.horizon * p.log_scale;
    }
    g.t_max = std::ceil(g.t_max / opt.record_every) * opt.record_every;
    const auto curves = simulate_curves(cfg, opt.d, opt.design, opt.seeds, g, opt.threads);
    const auto& y = kind == CollapseKind::grokking ? curves.e_test : curves.e_train;
    const auto t = detect_transition(curves.t, y, plateau_lo, plateau_hi, opt.drop, plateau_lo);
    p.time = t ? *t : std::nan("");
    p.ratio = p.time / p.log_scale;
    if (t) {
      xs.push_back(p.log_scale);
      ys.push_back(*t);
    }
    res.points.push_back(p);
    res.curves.push_back(curves);
  }
  if (xs.size() >= 2) res.fit = fit_line(xs, ys);
  double rmin = HUGE_VAL, rmax = -HUGE_VAL;
  for (const auto& p : res.points) {
    if (!std::isfinite(p.ratio)) {
      rmin = std::nan(""), rmax = std::nan("");
      break;
    }
    rmin = std::min(rmin, p.ratio);
    rmax = std::max(rmax, p.ratio);
  }
  res.ratio_spread = rmax / rmin - 1.0;
  return res;
}

struct LazyComparison {
  std::vector<double> t_bar;
  CurveSet sim;
  LazyCurves theory;
  double max_rel_train = 0.0;
  double max_rel_test = 0.0;
};

// Simulated curves in rescaled time alpha^2 t against the MP closed forms.
inline LazyComparison lazy_comparison(const ModelConfig& cfg, Eigen::Index d, Design design,
                                      const std::vector<std::uint64_t>& seeds, double t_bar_max = 3.0,
                                      int points = 30, double cfl = 0.05, unsigned threads = 0) {
  const double a2 = cfg.alpha * cfg.alpha;
  LazyComparison out;
  for (int i = 0; i <= points; ++i) out.t_bar.push_back(t_bar_max * i / points);
  GfOptions g;
  g.adaptive = true;
  g.cfl = cfl;
  g.record_every = t_bar_max / points / a2;
  g.step = g.record_every;
  g.t_max = t_bar_max / a2;
  out.sim = simulate_curves(cfg, d, design, seeds, g, threads);
  out.theory = lazy_curves(cfg.delta, cfg.rho2(), cfg.sigma2, out.t_bar);
  for (std::size_t i = 0; i < out.t_bar.size(); ++i) {
    out.max_rel_train = std::max(out.max_rel_train,
                                 std::abs(out.sim.e_train[i] / out.theory.e_train[i] - 1.0));
    out.max_rel_test = std::max(out.max_rel_test,
                                std::abs(out.sim.e_test[i] / out.theory.e_test[i] - 1.0));
  }
  return out;
}

struct InterpComparison {
  double alpha = 0.0;
  double e_test_theory = 0.0;
  double e_test_amp = 0.0;  // lambda -> 0 extrapolation
  std::vector<double> lambdas;
  std::vector<double> sequence;
};

// Case-iii test error from the fixed-point system and from AMP with the sinh-link
// prox on one finite instance, extrapolated along a decreasing lambda sequence.
inline InterpComparison interp_amp(const ModelConfig& cfg, Eigen::Index d, Design design,
                                   std::uint64_t seed,
                                   const std::vector<double>& lambdas = {1e-2, 1e-3, 1e-4},
                                   int iters = 300) {
  InterpComparison out;
  out.alpha = cfg.alpha;
  out.lambdas = lambdas;
  out.e_test_theory = fixed_point_errors(solve_fixed_point(cfg)).e_test;
  const Dataset ds = sample_dataset(cfg, samples_for(cfg.delta, d), d, design, seed);
  AmpOptions ao;
  ao.iters = iters;
  for (double lam : lambdas) {
    const auto run = run_amp(ds, Penalty::sinh_link(cfg.alpha), lam, ao);
    out.sequence.push_back(run.trace.back().mse + cfg.sigma2);
  }
  out.e_test_amp = lambda_extrapolate(lambdas, out.sequence);
  return out;
}

}  // namespace dlnflow
