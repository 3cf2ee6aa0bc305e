#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dlnflow/errors.hpp"
#include "dlnflow/model.hpp"

namespace dlnflow {

struct DlnState {
  Vec u;
  Vec v;
  double t = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<double> e_train;
  std::vector<double> e_test;
  std::vector<std::pair<double, Vec>> snapshots;
};

inline DlnState init_state(const ModelConfig& cfg, Eigen::Index d) {
  if (d < 1) throw std::invalid_argument("d must be >= 1");
  return {Vec::Constant(d, cfg.alpha), Vec::Constant(d, cfg.alpha), 0.0};
}

// Smooth step: 0 for t <= 0, 1 for t >= 1, C-infinity in between.
inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return 1.0 / (1.0 + std::exp(1.0 / t - 1.0 / (1.0 - t)));
}

inline double smooth_step_deriv(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double s = smooth_step(t);
  return s * (1.0 - s) * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)));
}

// Truncation: identity on [-M, M], zero outside [-(M+1), M+1].
inline double eta_M(double x, double M) {
  const double s = std::abs(x) - M;
  if (s <= 0.0) return x;
  return (1.0 - smooth_step(s)) * x;
}

inline double eta_M_deriv(double x, double M) {
  const double s = std::abs(x) - M;
  if (s <= 0.0) return 1.0;
  return (1.0 - smooth_step(s)) - std::abs(x) * smooth_step_deriv(s);
}

inline double ipow(double x, int k) {
  if (k == 0) return 1.0;
  double r = x;
  for (int i = 1; i < k; ++i) r *= x;
  return r;
}

inline Vec current_weights(const DlnState& s, const ModelConfig& cfg) {
  if (!cfg.truncated_path()) return dln_weights(s.u, s.v);
  const int L = cfg.layers;
  const double M = cfg.truncation.value_or(HUGE_VAL);
  Vec w(s.u.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w(i) = (eta_M(ipow(s.u(i), L), M) - eta_M(ipow(s.v(i), L), M)) / L;
  return w;
}

// g = (1/delta) X^T (X w - y), either directly or through the Gram matrix.
class GradientOperator {
 public:
  enum class Mode { automatic, direct, gram };

  explicit GradientOperator(const Dataset& ds, Mode mode = Mode::automatic) : ds_(&ds) {
    const double delta = ds.delta();
    use_gram_ = mode == Mode::gram || (mode == Mode::automatic && ds.d() < 2 * ds.n());
    if (use_gram_) {
      G_ = ds.X.transpose() * ds.X / delta;
      b_ = ds.X.transpose() * ds.y / delta;
    }
  }

  [[nodiscard]] Vec operator()(const Vec& w) const {
    if (use_gram_) return G_ * w - b_;
    return ds_->X.transpose() * (ds_->X * w - ds_->y) / ds_->delta();
  }

  // Largest eigenvalue of X^T X / delta by power iteration.
  [[nodiscard]] double spectral_radius(int iters = 200) const {
    Vec x = Vec::Ones(ds_->d()) / std::sqrt(static_cast<double>(ds_->d()));
    double lam = 0.0;
    for (int k = 0; k < iters; ++k) {
      Vec y = use_gram_ ? Vec(G_ * x) : Vec(ds_->X.transpose() * (ds_->X * x) / ds_->delta());
      const double nrm = y.norm();
      if (nrm == 0.0) return 0.0;
      lam = x.dot(y);
      x = y / nrm;
    }
    return lam;
  }

 private:
  const Dataset* ds_;
  bool use_gram_ = false;
  Mat G_;
  Vec b_;
};

inline void check_state(const DlnState& s, double limit = 1e8) {
  const double mu = s.u.size() ? s.u.cwiseAbs().maxCoeff() : 0.0;
  const double mv = s.v.size() ? s.v.cwiseAbs().maxCoeff() : 0.0;
  if (!std::isfinite(mu) || !std::isfinite(mv)) throw DivergenceError("non-finite state", s.t);
  if (mu > limit || mv > limit) throw DivergenceError("state norm exceeded 1e8", s.t);
}

// Time derivative of (u, v) given the gradient g at the current weights.
inline std::pair<Vec, Vec> drift(const DlnState& s, const Vec& g, const ModelConfig& cfg) {
  const double lam = cfg.lambda;
  if (!cfg.truncated_path()) {
    Vec du = -0.5 * (s.u.array() * g.array() + lam * s.u.array()).matrix();
    Vec dv = -0.5 * (-s.v.array() * g.array() + lam * s.v.array()).matrix();
    return {std::move(du), std::move(dv)};
  }
  const int L = cfg.layers;
  const double M = cfg.truncation.value_or(HUGE_VAL);
  Vec du(s.u.size()), dv(s.v.size());
  for (Eigen::Index i = 0; i < s.u.size(); ++i) {
    const double u = s.u(i), v = s.v(i);
    du(i) = -0.5 * ((ipow(u, L - 1) * g(i)) * eta_M_deriv(ipow(u, L), M) + lam * u);
    dv(i) = -0.5 * (-(ipow(v, L - 1) * g(i)) * eta_M_deriv(ipow(v, L), M) + lam * v);
  }
  return {std::move(du), std::move(dv)};
}

enum class Integrator { euler, heun };

inline DlnState step_with(const DlnState& s, const GradientOperator& grad, const ModelConfig& cfg,
                          double step, Integrator integ = Integrator::euler) {
  if (!(step > 0.0)) throw std::invalid_argument("step must be > 0");
  const Vec g = grad(current_weights(s, cfg));
  auto [du, dv] = drift(s, g, cfg);
  DlnState next{s.u + step * du, s.v + step * dv, s.t + step};
  if (integ == Integrator::heun) {
    const Vec g2 = grad(current_weights(next, cfg));
    auto [du2, dv2] = drift(next, g2, cfg);
    next.u = s.u + 0.5 * step * (du + du2);
    next.v = s.v + 0.5 * step * (dv + dv2);
  }
  check_state(next);
  return next;
}

// One explicit Euler step of the two-layer flow.
inline DlnState step_gf(const DlnState& s, const Dataset& ds, const ModelConfig& cfg,
                        double step) {
  if (cfg.truncated_path())
    throw std::invalid_argument("step_gf: configuration needs step_truncated");
  const GradientOperator grad(ds, GradientOperator::Mode::direct);
  return step_with(s, grad, cfg, step);
}

inline DlnState step_truncated(const DlnState& s, const Dataset& ds, const ModelConfig& cfg,
                               double step) {
  if (!cfg.truncation) throw std::invalid_argument("step_truncated: truncation M is required");
  const GradientOperator grad(ds, GradientOperator::Mode::direct);
  return step_with(s, grad, cfg, step);
}

// Per-coordinate weight dynamics dw/dt = -sqrt(w^2 + a^4 e^{-2 lambda t}) g - lambda w.
// Equivalent to the (u, v) flow for the two-layer model started at u = v = alpha.
inline Vec step_w_form(const Vec& w, double t, const GradientOperator& grad,
                       const ModelConfig& cfg, double step) {
  const Vec g = grad(w);
  const double a4 = std::pow(cfg.alpha, 4) * std::exp(-2.0 * cfg.lambda * t);
  Vec out(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double S = std::sqrt(w(i) * w(i) + a4);
    out(i) = w(i) + step * (-S * g(i) - cfg.lambda * w(i));
  }
  return out;
}

struct GfOptions {
  double step = 0.1;
  double t_max = 10.0;
  double record_every = 0.1;
  Integrator integrator = Integrator::euler;
  bool w_form = false;
  // Shrink steps so that step * max_i S_i * lambda_max stays below `cfl`,
  // still landing exactly on recording times.
  bool adaptive = false;
  double cfl = 0.5;
  double snapshot_every = 0.0;  // 0 disables snapshots
  GradientOperator::Mode grad_mode = GradientOperator::Mode::automatic;
};

inline Trajectory run_gf(const ModelConfig& cfg, const Dataset& ds, const GfOptions& opt) {
  cfg.validate();
  if (!(opt.step > 0.0) || !(opt.t_max > 0.0) || !(opt.record_every > 0.0))
    throw std::invalid_argument("run_gf: step, t_max and record_every must be > 0");
  if (opt.w_form && cfg.truncated_path())
    throw std::invalid_argument("run_gf: w-form integrator covers the two-layer model only");

  const GradientOperator grad(ds, opt.grad_mode);
  const double lam_max = opt.adaptive ? grad.spectral_radius() : 0.0;
  const auto n_records = static_cast<long>(std::llround(opt.t_max / opt.record_every));
  const auto snap_stride =
      opt.snapshot_every > 0.0
          ? std::max<long>(1, std::lround(opt.snapshot_every / opt.record_every))
          : 0L;
  long steps_per_record = 1;
  if (!opt.adaptive) {
    steps_per_record = std::lround(opt.record_every / opt.step);
    if (steps_per_record < 1 ||
        std::abs(static_cast<double>(steps_per_record) * opt.step - opt.record_every) >
            1e-9 * opt.record_every)
      throw std::invalid_argument("run_gf: record_every must be a multiple of step");
  }

  DlnState s = init_state(cfg, ds.d());
  Vec w = Vec::Zero(ds.d());
  Trajectory tr;
  auto record = [&](long k, double t) {
    tr.times.push_back(t);
    tr.e_train.push_back(train_error(ds, w));
    tr.e_test.push_back(test_error(cfg, w, ds.w_star));
    if (snap_stride && k % snap_stride == 0) tr.snapshots.emplace_back(t, w);
  };
  record(0, 0.0);

  double t = 0.0;
  for (long k = 1; k <= n_records; ++k) {
    const double t_next = static_cast<double>(k) * opt.record_every;
    long inner = 0;
    while (true) {
      double h = opt.step;
      bool last = false;
      if (opt.adaptive) {
        const double a4 = std::pow(cfg.alpha, 4) * std::exp(-2.0 * cfg.lambda * t);
        double smax = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i)
          smax = std::max(smax, std::sqrt(w(i) * w(i) + a4));
        h = std::min(opt.step, opt.cfl / (smax * lam_max + cfg.lambda + 1e-300));
        if (t + h >= t_next - 1e-12 * std::max(1.0, t_next)) {
          h = t_next - t;
          last = true;
        }
      } else {
        last = ++inner == steps_per_record;
      }
      if (opt.w_form) {
        w = step_w_form(w, t, grad, cfg, h);
        if (!w.allFinite() || w.cwiseAbs().maxCoeff() > 1e16)
          throw DivergenceError("non-finite weights", t + h);
      } else {
        s = step_with(s, grad, cfg, h, opt.integrator);
        w = current_weights(s, cfg);
      }
      t = opt.adaptive ? (last ? t_next : t + h)
                       : static_cast<double>((k - 1) * steps_per_record + inner) * opt.step;
      if (last) break;
    }
    record(k, t_next);
  }
  return tr;
}

}  // namespace dlnflow
