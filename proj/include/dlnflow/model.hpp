#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dlnflow/rng.hpp"

namespace dlnflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Atom {
  double value;
  double prob;

  friend bool operator==(const Atom&, const Atom&) = default;
};

// Law of the ground-truth coordinates: a finite mixture of atoms or a
// centered Gaussian.
struct TargetDist {
  enum class Kind { discrete, gaussian };

  Kind kind = Kind::discrete;
  std::vector<Atom> atoms{{0.0, 1.0}};
  double variance = 0.0;

  static TargetDist discrete(std::vector<Atom> atoms) {
    TargetDist t;
    t.kind = Kind::discrete;
    t.atoms = std::move(atoms);
    t.validate();
    return t;
  }
  static TargetDist bernoulli(double p, double value = 1.0) {
    if (p == 0.0) return discrete({{0.0, 1.0}});
    if (p == 1.0) return discrete({{value, 1.0}});
    return discrete({{0.0, 1.0 - p}, {value, p}});
  }
  static TargetDist zero() { return discrete({{0.0, 1.0}}); }
  static TargetDist gaussian(double var) {
    TargetDist t;
    t.kind = Kind::gaussian;
    t.atoms.clear();
    t.variance = var;
    t.validate();
    return t;
  }

  void validate() const {
    if (kind == Kind::gaussian) {
      if (!(variance >= 0.0) || !std::isfinite(variance))
        throw std::invalid_argument("gaussian target variance must be finite and >= 0");
      return;
    }
    if (atoms.empty()) throw std::invalid_argument("discrete target needs at least one atom");
    double total = 0.0;
    for (const auto& a : atoms) {
      if (!(a.prob >= 0.0 && a.prob <= 1.0) || !std::isfinite(a.value))
        throw std::invalid_argument("target atom out of range");
      total += a.prob;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw std::invalid_argument("target atom probabilities must sum to 1");
  }

  [[nodiscard]] double second_moment() const {
    if (kind == Kind::gaussian) return variance;
    double s = 0.0;
    for (const auto& a : atoms) s += a.prob * a.value * a.value;
    return s;
  }

  [[nodiscard]] bool is_zero() const {
    if (kind == Kind::gaussian) return variance == 0.0;
    for (const auto& a : atoms)
      if (a.prob > 0.0 && a.value != 0.0) return false;
    return true;
  }

  double sample(CounterRng& rng) const {
    if (kind == Kind::gaussian) return std::sqrt(variance) * rng.normal();
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& a : atoms) {
      acc += a.prob;
      if (u < acc) return a.value;
    }
    return atoms.back().value;
  }

  friend bool operator==(const TargetDist&, const TargetDist&) = default;
};

struct ModelConfig {
  double delta = 0.5;
  double alpha = 1.0;
  double lambda = 0.0;
  double sigma2 = 0.1;
  TargetDist target = TargetDist::bernoulli(0.1);
  int layers = 2;
  std::optional<double> truncation;

  [[nodiscard]] double rho2() const { return target.second_moment(); }
  [[nodiscard]] bool truncated_path() const { return layers > 2 || truncation.has_value(); }

  void validate() const {
    auto finite = [](double x) { return std::isfinite(x); };
    if (!finite(delta) || delta <= 0.0) throw std::invalid_argument("delta must be > 0");
    if (!finite(alpha) || alpha <= 0.0) throw std::invalid_argument("alpha must be > 0");
    if (!finite(lambda) || lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (!finite(sigma2) || sigma2 < 0.0) throw std::invalid_argument("sigma2 must be >= 0");
    if (layers < 2) throw std::invalid_argument("layers must be >= 2");
    if (truncation && !(*truncation > 0.0 && finite(*truncation)))
      throw std::invalid_argument("truncation must be > 0");
    target.validate();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Design { gaussian, binary, external };

inline const char* to_string(Design d) {
  switch (d) {
    case Design::gaussian: return "gaussian";
    case Design::binary: return "binary";
    case Design::external: return "external";
  }
  return "?";
}

inline Design parse_design(const std::string& s) {
  if (s == "gaussian") return Design::gaussian;
  if (s == "binary") return Design::binary;
  if (s == "external") return Design::external;
  throw std::invalid_argument("unknown design: " + s);
}

struct Dataset {
  Mat X;
  Vec y;
  Vec w_star;
  Vec xi;
  Design design = Design::gaussian;

  [[nodiscard]] Eigen::Index n() const { return X.rows(); }
  [[nodiscard]] Eigen::Index d() const { return X.cols(); }
  [[nodiscard]] double delta() const {
    return static_cast<double>(n()) / static_cast<double>(d());
  }
};

// Stream ids used when splitting the dataset seed.
namespace streams {
inline constexpr std::uint64_t design = 1;
inline constexpr std::uint64_t target = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t subsample = 4;
}  // namespace streams

inline Mat sample_design(Eigen::Index n, Eigen::Index d, Design design, CounterRng rng) {
  if (n < 1 || d < 1) throw std::invalid_argument("dimensions must be positive");
  Mat X(n, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      if (design == Design::binary)
        X(i, j) = rng.coin() ? scale : -scale;
      else
        X(i, j) = scale * rng.normal();
    }
  return X;
}

// Labels y = X w* + xi for a fixed design.
inline void attach_labels(Dataset& ds, const ModelConfig& cfg, std::uint64_t seed) {
  const CounterRng root(seed);
  CounterRng rt = root.split(streams::target);
  CounterRng rn = root.split(streams::noise);
  const Eigen::Index n = ds.X.rows(), d = ds.X.cols();
  ds.w_star.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) ds.w_star(j) = cfg.target.sample(rt);
  ds.xi.resize(n);
  const double s = std::sqrt(cfg.sigma2);
  for (Eigen::Index i = 0; i < n; ++i) ds.xi(i) = cfg.sigma2 == 0.0 ? 0.0 : s * rn.normal();
  ds.y = ds.X * ds.w_star + ds.xi;
}

inline Dataset sample_dataset(const ModelConfig& cfg, Eigen::Index n, Eigen::Index d,
                              Design design, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("dimensions must be positive");
  if (design == Design::external)
    throw std::invalid_argument("external designs come from ingest_design");
  cfg.validate();
  Dataset ds;
  ds.design = design;
  ds.X = sample_design(n, d, design, CounterRng(seed).split(streams::design));
  attach_labels(ds, cfg, seed);
  return ds;
}

inline Vec dln_weights(const Vec& u, const Vec& v) {
  // factored so that u == v gives exactly zero under fused multiply-add
  return (0.5 * (u - v).array() * (u + v).array()).matrix();
}

// (1/n)||y - Xw||^2, no 1/2 and no regularizer.
inline double train_error(const Dataset& ds, const Vec& w) {
  if (w.size() != ds.d()) throw std::invalid_argument("train_error: dimension mismatch");
  return (ds.y - ds.X * w).squaredNorm() / static_cast<double>(ds.n());
}

inline double test_error(const ModelConfig& cfg, const Vec& w, const Vec& w_star) {
  if (w.size() != w_star.size()) throw std::invalid_argument("test_error: dimension mismatch");
  return (w - w_star).squaredNorm() / static_cast<double>(w.size()) + cfg.sigma2;
}

// Training objective over (u, v). Equals train_error/2 plus the weight decay term.
inline double loss(const Dataset& ds, const Vec& u, const Vec& v, double lambda) {
  const Vec w = dln_weights(u, v);
  return 0.5 * train_error(ds, w) +
         lambda / (2.0 * static_cast<double>(ds.d())) * (u.squaredNorm() + v.squaredNorm());
}

}  // namespace dlnflow
