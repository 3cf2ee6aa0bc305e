#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dlnflow/model.hpp"

namespace dlnflow {

inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double norm_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Gauss-Hermite rule for a standard normal weight (probabilists' convention):
// sum_k weights[k] f(nodes[k]) ~ E f(G). Built by Golub-Welsch.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussHermite(int K = 61) {
    if (K < 1) throw std::invalid_argument("Gauss-Hermite needs K >= 1");
    Mat J = Mat::Zero(K, K);
    for (int k = 1; k < K; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Mat> es(J);
    nodes.resize(K);
    weights.resize(K);
    for (int k = 0; k < K; ++k) {
      nodes[k] = es.eigenvalues()(k);
      const double v0 = es.eigenvectors()(0, k);
      weights[k] = v0 * v0;
    }
    // Exact symmetry: average mirrored pairs.
    for (int k = 0; k < K / 2; ++k) {
      const int m = K - 1 - k;
      const double x = 0.5 * (nodes[m] - nodes[k]);
      const double w = 0.5 * (weights[m] + weights[k]);
      nodes[k] = -x;
      nodes[m] = x;
      weights[k] = weights[m] = w;
    }
    if (K % 2 == 1) nodes[K / 2] = 0.0;
    double total = 0.0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
  }

  [[nodiscard]] int size() const { return static_cast<int>(nodes.size()); }

  template <class F>
  double expect(F&& f) const {
    double s = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) s += weights[k] * f(nodes[k]);
    return s;
  }
};

// Discrete representation of the target law: exact atoms, or Gauss-Hermite
// nodes for a Gaussian target.
inline std::vector<Atom> target_atoms(const TargetDist& t, const GaussHermite& gh) {
  if (t.kind == TargetDist::Kind::discrete) {
    std::vector<Atom> out;
    for (const auto& a : t.atoms)
      if (a.prob > 0.0) out.push_back(a);
    return out;
  }
  std::vector<Atom> out;
  const double s = std::sqrt(t.variance);
  for (int k = 0; k < gh.size(); ++k) out.push_back({s * gh.nodes[k], gh.weights[k]});
  return out;
}

// E f(W*, G) with W* from the target and G standard normal, on the product grid.
template <class F>
double expect_target_gauss(const TargetDist& t, const GaussHermite& gh, F&& f) {
  double s = 0.0;
  for (const auto& a : target_atoms(t, gh)) {
    double inner = 0.0;
    for (int k = 0; k < gh.size(); ++k) inner += gh.weights[k] * f(a.value, gh.nodes[k]);
    s += a.prob * inner;
  }
  return s;
}

}  // namespace dlnflow
