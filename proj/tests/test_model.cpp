#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dlnflow/csv.hpp"
#include "dlnflow/model.hpp"
#include "oracles.hpp"

using namespace dlnflow;

TEST(Model, NoiselessLabelsAreExact) {
  ModelConfig cfg;
  cfg.sigma2 = 0.0;
  const auto ds = sample_dataset(cfg, 30, 50, Design::gaussian, 7);
  EXPECT_EQ(ds.xi.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((ds.y - ds.X * ds.w_star).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Model, LabelsReconstructFromParts) {
  ModelConfig cfg;
  const auto ds = sample_dataset(cfg, 40, 60, Design::gaussian, 3);
  EXPECT_LE((ds.y - (ds.X * ds.w_star + ds.xi)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Model, BinaryDesignEntries) {
  const auto ds = sample_dataset(ModelConfig{}, 50, 100, Design::binary, 1);
  for (Eigen::Index i = 0; i < ds.X.size(); ++i)
    EXPECT_EQ(std::abs(ds.X.data()[i]), 0.1);
}

TEST(Model, BernoulliFraction) {
  const Eigen::Index d = 10000;
  const auto ds = sample_dataset(ModelConfig{}, 1, d, Design::gaussian, 11);
  const double frac = ds.w_star.sum() / static_cast<double>(d);
  EXPECT_NEAR(frac, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / d));
}

TEST(Model, SecondMomentConverges) {
  const Eigen::Index d = 100000;
  ModelConfig cfg;
  const auto ds = sample_dataset(cfg, 1, d, Design::gaussian, 5);
  const double emp = ds.w_star.squaredNorm() / static_cast<double>(d);
  // Bernoulli(0.1) at 1: Var(w*^2) = p(1-p).
  EXPECT_NEAR(emp, cfg.rho2(), 3.0 * std::sqrt(0.09 / d));
  EXPECT_DOUBLE_EQ(cfg.rho2(), 0.1);
}

TEST(Model, SameSeedSameData) {
  const auto a = sample_dataset(ModelConfig{}, 20, 30, Design::gaussian, 9);
  const auto b = sample_dataset(ModelConfig{}, 20, 30, Design::gaussian, 9);
  const auto c = sample_dataset(ModelConfig{}, 20, 30, Design::gaussian, 10);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.y, b.y);
  EXPECT_NE(a.X, c.X);
}

TEST(Model, TrainErrorSpecialCases) {
  ModelConfig cfg;
  cfg.sigma2 = 0.0;
  const auto ds = sample_dataset(cfg, 25, 40, Design::gaussian, 2);
  EXPECT_EQ(train_error(ds, ds.w_star), 0.0);
  Dataset ones = ds;
  ones.y = Vec::Ones(ds.n());
  EXPECT_DOUBLE_EQ(train_error(ones, Vec::Zero(ds.d())), 1.0);
}

TEST(Model, TrainErrorMatchesNaiveSum) {
  const auto ds = sample_dataset(ModelConfig{}, 17, 23, Design::gaussian, 4);
  CounterRng rng(99);
  Vec w(ds.d());
  for (auto& x : w) x = rng.normal();
  const double ref = oracle::naive_train_error(ds.X, ds.y, w);
  EXPECT_NEAR(train_error(ds, w), ref, 1e-14 * std::max(1.0, ref));
}

TEST(Model, TestErrorSpecialCases) {
  ModelConfig cfg;
  const auto ds = sample_dataset(cfg, 10, 1000, Design::gaussian, 6);
  EXPECT_DOUBLE_EQ(test_error(cfg, ds.w_star, ds.w_star), cfg.sigma2);
  // At w = 0 the value is ||w*||^2/d + sigma2; its expectation is rho2 + sigma2.
  const double at0 = test_error(cfg, Vec::Zero(ds.d()), ds.w_star);
  EXPECT_DOUBLE_EQ(at0, ds.w_star.squaredNorm() / 1000.0 + cfg.sigma2);
  EXPECT_NEAR(at0, cfg.rho2() + cfg.sigma2, 3.0 * std::sqrt(0.09 / 1000.0));
}

TEST(Model, TestErrorMatchesMonteCarloRisk) {
  ModelConfig cfg;
  const auto ds = sample_dataset(cfg, 10, 200, Design::gaussian, 8);
  CounterRng rng(17);
  Vec w(ds.d());
  for (auto& x : w) x = 0.3 * rng.normal();
  const auto mc = oracle::mc_test_risk(w, ds.w_star, cfg.sigma2, 200000, 1234);
  EXPECT_NEAR(test_error(cfg, w, ds.w_star), mc.mean, 3.0 * mc.se);
}

TEST(Model, LossIsHalfTrainErrorPlusDecay) {
  const auto ds = sample_dataset(ModelConfig{}, 15, 20, Design::gaussian, 3);
  Vec u = Vec::Constant(20, 0.7), v = Vec::Constant(20, 0.2);
  const Vec w = dln_weights(u, v);
  EXPECT_NEAR(loss(ds, u, v, 0.0), 0.5 * train_error(ds, w), 1e-15);
  EXPECT_NEAR(loss(ds, u, v, 0.3) - loss(ds, u, v, 0.0),
              0.3 / 40.0 * (u.squaredNorm() + v.squaredNorm()), 1e-14);
}

TEST(Model, ValidationRejectsBadConfigs) {
  ModelConfig cfg;
  cfg.delta = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.sigma2 = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(TargetDist::discrete({{1.0, 0.5}}), std::invalid_argument);
  EXPECT_THROW(sample_dataset(ModelConfig{}, 0, 10, Design::gaussian, 0), std::invalid_argument);
}

class IngestTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "dlnflow_ingest_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(IngestTest, RawRoundTrip) {
  const auto p = (dir / "eye.csv").string();
  std::ofstream(p) << "1,0,0\n0,1,0\n0,0,1\n";
  IngestOptions o;
  o.normalize = false;
  const auto X = ingest_design(p, o).X;
  EXPECT_EQ(X, Mat::Identity(3, 3));
}

TEST_F(IngestTest, NormalizedMoments) {
  const auto p = (dir / "rand.csv").string();
  CounterRng rng(5);
  Mat M(40, 7);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = 3.0 + 2.0 * rng.normal();
  write_csv_matrix(p, M);
  const auto X = ingest_design(p, IngestOptions{}).X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    EXPECT_LE(std::abs(X.col(j).mean()), 1e-10);
    EXPECT_NEAR(X.col(j).squaredNorm() / 40.0, 1.0 / 7.0, 1e-10);
  }
}

TEST_F(IngestTest, SubsampleShapeAndHeader) {
  const auto p = (dir / "wide.csv").string();
  {
    std::ofstream f(p);
    f << "a,b,c,d,e,f\n";
    for (int i = 0; i < 12; ++i) f << i << ",1,2,3,4," << i * i << "\n";
  }
  IngestOptions o;
  o.header = true;
  o.normalize = false;
  o.n_sub = 5;
  o.d_sub = 3;
  const auto X = ingest_design(p, o).X;
  EXPECT_EQ(X.rows(), 5);
  EXPECT_EQ(X.cols(), 3);
  o.n_sub = 13;
  EXPECT_THROW(ingest_design(p, o), std::runtime_error);
}

TEST_F(IngestTest, LabelledDataUsesTarget) {
  const auto p = (dir / "x.csv").string();
  CounterRng rng(2);
  Mat M(30, 10);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = rng.normal();
  write_csv_matrix(p, M);
  const auto design = ingest_design(p, IngestOptions{});
  ModelConfig cfg;
  cfg.sigma2 = 0.0;
  const auto ds = design.label(cfg, 3);
  EXPECT_EQ(ds.design, Design::external);
  EXPECT_LE((ds.y - ds.X * ds.w_star).cwiseAbs().maxCoeff(), 1e-15);
}
