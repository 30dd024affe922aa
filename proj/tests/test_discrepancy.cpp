#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hiersim/discrepancy.hpp"

using namespace hiersim;

namespace {

DiscrepancySeries scalar_series(const std::vector<double>& v) {
  DiscrepancySeries s;
  for (double x : v) s.x.push_back(Eigen::VectorXd::Constant(1, x));
  return s;
}

}  // namespace

TEST(Binomial, ExactSmallOrders) {
  EXPECT_EQ(binomial(5, 2), 10);
  EXPECT_EQ(binomial(7, 3), 35);
  EXPECT_EQ(binomial(7, 0), 1);
  EXPECT_EQ(binomial(7, 7), 1);
  EXPECT_EQ(binomial(3, 4), 0);
  // Pascal's rule.
  for (int n = 1; n <= 7; ++n)
    for (int k = 1; k < n; ++k) EXPECT_EQ(binomial(n, k), binomial(n - 1, k - 1) + binomial(n - 1, k));
}

TEST(Residuals, FirstOrderIsDifference) {
  const auto r = rw_residuals(scalar_series({1, 3, 6, 10}), 1);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0][0], 1);
  EXPECT_EQ(r[1][0], 2);
  EXPECT_EQ(r[2][0], 3);
  EXPECT_EQ(r[3][0], 4);
}

TEST(Residuals, PolynomialAnnihilated) {
  // A cubic in j has zero fourth differences.
  std::vector<double> v;
  for (int j = 1; j <= 20; ++j) v.push_back(2.0 + 0.5 * j - 0.25 * j * j + 0.01 * j * j * j);
  const auto r4 = rw_residuals(scalar_series(v), 4);
  for (std::size_t j = 4; j < r4.size(); ++j) EXPECT_NEAR(r4[j][0], 0.0, 1e-10);
  const auto r3 = rw_residuals(scalar_series(v), 3);
  for (std::size_t j = 4; j < r3.size(); ++j) EXPECT_NEAR(r3[j][0], 6 * 0.01, 1e-10);
}

TEST(Residuals, WarmUpUsesGrowingOrder) {
  // X = 1, 4, 9, 16, 25 with X_0 = 0; q = 2.
  const auto r = rw_residuals(scalar_series({1, 4, 9, 16, 25}), 2);
  EXPECT_EQ(r[0][0], 1);          // order 1: X1 - X0
  EXPECT_EQ(r[1][0], 4 - 2 * 1);  // order 2: X2 - 2X1 + X0
  EXPECT_EQ(r[2][0], 9 - 8 + 1);
}

TEST(Residuals, RejectsBadOrders) {
  const auto s = scalar_series({1, 2, 3});
  EXPECT_THROW(rw_residuals(s, 0), InvalidArgument);
  EXPECT_THROW(rw_residuals(s, 3), InvalidArgument);
}

TEST(Residuals, VarianceSkipsWarmUp) {
  std::vector<Eigen::VectorXd> r;
  for (double v : {100.0, 1.0, 2.0, 3.0}) r.push_back(Eigen::VectorXd::Constant(1, v));
  EXPECT_DOUBLE_EQ(residual_variance(r, 1, 0), 1.0);
}

TEST(Regions, Thresholds) {
  const double L = 750e3;
  EXPECT_EQ(classify_radius(0.0, L), Region::Dome);
  EXPECT_EQ(classify_radius(0.249 * L, L), Region::Dome);
  EXPECT_EQ(classify_radius(0.25 * L, L), Region::Interior);
  EXPECT_EQ(classify_radius(0.699 * L, L), Region::Interior);
  EXPECT_EQ(classify_radius(0.7 * L, L), Region::Margin);
  EXPECT_EQ(classify_radius(L, L), Region::Margin);
  EXPECT_EQ(classify_radius(1.01 * L, L), Region::Exterior);
  const auto labels = classify_regions(GlacierConfig{});
  EXPECT_EQ(labels.size(), 441u);
  EXPECT_EQ(labels[220], Region::Dome);
  EXPECT_EQ(labels[0], Region::Exterior);
}

TEST(BlockSigma, StructureAndSpd) {
  const GlacierConfig cfg;
  const auto labels = classify_regions(cfg);
  const auto cov = build_block_sigma(labels, {0.1, 0.2, 10.0}, 70e3, grid_coordinates(cfg));
  const Eigen::MatrixXd& S = cov.sigma;
  EXPECT_TRUE(S.isApprox(S.transpose(), 0));
  for (int i = 0; i < cfg.n(); ++i) {
    const Region b = block_of(labels[i]);
    const double want = b == Region::Dome ? 0.2 : b == Region::Interior ? 0.1 : 10.0;
    EXPECT_DOUBLE_EQ(S(i, i), want);
    for (int j = 0; j < cfg.n(); ++j)
      if (block_of(labels[j]) != b) EXPECT_EQ(S(i, j), 0.0);
  }
  // Neighbours 100 km apart in one block: exp(-1e10 / (2 * 4.9e9)).
  const int a = cfg.index_of(10, 4), c = cfg.index_of(11, 4);
  ASSERT_EQ(block_of(labels[a]), block_of(labels[c]));
  EXPECT_NEAR(S(a, c), S(a, a) * std::exp(-1e10 / (2 * 70e3 * 70e3)), 1e-15);
  EXPECT_NO_THROW(cov.cholesky_factor());
  EXPECT_THROW(build_block_sigma(labels, {0.0, 0.1, 10.0}, 70e3, grid_coordinates(cfg)), InvalidArgument);
}

TEST(GpFieldSigma, RecoversFactors) {
  const GlacierConfig cfg;
  const Eigen::MatrixXd xy = grid_coordinates(cfg).topRows(30);
  const Eigen::MatrixXd R = squared_exponential(xy, 1.0, 150e3);
  Eigen::VectorXd v(30);
  for (int i = 0; i < 30; ++i) v[i] = 0.5 + 0.1 * i;
  const auto cov = build_gp_field_sigma(v, R);
  const Eigen::VectorXd v_back = cov.sigma.diagonal().cwiseSqrt();
  EXPECT_LT((v_back - v).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd R_back = v_back.cwiseInverse().asDiagonal() * cov.sigma * v_back.cwiseInverse().asDiagonal();
  EXPECT_LT((R_back - R).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::VectorXd bad = v;
  bad[3] = 0;
  EXPECT_THROW(build_gp_field_sigma(bad, R), InvalidArgument);
  Eigen::MatrixXd R2 = R;
  R2(0, 0) = 2;
  EXPECT_THROW(build_gp_field_sigma(v, R2), InvalidArgument);
}

TEST(Jitter, ScaledByMeanDiagonal) {
  DiscrepancyCov cov;
  cov.sigma = Eigen::MatrixXd::Identity(3, 3) * 4.0;
  EXPECT_NEAR(cov.jittered()(1, 1), 4.0 + 4e-8, 1e-20);
  EXPECT_EQ(cov.jittered()(0, 1), 0.0);
}

class SimulateInverse : public ::testing::TestWithParam<int> {};

TEST_P(SimulateInverse, ResidualsRecoverInnovations) {
  const int q = GetParam();
  const GlacierConfig cfg;
  const Eigen::MatrixXd xy = grid_coordinates(cfg).topRows(6);
  DiscrepancyCov cov;
  cov.sigma = squared_exponential(xy, 2.0, 100e3);
  const auto series = simulate_rw(cov, q, 40, 17);
  const auto eps = rw_residuals(series, q);

  // Regenerate the innovations with the same stream.
  const Eigen::MatrixXd L = cov.cholesky_factor();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < 40; ++j) {
    Eigen::VectorXd z(6);
    for (int i = 0; i < 6; ++i) z[i] = normal(rng);
    const Eigen::VectorXd want = L * z;
    EXPECT_LT((eps[j] - want).cwiseAbs().maxCoeff(), 1e-8 * (1 + series.x[j].cwiseAbs().maxCoeff()));
  }
}

INSTANTIATE_TEST_SUITE_P(Orders, SimulateInverse, ::testing::Values(1, 2, 3, 5, 7));

TEST(SimulateRw, LawOfFirstOrderWalk) {
  // Cov(X_a, X_b) = min(a, b) Sigma for RW(1).
  DiscrepancyCov cov;
  cov.sigma.resize(2, 2);
  cov.sigma << 1.0, 0.3, 0.3, 0.5;
  const int draws = 20000, T = 6;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);  // (X_2, X_5) at both sites
  for (int d = 0; d < draws; ++d) {
    const auto s = simulate_rw(cov, 1, T, 1000 + d);
    Eigen::Vector4d z(s.x[1][0], s.x[1][1], s.x[4][0], s.x[4][1]);
    acc += z * z.transpose();
  }
  acc /= draws;
  EXPECT_NEAR(acc(0, 0), 2 * 1.0, 0.1);
  EXPECT_NEAR(acc(0, 3), 2 * 0.3, 0.05);
  EXPECT_NEAR(acc(2, 2), 5 * 1.0, 0.25);
  EXPECT_NEAR(acc(1, 3), 2 * 0.5, 0.05);
}

TEST(ResidualCsv, Columns) {
  const auto path = (std::filesystem::temp_directory_path() / "hiersim_resid.csv").string();
  std::vector<Eigen::VectorXd> r = {Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 5, 6)};
  write_residual_csv(path, r, {0, 2});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,site,residual");
  std::getline(in, line);
  EXPECT_EQ(line, "1,0,1");
  std::getline(in, line);
  EXPECT_EQ(line, "1,2,3");
}
