#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "hiersim/config.hpp"
#include "hiersim/error.hpp"

namespace hiersim {

// X_1..X_T; X_0 is the zero vector and is not stored.
struct DiscrepancySeries {
  std::vector<Eigen::VectorXd> x;

  int T() const { return static_cast<int>(x.size()); }
  Eigen::Index n() const { return x.empty() ? 0 : x.front().size(); }
};

// Exact binomial coefficient.
inline std::int64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::int64_t out = 1;
  for (int i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

// q-th backward difference of the series, eps_j for j = 1..T (index j - 1).
// For j <= q there are not enough predecessors, so the order-j difference is
// used instead (X_0 = 0). Summaries should skip those first q entries.
inline std::vector<Eigen::VectorXd> rw_residuals(const DiscrepancySeries& series, int q) {
  const int T = series.T();
  if (q < 1) throw InvalidArgument("random-walk order must be >= 1");
  if (q >= T)
    throw InvalidArgument("random-walk order " + std::to_string(q) +
                          " needs more than q steps, got " + std::to_string(T));
  const Eigen::Index n = series.n();
  auto X = [&](int j) -> Eigen::VectorXd {
    return j <= 0 ? Eigen::VectorXd::Zero(n) : series.x[static_cast<std::size_t>(j - 1)];
  };
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(T));
  for (int j = 1; j <= T; ++j) {
    const int order = std::min(q, j);
    Eigen::VectorXd eps = X(j);
    for (int p = 1; p <= order; ++p) {
      const double c = static_cast<double>(binomial(order, p));
      if (p % 2) eps -= c * X(j - p);
      else eps += c * X(j - p);
    }
    out.push_back(std::move(eps));
  }
  return out;
}

// Sample variance of one site's residuals over j > q.
inline double residual_variance(const std::vector<Eigen::VectorXd>& residuals, int q, Eigen::Index site) {
  double mean = 0.0;
  int count = 0;
  for (std::size_t j = static_cast<std::size_t>(q); j < residuals.size(); ++j) {
    mean += residuals[j][site];
    ++count;
  }
  if (count < 2) throw InvalidArgument("not enough residuals for a variance");
  mean /= count;
  double ss = 0.0;
  for (std::size_t j = static_cast<std::size_t>(q); j < residuals.size(); ++j) {
    const double d = residuals[j][site] - mean;
    ss += d * d;
  }
  return ss / (count - 1);
}

// Regions of the glacier by radius.
enum class Region { Dome, Interior, Margin, Exterior };

inline const char* region_name(Region r) {
  switch (r) {
    case Region::Dome: return "dome";
    case Region::Interior: return "interior";
    case Region::Margin: return "margin";
    case Region::Exterior: return "exterior";
  }
  return "?";
}

// dome r < 0.25 L, margin 0.7 L <= r <= L, exterior r > L, interior otherwise.
inline Region classify_radius(double r, double L) {
  if (r > L) return Region::Exterior;
  if (r < 0.25 * L) return Region::Dome;
  if (r >= 0.7 * L) return Region::Margin;
  return Region::Interior;
}

inline std::vector<Region> classify_regions(const GlacierConfig& cfg) {
  std::vector<Region> out(static_cast<std::size_t>(cfg.n()));
  for (int i = 0; i < cfg.n(); ++i) out[i] = classify_radius(cfg.r_of(i), cfg.L);
  return out;
}

inline Eigen::MatrixXd grid_coordinates(const GlacierConfig& cfg) {
  Eigen::MatrixXd xy(cfg.n(), 2);
  for (int i = 0; i < cfg.n(); ++i) {
    xy(i, 0) = cfg.x_of(i);
    xy(i, 1) = cfg.y_of(i);
  }
  return xy;
}

inline Eigen::MatrixXd squared_exponential(const Eigen::MatrixXd& coords, double variance, double lengthscale) {
  const Eigen::Index n = coords.rows();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      const double d2 = (coords.row(a) - coords.row(b)).squaredNorm();
      K(a, b) = variance * std::exp(-d2 / (2.0 * lengthscale * lengthscale));
    }
  return K;
}

struct BlockVariances {
  double interior = 0.1;
  double dome = 0.1;
  double margin = 10.0;
};

struct DiscrepancyCov {
  enum class Kind { BlockDiagonal, GpField };
  Kind kind = Kind::BlockDiagonal;
  Eigen::MatrixXd sigma;  // without jitter

  // Block-diagonal parameters.
  std::vector<Region> labels;
  BlockVariances variances;
  double lengthscale = 0.0;

  // GP-field parameters.
  Eigen::VectorXd v;
  Eigen::MatrixXd R;

  Eigen::Index n() const { return sigma.rows(); }

  // Sigma + 1e-8 mean(diag) I, the matrix every factorization uses.
  Eigen::MatrixXd jittered() const {
    Eigen::MatrixXd out = sigma;
    out.diagonal().array() += 1e-8 * sigma.diagonal().mean();
    return out;
  }

  Eigen::MatrixXd cholesky_factor() const {
    Eigen::LLT<Eigen::MatrixXd> llt(jittered());
    if (llt.info() != Eigen::Success)
      throw NotPositiveDefinite("discrepancy covariance is not positive definite");
    return llt.matrixL();
  }
};

// Block of a label. Ice-free sites share the margin block.
inline Region block_of(Region r) { return r == Region::Exterior ? Region::Margin : r; }

inline DiscrepancyCov build_block_sigma(const std::vector<Region>& labels, const BlockVariances& var,
                                        double lengthscale, const Eigen::MatrixXd& coords) {
  if (!(var.interior > 0) || !(var.dome > 0) || !(var.margin > 0))
    throw InvalidArgument("block variances must be positive");
  if (!(lengthscale > 0)) throw InvalidArgument("lengthscale must be positive");
  if (static_cast<Eigen::Index>(labels.size()) != coords.rows())
    throw InvalidArgument("one label per site required");
  const Eigen::Index n = coords.rows();
  DiscrepancyCov cov;
  cov.kind = DiscrepancyCov::Kind::BlockDiagonal;
  cov.labels = labels;
  cov.variances = var;
  cov.lengthscale = lengthscale;
  cov.sigma = Eigen::MatrixXd::Zero(n, n);
  auto variance_of = [&](Region r) {
    switch (block_of(r)) {
      case Region::Dome: return var.dome;
      case Region::Interior: return var.interior;
      default: return var.margin;
    }
  };
  const double two_l2 = 2.0 * lengthscale * lengthscale;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      if (block_of(labels[a]) != block_of(labels[b])) continue;
      const double d2 = (coords.row(a) - coords.row(b)).squaredNorm();
      cov.sigma(a, b) = variance_of(labels[a]) * std::exp(-d2 / two_l2);
    }
  cov.cholesky_factor();
  return cov;
}

// Sigma = diag(v) R diag(v).
inline DiscrepancyCov build_gp_field_sigma(const Eigen::VectorXd& v, const Eigen::MatrixXd& R) {
  if (R.rows() != R.cols() || R.rows() != v.size())
    throw InvalidArgument("R must be n x n with n = |v|");
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0)) throw InvalidArgument("v must be positive");
    if (std::abs(R(i, i) - 1.0) > 1e-12)
      throw InvalidArgument("correlation matrix diagonal entry " + std::to_string(i) + " is not 1");
  }
  DiscrepancyCov cov;
  cov.kind = DiscrepancyCov::Kind::GpField;
  cov.v = v;
  cov.R = R;
  cov.sigma = v.asDiagonal() * R * v.asDiagonal();
  return cov;
}

// Forward simulation that rw_residuals inverts exactly: eps_j ~ N(0, Sigma)
// iid and X_j solves the order-min(q, j) difference equation, X_0 = 0.
inline DiscrepancySeries simulate_rw(const DiscrepancyCov& cov, int q, int T, std::uint64_t seed) {
  if (T < 1) throw InvalidArgument("T must be >= 1");
  if (q < 1) throw InvalidArgument("random-walk order must be >= 1");
  const Eigen::MatrixXd L = cov.cholesky_factor();
  const Eigen::Index n = cov.n();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DiscrepancySeries out;
  out.x.reserve(static_cast<std::size_t>(T));
  Eigen::VectorXd z(n);
  for (int j = 1; j <= T; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    Eigen::VectorXd x = L * z;
    const int order = std::min(q, j);
    for (int p = 1; p <= order; ++p) {
      if (j - p <= 0) continue;
      const double c = static_cast<double>(binomial(order, p));
      const Eigen::VectorXd& prev = out.x[static_cast<std::size_t>(j - p - 1)];
      if (p % 2) x += c * prev;
      else x -= c * prev;
    }
    out.x.push_back(std::move(x));
  }
  return out;
}

// CSV with columns step, site, residual.
inline void write_residual_csv(const std::string& path, const std::vector<Eigen::VectorXd>& residuals,
                               const std::vector<int>& sites) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "step,site,residual\n";
  for (std::size_t j = 0; j < residuals.size(); ++j)
    for (int s : sites) out << j + 1 << ',' << s << ',' << residuals[j][s] << '\n';
}

}  // namespace hiersim
