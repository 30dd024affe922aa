#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "hiersim/error.hpp"
#include "hiersim/likelihood.hpp"
#include "hiersim/stats.hpp"

namespace hiersim {

// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct PosteriorResult {
  std::vector<double> support;
  std::vector<double> log_lik;
  std::vector<double> weights;  // normalized
  std::vector<double> samples;
  SixNumberSummary summary;
};

inline std::vector<double> uniform_prior(const std::vector<double>& grid) {
  return std::vector<double>(grid.size(), 1.0);
}

// Normal density restricted to the grid (unnormalized).
inline std::vector<double> truncated_normal_prior(const std::vector<double>& grid, double mean, double sd) {
  if (!(sd > 0)) throw InvalidArgument("prior sd must be positive");
  std::vector<double> out;
  for (double g : grid) out.push_back(std::exp(-0.5 * (g - mean) * (g - mean) / (sd * sd)));
  return out;
}

// Draws `count` values from a discrete distribution by inverse CDF.
inline std::vector<double> resample(const std::vector<double>& support, const std::vector<double>& weights,
                                    long count, std::uint64_t seed) {
  std::vector<double> cdf(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cdf.begin());
  const double total = cdf.back();
  std::mt19937_64 rng(seed);
  std::vector<double> out(static_cast<std::size_t>(std::max(0L, count)));
  for (auto& v : out) {
    const double u = unit_uniform(rng) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    v = support[static_cast<std::size_t>(it - cdf.begin())];
  }
  return out;
}

// Weights proportional to prior * exp(loglik - max loglik), then `samples`
// draws with replacement. Adding a constant to every loglik changes nothing.
inline PosteriorResult grid_posterior(const std::vector<double>& grid, const std::vector<double>& loglik,
                                      const std::vector<double>& prior, long samples, std::uint64_t seed) {
  if (grid.empty() || grid.size() != loglik.size() || grid.size() != prior.size())
    throw InvalidArgument("grid, log-likelihood and prior must have the same nonzero length");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (std::isnan(loglik[i]))
      throw InvalidArgument("log-likelihood is NaN at grid value " + std::to_string(grid[i]));
    if (!(prior[i] >= 0)) throw InvalidArgument("prior weights must be non-negative");
    if (prior[i] > 0) top = std::max(top, loglik[i]);
  }
  if (!std::isfinite(top)) throw InvalidArgument("posterior has no mass on the grid");
  PosteriorResult out;
  out.support = grid;
  out.log_lik = loglik;
  out.weights.resize(grid.size());
  double total = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out.weights[i] = prior[i] > 0 ? prior[i] * std::exp(loglik[i] - top) : 0.0;
    total += out.weights[i];
  }
  for (double& w : out.weights) w /= total;
  if (samples > 0) {
    out.samples = resample(grid, out.weights, samples, seed);
    out.summary = sample_summary(out.samples);
  }
  return out;
}

// Evaluates loglik at every grid point (concurrently when threads > 1).
inline PosteriorResult grid_posterior(const std::vector<double>& grid, const std::function<double(double)>& loglik,
                                      const std::vector<double>& prior, long samples, std::uint64_t seed,
                                      unsigned threads = 1) {
  std::vector<double> ll(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t i) { ll[i] = loglik(grid[i]); });
  return grid_posterior(grid, ll, prior, samples, seed);
}

inline double posterior_bias(const std::vector<double>& samples, double theta_true) {
  if (samples.empty()) throw InvalidArgument("bias of an empty sample");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size()) - theta_true;
}

// ---------------------------------------------------------------------------
// Variance field: Sigma = diag(v) R diag(v), log v ~ MVN(mu_v, Sigma_v).
// ---------------------------------------------------------------------------

struct VarianceFieldPosterior {
  std::vector<Eigen::VectorXd> v_samples;  // after burn-in
  Eigen::VectorXd mu_v;
  Eigen::MatrixXd Sigma_v;
  Eigen::MatrixXd R;
  std::vector<double> ess_trace;  // log posterior (up to a constant) per iteration

  // Posterior mean of the site variances v_a^2.
  Eigen::VectorXd mean_variance() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(R.rows());
    for (const auto& v : v_samples) out += v.cwiseAbs2();
    return out / static_cast<double>(std::max<std::size_t>(1, v_samples.size()));
  }

  // Posterior mean of Sigma = R o E[v v^T].
  Eigen::MatrixXd mean_sigma() const {
    Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(R.rows(), R.cols());
    for (const auto& v : v_samples) outer.noalias() += v * v.transpose();
    outer /= static_cast<double>(std::max<std::size_t>(1, v_samples.size()));
    return R.cwiseProduct(outer);
  }
};

// log prod_j N(eps_j; 0, diag(v) R diag(v)) as a function of log v, through
// the scatter matrix S = sum_j eps_j eps_j^T, so each call costs O(n^2).
class VarianceFieldLikelihood {
 public:
  VarianceFieldLikelihood(const std::vector<Eigen::VectorXd>& increments, const Eigen::MatrixXd& R) {
    if (increments.empty()) throw InvalidArgument("variance field needs at least one increment");
    const Eigen::Index n = R.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("correlation matrix R is not positive definite");
    const Eigen::MatrixXd& L = llt.matrixL();
    log_det_r_ = 2.0 * L.diagonal().array().log().sum();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : increments) {
      if (e.size() != n) throw InvalidArgument("increment dimension does not match R");
      S.noalias() += e * e.transpose();
    }
    P_ = llt.solve(Eigen::MatrixXd::Identity(n, n)).cwiseProduct(S);
    count_ = static_cast<double>(increments.size());
    n_ = static_cast<double>(n);
  }

  double operator()(const Eigen::VectorXd& log_v) const {
    const Eigen::VectorXd w = (-log_v).array().exp();
    const double quad = w.dot(P_ * w);
    const double value = -0.5 * (count_ * (n_ * std::log(2.0 * std::numbers::pi) + log_det_r_ + 2.0 * log_v.sum()) + quad);
    return std::isfinite(value) ? value : -std::numeric_limits<double>::infinity();
  }

 private:
  Eigen::MatrixXd P_;
  double log_det_r_ = 0;
  double count_ = 0;
  double n_ = 0;
};

// Elliptical slice sampling (Murray, Adams and MacKay) on x with prior
// MVN(mu, Sigma) and log-likelihood `loglik`; `on_state` sees every
// iteration's state and log posterior. Returns the final state.
inline Eigen::VectorXd elliptical_slice(const Eigen::VectorXd& mu, const Eigen::MatrixXd& Sigma,
                                        const std::function<double(const Eigen::VectorXd&)>& loglik, int iters,
                                        std::uint64_t seed,
                                        const std::function<void(int, const Eigen::VectorXd&, double)>& on_state) {
  const Eigen::Index n = mu.size();
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("prior covariance is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto prior_draw = [&] {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    return Eigen::VectorXd(L * z);
  };
  auto log_prior = [&](const Eigen::VectorXd& f) { return -0.5 * L.triangularView<Eigen::Lower>().solve(f).squaredNorm(); };

  Eigen::VectorXd f = prior_draw();
  double ll = loglik(mu + f);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd nu = prior_draw();
    const double threshold = ll + std::log(1.0 - unit_uniform(rng));
    double angle = unit_uniform(rng) * two_pi;
    double lo = angle - two_pi, hi = angle;
    while (true) {
      const Eigen::VectorXd prop = f * std::cos(angle) + nu * std::sin(angle);
      const double prop_ll = loglik(mu + prop);
      if (prop_ll > threshold) {
        f = prop;
        ll = prop_ll;
        break;
      }
      if (angle < 0) lo = angle;
      else hi = angle;
      if (hi - lo < 1e-300) break;  // shrunk onto the current state
      angle = lo + unit_uniform(rng) * (hi - lo);
    }
    if (on_state) on_state(it, mu + f, ll + log_prior(f));
  }
  return mu + f;
}

// Posterior of the variance field given discrepancy increments. With
// iters = 0 the result holds the single prior draw.
inline VarianceFieldPosterior ess_variance_field(const std::vector<Eigen::VectorXd>& increments,
                                                 const Eigen::VectorXd& mu_v, const Eigen::MatrixXd& Sigma_v,
                                                 const Eigen::MatrixXd& R, int iters, int burnin,
                                                 std::uint64_t seed) {
  if (iters < 0 || burnin < 0) throw InvalidArgument("iteration counts must be non-negative");
  if (mu_v.size() != R.rows() || Sigma_v.rows() != R.rows()) throw InvalidArgument("dimension mismatch");
  VarianceFieldLikelihood lik(increments, R);
  VarianceFieldPosterior out;
  out.mu_v = mu_v;
  out.Sigma_v = Sigma_v;
  out.R = R;
  auto record = [&](int it, const Eigen::VectorXd& x, double lp) {
    out.ess_trace.push_back(lp);
    if (it >= burnin) out.v_samples.push_back(x.array().exp().matrix());
  };
  const Eigen::VectorXd last = elliptical_slice(
      mu_v, Sigma_v, [&](const Eigen::VectorXd& x) { return lik(x); }, iters, seed, record);
  if (iters == 0) out.v_samples.push_back(last.array().exp().matrix());
  return out;
}

struct NormalityResult {
  double statistic = 0;
  double p_value = 0;
  double mean = 0;
  double sd = 0;
  bool degenerate = false;
};

// Scales diffs by 1 / sqrt(v_mean) and tests the result for normality.
inline NormalityResult scaled_residual_normality(const Eigen::VectorXd& diffs, const Eigen::VectorXd& v_mean) {
  if (diffs.size() != v_mean.size()) throw InvalidArgument("diffs and variances differ in length");
  std::vector<double> z(static_cast<std::size_t>(diffs.size()));
  for (Eigen::Index i = 0; i < diffs.size(); ++i) {
    if (!(v_mean[i] > 0)) throw InvalidArgument("posterior-mean variances must be positive");
    z[static_cast<std::size_t>(i)] = diffs[i] / std::sqrt(v_mean[i]);
  }
  const AndersonDarling ad = anderson_darling(z);
  return {ad.adjusted, ad.p_value, ad.mean, ad.sd, ad.degenerate};
}

}  // namespace hiersim
