#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hiersim/banded.hpp"
#include "hiersim/error.hpp"
#include "hiersim/sia.hpp"

namespace hiersim {

// Observed data and simulator mean for one parameter value. Blocks are
// ordered by epoch (time-major): block c - 1 belongs to step c k.
struct LikelihoodInputs {
  std::vector<Eigen::VectorXd> mu_blocks;  // A f(theta, c k)
  Eigen::MatrixXd V;                       // A Sigma A^T
  int k = 1;
  int N = 0;
  double sigma2 = 0.0;
  std::vector<Eigen::VectorXd> y;

  Eigen::Index m() const { return V.rows(); }

  void check() const {
    if (N < 1 || k < 1) throw InvalidArgument("N and k must be >= 1");
    if (static_cast<int>(mu_blocks.size()) != N || static_cast<int>(y.size()) != N)
      throw InvalidArgument("expected N mean and observation blocks");
    if (V.rows() != V.cols()) throw InvalidArgument("V must be square");
    for (int c = 0; c < N; ++c)
      if (mu_blocks[c].size() != m() || y[c].size() != m())
        throw InvalidArgument("block dimension does not match V");
    if (!(sigma2 >= 0)) throw InvalidArgument("sigma2 must be non-negative");
  }

  Eigen::VectorXd stacked_residual() const {
    Eigen::VectorXd r(N * m());
    for (int c = 0; c < N; ++c) r.segment(c * m(), m()) = y[c] - mu_blocks[c];
    return r;
  }
};

// V = A Sigma A^T for an incidence matrix given by its observed columns.
// Repeated sites make V singular, so they are rejected here by name.
inline Eigen::MatrixXd project_covariance(const Eigen::MatrixXd& sigma, const std::vector<int>& sites) {
  const int m = static_cast<int>(sites.size());
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b)
      if (sites[a] == sites[b])
        throw InvalidArgument("observation rows " + std::to_string(a) + " and " +
                              std::to_string(b) + " both select grid site " +
                              std::to_string(sites[a]) + "; A Sigma A^T would be singular");
  Eigen::MatrixXd V(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) V(a, b) = sigma(sites[a], sites[b]);
  return V;
}

inline LikelihoodInputs make_inputs(const ObservationSet& obs, const Eigen::MatrixXd& V,
                                    std::vector<Eigen::VectorXd> mu_blocks) {
  LikelihoodInputs in;
  in.mu_blocks = std::move(mu_blocks);
  in.V = V;
  in.k = obs.k;
  in.N = obs.N;
  in.sigma2 = obs.sigma2;
  in.y = obs.y;
  in.check();
  return in;
}

// U_ab = k min(a, b), 1-based.
inline Eigen::MatrixXd build_u(int N, int k) {
  Eigen::MatrixXd U(N, N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) U(a, b) = static_cast<double>(k) * (std::min(a, b) + 1);
  return U;
}

// U^{-1} = k^{-1} tridiag(-1, 2, -1) with a trailing 1 on the diagonal.
inline Eigen::MatrixXd build_u_inverse(int N, int k) {
  if (N < 1 || k < 1) throw InvalidArgument("N and k must be >= 1");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, N);
  const double s = 1.0 / k;
  for (int a = 0; a < N; ++a) {
    out(a, a) = a == N - 1 ? s : 2.0 * s;
    if (a + 1 < N) out(a, a + 1) = out(a + 1, a) = -s;
  }
  return out;
}

// log det of a symmetric tridiagonal matrix by the continuant recurrence.
inline double tridiagonal_log_det(const Eigen::MatrixXd& T) {
  const Eigen::Index n = T.rows();
  double prev = 1.0;  // f_{-1}
  double cur = T(0, 0);
  double log_scale = 0.0;
  for (Eigen::Index i = 1; i < n; ++i) {
    const double off = T(i, i - 1);
    const double next = T(i, i) * cur - off * off * prev;
    prev = cur;
    cur = next;
    // Rescale to keep the recurrence in range.
    const double mag = std::abs(cur);
    if (mag > 1e100 || (mag < 1e-100 && mag > 0)) {
      log_scale += std::log(mag);
      prev /= mag;
      cur /= mag;
    }
  }
  if (!(cur > 0)) throw NotPositiveDefinite("tridiagonal matrix is not positive definite");
  return log_scale + std::log(cur);
}

// log N(r; 0, C) for a dense SPD C.
inline double mvn_logpdf_zero_mean(const Eigen::VectorXd& r, const Eigen::MatrixXd& C) {
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("covariance is not positive definite");
  const Eigen::VectorXd z = llt.matrixL().solve(r);
  const Eigen::MatrixXd& L = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) log_det += std::log(L(i, i));
  log_det *= 2.0;
  return -0.5 * (static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi) + log_det +
                 z.squaredNorm());
}

// Dense Nm x Nm covariance U (x) V + sigma^2 I. Serves as the oracle.
inline Eigen::MatrixXd dense_covariance(const LikelihoodInputs& in) {
  const Eigen::Index m = in.m();
  const Eigen::Index d = in.N * m;
  Eigen::MatrixXd C(d, d);
  for (int a = 0; a < in.N; ++a)
    for (int b = 0; b < in.N; ++b)
      C.block(a * m, b * m, m, m) = (static_cast<double>(in.k) * (std::min(a, b) + 1)) * in.V;
  C.diagonal().array() += in.sigma2;
  return C;
}

inline double exact_loglik_dense(const LikelihoodInputs& in) {
  in.check();
  return mvn_logpdf_zero_mean(in.stacked_residual(), dense_covariance(in));
}

struct BandedReport {
  BandStats band;
  bool dense_fallback = false;
  std::string warning;
};

// Exact log-likelihood through the band structure of W^{-1} = U^{-1} (x) V^{-1}:
//   (sigma^2 I + W)^{-1} = sigma^{-2} I - sigma^{-4} (W^{-1} + sigma^{-2} I)^{-1}
//   log det(sigma^2 I + W) = log det(I + sigma^2 W^{-1}) - log det(W^{-1}).
// W^{-1} + sigma^{-2} I is block tridiagonal with m x m blocks, so its lower
// bandwidth is 2m - 1. No Nm-dimensional dense matrix is formed unless V is
// singular, in which case the dense route is used and report() says so.
//
// The factorization depends only on (V, k, N, sigma^2), so one object can
// score many mean vectors, e.g. every point of a parameter grid.
class BandedLikelihood {
 public:
  BandedLikelihood(const Eigen::MatrixXd& V, int k, int N, double sigma2)
      : m_(V.rows()), k_(k), N_(N), sigma2_(sigma2) {
    if (N < 1 || k < 1) throw InvalidArgument("N and k must be >= 1");
    if (V.rows() != V.cols()) throw InvalidArgument("V must be square");
    if (!(sigma2 >= 0)) throw InvalidArgument("sigma2 must be non-negative");
    Eigen::LLT<Eigen::MatrixXd> v_llt(V);
    if (v_llt.info() != Eigen::Success) {
      LikelihoodInputs shape;
      shape.V = V;
      shape.k = k;
      shape.N = N;
      shape.sigma2 = sigma2;
      dense_.compute(dense_covariance(shape));
      if (dense_.info() != Eigen::Success)
        throw NotPositiveDefinite("observation covariance is not positive definite");
      const Eigen::MatrixXd& L = dense_.matrixL();
      dense_log_det_ = 2.0 * L.diagonal().array().log().sum();
      report_.dense_fallback = true;
      report_.warning = "V is singular; evaluated with the dense likelihood";
      return;
    }
    const Eigen::MatrixXd v_inv = v_llt.solve(Eigen::MatrixXd::Identity(m_, m_));
    const Eigen::MatrixXd& Lv = v_llt.matrixL();
    const double log_det_v = 2.0 * Lv.diagonal().array().log().sum();
    const Eigen::MatrixXd u_inv = build_u_inverse(N, k);
    // log det W^{-1} = m log det U^{-1} + N log det V^{-1}
    log_det_w_inv_ =
        static_cast<double>(m_) * tridiagonal_log_det(u_inv) - static_cast<double>(N) * log_det_v;

    const std::size_t dim = static_cast<std::size_t>(N * m_);
    tau_ = sigma2 > 0 ? 1.0 / sigma2 : 0.0;
    const std::size_t bw = N > 1 ? static_cast<std::size_t>(2 * m_ - 1) : static_cast<std::size_t>(m_ - 1);
    SymBandMatrix q(dim, bw);
    for (int a = 0; a < N; ++a)
      for (int b = std::max(0, a - 1); b <= a; ++b) {
        const double u = u_inv(a, b);
        for (Eigen::Index i = 0; i < m_; ++i)
          for (Eigen::Index j = 0; j < m_; ++j) {
            const std::size_t gi = static_cast<std::size_t>(a * m_ + i);
            const std::size_t gj = static_cast<std::size_t>(b * m_ + j);
            if (gj > gi) continue;
            double val = u * v_inv(i, j);
            if (gi == gj) val += tau_;
            q.lower(gi, gj) = val;
          }
      }
    chol_.emplace(std::move(q));
    report_.band = chol_->stats();
    if (sigma2 > 0)
      log_det_ = static_cast<double>(dim) * std::log(sigma2) + chol_->log_det() - log_det_w_inv_;
  }

  const BandedReport& report() const { return report_; }

  // log N(r; 0, U (x) V + sigma^2 I) for a stacked, time-major residual.
  double operator()(const Eigen::VectorXd& r) const {
    const auto dim = static_cast<double>(N_ * m_);
    if (r.size() != N_ * m_) throw InvalidArgument("residual length must be N m");
    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (report_.dense_fallback) {
      const Eigen::VectorXd z = dense_.matrixL().solve(r);
      return -0.5 * (dim * log2pi + dense_log_det_ + z.squaredNorm());
    }
    if (sigma2_ == 0.0) {
      // Sigma_l = W, whose inverse is the factorized band matrix itself.
      return -0.5 * (dim * log2pi - log_det_w_inv_ + chol_->product_norm2(r));
    }
    const double quad = tau_ * r.squaredNorm() - tau_ * tau_ * chol_->quad_form(r);
    return -0.5 * (dim * log2pi + log_det_ + quad);
  }

  double operator()(const LikelihoodInputs& in) const {
    in.check();
    if (in.m() != m_ || in.N != N_ || in.k != k_ || in.sigma2 != sigma2_)
      throw InvalidArgument("inputs do not match the prepared likelihood");
    return (*this)(in.stacked_residual());
  }

 private:
  Eigen::Index m_;
  int k_;
  int N_;
  double sigma2_;
  double tau_ = 0.0;
  double log_det_w_inv_ = 0.0;
  double log_det_ = 0.0;
  std::optional<BandCholesky> chol_;
  Eigen::LLT<Eigen::MatrixXd> dense_;
  double dense_log_det_ = 0.0;
  BandedReport report_;
};

// One-shot evaluation: factorizes, then scores `in`.
inline double exact_loglik_banded(const LikelihoodInputs& in, BandedReport* report = nullptr) {
  in.check();
  BandedLikelihood lik(in.V, in.k, in.N, in.sigma2);
  if (report) *report = lik.report();
  return lik(in.stacked_residual());
}

// Term c (1-based) of the component-wise approximation:
//   c = 1:  N(y_k; A f(k), k V + sigma^2 I)
//   c >= 2: N(y_ck; y_(c-1)k + A[f(ck) - f((c-1)k)], k V + 2 sigma^2 I)
inline double approx_loglik_component(int c, const LikelihoodInputs& in) {
  if (c < 1 || c > in.N)
    throw InvalidArgument("component index " + std::to_string(c) + " outside [1, " +
                          std::to_string(in.N) + "]");
  Eigen::MatrixXd C = static_cast<double>(in.k) * in.V;
  Eigen::VectorXd r;
  if (c == 1) {
    C.diagonal().array() += in.sigma2;
    r = in.y[0] - in.mu_blocks[0];
  } else {
    C.diagonal().array() += 2.0 * in.sigma2;
    r = in.y[c - 1] - in.y[c - 2] - (in.mu_blocks[c - 1] - in.mu_blocks[c - 2]);
  }
  return mvn_logpdf_zero_mean(r, C);
}

// Number of worker threads: HIERSIM_THREADS if set, else hardware concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("HIERSIM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, count) over `threads` workers, strided so every
// index belongs to exactly one worker. Results must be written by index.
template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Component-wise approximation with both m x m factorizations done once.
class ApproxLikelihood {
 public:
  ApproxLikelihood(const Eigen::MatrixXd& V, int k, int N, double sigma2) : N_(N), m_(V.rows()) {
    if (N < 1 || k < 1) throw InvalidArgument("N and k must be >= 1");
    Eigen::MatrixXd C = static_cast<double>(k) * V;
    C.diagonal().array() += sigma2;
    first_.compute(C);
    C.diagonal().array() += sigma2;
    rest_.compute(C);
    if (first_.info() != Eigen::Success || rest_.info() != Eigen::Success)
      throw NotPositiveDefinite("covariance is not positive definite");
    const Eigen::MatrixXd& L1 = first_.matrixL();
    const Eigen::MatrixXd& L2 = rest_.matrixL();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const_first_ = -0.5 * (static_cast<double>(m_) * log2pi + 2.0 * L1.diagonal().array().log().sum());
    const_rest_ = -0.5 * (static_cast<double>(m_) * log2pi + 2.0 * L2.diagonal().array().log().sum());
  }

  double component(int c, const LikelihoodInputs& in) const {
    if (c < 1 || c > N_)
      throw InvalidArgument("component index " + std::to_string(c) + " outside [1, " +
                            std::to_string(N_) + "]");
    if (c == 1) {
      const Eigen::VectorXd z = first_.matrixL().solve(in.y[0] - in.mu_blocks[0]);
      return const_first_ - 0.5 * z.squaredNorm();
    }
    const Eigen::VectorXd r = in.y[c - 1] - in.y[c - 2] - (in.mu_blocks[c - 1] - in.mu_blocks[c - 2]);
    const Eigen::VectorXd z = rest_.matrixL().solve(r);
    return const_rest_ - 0.5 * z.squaredNorm();
  }

  // Components are evaluated independently (in parallel when threads > 1)
  // and reduced in index order, so the result does not depend on the
  // thread count.
  double operator()(const LikelihoodInputs& in, unsigned threads = 1) const {
    in.check();
    if (in.N != N_ || in.m() != m_) throw InvalidArgument("inputs do not match the prepared likelihood");
    std::vector<double> terms(static_cast<std::size_t>(N_));
    parallel_for(terms.size(), threads,
                 [&](std::size_t i) { terms[i] = component(static_cast<int>(i) + 1, in); });
    double total = 0.0;
    for (double t : terms) total += t;
    return total;
  }

 private:
  int N_;
  Eigen::Index m_;
  Eigen::LLT<Eigen::MatrixXd> first_;
  Eigen::LLT<Eigen::MatrixXd> rest_;
  double const_first_ = 0.0;
  double const_rest_ = 0.0;
};

// Sum of all N components of the approximation.
inline double approx_loglik(const LikelihoodInputs& in, unsigned threads = 1) {
  in.check();
  return ApproxLikelihood(in.V, in.k, in.N, in.sigma2)(in, threads);
}

}  // namespace hiersim
