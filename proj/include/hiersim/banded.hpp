#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hiersim/error.hpp"

namespace hiersim {

// Work counters for banded factorizations. `flops` counts multiply-adds.
struct BandStats {
  std::size_t dim = 0;
  std::size_t bandwidth = 0;
  std::size_t stored = 0;
  std::size_t flops = 0;
};

// Symmetric matrix with `bandwidth` sub-diagonals, lower half stored row by
// row: row i keeps columns [i - bandwidth, i], so row dot products in the
// factorization are contiguous.
class SymBandMatrix {
 public:
  SymBandMatrix(std::size_t dim, std::size_t bandwidth)
      : dim_(dim), bw_(bandwidth), data_(dim * (bandwidth + 1), 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t bandwidth() const { return bw_; }
  std::size_t stored() const { return data_.size(); }

  // Requires j <= i <= j + bandwidth.
  double& lower(std::size_t i, std::size_t j) { return data_[i * (bw_ + 1) + (j + bw_ - i)]; }
  double lower(std::size_t i, std::size_t j) const { return data_[i * (bw_ + 1) + (j + bw_ - i)]; }
  const double* lower_ptr(std::size_t i, std::size_t j) const { return &data_[i * (bw_ + 1) + (j + bw_ - i)]; }

  double operator()(std::size_t i, std::size_t j) const {
    if (i < j) std::swap(i, j);
    return i - j > bw_ ? 0.0 : lower(i, j);
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim_),
                                                static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = i > bw_ ? i - bw_ : 0; j <= i; ++j)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = lower(i, j);
    return out;
  }

 private:
  friend class BandCholesky;
  std::size_t dim_;
  std::size_t bw_;
  std::vector<double> data_;
};

// In-place banded Cholesky A = L L^T, O(dim * bandwidth^2).
class BandCholesky {
 public:
  explicit BandCholesky(SymBandMatrix a) : l_(std::move(a)) { factorize(); }

  const BandStats& stats() const { return stats_; }

  double log_det() const {
    double out = 0.0;
    for (std::size_t i = 0; i < l_.dim(); ++i) out += std::log(l_.lower(i, i));
    return 2.0 * out;
  }

  // Solves L z = b.
  Eigen::VectorXd solve_lower(const Eigen::VectorXd& b) const {
    const std::size_t n = l_.dim();
    const std::size_t bw = l_.bandwidth();
    Eigen::VectorXd z = b;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t first = i > bw ? i - bw : 0;
      const auto len = static_cast<Eigen::Index>(i - first);
      double acc = z[static_cast<Eigen::Index>(i)];
      if (len > 0)
        acc -= Eigen::Map<const Eigen::VectorXd>(l_.lower_ptr(i, first), len)
                   .dot(z.segment(static_cast<Eigen::Index>(first), len));
      z[static_cast<Eigen::Index>(i)] = acc / l_.lower(i, i);
    }
    return z;
  }

  // Solves A x = b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    const std::size_t n = l_.dim();
    const std::size_t bw = l_.bandwidth();
    Eigen::VectorXd x = solve_lower(b);
    for (std::size_t ii = n; ii-- > 0;) {
      double acc = x[static_cast<Eigen::Index>(ii)];
      const std::size_t end = std::min(n, ii + bw + 1);
      for (std::size_t i = ii + 1; i < end; ++i)
        acc -= l_.lower(i, ii) * x[static_cast<Eigen::Index>(i)];
      x[static_cast<Eigen::Index>(ii)] = acc / l_.lower(ii, ii);
    }
    return x;
  }

  // b^T A b = |L^T b|^2.
  double product_norm2(const Eigen::VectorXd& b) const {
    const std::size_t n = l_.dim();
    const std::size_t bw = l_.bandwidth();
    double out = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const std::size_t end = std::min(n, j + bw + 1);
      for (std::size_t i = j; i < end; ++i) acc += l_.lower(i, j) * b[static_cast<Eigen::Index>(i)];
      out += acc * acc;
    }
    return out;
  }

  // b^T A^{-1} b = |L^{-1} b|^2.
  double quad_form(const Eigen::VectorXd& b) const { return solve_lower(b).squaredNorm(); }

 private:
  void factorize() {
    const std::size_t n = l_.dim();
    const std::size_t bw = l_.bandwidth();
    const std::size_t w = bw + 1;
    double* a = l_.data_.data();
    stats_.dim = n;
    stats_.bandwidth = bw;
    stats_.stored = l_.stored();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t first = i > bw ? i - bw : 0;
      double* row_i = a + i * w + (bw - i);  // row_i[j] == L(i, j)
      for (std::size_t j = first; j <= i; ++j) {
        const double* row_j = a + j * w + (bw - j);
        const std::size_t lo = std::max(first, j > bw ? j - bw : std::size_t{0});
        const auto len = static_cast<Eigen::Index>(j - lo);
        double acc = row_i[j];
        if (len > 0) acc -= Eigen::Map<const Eigen::VectorXd>(row_i + lo, len).dot(
                         Eigen::Map<const Eigen::VectorXd>(row_j + lo, len));
        stats_.flops += j - lo;
        if (j == i) {
          if (!(acc > 0.0) || !std::isfinite(acc))
            throw NotPositiveDefinite("banded Cholesky failed at row " + std::to_string(i));
          row_i[i] = std::sqrt(acc);
        } else {
          row_i[j] = acc / row_j[j];
        }
      }
    }
  }

  SymBandMatrix l_;
  BandStats stats_;
};

}  // namespace hiersim
