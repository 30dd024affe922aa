#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hiersim/error.hpp"

namespace hiersim {

// SplitMix64 step; used to derive independent seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct ForestParams {
  int trees = 500;
  // Nodes holding at most this many samples are not split further.
  int node_size = 5;
  // Features tried per split; 0 means max(1, d / 3).
  int mtry = 0;
  std::uint64_t seed = 1;
};

// CART regression tree grown on a bootstrap sample, squared-error splits.
class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  RegressionTree() = default;

  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int> rows,
           const ForestParams& params, std::mt19937_64& rng) {
    nodes_.clear();
    grow(X, y, rows, params, rng);
  }

  double predict(const Eigen::VectorXd& x) const {
    int at = 0;
    while (nodes_[at].feature >= 0)
      at = x[nodes_[at].feature] <= nodes_[at].threshold ? nodes_[at].left : nodes_[at].right;
    return nodes_[at].value;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }

 private:
  int grow(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<int>& rows,
           const ForestParams& params, std::mt19937_64& rng) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double mean = 0.0;
    for (int r : rows) mean += y[r];
    mean /= static_cast<double>(rows.size());
    nodes_[id].value = mean;
    if (static_cast<int>(rows.size()) <= params.node_size) return id;

    const int d = static_cast<int>(X.cols());
    const int mtry = params.mtry > 0 ? std::min(params.mtry, d) : std::max(1, d / 3);
    std::vector<int> features(static_cast<std::size_t>(d));
    std::iota(features.begin(), features.end(), 0);
    std::shuffle(features.begin(), features.end(), rng);

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<int> order = rows;
    for (int f = 0; f < mtry; ++f) {
      const int feat = features[f];
      std::sort(order.begin(), order.end(), [&](int a, int b) { return X(a, feat) < X(b, feat); });
      double total = 0.0, total2 = 0.0;
      for (int r : order) {
        total += y[r];
        total2 += y[r] * y[r];
      }
      double left = 0.0, left2 = 0.0;
      const int count = static_cast<int>(order.size());
      for (int i = 0; i + 1 < count; ++i) {
        left += y[order[i]];
        left2 += y[order[i]] * y[order[i]];
        const double xa = X(order[i], feat);
        const double xb = X(order[i + 1], feat);
        if (!(xa < xb)) continue;
        const double nl = i + 1.0;
        const double nr = count - nl;
        const double right = total - left;
        const double right2 = total2 - left2;
        const double sse = (left2 - left * left / nl) + (right2 - right * right / nr);
        if (sse < best_score) {
          best_score = sse;
          best_feature = feat;
          best_threshold = 0.5 * (xa + xb);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<int> lo, hi;
    for (int r : rows) (X(r, best_feature) <= best_threshold ? lo : hi).push_back(r);
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    const int l = grow(X, y, lo, params, rng);
    nodes_[id].left = l;
    const int h = grow(X, y, hi, params, rng);
    nodes_[id].right = h;
    return id;
  }

  std::vector<Node> nodes_;
};

// Piecewise function of one variable, either a step function (what a 1-D
// forest is) or a linear interpolant clamped at both ends.
class PiecewiseFunction {
 public:
  enum class Kind { Step, Linear };

  PiecewiseFunction() = default;
  // Step: `knots` are K sorted breaks, `values` has K + 1 entries; interval
  // i is (knots[i-1], knots[i]]. Linear: knots and values are the nodes.
  PiecewiseFunction(Kind kind, std::vector<double> knots, std::vector<double> values)
      : kind_(kind), knots_(std::move(knots)), values_(std::move(values)) {
    const std::size_t want = kind_ == Kind::Step ? knots_.size() + 1 : knots_.size();
    if (values_.size() != want || values_.empty())
      throw InvalidArgument("piecewise function has inconsistent knots and values");
    if (!std::is_sorted(knots_.begin(), knots_.end()))
      throw InvalidArgument("piecewise function knots must be sorted");
  }

  Kind kind() const { return kind_; }
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }

  double operator()(double x) const {
    if (kind_ == Kind::Step) {
      const auto i = std::lower_bound(knots_.begin(), knots_.end(), x) - knots_.begin();
      return values_[static_cast<std::size_t>(i)];
    }
    if (x <= knots_.front()) return values_.front();
    if (x >= knots_.back()) return values_.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), x) - knots_.begin());
    const std::size_t lo = hi - 1;
    const double w = (x - knots_[lo]) / (knots_[hi] - knots_[lo]);
    return (1.0 - w) * values_[lo] + w * values_[hi];
  }

 private:
  Kind kind_ = Kind::Step;
  std::vector<double> knots_;
  std::vector<double> values_;
};

inline PiecewiseFunction linear_interpolator(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("need >= 2 interpolation nodes");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> xs, ys;
  for (auto i : idx) {
    if (!xs.empty() && xs.back() == x[i]) throw InvalidArgument("duplicate interpolation node");
    xs.push_back(x[i]);
    ys.push_back(y[i]);
  }
  return {PiecewiseFunction::Kind::Linear, std::move(xs), std::move(ys)};
}

// Breiman random forest for regression: bootstrap samples, random feature
// subsets, prediction = average of trees.
class RandomForest {
 public:
  RandomForest() = default;

  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestParams& params) {
    if (X.rows() != y.size() || X.rows() < 1) throw InvalidArgument("forest needs one target per row");
    if (params.trees < 1 || params.node_size < 1) throw InvalidArgument("invalid forest parameters");
    dim_ = static_cast<int>(X.cols());
    trees_.assign(static_cast<std::size_t>(params.trees), RegressionTree{});
    std::mt19937_64 rng(params.seed);
    const int p = static_cast<int>(X.rows());
    std::uniform_int_distribution<int> pick(0, p - 1);
    for (auto& tree : trees_) {
      std::vector<int> rows(static_cast<std::size_t>(p));
      for (int& r : rows) r = pick(rng);
      tree.fit(X, y, rows, params, rng);
    }
  }

  int dim() const { return dim_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  std::vector<RegressionTree>& trees() { return trees_; }
  void set_dim(int d) { dim_ = d; }

  double predict(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) throw InvalidArgument("forest input has the wrong dimension");
    double out = 0.0;
    for (const auto& t : trees_) out += t.predict(x);
    return out / static_cast<double>(trees_.size());
  }

  // A forest on one input is a step function whose breaks are the union of
  // all split thresholds; this returns it exactly.
  PiecewiseFunction compile_1d() const {
    if (dim_ != 1) throw InvalidArgument("only single-input forests compile to a step function");
    std::vector<double> breaks;
    for (const auto& t : trees_)
      for (const auto& n : t.nodes())
        if (n.feature >= 0) breaks.push_back(n.threshold);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    std::vector<double> values;
    Eigen::VectorXd x(1);
    for (double b : breaks) {
      x[0] = b;
      values.push_back(predict(x));
    }
    x[0] = breaks.empty() ? 0.0 : std::nextafter(breaks.back(), std::numeric_limits<double>::infinity());
    values.push_back(predict(x));
    return {PiecewiseFunction::Kind::Step, std::move(breaks), std::move(values)};
  }

 private:
  int dim_ = 0;
  std::vector<RegressionTree> trees_;
};

}  // namespace hiersim
