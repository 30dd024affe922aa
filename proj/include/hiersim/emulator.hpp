#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hiersim/error.hpp"
#include "hiersim/forest.hpp"
#include "hiersim/likelihood.hpp"
#include "hiersim/sia.hpp"

namespace hiersim {

// SVD factors of one epoch's snapshot matrix M (n x p), M = U D W^T.
// Row q of W holds the right-singular-vector entries of training run q.
struct EpochFactors {
  int step = 0;
  Eigen::MatrixXd U;  // n x r
  Eigen::VectorXd D;  // r
  Eigen::MatrixXd W;  // p x r
};

struct EmulatorOptions {
  std::string regressor = "forest";  // or "linear"
  ForestParams forest;
  unsigned threads = 1;
  // Snapshot cache directory; empty disables caching.
  std::string cache_dir;
};

struct EmulatorModel {
  static constexpr int kFormatVersion = 1;

  Eigen::MatrixXd design;  // p x d training parameters
  std::string regressor = "forest";
  std::vector<EpochFactors> epochs;
  // coeffs[e][j] predicts entry j of v_ck(theta) when d == 1.
  std::vector<std::vector<PiecewiseFunction>> coeffs;
  // Used instead of coeffs when d > 1.
  std::vector<std::vector<RandomForest>> forests;

  int p() const { return static_cast<int>(design.rows()); }
  int d() const { return static_cast<int>(design.cols()); }
  Eigen::Index n() const { return epochs.empty() ? 0 : epochs.front().U.rows(); }

  std::size_t epoch_index(int step) const {
    for (std::size_t e = 0; e < epochs.size(); ++e)
      if (epochs[e].step == step) return e;
    throw InvalidArgument("emulator was not trained for step " + std::to_string(step));
  }

  // Inside the bounding box of the training design.
  bool in_training_range(const Eigen::VectorXd& theta) const {
    for (int j = 0; j < d(); ++j)
      if (theta[j] < design.col(j).minCoeff() || theta[j] > design.col(j).maxCoeff()) return false;
    return true;
  }

  // v_ck(theta), one entry per retained singular vector.
  Eigen::VectorXd coefficients(const Eigen::VectorXd& theta, std::size_t e) const {
    if (theta.size() != d()) throw InvalidArgument("parameter has the wrong dimension");
    const Eigen::Index r = epochs[e].D.size();
    Eigen::VectorXd v(r);
    if (d() == 1)
      for (Eigen::Index j = 0; j < r; ++j) v[j] = coeffs[e][static_cast<std::size_t>(j)](theta[0]);
    else
      for (Eigen::Index j = 0; j < r; ++j) v[j] = forests[e][static_cast<std::size_t>(j)].predict(theta);
    return v;
  }
};

// Number of singular vectors kept: all of them when p <= n / 4, otherwise
// the elbow of the scree plot (point farthest from the chord joining the
// first and last singular values).
inline Eigen::Index retained_rank(const Eigen::VectorXd& D, Eigen::Index n) {
  const Eigen::Index p = D.size();
  if (4 * p <= n || p <= 2) return p;
  const double x0 = 0, y0 = D[0], x1 = static_cast<double>(p - 1), y1 = D[p - 1];
  const double len = std::hypot(x1 - x0, y1 - y0);
  Eigen::Index best = 0;
  double best_dist = -1.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double dist = std::abs((y1 - y0) * static_cast<double>(i) - (x1 - x0) * D[i] + x1 * y0 - y1 * x0) / len;
    if (dist > best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return best + 1;
}

// Decomposes one snapshot matrix and fits one regressor per retained
// right singular vector.
inline void fit_epoch(EmulatorModel& model, std::size_t e, const Eigen::MatrixXd& M, const EmulatorOptions& opt) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index r = retained_rank(svd.singularValues(), M.rows());
  EpochFactors& f = model.epochs[e];
  f.U = svd.matrixU().leftCols(r);
  f.D = svd.singularValues().head(r);
  f.W = svd.matrixV().leftCols(r);
  const int p = model.p();
  model.coeffs[e].clear();
  model.forests[e].clear();
  for (Eigen::Index j = 0; j < r; ++j) {
    const Eigen::VectorXd target = f.W.col(j);
    if (opt.regressor == "linear") {
      if (model.d() != 1) throw InvalidArgument("the linear interpolator needs a single parameter");
      std::vector<double> x(static_cast<std::size_t>(p)), y(static_cast<std::size_t>(p));
      for (int q = 0; q < p; ++q) {
        x[q] = model.design(q, 0);
        y[q] = target[q];
      }
      model.coeffs[e].push_back(linear_interpolator(x, y));
    } else {
      ForestParams fp = opt.forest;
      fp.seed = mix_seed(opt.forest.seed, static_cast<std::uint64_t>(e) * 1000003u + static_cast<std::uint64_t>(j));
      RandomForest forest;
      forest.fit(model.design, target, fp);
      if (model.d() == 1) model.coeffs[e].push_back(forest.compile_1d());
      else model.forests[e].push_back(std::move(forest));
    }
  }
}

// Builds the emulator from solver runs. `run(theta)` must return a
// trajectory containing every step in `steps`.
inline EmulatorModel train_emulator(const Eigen::MatrixXd& design,
                                    const std::function<Trajectory(const Eigen::VectorXd&)>& run,
                                    const std::vector<int>& steps, const EmulatorOptions& opt = {}) {
  const int p = static_cast<int>(design.rows());
  if (p < 2) throw InvalidArgument("emulator needs at least 2 training parameters");
  if (steps.empty()) throw InvalidArgument("emulator needs at least one epoch");
  if (opt.regressor != "forest" && opt.regressor != "linear")
    throw InvalidArgument("unknown regressor '" + opt.regressor + "'");
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b)
      if (design.row(a) == design.row(b)) throw InvalidArgument("training parameters must be distinct");

  std::vector<Trajectory> runs(static_cast<std::size_t>(p));
  parallel_for(runs.size(), opt.threads, [&](std::size_t q) {
    const Eigen::VectorXd theta = design.row(static_cast<Eigen::Index>(q)).transpose();
    try {
      runs[q] = run(theta);
    } catch (const InstabilityError& e) {
      std::ostringstream os;
      os << "training run at theta = " << theta.transpose() << " failed: " << e.what();
      throw InstabilityError(os.str(), e.step());
    }
  });

  EmulatorModel model;
  model.design = design;
  model.regressor = opt.regressor;
  model.epochs.resize(steps.size());
  model.coeffs.resize(steps.size());
  model.forests.resize(steps.size());
  parallel_for(steps.size(), opt.threads, [&](std::size_t e) {
    const Eigen::Index n = runs.front().at_step(steps[e]).size();
    Eigen::MatrixXd M(n, p);
    for (int q = 0; q < p; ++q) M.col(q) = runs[static_cast<std::size_t>(q)].at_step(steps[e]);
    model.epochs[e].step = steps[e];
    fit_epoch(model, e, M, opt);
  });
  return model;
}

// Emulator for the SIA solver over a 1-D softness design (SI units).
inline EmulatorModel train_sia_emulator(const SiaSolver& solver, const std::vector<double>& thetas,
                                        const std::vector<int>& steps, const EmulatorOptions& opt = {}) {
  Eigen::MatrixXd design(static_cast<Eigen::Index>(thetas.size()), 1);
  for (std::size_t q = 0; q < thetas.size(); ++q) design(static_cast<Eigen::Index>(q), 0) = thetas[q];
  const int last = *std::max_element(steps.begin(), steps.end());
  auto run = [&](const Eigen::VectorXd& theta) {
    std::string path;
    Trajectory traj;
    if (!opt.cache_dir.empty()) {
      std::filesystem::create_directories(opt.cache_dir);
      path = (std::filesystem::path(opt.cache_dir) /
              ("snapshots_" + hash_hex(solver.config().canonical() + theta_text(theta[0])) + "_" +
               std::to_string(last) + ".csv"))
                 .string();
      if (read_trajectory(path, solver.config(), traj, theta[0])) return traj;
    }
    traj = solver.run(theta[0], last);
    if (!path.empty()) write_trajectory(traj, path);
    return traj;
  };
  return train_emulator(design, run, steps, opt);
}

struct EmulatedField {
  Eigen::VectorXd values;
  bool outside_training_range = false;
};

// U_ck D_ck v_ck(theta).
inline EmulatedField emulate(const EmulatorModel& model, const Eigen::VectorXd& theta, int step) {
  const std::size_t e = model.epoch_index(step);
  const EpochFactors& f = model.epochs[e];
  EmulatedField out;
  out.values = f.U * (f.D.array() * model.coefficients(theta, e).array()).matrix();
  out.outside_training_range = !model.in_training_range(theta);
  return out;
}

inline EmulatedField emulate(const EmulatorModel& model, double theta, int step) {
  return emulate(model, Eigen::VectorXd::Constant(1, theta), step);
}

// Emulated output at the observed sites only, one block per epoch of `obs`.
inline std::vector<Eigen::VectorXd> emulated_means(const EmulatorModel& model, const Eigen::VectorXd& theta,
                                                   const ObservationSet& obs) {
  std::vector<Eigen::VectorXd> mu;
  mu.reserve(static_cast<std::size_t>(obs.N));
  for (int step : obs.epochs()) {
    const std::size_t e = model.epoch_index(step);
    const EpochFactors& f = model.epochs[e];
    const Eigen::VectorXd w = f.D.array() * model.coefficients(theta, e).array();
    Eigen::VectorXd block(obs.m());
    for (int a = 0; a < obs.m(); ++a) block[a] = f.U.row(obs.sites[a]).dot(w);
    mu.push_back(std::move(block));
  }
  return mu;
}

// Solver output at the observed sites, one block per epoch of `obs`.
inline std::vector<Eigen::VectorXd> solver_means(const SiaSolver& solver, double theta, const ObservationSet& obs) {
  const Trajectory traj = solver.run(theta, obs.N * obs.k, obs.k);
  std::vector<Eigen::VectorXd> mu;
  mu.reserve(static_cast<std::size_t>(obs.N));
  for (int step : obs.epochs()) mu.push_back(obs.select(traj.at_step(step)));
  return mu;
}

inline Eigen::VectorXd stack_residual(const ObservationSet& obs, const std::vector<Eigen::VectorXd>& mu) {
  const int m = obs.m();
  Eigen::VectorXd r(obs.N * m);
  for (int c = 0; c < obs.N; ++c) r.segment(c * m, m) = obs.y[static_cast<std::size_t>(c)] - mu[static_cast<std::size_t>(c)];
  return r;
}

// Exact log-likelihood with the simulator replaced by the emulator.
inline double emulated_loglik(const EmulatorModel& model, double theta, const ObservationSet& obs,
                              const BandedLikelihood& lik) {
  return lik(stack_residual(obs, emulated_means(model, Eigen::VectorXd::Constant(1, theta), obs)));
}

inline double emulated_loglik(const EmulatorModel& model, double theta, const ObservationSet& obs,
                              const Eigen::MatrixXd& V) {
  return exact_loglik_banded(make_inputs(obs, V, emulated_means(model, Eigen::VectorXd::Constant(1, theta), obs)));
}

// ---------------------------------------------------------------------------
// Serialization: versioned plain text, doubles written with 17 digits.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& M) {
  out << M.rows() << ' ' << M.cols() << '\n';
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) out << (j ? " " : "") << M(i, j);
    out << '\n';
  }
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
  Eigen::Index r = 0, c = 0;
  if (!(in >> r >> c) || r < 0 || c < 0) throw Error("corrupt emulator file: bad matrix header");
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      if (!(in >> M(i, j))) throw Error("corrupt emulator file: truncated matrix");
  return M;
}

inline void expect(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word)
    throw Error("corrupt emulator file: expected '" + word + "', got '" + got + "'");
}

template <typename T>
std::vector<T> read_vector(std::istream& in) {
  std::size_t count = 0;
  if (!(in >> count)) throw Error("corrupt emulator file: bad vector length");
  std::vector<T> out(count);
  for (auto& v : out)
    if (!(in >> v)) throw Error("corrupt emulator file: truncated vector");
  return out;
}

template <typename T>
void write_vector(std::ostream& out, const std::vector<T>& v) {
  out << v.size();
  for (const auto& x : v) out << ' ' << x;
  out << '\n';
}

}  // namespace detail

inline void save_emulator(const EmulatorModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << std::setprecision(17);
  out << "hiersim-emulator " << EmulatorModel::kFormatVersion << '\n';
  out << "regressor " << model.regressor << '\n';
  out << "design ";
  detail::write_matrix(out, model.design);
  out << "epochs " << model.epochs.size() << '\n';
  for (std::size_t e = 0; e < model.epochs.size(); ++e) {
    const EpochFactors& f = model.epochs[e];
    out << "epoch " << f.step << '\n' << "U ";
    detail::write_matrix(out, f.U);
    out << "D ";
    detail::write_matrix(out, f.D);
    out << "W ";
    detail::write_matrix(out, f.W);
    if (model.d() == 1) {
      for (const auto& c : model.coeffs[e]) {
        out << "piecewise " << (c.kind() == PiecewiseFunction::Kind::Step ? "step" : "linear") << '\n';
        detail::write_vector(out, c.knots());
        detail::write_vector(out, c.values());
      }
    } else {
      for (const auto& forest : model.forests[e]) {
        out << "forest " << forest.trees().size() << '\n';
        for (const auto& tree : forest.trees()) {
          out << "tree " << tree.nodes().size() << '\n';
          for (const auto& nd : tree.nodes())
            out << nd.feature << ' ' << nd.threshold << ' ' << nd.left << ' ' << nd.right << ' ' << nd.value << '\n';
        }
      }
    }
  }
  if (!out) throw Error("error while writing " + path);
}

inline EmulatorModel load_emulator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  detail::expect(in, "hiersim-emulator");
  int version = 0;
  in >> version;
  if (version != EmulatorModel::kFormatVersion)
    throw Error("unsupported emulator file version " + std::to_string(version));
  EmulatorModel model;
  detail::expect(in, "regressor");
  in >> model.regressor;
  detail::expect(in, "design");
  model.design = detail::read_matrix(in);
  detail::expect(in, "epochs");
  std::size_t count = 0;
  in >> count;
  model.epochs.resize(count);
  model.coeffs.resize(count);
  model.forests.resize(count);
  for (std::size_t e = 0; e < count; ++e) {
    EpochFactors& f = model.epochs[e];
    detail::expect(in, "epoch");
    in >> f.step;
    detail::expect(in, "U");
    f.U = detail::read_matrix(in);
    detail::expect(in, "D");
    f.D = detail::read_matrix(in);
    detail::expect(in, "W");
    f.W = detail::read_matrix(in);
    for (Eigen::Index j = 0; j < f.D.size(); ++j) {
      if (model.d() == 1) {
        detail::expect(in, "piecewise");
        std::string kind;
        in >> kind;
        auto knots = detail::read_vector<double>(in);
        auto values = detail::read_vector<double>(in);
        model.coeffs[e].emplace_back(kind == "step" ? PiecewiseFunction::Kind::Step : PiecewiseFunction::Kind::Linear,
                                     std::move(knots), std::move(values));
      } else {
        detail::expect(in, "forest");
        std::size_t trees = 0;
        in >> trees;
        RandomForest forest;
        forest.set_dim(model.d());
        forest.trees().resize(trees);
        for (auto& tree : forest.trees()) {
          detail::expect(in, "tree");
          std::size_t nodes = 0;
          in >> nodes;
          tree.nodes().resize(nodes);
          for (auto& nd : tree.nodes()) in >> nd.feature >> nd.threshold >> nd.left >> nd.right >> nd.value;
        }
        model.forests[e].push_back(std::move(forest));
      }
    }
    if (!in) throw Error("corrupt emulator file: truncated epoch " + std::to_string(e));
  }
  return model;
}

}  // namespace hiersim
