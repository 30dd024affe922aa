#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hiersim/config.hpp"
#include "hiersim/error.hpp"

namespace hiersim {

// ---------------------------------------------------------------------------
// Analytic oscillating solution
// ---------------------------------------------------------------------------

// Static dome: H0 / (1 - 1/n)^{n/(2n+2)} * [(1 + 1/n)s - 1/n + (1 - s)^{1+1/n} - s^{1+1/n}]^{n/(2n+2)}
// with s = r / L, zero beyond the margin.
inline double static_dome(double r, const GlacierConfig& cfg) {
  const double s = r / cfg.L;
  if (s >= 1.0) return 0.0;
  const double n = cfg.n_glen;
  const double p = 1.0 + 1.0 / n;
  const double e = n / (2.0 * n + 2.0);
  const double bracket = p * s - 1.0 / n + std::pow(1.0 - s, p) - std::pow(s, p);
  if (bracket <= 0.0) return 0.0;
  return cfg.H0 / std::pow(1.0 - 1.0 / n, e) * std::pow(bracket, e);
}

inline bool in_annulus(double r, const GlacierConfig& cfg) {
  return r > 0.3 * cfg.L && r < 0.9 * cfg.L;
}

inline double perturbation(double r, double t, const GlacierConfig& cfg) {
  if (!in_annulus(r, cfg)) return 0.0;
  const double c = std::cos(std::numbers::pi * (r - 0.6 * cfg.L) / (0.6 * cfg.L));
  return cfg.Cp * std::sin(2.0 * std::numbers::pi * t / cfg.Tp) * c * c;
}

inline double perturbation_rate(double r, double t, const GlacierConfig& cfg) {
  if (!in_annulus(r, cfg)) return 0.0;
  const double c = std::cos(std::numbers::pi * (r - 0.6 * cfg.L) / (0.6 * cfg.L));
  const double w = 2.0 * std::numbers::pi / cfg.Tp;
  return cfg.Cp * w * std::cos(w * t) * c * c;
}

// H(r, t) = H_s(r) + P(r, t) in meters; t in years.
inline double analytic_thickness(double r, double t, const GlacierConfig& cfg) {
  return std::max(0.0, static_dome(r, cfg) + perturbation(r, t, cfg));
}

// Gamma = 2 theta (rho g)^n / (n + 2), converted so that fluxes come out in m^2 / year.
inline double flow_coefficient(double theta, const GlacierConfig& cfg) {
  return 2.0 * theta * std::pow(cfg.rho * cfg.g, cfg.n_glen) / (cfg.n_glen + 2.0) *
         kSecondsPerYear;
}

// First and second radial derivatives of the analytic H, closed form.
struct RadialDerivatives {
  double H = 0.0;
  double dH = 0.0;
  double d2H = 0.0;
};

inline RadialDerivatives analytic_derivatives(double r, double t, const GlacierConfig& cfg) {
  RadialDerivatives out;
  const double s = r / cfg.L;
  if (s >= 1.0) return out;
  const double n = cfg.n_glen;
  const double p = 1.0 + 1.0 / n;
  const double e = n / (2.0 * n + 2.0);
  const double c = cfg.H0 / std::pow(1.0 - 1.0 / n, e);
  const double B = p * s - 1.0 / n + std::pow(1.0 - s, p) - std::pow(s, p);
  if (B <= 0.0) return out;
  const double sn = std::pow(s, 1.0 / n);
  const double un = std::pow(1.0 - s, 1.0 / n);
  const double Bs = p * (1.0 - un - sn);
  // s^{1/n - 1} diverges at the center; H'' is integrable there and only
  // enters the divergence multiplied by |H'|^{n-1}, which vanishes.
  const double Bss = s > 0.0 ? p / n * (un / (1.0 - s) - sn / s) : 0.0;
  const double Be = std::pow(B, e);
  out.H = c * Be;
  out.dH = c * e * Be / B * Bs / cfg.L;
  out.d2H = c * e * Be / B * ((e - 1.0) / B * Bs * Bs + Bss) / (cfg.L * cfg.L);

  if (in_annulus(r, cfg)) {
    const double a = std::numbers::pi / (0.6 * cfg.L);
    const double u = a * (r - 0.6 * cfg.L);
    const double amp = cfg.Cp * std::sin(2.0 * std::numbers::pi * t / cfg.Tp);
    out.H += amp * std::cos(u) * std::cos(u);
    out.dH += -amp * a * std::sin(2.0 * u);
    out.d2H += -2.0 * amp * a * a * std::cos(2.0 * u);
  }
  return out;
}

// Source term M making the analytic H an exact solution of
//   dH/dt = M + div(Gamma H^{n+2} |grad H|^{n-1} grad H),
// with the radial divergence F/r + F' expanded in closed form. Beyond the
// margin the limit from inside is continued outward.
inline double compensatory_mass_balance(double r, double t, const GlacierConfig& cfg) {
  const double r_min = 1e-9 * cfg.L;
  const double r_max = (1.0 - 1e-9) * cfg.L;
  const double re = std::clamp(r, r_min, r_max);
  const RadialDerivatives d = analytic_derivatives(re, t, cfg);
  const double n = cfg.n_glen;
  const double gamma = flow_coefficient(cfg.theta, cfg);
  const double slope_pow = std::pow(std::abs(d.dH), n - 1.0);
  const double flux = gamma * std::pow(d.H, n + 2.0) * slope_pow * d.dH;
  const double flux_prime = gamma * std::pow(d.H, n + 1.0) * slope_pow *
                            ((n + 2.0) * d.dH * d.dH + n * d.H * d.d2H);
  const double divergence = flux / re + flux_prime;
  const double rate = r <= r_max ? perturbation_rate(r, t, cfg) : 0.0;
  return rate - divergence;
}

// ---------------------------------------------------------------------------
// Trajectories and the explicit solver
// ---------------------------------------------------------------------------

struct Trajectory {
  std::vector<int> times;  // step indices j
  std::vector<Eigen::VectorXd> fields;
  GlacierConfig config;
  double theta = 0.0;  // softness the solver ran with; 0 if not a solver run

  std::size_t size() const { return fields.size(); }
  const Eigen::VectorXd& at_step(int j) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (times[i] == j) return fields[i];
    throw InvalidArgument("step " + std::to_string(j) + " not recorded in trajectory");
  }
};

// Grid sampling of the analytic solution at step j.
inline Eigen::VectorXd analytic_field(const GlacierConfig& cfg, int step) {
  const int n = cfg.n();
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out[i] = analytic_thickness(cfg.r_of(i), step * cfg.dt, cfg);
  return out;
}

// Finite-difference SIA solver on a flat bed: centered differences with
// staggered diffusivities, forward Euler in time, thickness clamped at zero
// after every step. The mass-balance forcing is tabulated once per solver and
// shared by every run, whatever softness the run uses.
class SiaSolver {
 public:
  explicit SiaSolver(GlacierConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const GlacierConfig& config() const { return cfg_; }

  // Thickness fields for steps 0..n_steps. If `record_every` > 0 only steps
  // divisible by it (and step 0) are kept.
  Trajectory run(double theta, int n_steps, int record_every = 1) const {
    if (n_steps < 0) throw InvalidArgument("n_steps must be >= 0");
    if (!(theta > 0)) throw InvalidArgument("theta must be positive");
    ensure_forcing(n_steps);

    const int nx = cfg_.grid_nx;
    const int ny = cfg_.grid_ny;
    const double dx = cfg_.dx;
    const double dt = cfg_.dt;
    const double gamma = flow_coefficient(theta, cfg_);
    const double n = cfg_.n_glen;
    const bool cubic = n == 3.0;
    const double limit = 10.0 * cfg_.H0;

    Trajectory traj;
    traj.config = cfg_;
    traj.theta = theta;
    Eigen::VectorXd H = analytic_field(cfg_, 0);
    traj.times.push_back(0);
    traj.fields.push_back(H);

    // Face fluxes: fx(i, j) between (i, j) and (i+1, j); fy(i, j) between (i, j) and (i, j+1).
    std::vector<double> fx(static_cast<std::size_t>(nx * ny), 0.0);
    std::vector<double> fy(static_cast<std::size_t>(nx * ny), 0.0);
    auto at = [nx](int i, int j) { return j * nx + i; };
    auto diffusivity = [&](double Hf, double grad2) {
      if (cubic) return gamma * Hf * Hf * Hf * Hf * Hf * grad2;
      return gamma * std::pow(Hf, n + 2.0) * std::pow(grad2, 0.5 * (n - 1.0));
    };
    auto thick = [&](int i, int j) {
      if (i < 0 || j < 0 || i >= nx || j >= ny) return 0.0;
      return H[at(i, j)];
    };

    Eigen::VectorXd next(H.size());
    for (int step = 0; step < n_steps; ++step) {
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          const double h0 = thick(i, j);
          // x face
          {
            const double h1 = thick(i + 1, j);
            const double Hf = 0.5 * (h0 + h1);
            double f = 0.0;
            if (Hf > 0.0) {
              const double sx = (h1 - h0) / dx;
              const double sy =
                  (thick(i, j + 1) + thick(i + 1, j + 1) - thick(i, j - 1) - thick(i + 1, j - 1)) /
                  (4.0 * dx);
              f = diffusivity(Hf, sx * sx + sy * sy) * sx;
            }
            fx[at(i, j)] = f;
          }
          // y face
          {
            const double h1 = thick(i, j + 1);
            const double Hf = 0.5 * (h0 + h1);
            double f = 0.0;
            if (Hf > 0.0) {
              const double sy = (h1 - h0) / dx;
              const double sx =
                  (thick(i + 1, j) + thick(i + 1, j + 1) - thick(i - 1, j) - thick(i - 1, j + 1)) /
                  (4.0 * dx);
              f = diffusivity(Hf, sx * sx + sy * sy) * sy;
            }
            fy[at(i, j)] = f;
          }
        }
      const double* forcing = forcing_[static_cast<std::size_t>(step)].data();
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          const double west = i > 0 ? fx[at(i - 1, j)] : 0.0;
          const double south = j > 0 ? fy[at(i, j - 1)] : 0.0;
          const double div = (fx[at(i, j)] - west + fy[at(i, j)] - south) / dx;
          const double value = H[at(i, j)] + dt * (forcing[at(i, j)] + div);
          next[at(i, j)] = value > 0.0 ? value : 0.0;
        }
      H.swap(next);
      for (int s = 0; s < H.size(); ++s)
        if (!std::isfinite(H[s]) || H[s] > limit)
          throw InstabilityError("solver unstable at step " + std::to_string(step + 1) +
                                     " (theta=" + std::to_string(theta / kThetaUnit) + "e-25)",
                                 step + 1);
      if (record_every <= 1 || (step + 1) % record_every == 0) {
        traj.times.push_back(step + 1);
        traj.fields.push_back(H);
      }
    }
    return traj;
  }

  // Mass balance on the grid at step j (m / year).
  const std::vector<double>& forcing(int step) const {
    ensure_forcing(step + 1);
    return forcing_[static_cast<std::size_t>(step)];
  }

 private:
  void ensure_forcing(int n_steps) const {
    std::lock_guard lock(mutex_);
    const int n = cfg_.n();
    while (static_cast<int>(forcing_.size()) < n_steps) {
      const double t = forcing_.size() * cfg_.dt;
      std::vector<double> m(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) m[i] = compensatory_mass_balance(cfg_.r_of(i), t, cfg_);
      forcing_.push_back(std::move(m));
    }
  }

  GlacierConfig cfg_;
  mutable std::mutex mutex_;
  mutable std::vector<std::vector<double>> forcing_;
};

inline Trajectory solve_sia(const GlacierConfig& cfg, int n_steps) {
  return SiaSolver(cfg).run(cfg.theta, n_steps);
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

struct ObservationSet {
  std::vector<int> sites;  // column index of the single 1 in each row of A
  int n = 0;               // latent dimension
  int k = 0;
  int N = 0;
  std::vector<Eigen::VectorXd> y;  // y[c - 1] observed at step c k
  double sigma2 = 0.0;

  int m() const { return static_cast<int>(sites.size()); }

  Eigen::MatrixXd incidence() const {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m(), n);
    for (int a = 0; a < m(); ++a) A(a, sites[a]) = 1.0;
    return A;
  }
  Eigen::VectorXd select(const Eigen::VectorXd& field) const {
    Eigen::VectorXd out(m());
    for (int a = 0; a < m(); ++a) out[a] = field[sites[a]];
    return out;
  }
  std::vector<int> epochs() const {
    std::vector<int> out;
    for (int c = 1; c <= N; ++c) out.push_back(c * k);
    return out;
  }
};

inline ObservationSet generate_observations(const GlacierConfig& cfg, const std::vector<int>& sites,
                                            int k, int N, double sigma, std::uint64_t seed) {
  if (k < 1 || N < 1) throw InvalidArgument("k and N must be >= 1");
  if (!(sigma >= 0)) throw InvalidArgument("sigma must be non-negative");
  const int n = cfg.n();
  if (static_cast<int>(sites.size()) > n) throw InvalidArgument("more sites than grid points");
  for (int s : sites)
    if (s < 0 || s >= n)
      throw InvalidArgument("site index " + std::to_string(s) + " outside grid range [0, " +
                            std::to_string(n) + ")");
  ObservationSet obs;
  obs.sites = sites;
  obs.n = n;
  obs.k = k;
  obs.N = N;
  obs.sigma2 = sigma * sigma;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int c = 1; c <= N; ++c) {
    const double t = c * k * cfg.dt;
    Eigen::VectorXd y(obs.m());
    for (int a = 0; a < obs.m(); ++a) {
      y[a] = analytic_thickness(cfg.r_of(sites[a]), t, cfg);
      if (sigma > 0) y[a] += sigma * noise(rng);
    }
    obs.y.push_back(std::move(y));
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Trajectory cache: CSV matrix (row = step, column = site) plus a text header.
// ---------------------------------------------------------------------------

// Exact text form of a softness value (hex float).
inline std::string theta_text(double theta) {
  std::ostringstream os;
  os << std::hexfloat << theta;
  return os.str();
}

inline void write_trajectory(const Trajectory& traj, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw Error("cannot write " + csv_path);
  out.precision(17);
  for (std::size_t t = 0; t < traj.size(); ++t) {
    out << traj.times[t];
    for (int s = 0; s < traj.fields[t].size(); ++s) out << ',' << traj.fields[t][s];
    out << '\n';
  }
  std::ofstream header(csv_path + ".header");
  header << "format = hiersim-trajectory-v1\n"
         << "config_hash = " << hash_hex(traj.config.canonical()) << "\n"
         << "config = " << traj.config.canonical() << "\n"
         << "theta = " << theta_text(traj.theta) << "\n"
         << "rows = " << traj.size() << "\n"
         << "columns = step," << traj.config.n() << " sites\n";
}

// Returns false if the cache is missing or was written for another config
// or softness.
inline bool read_trajectory(const std::string& csv_path, const GlacierConfig& cfg, Trajectory& out,
                            double theta = 0.0) {
  std::ifstream header(csv_path + ".header");
  if (!header) return false;
  const std::string want = "config_hash = " + hash_hex(cfg.canonical());
  const std::string want_theta = "theta = " + theta_text(theta);
  std::string line;
  bool match = false, theta_match = false;
  while (std::getline(header, line)) {
    if (line == want) match = true;
    if (line == want_theta) theta_match = true;
  }
  if (!match || !theta_match) return false;
  std::ifstream in(csv_path);
  if (!in) return false;
  Trajectory traj;
  traj.config = cfg;
  traj.theta = theta;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    traj.times.push_back(std::stoi(cell));
    Eigen::VectorXd f(cfg.n());
    for (int s = 0; s < cfg.n(); ++s) {
      if (!std::getline(ss, cell, ',')) return false;
      f[s] = std::stod(cell);
    }
    traj.fields.push_back(std::move(f));
  }
  out = std::move(traj);
  return true;
}

}  // namespace hiersim
