#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hiersim/error.hpp"

namespace hiersim {

inline constexpr const char* kVersion = "0.1.0";

// Softness values in configs, CSVs and summaries are quoted in this unit.
inline constexpr double kThetaUnit = 1e-25;
inline constexpr double kSecondsPerYear = 31556926.0;

// Physical constants, grid geometry and the oscillating test solution.
// Lengths in m, times in years, softness in s^-1 Pa^-3.
struct GlacierConfig {
  double H0 = 3600.0;
  double L = 750e3;
  double Cp = 200.0;
  double Tp = 5000.0;
  // Softness that generated the analytic solution and its mass balance.
  double theta = 31.7e-25;
  int grid_nx = 21;
  int grid_ny = 21;
  double dx = 1e5;
  double dy = 1e5;
  double dt = 0.1;
  double n_glen = 3.0;
  double rho = 910.0;
  double g = 9.81;
  double sliding = 0.0;

  int n() const { return grid_nx * grid_ny; }

  // Grid coordinates of site `idx` (row-major, x fastest), origin at the
  // glacier center.
  double x_of(int idx) const { return (idx % grid_nx - 0.5 * (grid_nx - 1)) * dx; }
  double y_of(int idx) const { return (idx / grid_nx - 0.5 * (grid_ny - 1)) * dy; }
  double r_of(int idx) const { return std::hypot(x_of(idx), y_of(idx)); }
  int index_of(int ix, int iy) const { return iy * grid_nx + ix; }

  void validate() const {
    if (!(H0 > 0)) throw ConfigError("H0 must be positive");
    if (!(L > 0)) throw ConfigError("L must be positive");
    if (!(Tp > 0)) throw ConfigError("Tp must be positive");
    if (!(dt > 0)) throw ConfigError("dt must be positive");
    if (!(dx > 0) || dx != dy) throw ConfigError("dx must be positive and equal to dy");
    if (!(theta > 0)) throw ConfigError("theta must be positive");
    if (grid_nx < 3 || grid_ny < 3) throw ConfigError("grid must be at least 3x3");
    if (!(n_glen >= 1)) throw ConfigError("n_glen must be >= 1");
    if (sliding != 0.0) throw ConfigError("basal sliding is not supported (sliding must be 0)");
  }

  // Stable textual form, used for cache headers and manifests.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "H0=" << H0 << ";L=" << L << ";Cp=" << Cp << ";Tp=" << Tp << ";theta=" << theta
       << ";nx=" << grid_nx << ";ny=" << grid_ny << ";dx=" << dx << ";dy=" << dy
       << ";dt=" << dt << ";n=" << n_glen << ";rho=" << rho << ";g=" << g
       << ";sliding=" << sliding;
    return os.str();
  }
};

inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// FNV-1a, printed as 16 hex digits.
inline std::string hash_hex(const std::string& text) {
  const std::uint64_t h = fnv1a64(text);
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// Observation protocol and inference defaults layered on top of the glacier.
struct Settings {
  GlacierConfig glacier;

  // Observation protocol.
  int k = 5;
  int N = 40;
  double sigma = 1.0;
  // Observed grid indices. Empty means the default 5x5 layout.
  std::vector<int> sites;

  // Posterior grid over softness, in kThetaUnit.
  double theta_grid_min = 10.0;
  double theta_grid_max = 70.0;
  double theta_grid_step = 0.5;
  // Emulator training design, in kThetaUnit.
  std::vector<double> theta_train;
  std::string prior = "uniform";  // or "truncnorm"
  double prior_mean = 30.0;
  double prior_sd = 10.0;
  long posterior_samples = 1000000;

  // Block-diagonal discrepancy covariance (m^2 per step) used by table1/3.
  double sigma2_int = 0.1;
  double sigma2_dome = 0.1;
  double sigma2_margin = 10.0;
  double lengthscale = 70e3;
  // Margin variance of the weakly informative alternative (table2).
  double sigma2_margin_weak = 0.1;

  // Variance-field sampler.
  int ess_iters = 5000;
  int ess_burnin = 1000;
  double ess_lengthscale = 70e3;
  double ess_log_variance = 1.0;
  double ess_mu_log_v = 0.0;
  int ess_steps = 200;

  // Emulator regressor.
  std::string regressor = "forest";  // or "linear"
  int forest_trees = 500;
  int forest_node_size = 5;

  // Residual analysis horizon.
  int residual_steps = 5000;

  // Timing repetitions per benchmark row (the median is reported).
  int bench_repeats = 5;

  std::vector<int> observed_sites() const {
    if (!sites.empty()) return sites;
    std::vector<int> out;
    const int cx = glacier.grid_nx / 2;
    const int cy = glacier.grid_ny / 2;
    for (int oy : {-5, -3, 0, 3, 5})
      for (int ox : {-5, -3, 0, 3, 5}) {
        const int ix = std::clamp(cx + ox, 0, glacier.grid_nx - 1);
        const int iy = std::clamp(cy + oy, 0, glacier.grid_ny - 1);
        out.push_back(glacier.index_of(ix, iy));
      }
    return out;
  }

  std::vector<double> training_thetas() const {
    if (!theta_train.empty()) return theta_train;
    std::vector<double> out;
    for (int i = 0; i <= 24; ++i) out.push_back(10.0 + 2.5 * i);
    return out;
  }

  std::vector<double> theta_grid() const {
    std::vector<double> out;
    const long count = std::lround((theta_grid_max - theta_grid_min) / theta_grid_step);
    for (long i = 0; i <= count; ++i) out.push_back(theta_grid_min + theta_grid_step * i);
    return out;
  }

  void validate() const {
    glacier.validate();
    if (k < 1) throw ConfigError("k must be >= 1");
    if (N < 1) throw ConfigError("N must be >= 1");
    if (!(sigma >= 0)) throw ConfigError("sigma must be non-negative");
    const int n = glacier.n();
    for (int s : sites)
      if (s < 0 || s >= n)
        throw ConfigError("site index " + std::to_string(s) + " outside grid of " +
                          std::to_string(n) + " sites");
    auto sorted = observed_sites();
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ConfigError("duplicate observation site");
    if (static_cast<int>(sorted.size()) > n) throw ConfigError("more sites than grid points");
    if (!(theta_grid_step > 0) || !(theta_grid_max >= theta_grid_min) || !(theta_grid_min > 0))
      throw ConfigError("invalid theta grid");
    if (training_thetas().size() < 2) throw ConfigError("need at least 2 training thetas");
    if (prior != "uniform" && prior != "truncnorm")
      throw ConfigError("prior must be uniform or truncnorm");
    if (regressor != "forest" && regressor != "linear")
      throw ConfigError("regressor must be forest or linear");
    if (!(sigma2_int > 0 && sigma2_dome > 0 && sigma2_margin > 0 && sigma2_margin_weak > 0 &&
          lengthscale > 0))
      throw ConfigError("block covariance parameters must be positive");
    if (ess_iters < 0 || ess_burnin < 0 || ess_steps < 2) throw ConfigError("invalid ESS settings");
    if (forest_trees < 1 || forest_node_size < 1) throw ConfigError("invalid forest settings");
    if (residual_steps < 8) throw ConfigError("residual_steps must be >= 8");
    if (posterior_samples < 1) throw ConfigError("posterior_samples must be >= 1");
    if (bench_repeats < 1) throw ConfigError("bench_repeats must be >= 1");
  }

  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << glacier.canonical() << ";k=" << k << ";N=" << N << ";sigma=" << sigma << ";sites=";
    for (int s : observed_sites()) os << s << ',';
    os << ";grid=" << theta_grid_min << ',' << theta_grid_max << ',' << theta_grid_step
       << ";train=";
    for (double t : training_thetas()) os << t << ',';
    os << ";prior=" << prior << ',' << prior_mean << ',' << prior_sd
       << ";samples=" << posterior_samples << ";block=" << sigma2_int << ',' << sigma2_dome
       << ',' << sigma2_margin << ',' << lengthscale << ',' << sigma2_margin_weak << ";ess=" << ess_iters << ','
       << ess_burnin << ',' << ess_lengthscale << ',' << ess_log_variance << ','
       << ess_mu_log_v << ',' << ess_steps << ";reg=" << regressor << ',' << forest_trees
       << ',' << forest_node_size << ";residual_steps=" << residual_steps
       << ";bench_repeats=" << bench_repeats;
    return os.str();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, int line) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'", line);
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'", line);
  return out;
}

inline long parse_long(const std::string& v, int line) {
  const double d = parse_double(v, line);
  if (d != std::floor(d)) throw ConfigError("expected an integer, got '" + v + "'", line);
  return static_cast<long>(d);
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& v, int line, F&& one) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<T>(one(item, line)));
  }
  return out;
}

}  // namespace detail

// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
inline Settings parse_settings(std::istream& in) {
  using detail::parse_double;
  using detail::parse_long;
  Settings s;
  GlacierConfig& g = s.glacier;
  const std::map<std::string, std::function<void(const std::string&, int)>> setters = {
      {"H0", [&](auto& v, int l) { g.H0 = parse_double(v, l); }},
      {"L", [&](auto& v, int l) { g.L = parse_double(v, l); }},
      {"Cp", [&](auto& v, int l) { g.Cp = parse_double(v, l); }},
      {"Tp", [&](auto& v, int l) { g.Tp = parse_double(v, l); }},
      {"theta", [&](auto& v, int l) { g.theta = parse_double(v, l); }},
      {"grid_nx", [&](auto& v, int l) { g.grid_nx = static_cast<int>(parse_long(v, l)); }},
      {"grid_ny", [&](auto& v, int l) { g.grid_ny = static_cast<int>(parse_long(v, l)); }},
      {"dx", [&](auto& v, int l) { g.dx = parse_double(v, l); }},
      {"dy", [&](auto& v, int l) { g.dy = parse_double(v, l); }},
      {"dt", [&](auto& v, int l) { g.dt = parse_double(v, l); }},
      {"n_glen", [&](auto& v, int l) { g.n_glen = parse_double(v, l); }},
      {"rho", [&](auto& v, int l) { g.rho = parse_double(v, l); }},
      {"g", [&](auto& v, int l) { g.g = parse_double(v, l); }},
      {"sliding", [&](auto& v, int l) { g.sliding = parse_double(v, l); }},
      {"k", [&](auto& v, int l) { s.k = static_cast<int>(parse_long(v, l)); }},
      {"N", [&](auto& v, int l) { s.N = static_cast<int>(parse_long(v, l)); }},
      {"sigma", [&](auto& v, int l) { s.sigma = parse_double(v, l); }},
      {"sites", [&](auto& v, int l) { s.sites = detail::parse_list<int>(v, l, parse_long); }},
      {"theta_grid_min", [&](auto& v, int l) { s.theta_grid_min = parse_double(v, l); }},
      {"theta_grid_max", [&](auto& v, int l) { s.theta_grid_max = parse_double(v, l); }},
      {"theta_grid_step", [&](auto& v, int l) { s.theta_grid_step = parse_double(v, l); }},
      {"theta_train",
       [&](auto& v, int l) { s.theta_train = detail::parse_list<double>(v, l, parse_double); }},
      {"prior", [&](auto& v, int) { s.prior = v; }},
      {"prior_mean", [&](auto& v, int l) { s.prior_mean = parse_double(v, l); }},
      {"prior_sd", [&](auto& v, int l) { s.prior_sd = parse_double(v, l); }},
      {"posterior_samples", [&](auto& v, int l) { s.posterior_samples = parse_long(v, l); }},
      {"sigma2_int", [&](auto& v, int l) { s.sigma2_int = parse_double(v, l); }},
      {"sigma2_dome", [&](auto& v, int l) { s.sigma2_dome = parse_double(v, l); }},
      {"sigma2_margin", [&](auto& v, int l) { s.sigma2_margin = parse_double(v, l); }},
      {"lengthscale", [&](auto& v, int l) { s.lengthscale = parse_double(v, l); }},
      {"sigma2_margin_weak", [&](auto& v, int l) { s.sigma2_margin_weak = parse_double(v, l); }},
      {"ess_iters", [&](auto& v, int l) { s.ess_iters = static_cast<int>(parse_long(v, l)); }},
      {"ess_burnin", [&](auto& v, int l) { s.ess_burnin = static_cast<int>(parse_long(v, l)); }},
      {"ess_lengthscale", [&](auto& v, int l) { s.ess_lengthscale = parse_double(v, l); }},
      {"ess_log_variance", [&](auto& v, int l) { s.ess_log_variance = parse_double(v, l); }},
      {"ess_mu_log_v", [&](auto& v, int l) { s.ess_mu_log_v = parse_double(v, l); }},
      {"ess_steps", [&](auto& v, int l) { s.ess_steps = static_cast<int>(parse_long(v, l)); }},
      {"regressor", [&](auto& v, int) { s.regressor = v; }},
      {"forest_trees",
       [&](auto& v, int l) { s.forest_trees = static_cast<int>(parse_long(v, l)); }},
      {"forest_node_size",
       [&](auto& v, int l) { s.forest_node_size = static_cast<int>(parse_long(v, l)); }},
      {"residual_steps",
       [&](auto& v, int l) { s.residual_steps = static_cast<int>(parse_long(v, l)); }},
      {"bench_repeats",
       [&](auto& v, int l) { s.bench_repeats = static_cast<int>(parse_long(v, l)); }},
  };

  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string text = detail::trim(raw);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown key '" + key + "'", line);
    if (value.empty()) throw ConfigError("missing value for '" + key + "'", line);
    it->second(value, line);
  }
  return s;
}

// Reads, fills defaults and validates.
inline Settings validate_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Settings s = parse_settings(in);
  s.validate();
  return s;
}

}  // namespace hiersim
