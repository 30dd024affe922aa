#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hiersim/config.hpp"
#include "hiersim/discrepancy.hpp"
#include "hiersim/emulator.hpp"
#include "hiersim/inference.hpp"
#include "hiersim/likelihood.hpp"
#include "hiersim/sia.hpp"
#include "hiersim/stats.hpp"

namespace hiersim {

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"table1",    "table2",         "table3",
                                                 "residuals", "variance-field", "bench"};
  return names;
}

struct ExperimentSpec {
  std::string name;
  std::string config_path;  // empty: defaults
  std::string out_dir;
  std::uint64_t seed = 1;
  std::string backend;     // "", "solver" or "emulator"
  std::string likelihood;  // "", "exact" or "approx"
};

// Independent random streams derived from the run seed.
enum class Stream : std::uint64_t { Data = 1, Probe = 2, Forest = 3, Ess = 4 };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
  return mix_seed(seed, static_cast<std::uint64_t>(s));
}
inline std::uint64_t stream_seed(std::uint64_t seed, const std::string& name) {
  return mix_seed(seed, fnv1a64(name));
}

// Collects the files an experiment writes.
class OutputDir {
 public:
  explicit OutputDir(std::string dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }
  const std::string& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

  std::string path(const std::string& name) {
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    return (std::filesystem::path(dir_) / name).string();
  }

  std::ofstream open(const std::string& name) {
    std::ofstream out(path(name));
    if (!out) throw Error("cannot write " + path(name));
    out << std::setprecision(17);
    return out;
  }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

// Everything an experiment shares: settings, solver, synthetic data.
class Study {
 public:
  Study(Settings settings, std::uint64_t seed, unsigned threads)
      : settings_(std::move(settings)), seed_(seed), threads_(threads), solver_(settings_.glacier) {
    settings_.validate();
    sites_ = settings_.observed_sites();
    obs_ = generate_observations(settings_.glacier, sites_, settings_.k, settings_.N, settings_.sigma,
                                 stream_seed(seed_, Stream::Data));
    labels_ = classify_regions(settings_.glacier);
    coords_ = grid_coordinates(settings_.glacier);
  }

  const Settings& settings() const { return settings_; }
  std::uint64_t seed() const { return seed_; }
  unsigned threads() const { return threads_; }
  const SiaSolver& solver() const { return solver_; }
  const ObservationSet& observations() const { return obs_; }
  const std::vector<Region>& labels() const { return labels_; }
  const Eigen::MatrixXd& coords() const { return coords_; }

  DiscrepancyCov block_sigma(double margin_variance) const {
    return build_block_sigma(labels_, {settings_.sigma2_int, settings_.sigma2_dome, margin_variance},
                             settings_.lengthscale, coords_);
  }

  Eigen::MatrixXd observed_v(const DiscrepancyCov& cov) const { return project_covariance(cov.jittered(), sites_); }

  const EmulatorModel& emulator() {
    if (!emulator_) {
      std::vector<double> thetas;
      for (double t : settings_.training_thetas()) thetas.push_back(t * kThetaUnit);
      EmulatorOptions opt;
      opt.regressor = settings_.regressor;
      opt.forest.trees = settings_.forest_trees;
      opt.forest.node_size = settings_.forest_node_size;
      opt.forest.seed = stream_seed(seed_, Stream::Forest);
      opt.threads = threads_;
      emulator_ = train_sia_emulator(solver_, thetas, obs_.epochs(), opt);
    }
    return *emulator_;
  }

  std::vector<Eigen::VectorXd> means(const std::string& backend, double theta) {
    if (backend == "emulator") return emulated_means(emulator(), Eigen::VectorXd::Constant(1, theta), obs_);
    return solver_means(solver_, theta, obs_);
  }

  std::vector<double> prior(const std::vector<double>& grid) const {
    if (settings_.prior == "truncnorm") return truncated_normal_prior(grid, settings_.prior_mean, settings_.prior_sd);
    return uniform_prior(grid);
  }

  // Grid posterior of theta (in kThetaUnit) for one backend and likelihood.
  PosteriorResult theta_posterior(const Eigen::MatrixXd& V, const std::string& backend,
                                  const std::string& likelihood, const std::string& case_name) {
    const auto grid = settings_.theta_grid();
    if (backend == "emulator") emulator();
    std::function<double(double)> loglik;
    std::optional<BandedLikelihood> exact;
    std::optional<ApproxLikelihood> approx;
    if (likelihood == "approx") {
      approx.emplace(V, obs_.k, obs_.N, obs_.sigma2);
      loglik = [&](double g) { return (*approx)(make_inputs(obs_, V, means(backend, g * kThetaUnit))); };
    } else {
      exact.emplace(V, obs_.k, obs_.N, obs_.sigma2);
      loglik = [&](double g) { return (*exact)(stack_residual(obs_, means(backend, g * kThetaUnit))); };
    }
    return grid_posterior(grid, loglik, prior(grid), settings_.posterior_samples, stream_seed(seed_, case_name),
                          threads_);
  }

 private:
  Settings settings_;
  std::uint64_t seed_;
  unsigned threads_;
  SiaSolver solver_;
  std::vector<int> sites_;
  ObservationSet obs_;
  std::vector<Region> labels_;
  Eigen::MatrixXd coords_;
  std::optional<EmulatorModel> emulator_;
};

// ---------------------------------------------------------------------------
// CSV writers
// ---------------------------------------------------------------------------

struct NamedPosterior {
  std::string name;
  PosteriorResult posterior;
};

inline void write_posterior(OutputDir& out, const NamedPosterior& np) {
  if (!out.enabled()) return;
  {
    auto f = out.open("posterior_grid_" + np.name + ".csv");
    f << "theta,loglik,weight\n";
    for (std::size_t i = 0; i < np.posterior.support.size(); ++i)
      f << np.posterior.support[i] << ',' << np.posterior.log_lik[i] << ',' << np.posterior.weights[i] << '\n';
  }
  auto f = out.open("samples_" + np.name + ".csv");
  f << "value\n";
  for (double v : np.posterior.samples) f << v << '\n';
}

inline void write_summary(OutputDir& out, const std::vector<NamedPosterior>& cases, double theta_true) {
  if (!out.enabled()) return;
  auto f = out.open("summary.csv");
  f << "case,min,q1,median,mean,q3,max,bias,iqr\n";
  for (const auto& c : cases) {
    const auto& s = c.posterior.summary;
    f << c.name << ',' << s.min << ',' << s.q1 << ',' << s.median << ',' << s.mean << ',' << s.q3 << ',' << s.max
      << ',' << posterior_bias(c.posterior.samples, theta_true) << ',' << s.iqr() << '\n';
  }
}

inline double theta_true_units(const Study& st) { return st.settings().glacier.theta / kThetaUnit; }

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

struct Table1Result {
  std::vector<NamedPosterior> cases;  // "solver" and/or "emulator"
  const PosteriorResult* find(const std::string& name) const {
    for (const auto& c : cases)
      if (c.name == name) return &c.posterior;
    return nullptr;
  }
};

inline Table1Result run_table1(Study& st, OutputDir& out, const std::string& backend = "",
                               const std::string& likelihood = "") {
  const Eigen::MatrixXd V = st.observed_v(st.block_sigma(st.settings().sigma2_margin));
  const std::string lik = likelihood.empty() ? "exact" : likelihood;
  Table1Result res;
  for (const std::string b : {"solver", "emulator"}) {
    if (!backend.empty() && backend != b) continue;
    res.cases.push_back({b, st.theta_posterior(V, b, lik, "table1/" + b)});
    write_posterior(out, res.cases.back());
  }
  if (out.enabled() && (backend.empty() || backend == "emulator")) save_emulator(st.emulator(), out.path("emulator_model.txt"));
  write_summary(out, res.cases, theta_true_units(st));
  return res;
}

struct Table3Result {
  std::vector<NamedPosterior> cases;  // "exact" and/or "approx"
  const PosteriorResult* find(const std::string& name) const {
    for (const auto& c : cases)
      if (c.name == name) return &c.posterior;
    return nullptr;
  }
};

inline Table3Result run_table3(Study& st, OutputDir& out, const std::string& backend = "",
                               const std::string& likelihood = "") {
  const Eigen::MatrixXd V = st.observed_v(st.block_sigma(st.settings().sigma2_margin));
  const std::string b = backend.empty() ? "emulator" : backend;
  Table3Result res;
  for (const std::string lik : {"exact", "approx"}) {
    if (!likelihood.empty() && likelihood != lik) continue;
    res.cases.push_back({lik, st.theta_posterior(V, b, lik, "table3/" + lik)});
    write_posterior(out, res.cases.back());
  }
  write_summary(out, res.cases, theta_true_units(st));
  return res;
}

struct VarianceFieldResult {
  std::vector<int> glacier_sites;  // grid indices the field covers
  VarianceFieldPosterior posterior;
  Eigen::VectorXd mean_variance;
  Eigen::VectorXd final_diffs;
  double margin_average = 0;
  double interior_average = 0;
  double dome_average = 0;
  NormalityResult normality;
};

// Discrepancy X_j = analytic - numerical at the given sites, j = 1..steps.
inline DiscrepancySeries discrepancy_series(const SiaSolver& solver, const std::vector<int>& sites, int steps) {
  const GlacierConfig& cfg = solver.config();
  const Trajectory traj = solver.run(cfg.theta, steps);
  DiscrepancySeries series;
  series.x.reserve(static_cast<std::size_t>(steps));
  for (int j = 1; j <= steps; ++j) {
    const Eigen::VectorXd& f = traj.at_step(j);
    Eigen::VectorXd x(static_cast<Eigen::Index>(sites.size()));
    for (std::size_t a = 0; a < sites.size(); ++a)
      x[static_cast<Eigen::Index>(a)] = analytic_thickness(cfg.r_of(sites[a]), j * cfg.dt, cfg) - f[sites[a]];
    series.x.push_back(std::move(x));
  }
  return series;
}

// Squared-exponential correlation with its jitter folded in so the diagonal
// stays exactly one.
inline Eigen::MatrixXd jittered_correlation(const Eigen::MatrixXd& coords, double lengthscale) {
  Eigen::MatrixXd R = squared_exponential(coords, 1.0, lengthscale);
  const double eps = 1e-8;
  R.diagonal().array() += eps;
  R /= 1.0 + eps;
  R.diagonal().setOnes();
  return R;
}

inline VarianceFieldResult run_variance_field(Study& st, OutputDir& out) {
  const Settings& s = st.settings();
  VarianceFieldResult res;
  for (int i = 0; i < s.glacier.n(); ++i)
    if (st.labels()[static_cast<std::size_t>(i)] != Region::Exterior) res.glacier_sites.push_back(i);
  const auto g = static_cast<Eigen::Index>(res.glacier_sites.size());
  Eigen::MatrixXd xy(g, 2);
  for (Eigen::Index a = 0; a < g; ++a) xy.row(a) = st.coords().row(res.glacier_sites[static_cast<std::size_t>(a)]);

  const DiscrepancySeries series = discrepancy_series(st.solver(), res.glacier_sites, s.ess_steps);
  const auto increments = rw_residuals(series, 1);
  const Eigen::MatrixXd R = jittered_correlation(xy, s.ess_lengthscale);
  Eigen::MatrixXd Sigma_v = squared_exponential(xy, s.ess_log_variance, s.ess_lengthscale);
  Sigma_v.diagonal().array() += 1e-8 * Sigma_v.diagonal().mean();
  const Eigen::VectorXd mu_v = Eigen::VectorXd::Constant(g, s.ess_mu_log_v);
  res.posterior = ess_variance_field(increments, mu_v, Sigma_v, R, s.ess_iters, s.ess_burnin,
                                     stream_seed(st.seed(), Stream::Ess));
  res.mean_variance = res.posterior.mean_variance();
  res.final_diffs = increments.back();
  res.normality = scaled_residual_normality(res.final_diffs, res.mean_variance);

  double sums[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  for (Eigen::Index a = 0; a < g; ++a) {
    const Region r = st.labels()[static_cast<std::size_t>(res.glacier_sites[static_cast<std::size_t>(a)])];
    const int slot = r == Region::Margin ? 0 : r == Region::Interior ? 1 : 2;
    sums[slot] += res.mean_variance[a];
    ++counts[slot];
  }
  res.margin_average = counts[0] ? sums[0] / counts[0] : 0;
  res.interior_average = counts[1] ? sums[1] / counts[1] : 0;
  res.dome_average = counts[2] ? sums[2] / counts[2] : 0;

  if (out.enabled()) {
    {
      auto f = out.open("variance_field.csv");
      f << "site,x,y,r,region,mean_variance,final_increment\n";
      for (Eigen::Index a = 0; a < g; ++a) {
        const int site = res.glacier_sites[static_cast<std::size_t>(a)];
        f << site << ',' << s.glacier.x_of(site) << ',' << s.glacier.y_of(site) << ',' << s.glacier.r_of(site) << ','
          << region_name(st.labels()[static_cast<std::size_t>(site)]) << ',' << res.mean_variance[a] << ','
          << res.final_diffs[a] << '\n';
      }
    }
    {
      auto f = out.open("ess_trace.csv");
      f << "iteration,log_posterior\n";
      for (std::size_t i = 0; i < res.posterior.ess_trace.size(); ++i) f << i + 1 << ',' << res.posterior.ess_trace[i] << '\n';
    }
    auto f = out.open("normality.csv");
    f << "statistic,p_value,mean,sd,degenerate,margin_mean_variance,interior_mean_variance,dome_mean_variance\n";
    f << res.normality.statistic << ',' << res.normality.p_value << ',' << res.normality.mean << ','
      << res.normality.sd << ',' << (res.normality.degenerate ? 1 : 0) << ',' << res.margin_average << ','
      << res.interior_average << ',' << res.dome_average << '\n';
  }
  return res;
}

struct Table2Result {
  VarianceFieldResult field;
  std::vector<NamedPosterior> cases;  // "gp_field", "weak", "strong"
  const PosteriorResult* find(const std::string& name) const {
    for (const auto& c : cases)
      if (c.name == name) return &c.posterior;
    return nullptr;
  }
};

inline Table2Result run_table2(Study& st, OutputDir& out, const std::string& backend = "",
                               const std::string& likelihood = "") {
  const Settings& s = st.settings();
  const std::string b = backend.empty() ? "solver" : backend;
  const std::string lik = likelihood.empty() ? "exact" : likelihood;
  Table2Result res;
  res.field = run_variance_field(st, out);

  // Plug-in posterior-mean Sigma restricted to the observed sites.
  const Eigen::MatrixXd field_sigma = res.field.posterior.mean_sigma();
  const auto& obs_sites = st.observations().sites;
  std::vector<Eigen::Index> pos;
  for (int site : obs_sites) {
    const auto it = std::find(res.field.glacier_sites.begin(), res.field.glacier_sites.end(), site);
    if (it == res.field.glacier_sites.end())
      throw InvalidArgument("observed site " + std::to_string(site) + " lies outside the glacier, where the variance field is not defined");
    pos.push_back(it - res.field.glacier_sites.begin());
  }
  const auto m = static_cast<Eigen::Index>(pos.size());
  Eigen::MatrixXd V_gp(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index c = 0; c < m; ++c) V_gp(a, c) = field_sigma(pos[a], pos[c]);
  V_gp.diagonal().array() += 1e-8 * V_gp.diagonal().mean();

  res.cases.push_back({"gp_field", st.theta_posterior(V_gp, b, lik, "table2/gp_field")});
  res.cases.push_back({"weak", st.theta_posterior(st.observed_v(st.block_sigma(s.sigma2_margin_weak)), b, lik, "table2/weak")});
  res.cases.push_back({"strong", st.theta_posterior(st.observed_v(st.block_sigma(s.sigma2_margin)), b, lik, "table2/strong")});
  for (const auto& c : res.cases) write_posterior(out, c);
  write_summary(out, res.cases, theta_true_units(st));
  return res;
}

struct ProbeSummary {
  std::string role;  // "interior" or "margin"
  int site = 0;
  double raw_max = 0;                // max |X_j| over the run
  std::vector<double> variance;      // q = 1..7, over j > q
  std::vector<double> max_residual;  // q = 1..7, over j > q
  int best_q() const {
    return static_cast<int>(std::min_element(variance.begin(), variance.end()) - variance.begin()) + 1;
  }
};

struct ResidualResult {
  std::vector<ProbeSummary> probes;
};

// One interior and one margin site, picked by the run seed.
inline std::vector<int> probe_sites(const Study& st) {
  std::mt19937_64 rng(stream_seed(st.seed(), Stream::Probe));
  std::vector<int> out;
  for (Region want : {Region::Interior, Region::Margin}) {
    std::vector<int> candidates;
    for (int i = 0; i < st.settings().glacier.n(); ++i)
      if (st.labels()[static_cast<std::size_t>(i)] == want) candidates.push_back(i);
    if (candidates.empty()) throw InvalidArgument(std::string("no ") + region_name(want) + " site on the grid");
    out.push_back(candidates[static_cast<std::size_t>(rng() % candidates.size())]);
  }
  return out;
}

inline ResidualResult run_residuals(Study& st, OutputDir& out) {
  const Settings& s = st.settings();
  const std::vector<int> sites = probe_sites(st);
  const DiscrepancySeries series = discrepancy_series(st.solver(), sites, s.residual_steps);
  ResidualResult res;
  const char* roles[] = {"interior", "margin"};
  for (std::size_t a = 0; a < sites.size(); ++a) {
    ProbeSummary p;
    p.role = roles[a];
    p.site = sites[a];
    for (const auto& x : series.x) p.raw_max = std::max(p.raw_max, std::abs(x[static_cast<Eigen::Index>(a)]));
    res.probes.push_back(std::move(p));
  }
  // Residual CSVs index sites 0..1 in `series`; map back to grid indices.
  for (int q = 1; q <= 7; ++q) {
    const auto resid = rw_residuals(series, q);
    for (std::size_t a = 0; a < sites.size(); ++a) {
      auto& p = res.probes[a];
      p.variance.push_back(residual_variance(resid, q, static_cast<Eigen::Index>(a)));
      double mx = 0;
      for (std::size_t j = static_cast<std::size_t>(q); j < resid.size(); ++j)
        mx = std::max(mx, std::abs(resid[j][static_cast<Eigen::Index>(a)]));
      p.max_residual.push_back(mx);
    }
    if (out.enabled()) {
      auto f = out.open("residuals_q" + std::to_string(q) + ".csv");
      f << "step,site,residual\n";
      for (std::size_t j = 0; j < resid.size(); ++j)
        for (std::size_t a = 0; a < sites.size(); ++a)
          f << j + 1 << ',' << sites[a] << ',' << resid[j][static_cast<Eigen::Index>(a)] << '\n';
    }
  }
  if (out.enabled()) {
    {
      auto f = out.open("discrepancy.csv");
      f << "step,site,discrepancy\n";
      for (std::size_t j = 0; j < series.x.size(); ++j)
        for (std::size_t a = 0; a < sites.size(); ++a)
          f << j + 1 << ',' << sites[a] << ',' << series.x[j][static_cast<Eigen::Index>(a)] << '\n';
    }
    {
      auto f = out.open("probe_sites.csv");
      f << "role,site,x,y,r,region\n";
      for (const auto& p : res.probes)
        f << p.role << ',' << p.site << ',' << s.glacier.x_of(p.site) << ',' << s.glacier.y_of(p.site) << ','
          << s.glacier.r_of(p.site) << ',' << region_name(st.labels()[static_cast<std::size_t>(p.site)]) << '\n';
    }
    auto f = out.open("residual_summary.csv");
    f << "role,site,q,variance,max_abs_residual,max_abs_discrepancy\n";
    for (const auto& p : res.probes)
      for (int q = 1; q <= 7; ++q)
        f << p.role << ',' << p.site << ',' << q << ',' << p.variance[static_cast<std::size_t>(q - 1)] << ','
          << p.max_residual[static_cast<std::size_t>(q - 1)] << ',' << p.raw_max << '\n';
  }
  return res;
}

struct BenchRow {
  std::string method;
  int N = 0;
  int m = 0;
  double wall_time_ns = 0;
  double loglik = 0;
};

template <typename F>
double median_time_ns(int repeats, F&& f, double& value) {
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    value = f();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

// Timings of the likelihood routines over N in `epochs`, then solver- and
// emulator-backed likelihoods at the configured N and the true softness.
inline std::vector<BenchRow> run_bench(Study& st, OutputDir& out, std::vector<int> epochs = {10, 20, 40, 80}) {
  const Settings& s = st.settings();
  const GlacierConfig& cfg = s.glacier;
  const auto sites = s.observed_sites();
  const Eigen::MatrixXd V = st.observed_v(st.block_sigma(s.sigma2_margin));
  const int m = static_cast<int>(sites.size());
  const int reps = s.bench_repeats;
  std::vector<BenchRow> rows;
  for (int N : epochs) {
    const ObservationSet obs = generate_observations(cfg, sites, s.k, N, s.sigma, stream_seed(st.seed(), Stream::Data));
    const LikelihoodInputs in = make_inputs(obs, V, solver_means(st.solver(), cfg.theta, obs));
    double v = 0;
    double t = median_time_ns(reps, [&] { return exact_loglik_dense(in); }, v);
    rows.push_back({"exact-dense", N, m, t, v});
    t = median_time_ns(reps, [&] { return exact_loglik_banded(in); }, v);
    rows.push_back({"exact-banded", N, m, t, v});
    t = median_time_ns(reps, [&] { return approx_loglik(in, st.threads()); }, v);
    rows.push_back({"approx", N, m, t, v});
    if (N >= 2) {
      t = median_time_ns(reps, [&] { return approx_loglik_component(2, in); }, v);
      rows.push_back({"approx-component", N, m, t, v});
    }
  }
  const ObservationSet& obs = st.observations();
  const EmulatorModel& model = st.emulator();
  const BandedLikelihood lik(V, obs.k, obs.N, obs.sigma2);
  const double theta = cfg.theta;
  double v = 0;
  double t = median_time_ns(reps, [&] { return lik(stack_residual(obs, solver_means(st.solver(), theta, obs))); }, v);
  rows.push_back({"solver-loglik", obs.N, m, t, v});
  t = median_time_ns(reps, [&] { return emulated_loglik(model, theta, obs, lik); }, v);
  rows.push_back({"emulator-loglik", obs.N, m, t, v});
  t = median_time_ns(reps, [&] { return exact_loglik_banded(make_inputs(obs, V, solver_means(st.solver(), theta, obs))); }, v);
  rows.push_back({"solver-loglik-refactor", obs.N, m, t, v});
  t = median_time_ns(reps, [&] { return emulated_loglik(model, theta, obs, V); }, v);
  rows.push_back({"emulator-loglik-refactor", obs.N, m, t, v});

  if (out.enabled()) {
    auto f = out.open("bench.csv");
    f << "method,N,m,wall_time_ns,loglik\n";
    for (const auto& r : rows) f << r.method << ',' << r.N << ',' << r.m << ',' << r.wall_time_ns << ',' << r.loglik << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct ExperimentOutcome {
  int status = 0;  // 0 success
  std::string failed_stage;
  std::string error;
};

inline void write_manifest(const ExperimentSpec& spec, const Settings* settings, const ExperimentOutcome& outcome,
                           const std::vector<std::string>& files) {
  std::filesystem::create_directories(spec.out_dir);
  std::ofstream f(std::filesystem::path(spec.out_dir) / "manifest.txt");
  f << "experiment = " << spec.name << '\n'
    << "status = " << (outcome.status == 0 ? "ok" : "failed") << '\n';
  if (outcome.status != 0) f << "failed_stage = " << outcome.failed_stage << '\n' << "error = " << outcome.error << '\n';
  f << "seed = " << spec.seed << '\n'
    << "config_file = " << (spec.config_path.empty() ? "(defaults)" : spec.config_path) << '\n';
  if (settings) f << "config_hash = " << hash_hex(settings->canonical()) << '\n' << "config = " << settings->canonical() << '\n';
  f << "backend = " << (spec.backend.empty() ? "default" : spec.backend) << '\n'
    << "likelihood = " << (spec.likelihood.empty() ? "default" : spec.likelihood) << '\n'
    << "hiersim_version = " << kVersion << '\n'
    << "eigen_version = " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n'
#ifdef __VERSION__
    << "compiler = " << __VERSION__ << '\n'
#endif
    << "files =";
  for (const auto& name : files) f << ' ' << name;
  f << '\n';
}

// Runs one experiment, writing CSVs and a manifest into spec.out_dir. The
// manifest is written whatever happens, with the failing stage on error.
inline ExperimentOutcome run_experiment(const ExperimentSpec& spec, unsigned threads) {
  ExperimentOutcome outcome;
  std::string stage = "validate";
  std::optional<Settings> settings;
  std::vector<std::string> files;
  try {
    if (std::find(experiment_names().begin(), experiment_names().end(), spec.name) == experiment_names().end())
      throw InvalidArgument("unknown experiment '" + spec.name + "'");
    if (!spec.backend.empty() && spec.backend != "solver" && spec.backend != "emulator")
      throw InvalidArgument("backend must be solver or emulator");
    if (!spec.likelihood.empty() && spec.likelihood != "exact" && spec.likelihood != "approx")
      throw InvalidArgument("likelihood must be exact or approx");
    stage = "config";
    if (spec.config_path.empty()) {
      settings.emplace();
      settings->validate();
    } else {
      settings = validate_config(spec.config_path);
    }
    stage = "setup";
    OutputDir out(spec.out_dir);
    Study st(*settings, spec.seed, threads);
    stage = spec.name;
    try {
      if (spec.name == "table1") run_table1(st, out, spec.backend, spec.likelihood);
      else if (spec.name == "table2") run_table2(st, out, spec.backend, spec.likelihood);
      else if (spec.name == "table3") run_table3(st, out, spec.backend, spec.likelihood);
      else if (spec.name == "residuals") run_residuals(st, out);
      else if (spec.name == "variance-field") run_variance_field(st, out);
      else run_bench(st, out);
    } catch (...) {
      files = out.files();
      throw;
    }
    files = out.files();
  } catch (const std::exception& e) {
    outcome.status = 1;
    outcome.failed_stage = stage;
    outcome.error = e.what();
  }
  try {
    write_manifest(spec, settings ? &*settings : nullptr, outcome, files);
  } catch (const std::exception& e) {
    if (outcome.status == 0) {
      outcome.status = 1;
      outcome.failed_stage = "manifest";
      outcome.error = e.what();
    }
  }
  return outcome;
}

}  // namespace hiersim
