// Acceptance checks at the default configuration and seed 1. Prints one
// PASS/FAIL line per criterion; exits nonzero if a selected one fails.
//
//   acceptance            run all criteria
//   acceptance --only 3   run criterion 3

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "hiersim/experiments.hpp"

using namespace hiersim;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Study default_study() { return Study(Settings{}, kSeed, default_threads()); }

Eigen::MatrixXd random_spd(int m, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd G(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) G(i, j) = z(rng);
  Eigen::MatrixXd V = G * G.transpose() / m;
  V.diagonal().array() += 0.05;
  return V;
}

Verdict criterion1() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<int> pick_m(1, 10), pick_N(1, 20), pick_k(1, 10);
  std::uniform_real_distribution<double> pick_s(0.0, 2.0);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    LikelihoodInputs in;
    const int m = pick_m(rng);
    in.N = pick_N(rng);
    in.k = pick_k(rng);
    in.V = random_spd(m, rng);
    const double s = pick_s(rng);
    in.sigma2 = s * s;
    for (int c = 0; c < in.N; ++c) {
      Eigen::VectorXd mu(m), y(m);
      for (int a = 0; a < m; ++a) {
        mu[a] = 10 * z(rng);
        y[a] = mu[a] + 3 * z(rng);
      }
      in.mu_blocks.push_back(mu);
      in.y.push_back(y);
    }
    const double dense = exact_loglik_dense(in);
    const double banded = exact_loglik_banded(in);
    worst = std::max(worst, std::abs(banded - dense) / std::max(1.0, std::abs(dense)));
  }
  return {worst <= 1e-8, "max relative error " + fmt("%.3g", worst) + " over 200 instances (limit 1e-8)"};
}

Verdict criterion2() {
  const Settings s;
  const Study st(s, kSeed, 1);
  const Eigen::MatrixXd V = st.observed_v(st.block_sigma(s.sigma2_margin));
  std::map<int, double> banded, dense;
  for (int N : {40, 80}) {
    const ObservationSet obs =
        generate_observations(s.glacier, s.observed_sites(), s.k, N, s.sigma, stream_seed(kSeed, Stream::Data));
    const LikelihoodInputs in = make_inputs(obs, V, solver_means(st.solver(), s.glacier.theta, obs));
    double v = 0;
    banded[N] = median_time_ns(15, [&] { return exact_loglik_banded(in); }, v);
    dense[N] = median_time_ns(5, [&] { return exact_loglik_dense(in); }, v);
  }
  const double rb = banded[80] / banded[40], rd = dense[80] / dense[40];
  std::ostringstream os;
  os << "m = 25, N 40 -> 80: banded x" << fmt("%.2f", rb) << " (" << fmt("%.0f", banded[40] / 1e3) << " -> "
     << fmt("%.0f", banded[80] / 1e3) << " us, need < 3), dense x" << fmt("%.2f", rd) << " ("
     << fmt("%.1f", dense[40] / 1e6) << " -> " << fmt("%.1f", dense[80] / 1e6) << " ms, need > 5)";
  return {rb < 3.0 && rd > 5.0, os.str()};
}

Verdict criterion3() {
  Study st = default_study();
  OutputDir none("");
  const auto res = run_table1(st, none);
  const auto& s = res.find("solver")->summary;
  const auto& e = res.find("emulator")->summary;
  const bool solver_ok = std::abs(s.mean - 26.3) <= 3.0;
  const bool emu_ok = std::abs(e.mean - 27.4) <= 3.0;
  const bool median_ok = std::abs(s.median - e.median) <= 2.0;
  std::ostringstream os;
  os << "solver mean " << fmt("%.2f", s.mean) << " (target 26.3 +- 3: " << (solver_ok ? "ok" : "miss")
     << "), emulator mean " << fmt("%.2f", e.mean) << " (target 27.4 +- 3: " << (emu_ok ? "ok" : "miss")
     << "), median gap " << fmt("%.2f", std::abs(s.median - e.median)) << " (<= 2: " << (median_ok ? "ok" : "miss")
     << ")";
  return {solver_ok && emu_ok && median_ok, os.str()};
}

Verdict criterion4() {
  Study st = default_study();
  OutputDir none("");
  const auto rows = run_bench(st, none, {});
  std::map<std::string, double> t;
  for (const auto& r : rows) t[r.method] = r.wall_time_ns;
  const double ratio = t["solver-loglik"] / t["emulator-loglik"];
  const double refactor = t["solver-loglik-refactor"] / t["emulator-loglik-refactor"];
  std::ostringstream os;
  os << "solver-backed " << fmt("%.0f", t["solver-loglik"] / 1e3) << " us vs emulator-backed "
     << fmt("%.1f", t["emulator-loglik"] / 1e3) << " us: x" << fmt("%.1f", ratio)
     << " (need >= 5); refactorizing every call: x" << fmt("%.2f", refactor);
  return {ratio >= 5.0, os.str()};
}

Verdict criterion5() {
  Study st = default_study();
  OutputDir none("");
  const auto res = run_table3(st, none);
  const auto& ex = res.find("exact")->summary;
  const auto& ap = res.find("approx")->summary;
  const double gap = std::abs(ex.mean - ap.mean);
  std::ostringstream os;
  os << "range exact " << fmt("%.1f", ex.range()) << " [" << ex.min << ", " << ex.max << "] vs approx "
     << fmt("%.1f", ap.range()) << " [" << ap.min << ", " << ap.max << "]; mean gap " << fmt("%.3f", gap)
     << " (<= 1.5)";
  return {ap.range() > ex.range() && gap <= 1.5, os.str()};
}

Verdict criterion6() {
  Study st = default_study();
  OutputDir none("");
  const auto res = run_residuals(st, none);
  bool ok = true;
  std::ostringstream os;
  for (const auto& p : res.probes) {
    const bool interior = p.role == "interior";
    const double res_limit = interior ? 0.1 : 0.5, raw_limit = interior ? 1.0 : 10.0;
    const double rw1 = p.max_residual[0];
    const bool good = rw1 <= res_limit && p.raw_max > raw_limit && p.best_q() == 5;
    ok = ok && good;
    os << p.role << " site " << p.site << ": raw " << fmt("%.2f", p.raw_max) << " m (> " << raw_limit << "), RW1 max "
       << fmt("%.4f", rw1) << " m (<= " << res_limit << "), best q " << p.best_q() << "; ";
  }
  return {ok, os.str()};
}

Verdict criterion7() {
  Study st = default_study();
  OutputDir none("");
  const auto res = run_table2(st, none);
  const double truth = theta_true_units(st);
  const auto& weak = res.find("weak")->summary;
  const auto& strong = res.find("strong")->summary;
  const auto& gp = res.find("gp_field")->summary;
  const bool weak_ok = weak.max < truth;
  const bool strong_ok = strong.min <= truth && truth <= strong.max;
  const bool iqr_ok = gp.iqr() > strong.iqr();
  std::ostringstream os;
  os << "weak max " << weak.max << " (< 31.7: " << (weak_ok ? "ok" : "miss") << "), strong [" << strong.min << ", "
     << strong.max << "] (covers 31.7: " << (strong_ok ? "ok" : "miss") << "), IQR gp_field " << gp.iqr()
     << " vs strong " << strong.iqr() << " (larger: " << (iqr_ok ? "ok" : "miss") << ")";
  return {weak_ok && strong_ok && iqr_ok, os.str()};
}

Verdict criterion8() {
  Study st = default_study();
  OutputDir none("");
  const auto res = run_variance_field(st, none);
  const bool pattern = res.margin_average > res.interior_average;
  const bool p_ok = res.normality.p_value > 0.05;
  const bool mean_ok = std::abs(res.normality.mean) <= 0.2;
  std::ostringstream os;
  os << "mean variance margin " << fmt("%.3g", res.margin_average) << " vs interior "
     << fmt("%.3g", res.interior_average) << " (" << (pattern ? "ok" : "miss") << "), Anderson-Darling p "
     << fmt("%.3g", res.normality.p_value) << " (> 0.05: " << (p_ok ? "ok" : "miss") << "), mean "
     << fmt("%.3f", res.normality.mean) << " (|.| <= 0.2: " << (mean_ok ? "ok" : "miss") << "), sd "
     << fmt("%.3f", res.normality.sd);
  return {pattern && p_ok && mean_ok, os.str()};
}

Verdict criterion9() {
  // Three sites, strong cross-correlation, pairs of times and sites.
  DiscrepancyCov cov;
  cov.sigma.resize(3, 3);
  cov.sigma << 2.0, 1.2, 0.9, 1.2, 1.0, 0.6, 0.9, 0.6, 0.5;
  const int draws = 20000, T = 20;
  struct Pair {
    int a, b, i, j;
  };
  const std::vector<Pair> pairs = {{1, 1, 0, 0}, {3, 7, 0, 0}, {10, 10, 1, 1}, {5, 20, 0, 1},
                                   {12, 4, 2, 0}, {20, 20, 2, 2}, {8, 15, 1, 2}};
  std::vector<double> acc(pairs.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto s = simulate_rw(cov, 1, T, mix_seed(kSeed, static_cast<std::uint64_t>(d)));
    for (std::size_t p = 0; p < pairs.size(); ++p)
      acc[p] += s.x[pairs[p].a - 1][pairs[p].i] * s.x[pairs[p].b - 1][pairs[p].j];
  }
  const Eigen::MatrixXd S = cov.jittered();
  double worst = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const double want = std::min(pairs[p].a, pairs[p].b) * S(pairs[p].i, pairs[p].j);
    worst = std::max(worst, std::abs(acc[p] / draws - want) / std::abs(want));
  }
  return {worst <= 0.05, "max relative error " + fmt("%.4f", worst) + " over " + std::to_string(pairs.size()) +
                             " (time, site) pairs, " + std::to_string(draws) + " draws (limit 0.05)"};
}

// CSV text with the timing column removed.
std::string normalized_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line, out;
  int skip = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == "wall_time_ns") skip = static_cast<int>(i);
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (static_cast<int>(i) != skip) out += cells[i] + ',';
    out += '\n';
  }
  return out;
}

Verdict criterion10() {
  const fs::path base = fs::temp_directory_path() / "hiersim_acceptance_determinism";
  fs::remove_all(base);
  std::ostringstream os;
  bool ok = true;
  int compared = 0;
  for (const auto& name : experiment_names()) {
    std::map<unsigned, fs::path> dirs;
    for (unsigned threads : {1u, 3u}) {
      ExperimentSpec spec;
      spec.name = name;
      spec.seed = kSeed;
      spec.out_dir = (base / (name + "_t" + std::to_string(threads))).string();
      const auto outcome = run_experiment(spec, threads);
      if (outcome.status != 0) {
        ok = false;
        os << name << " failed: " << outcome.error << "; ";
      }
      dirs[threads] = spec.out_dir;
    }
    for (const auto& entry : fs::directory_iterator(dirs[1u])) {
      const fs::path other = dirs[3u] / entry.path().filename();
      if (entry.path().extension() != ".csv" && entry.path().filename() != "manifest.txt") continue;
      ++compared;
      if (!fs::exists(other) || normalized_csv(entry.path()) != normalized_csv(other)) {
        ok = false;
        os << name << "/" << entry.path().filename().string() << " differs; ";
      }
    }
  }
  os << compared << " files compared across 1 and 3 threads for " << experiment_names().size() << " experiments";
  return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--only N]\n";
      return 2;
    }
  }
  const std::vector<std::function<Verdict()>> checks = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                                        criterion6, criterion7, criterion8, criterion9, criterion10};
  if (only < 0 || only > static_cast<int>(checks.size())) {
    std::cerr << "no criterion " << only << "\n";
    return 2;
  }
  bool all = true;
  for (int c = 1; c <= static_cast<int>(checks.size()); ++c) {
    if (only && c != only) continue;
    Verdict v;
    try {
      v = checks[static_cast<std::size_t>(c - 1)]();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cout << (v.pass ? "[PASS]" : "[FAIL]") << " criterion " << c << ": " << v.detail << std::endl;
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
