// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exits non-zero if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mrenkf/experiment.hpp"
#include "mrenkf/manifest.hpp"
#include "mrenkf/metrics_io.hpp"
#include "mrenkf/run_config.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

namespace fs = std::filesystem;
using namespace mrenkf;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail = "") {
  std::printf("%-4s criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion,
              what.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// --------------------------------------------------------------- criterion 1
void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  auto gen = testutil::rng(1001);
  double worst = 0.0;
  for (int k = 1; k <= 9; ++k) {
    const FilterPair f = make_filter("db" + std::to_string(k));
    for (Index n : {Index(64), Index(512)}) {
      for (int levels = 1; levels <= 4; ++levels) {
        for (int rep = 0; rep < 100; ++rep) {
          const VectorXd x = testutil::random_vector(n, gen);
          const VectorXd back = waverec(wavedec(x, f, levels), f);
          worst = std::max(worst, (back - x).lpNorm<Eigen::Infinity>());
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "max round-trip error %.3g (< 1e-10), %.1f s (< 10 s)", worst,
                elapsed);
  report(1, worst < 1e-10 && elapsed < 10.0,
         "wavelet perfect reconstruction db1-db9", detail);
}

// --------------------------------------------------------------- criterion 2
void criterion_2() {
  auto gen = testutil::rng(1002);
  bool pass = true;
  std::string detail;

  const FilterPair f = make_filter("db7");
  for (int rep = 0; rep < 25; ++rep) {
    const VectorXd x = testutil::random_vector(512, gen);
    const double ratio = wavedec(x, f, 3).flatten().norm() / x.norm();
    pass = pass && std::abs(ratio - 1.0) <= 1e-10;
  }

  const VectorXd x = testutil::random_vector(256, gen);
  const VectorXd y = testutil::random_vector(256, gen);
  const double a = 2.75, b = -0.4;
  const double superpos =
      (wavedec(a * x + b * y, f, 2).flatten() -
       (a * wavedec(x, f, 2).flatten() + b * wavedec(y, f, 2).flatten()))
          .lpNorm<Eigen::Infinity>();
  pass = pass && superpos < 1e-10;

  const FilterPair f9 = make_filter("db9");
  double worst2d = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const MatrixXd field = testutil::random_matrix(64, 64, gen);
    const MatrixXd back = waverec2(wavedec2(field, f9, 2), f9);
    worst2d = std::max(worst2d, (back - field).norm());
  }
  pass = pass && worst2d < 1e-10;

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "superposition err %.3g, 2D Frobenius round trip %.3g",
                superpos, worst2d);
  report(2, pass, "wavelet isometry, linearity, 2D round trip", buf);
}

// --------------------------------------------------------------- criterion 3
void criterion_3() {
  auto gen = testutil::rng(1003);
  bool pass = true;
  double worst_match = 0.0, worst_orth = 0.0;
  for (const char* name : {"db1", "db9"}) {
    for (int levels : {1, 2}) {
      const FilterPair f = make_filter(name);
      const MatrixXd w = transform_matrix(64, f, levels);
      worst_orth = std::max(
          worst_orth, (w.transpose() * w - MatrixXd::Identity(64, 64))
                          .lpNorm<Eigen::Infinity>());
      for (int rep = 0; rep < 20; ++rep) {
        const VectorXd x = testutil::random_vector(64, gen);
        worst_match = std::max(worst_match,
                               (w * x - wavedec(x, f, levels).flatten())
                                   .lpNorm<Eigen::Infinity>());
      }
    }
  }
  pass = worst_match < 1e-12 && worst_orth < 1e-10;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "fast-vs-matrix %.3g (<1e-12), WtW-I %.3g (<1e-10)",
                worst_match, worst_orth);
  report(3, pass, "transform-matrix consistency", buf);
}

// --------------------------------------------------------------- criterion 4
void criterion_4() {
  auto gen = testutil::rng(1004);
  bool pass = true;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Ensemble forecast(testutil::random_matrix(4, 8, gen));
    const MatrixXd h = testutil::random_matrix(4, 4, gen);
    const MatrixXd obs_values = h * forecast.members;
    const VectorXd y = testutil::random_vector(4, gen);
    const ObsCovariance r =
        ObsCovariance::full(testutil::random_spd(4, gen, 0.5, 1.5));
    const Ensemble analysis =
        etkf_update(forecast, ObsSpaceEnsemble(obs_values), y, r, 1.0);
    const auto got = ensemble_moments(analysis);
    const auto want = oracles::dense_kalman(forecast, obs_values, y, r.dense(), 1.0);
    worst = std::max(worst, oracles::rel_err(got.mean, want.mean));
    worst = std::max(worst, oracles::rel_err(got.cov, want.cov));
  }
  pass = worst < 1e-8;

  // scalar closed-form case
  MatrixXd members(1, 2);
  members << -1.0, 1.0;
  Ensemble forecast(members);
  VectorXd y(1);
  y << 1.0;
  const Ensemble analysis = etkf_update(forecast, ObsSpaceEnsemble(members), y,
                                        ObsCovariance::scalar(2.0, 1), 1.0);
  const auto mom = ensemble_moments(analysis);
  const double mean_err = std::abs(mom.mean[0] - 0.5);
  const double var_err = std::abs(mom.cov(0, 0) - 1.0);
  pass = pass && mean_err < 1e-10 && var_err < 1e-10;

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "oracle rel err %.3g (<1e-8); scalar case err %.3g/%.3g (<1e-10)",
                worst, mean_err, var_err);
  report(4, pass, "ETKF moment identity vs dense Kalman oracle", buf);
}

// --------------------------------------------------------------- criterion 5
void criterion_5() {
  auto gen = testutil::rng(1005);
  Ensemble forecast(testutil::random_matrix(16, 12, gen));
  const VectorXd y = testutil::random_vector(16, gen);
  const ObsCovariance r = ObsCovariance::scalar(0.64, 16);

  ScaleObsConfig cfg = ScaleObsConfig::with_defaults(0, make_filter("db9"));
  cfg.scale(1).rho = 1.15;
  auto rng = testutil::rng(1);
  const Ensemble via_mr =
      mrenkf_assimilate(forecast, identity_obs_operator(), y, r, cfg, rng);
  const Ensemble via_etkf =
      etkf_update(forecast, ObsSpaceEnsemble(forecast.members), y, r, 1.15);
  const bool pass =
      (via_mr.members - via_etkf.members).lpNorm<Eigen::Infinity>() == 0.0;
  report(5, pass, "degenerate N=0 multiresolution update is bit-identical to ETKF");
}

// --------------------------------------------------------------- criterion 6
void criterion_6() {
  auto gen = testutil::rng(1006);
  Ensemble forecast(testutil::random_matrix(64, 128, gen));
  const VectorXd y = testutil::random_vector(64, gen);
  const ObsCovariance r = ObsCovariance::scalar(0.7, 64);

  const Ensemble joint =
      etkf_update(forecast, ObsSpaceEnsemble(forecast.members), y, r, 1.0);
  const auto want = ensemble_moments(joint);

  bool pass = true;
  double worst = 0.0;
  const std::vector<std::vector<int>> orders = {
      {3, 2, 1}, {1, 2, 3}, {2, 3, 1}};
  for (const auto& order : orders) {
    ScaleObsConfig cfg = ScaleObsConfig::with_defaults(2, make_filter("db9"));
    for (auto& s : cfg.scales) s.strategy = CovStrategy::Exact;
    cfg.assimilation_order = order;
    auto rng = testutil::rng(2);
    const Ensemble mr =
        mrenkf_assimilate(forecast, identity_obs_operator(), y, r, cfg, rng);
    const auto got = ensemble_moments(mr);
    worst = std::max(worst, oracles::rel_err(got.mean, want.mean));
    worst = std::max(worst, oracles::rel_err(got.cov, want.cov));
  }
  pass = worst < 1e-8;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "worst moment rel err over 3 orders %.3g (<1e-8)",
                worst);
  report(6, pass, "sequential-joint equivalence for white noise", buf);
}

// --------------------------------------------------------------- criterion 7
void criterion_7() {
  const FilterPair f = make_filter("db9");
  const int levels = 4;
  const int level = 3;  // 64-dim block of a 512-dim observation
  VectorXd vars = VectorXd::LinSpaced(512, 0.5, 2.0);
  const ObsCovariance r = ObsCovariance::diagonal(vars);
  const MatrixXd exact = obs_cov_exact(r, f, levels, level).dense();

  auto err_at = [&](int samples, std::uint64_t seed) {
    auto rng = testutil::rng(seed);
    return (obs_cov_sampled(r, f, levels, level, samples, rng).dense() - exact)
        .norm();
  };
  const double e1600 = err_at(1600, 7001);
  const double e25600 = err_at(25600, 7002);
  const bool decay_ok = e1600 < 4.0 * e25600 * 4.0;  // 4x the sqrt(16)-scaled error

  const ObsCovariance unit = ObsCovariance::scalar(1.0, 512);
  double coincide = 0.0;
  for (int lv = 1; lv <= levels + 1; ++lv) {
    const MatrixXd ex = obs_cov_exact(unit, f, levels, lv).dense();
    const MatrixXd di = obs_cov_diagonal(unit, 1.0, ex.rows()).dense();
    coincide = std::max(coincide, (ex - di).lpNorm<Eigen::Infinity>());
  }

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "err(1600)=%.4f vs 16*err(25600)=%.4f; diagonal-vs-exact %.3g (<1e-10)",
                e1600, 16.0 * e25600, coincide);
  report(7, decay_ok && coincide < 1e-10, "R_i strategy consistency", buf);
}

// --------------------------------------------------------------- criterion 8
void criterion_8() {
  KSConfig ks;  // L = 22, n = 512, dt = 0.5
  const ETDRK4Coeffs coeffs = etdrk4_precompute(ks);

  bool rates_ok = true;
  std::ostringstream rates;
  Eigen::FFT<double> fft;
  for (Index mode : {Index(1), Index(5), Index(15), Index(22), Index(30)}) {
    VectorXd u(ks.n);
    for (Index j = 0; j < ks.n; ++j) {
      u[j] = 1e-8 * std::cos(double(mode) * ks.grid_point(j) / ks.L);
    }
    auto amplitude = [&](const VectorXd& field) {
      VectorXcd in(ks.n), freq(ks.n);
      for (Index i = 0; i < ks.n; ++i) in[i] = field[i];
      fft.fwd(freq, in);
      return std::abs(freq[mode]);
    };
    const double a0 = amplitude(u);
    const KSState s = ks_propagate({u, 0.0}, coeffs, 2);  // t = 1
    const double measured = std::log(amplitude(s.u) / a0);
    const double expected = linear_growth_rate(double(mode), ks.L);
    const double tol = std::max(1e-3 * std::abs(expected), 1e-6);
    if (std::abs(measured - expected) > tol) rates_ok = false;
    rates << " k=" << mode << ":" << measured - expected;
  }

  KSState s = ks_initial_condition(ks);
  const double mean0 = s.u.mean();
  double maxabs = 0.0;
  for (int i = 0; i < 600; ++i) {
    s = ks_step(s, coeffs);
    maxabs = std::max(maxabs, s.u.lpNorm<Eigen::Infinity>());
  }
  const double mean_drift = std::abs(s.u.mean() - mean0);
  const bool pass = rates_ok && mean_drift < 1e-8 && maxabs < 10.0;

  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "rate errors%s; mean drift %.2g (<1e-8); max|u| %.2f (<10)",
                rates.str().c_str(), mean_drift, maxabs);
  report(8, pass, "K-S linear physics, conservation, boundedness", buf);
}

// --------------------------------------------------------------- criterion 9
void criterion_9() {
  TwinExperimentConfig cfg;  // stock defaults
  cfg.seed = 0;
  const auto records = generate_reference(cfg);
  const FilterPair f = make_filter(cfg.noise.wavelet);
  auto rng = detail::stream_for(cfg.seed, 1);

  std::vector<double> snr_acc(cfg.noise.levels + 1, 0.0);
  double sum_d = 0.0, sumsq_d = 0.0;
  long count_d = 0;
  for (const auto& rec : records) {
    const MultiLevelCoeffs clean = wavedec(rec.clean_obs, f, cfg.noise.levels);
    for (int lv = cfg.noise.levels + 1; lv >= 1; --lv) {
      snr_acc[cfg.noise.levels + 1 - lv] +=
          compute_snr(project_level(clean, lv),
                      cfg.noise.sigma[cfg.noise.levels + 1 - lv]);
    }
    const NoisyObs noisy = add_scale_noise(rec.clean_obs, cfg.noise, rng);
    const VectorXd d = noisy.physical - rec.clean_obs;
    sum_d += d.sum();
    sumsq_d += d.squaredNorm();
    count_d += d.size();
  }
  const double sigma_obs = std::sqrt(
      (sumsq_d - sum_d * sum_d / double(count_d)) / double(count_d - 1));
  const bool sigma_ok = std::abs(sigma_obs - 0.8) <= 0.08;

  const std::vector<double> published = {18.22, 15.58, 2.04, 1.16, 1.17};
  bool snr_ok = true;
  std::ostringstream snr_detail;
  for (int i = 0; i < 5; ++i) {
    const double got = snr_acc[i] / double(records.size());
    const bool ok = std::abs(got - published[i]) <= 0.25 * published[i];
    snr_ok = snr_ok && ok;
    snr_detail << " L" << 5 - i << "=" << std::round(got * 100) / 100
               << (ok ? "" : "(out)");
  }

  char buf[240];
  std::snprintf(buf, sizeof(buf), "sigma_obs=%.4f (0.8 +/- 10%%);%s vs 18.22/15.58/2.04/1.16/1.17 +/- 25%%",
                sigma_obs, snr_detail.str().c_str());
  report(9, sigma_ok && snr_ok, "noise-structure reproduction", buf);
}

// -------------------------------------------------------------- criterion 10
void criterion_10() {
  const auto t0 = std::chrono::steady_clock::now();
  int chi_wins = 0, l2_wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TwinExperimentConfig cfg;
    cfg.seed = seed;

    cfg.filter = FilterKind::Enkf;
    const MetricsBundle enkf = run_twin_experiment(cfg);
    cfg.filter = FilterKind::Mrenkf;
    const MetricsBundle mr = run_twin_experiment(cfg);

    auto mean_l2 = [](const MetricsBundle& b) {
      double s = 0.0;
      for (const auto& [t, v] : b.l2_series) s += v;
      return s / double(b.l2_series.size());
    };
    const double chi_e = chi_square_statistic(enkf.rank_bins);
    const double chi_m = chi_square_statistic(mr.rank_bins);
    const double l2_e = mean_l2(enkf);
    const double l2_m = mean_l2(mr);
    if (chi_m < chi_e) ++chi_wins;
    if (l2_m <= l2_e) ++l2_wins;
    detail << " s" << seed << ":chi " << std::round(chi_m) << "/"
           << std::round(chi_e) << ",l2 " << std::round(l2_m * 10) / 10 << "/"
           << std::round(l2_e * 10) / 10;
  }
  const double elapsed = seconds_since(t0);
  const bool pass = chi_wins >= 4 && l2_wins >= 3 && elapsed < 1800.0;
  char buf[400];
  std::snprintf(buf, sizeof(buf),
                "chi-square wins %d/5 (need >=4), L2 wins %d/5 (need >=3), %.0f s (<1800);%s",
                chi_wins, l2_wins, elapsed, detail.str().c_str());
  report(10, pass, "twin-experiment property reproduction over 5 seeds", buf);
}

// -------------------------------------------------------------- criterion 11
void criterion_11() {
  const int m = 9;
  const Index n = 50;
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto gen = testutil::rng(9000 + seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<std::pair<Ensemble, VectorXd>> records;
    for (int rec = 0; rec < 50; ++rec) {
      MatrixXd members(n, m);
      VectorXd truth(n);
      for (Index i = 0; i < n; ++i) {
        truth[i] = nd(gen);
        for (int j = 0; j < m; ++j) members(i, j) = nd(gen);
      }
      records.emplace_back(Ensemble(members), truth);
    }
    auto tie_rng = testutil::rng(9500 + seed);
    const auto bins = rank_histogram(records, 50, 1, tie_rng);
    if (chi_square_statistic(bins) < chi_square_critical_95(m)) ++passes;
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "uniformity test passed in %d/50 seeds (need >=45)",
                passes);
  report(11, passes >= 45, "calibrated rank-histogram oracle", buf);
}

// -------------------------------------------------------------- criterion 12
void criterion_12() {
  const fs::path work = fs::temp_directory_path() / "mrenkf_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  auto cli = [&](const std::string& args) {
    const std::string cmd =
        std::string(MRENKF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  bool pass = true;
  std::string detail = "ok";
  if (cli("run --seed 123 --out " + (work / "a").string()) != 0 ||
      cli("run --seed 123 --out " + (work / "b").string()) != 0) {
    pass = false;
    detail = "run failed";
  } else {
    for (const char* name :
         {"metrics.csv", "l2_series.csv", "rankhist.csv", "snr.csv",
          "tracking.csv", "reference.csv"}) {
      if (slurp(work / "a" / name) != slurp(work / "b" / name)) {
        pass = false;
        detail = std::string(name) + " differs between identical runs";
      }
    }
    // manifest replay: rerun from the recorded resolved config
    if (pass) {
      if (cli("run --config " + (work / "a" / "config.resolved").string() +
              " --out " + (work / "c").string()) != 0) {
        pass = false;
        detail = "replay run failed";
      } else {
        const RunManifest ma = load_manifest((work / "a" / "manifest.json").string());
        const RunManifest mc = load_manifest((work / "c" / "manifest.json").string());
        if (ma.outputs.size() != mc.outputs.size()) {
          pass = false;
          detail = "replay output inventory differs";
        } else {
          for (std::size_t i = 0; i < ma.outputs.size(); ++i) {
            if (ma.outputs[i].hash != mc.outputs[i].hash) {
              pass = false;
              detail = "replay hash differs for " + ma.outputs[i].file;
            }
          }
        }
      }
    }
  }
  fs::remove_all(work);
  report(12, pass, "reproducibility: byte-identical reruns and manifest replay",
         detail);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  criterion_12();
  std::printf("%d/12 criteria passed in %.0f s\n", 12 - g_failures,
              seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
