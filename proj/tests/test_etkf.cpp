#include <catch2/catch_amalgamated.hpp>

#include "mrenkf/etkf.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace mrenkf;
using Catch::Matchers::WithinAbs;

TEST_CASE("symmetric_sqrt basics") {
  MatrixXd id = MatrixXd::Identity(4, 4);
  CHECK_THAT((symmetric_sqrt(id) - id).lpNorm<Eigen::Infinity>(),
             WithinAbs(0.0, 1e-14));

  MatrixXd d = VectorXd::LinSpaced(2, 4.0, 9.0).asDiagonal();
  MatrixXd s = symmetric_sqrt(d);
  CHECK_THAT(s(0, 0), WithinAbs(2.0, 1e-13));
  CHECK_THAT(s(1, 1), WithinAbs(3.0, 1e-13));

  auto gen = testutil::rng(2);
  MatrixXd a = testutil::random_spd(10, gen);
  MatrixXd sa = symmetric_sqrt(a);
  CHECK_THAT((sa - sa.transpose()).lpNorm<Eigen::Infinity>(),
             WithinAbs(0.0, 1e-12));
  CHECK(oracles::rel_err(MatrixXd(sa * sa), a) < 1e-10);
}

TEST_CASE("symmetric_sqrt guards") {
  MatrixXd asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  REQUIRE_THROWS_AS(symmetric_sqrt(asym), std::invalid_argument);

  MatrixXd neg = MatrixXd::Identity(3, 3);
  neg(2, 2) = -0.5;
  REQUIRE_THROWS_AS(symmetric_sqrt(neg), std::invalid_argument);

  // roundoff-scale negatives are clamped, not rejected
  MatrixXd tiny = MatrixXd::Identity(3, 3);
  tiny(2, 2) = -1e-12;
  MatrixXd s = symmetric_sqrt(tiny);
  CHECK(s(2, 2) == 0.0);
}

TEST_CASE("obs covariance representations") {
  auto gen = testutil::rng(3);
  ObsCovariance sc = ObsCovariance::scalar(2.0, 3);
  VectorXd dvals(3);
  dvals << 1.0, 4.0, 0.25;
  ObsCovariance di = ObsCovariance::diagonal(dvals);
  MatrixXd f = testutil::random_spd(3, gen, 1.0, 3.0);
  ObsCovariance fu = ObsCovariance::full(f);

  MatrixXd rhs = testutil::random_matrix(3, 5, gen);
  CHECK(oracles::rel_err(sc.solve(rhs), MatrixXd(rhs / 2.0)) < 1e-14);
  CHECK(oracles::rel_err(di.solve(rhs),
                         MatrixXd(dvals.cwiseInverse().asDiagonal() * rhs)) <
        1e-14);
  CHECK(oracles::rel_err(fu.solve(rhs), MatrixXd(f.inverse() * rhs)) < 1e-10);

  CHECK_THAT(sc.max_singular_value(), WithinAbs(2.0, 1e-14));
  CHECK_THAT(di.max_singular_value(), WithinAbs(4.0, 1e-14));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(f);
  CHECK_THAT(fu.max_singular_value(),
             WithinAbs(es.eigenvalues().maxCoeff(), 1e-9));

  REQUIRE_THROWS_AS(ObsCovariance::scalar(0.0, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(ObsCovariance::diagonal(VectorXd::Zero(2)),
                    std::invalid_argument);
  MatrixXd notspd = -MatrixXd::Identity(2, 2);
  REQUIRE_THROWS_AS(ObsCovariance::full(notspd), std::invalid_argument);
  MatrixXd notsym(2, 2);
  notsym << 1.0, 0.3, -0.3, 1.0;
  REQUIRE_THROWS_AS(ObsCovariance::full(notsym), std::invalid_argument);
}

TEST_CASE("obs covariance sampling matches the target covariance") {
  auto gen = testutil::rng(5);
  MatrixXd f = testutil::random_spd(4, gen, 0.5, 2.0);
  ObsCovariance fu = ObsCovariance::full(f);
  MatrixXd draws = fu.sample(60000, gen);
  MatrixXd emp = draws * draws.transpose() / double(draws.cols());
  CHECK(oracles::rel_err(emp, f) < 0.05);
}

TEST_CASE("scalar closed-form analysis") {
  MatrixXd members(1, 2);
  members << -1.0, 1.0;
  Ensemble forecast(members);
  ObsSpaceEnsemble obs(members);  // identity observation operator
  VectorXd y(1);
  y << 1.0;

  Ensemble analysis =
      etkf_update(forecast, obs, y, ObsCovariance::scalar(2.0, 1), 1.0);

  CHECK_THAT(sample_mean(analysis)[0], WithinAbs(0.5, 1e-10));
  MatrixXd an = anomalies(analysis);
  CHECK_THAT((an * an.transpose())(0, 0), WithinAbs(1.0, 1e-10));
}

TEST_CASE("uninformative observations leave the forecast unchanged") {
  auto gen = testutil::rng(7);
  Ensemble forecast(testutil::random_matrix(6, 12, gen));
  ObsSpaceEnsemble obs(forecast.members.topRows(4));
  VectorXd y = testutil::random_vector(4, gen);

  Ensemble analysis =
      etkf_update(forecast, obs, y, ObsCovariance::scalar(1e12, 4), 1.0);
  const double scale = forecast.members.lpNorm<Eigen::Infinity>();
  CHECK((analysis.members - forecast.members).lpNorm<Eigen::Infinity>() <
        1e-4 * scale);
}

TEST_CASE("analysis moments match the dense Kalman oracle") {
  auto gen = testutil::rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 4, q = 4, m = 8;
    Ensemble forecast(testutil::random_matrix(n, m, gen));
    MatrixXd h = testutil::random_matrix(q, n, gen);
    MatrixXd obs_values = h * forecast.members;
    VectorXd y = testutil::random_vector(q, gen);
    const double rho = (rep % 2 == 0) ? 1.0 : 2.5;

    ObsCovariance r = [&] {
      switch (rep % 3) {
        case 0:
          return ObsCovariance::scalar(1.3, q);
        case 1:
          return ObsCovariance::diagonal(
              VectorXd::LinSpaced(q, 0.5, 2.0).eval());
        default:
          return ObsCovariance::full(testutil::random_spd(q, gen, 0.8, 2.0));
      }
    }();

    Ensemble analysis =
        etkf_update(forecast, ObsSpaceEnsemble(obs_values), y, r, rho);
    auto got = ensemble_moments(analysis);
    auto want = oracles::dense_kalman(forecast, obs_values, y, r.dense(), rho);

    INFO("rep " << rep);
    CHECK(oracles::rel_err(got.mean, want.mean) < 1e-8);
    CHECK(oracles::rel_err(got.cov, want.cov) < 1e-8);
  }
}

TEST_CASE("update is deterministic") {
  auto gen = testutil::rng(13);
  Ensemble forecast(testutil::random_matrix(5, 9, gen));
  ObsSpaceEnsemble obs(forecast.members);
  VectorXd y = testutil::random_vector(5, gen);
  ObsCovariance r = ObsCovariance::scalar(0.7, 5);

  Ensemble a = etkf_update(forecast, obs, y, r, 1.2);
  Ensemble b = etkf_update(forecast, obs, y, r, 1.2);
  CHECK((a.members - b.members).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("input guards") {
  auto gen = testutil::rng(17);
  Ensemble forecast(testutil::random_matrix(4, 6, gen));
  ObsSpaceEnsemble obs(forecast.members);
  VectorXd y = testutil::random_vector(4, gen);
  ObsCovariance r = ObsCovariance::scalar(1.0, 4);

  REQUIRE_THROWS_AS(
      etkf_update(forecast, ObsSpaceEnsemble(forecast.members.leftCols(5)), y,
                  r, 1.0),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      etkf_update(forecast, obs, testutil::random_vector(3, gen), r, 1.0),
      std::invalid_argument);
  REQUIRE_THROWS_AS(etkf_update(forecast, obs, y, r, 0.0),
                    std::invalid_argument);
  VectorXd bad = y;
  bad[1] = std::nan("");
  REQUIRE_THROWS_AS(etkf_update(forecast, obs, bad, r, 1.0),
                    std::invalid_argument);
}

TEST_CASE("spread never grows past the inflated forecast") {
  auto gen = testutil::rng(19);
  for (int rep = 0; rep < 8; ++rep) {
    Ensemble forecast(testutil::random_matrix(5, 7, gen));
    ObsSpaceEnsemble obs(forecast.members.topRows(3));
    VectorXd y = testutil::random_vector(3, gen);
    const double rho = 1.0 + rep * 0.5;
    Ensemble analysis = etkf_update(
        forecast, obs, y, ObsCovariance::scalar(0.5 + rep * 0.1, 3), rho);
    const double pre = rho * anomalies(forecast).squaredNorm();
    const double post = anomalies(analysis).squaredNorm();
    CHECK(post <= pre * (1.0 + 1e-12));
  }
}

TEST_CASE("observation equal to the forecast mean preserves the mean") {
  auto gen = testutil::rng(23);
  Ensemble forecast(testutil::random_matrix(6, 10, gen));
  ObsSpaceEnsemble obs(forecast.members);
  VectorXd y = sample_mean(forecast);
  Ensemble analysis =
      etkf_update(forecast, obs, y, ObsCovariance::scalar(0.4, 6), 1.0);
  CHECK(oracles::rel_err(sample_mean(analysis), y) < 1e-10);
}

TEST_CASE("inflation as anomaly scaling equals rho folded into the update") {
  auto gen = testutil::rng(29);
  Ensemble forecast(testutil::random_matrix(4, 12, gen));
  MatrixXd h = testutil::random_matrix(3, 4, gen);
  VectorXd y = testutil::random_vector(3, gen);
  ObsCovariance r = ObsCovariance::scalar(0.9, 3);
  const double rho = 3.0;

  Ensemble via_rho = etkf_update(
      forecast, ObsSpaceEnsemble(h * forecast.members), y, r, rho);

  Ensemble inflated = inflate(forecast, rho);
  Ensemble via_scaling = etkf_update(
      inflated, ObsSpaceEnsemble(h * inflated.members), y, r, 1.0);

  CHECK(oracles::rel_err(via_scaling.members, via_rho.members) < 1e-10);

  // and the mean agrees with the R/rho form written with uninflated moments
  MatrixXd xa = anomalies(forecast);
  MatrixXd ya = anomalies(Ensemble(h * forecast.members));
  VectorXd mean_direct =
      sample_mean(forecast) +
      cross_cov(xa, ya) *
          (cross_cov(ya, ya) + r.dense() / rho).inverse() *
          (y - (h * forecast.members).rowwise().mean());
  CHECK(oracles::rel_err(sample_mean(via_rho), mean_direct) < 1e-10);
}

TEST_CASE("moments converge to exact Kalman values as M grows") {
  // scalar linear-Gaussian problem: x ~ N(0, 4), y = x + noise, R = 1
  const double prior_var = 4.0, r_var = 1.0, y_obs = 1.5;
  const double exact_mean = prior_var / (prior_var + r_var) * y_obs;
  const double exact_var = prior_var - prior_var * prior_var / (prior_var + r_var);

  auto mean_abs_err = [&](Index m, std::uint64_t seed) {
    double err_mean = 0.0, err_var = 0.0;
    const int reps = 60;
    auto gen = testutil::rng(seed);
    std::normal_distribution<double> nd(0.0, std::sqrt(prior_var));
    for (int rep = 0; rep < reps; ++rep) {
      MatrixXd members(1, m);
      for (Index j = 0; j < m; ++j) members(0, j) = nd(gen);
      Ensemble forecast(members);
      VectorXd y(1);
      y << y_obs;
      Ensemble analysis = etkf_update(forecast, ObsSpaceEnsemble(members), y,
                                      ObsCovariance::scalar(r_var, 1), 1.0);
      auto mom = ensemble_moments(analysis);
      err_mean += std::abs(mom.mean[0] - exact_mean);
      err_var += std::abs(mom.cov(0, 0) - exact_var);
    }
    return std::pair{err_mean / reps, err_var / reps};
  };

  auto [m10, v10] = mean_abs_err(10, 31);
  auto [m100, v100] = mean_abs_err(100, 37);
  auto [m1000, v1000] = mean_abs_err(1000, 41);
  CHECK(m100 < m10);
  CHECK(m1000 < m100);
  CHECK(v100 < v10);
  CHECK(v1000 < v100);
}
