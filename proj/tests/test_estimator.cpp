#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "oracles.hpp"
#include "plqid/estimator.hpp"

using namespace plqid;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd randn(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

// Synthetic FIR dataset: y(t) = sum_j x_j u(t - delay - j + 1) + noise,
// with the same indexing convention as build_regressor.
struct FirData {
  VectorXd u, y, x_true, noise_kept;  // noise_kept aligned with the kept rows
};

FirData make_fir(Eigen::Index len, const VectorXd& x_true, Eigen::Index delay,
                 std::mt19937_64& rng, double noise_sd) {
  FirData d;
  d.x_true = x_true;
  d.u = randn(len, rng);
  d.y = VectorXd::Zero(len);
  const Eigen::Index n = x_true.size();
  VectorXd e = randn(len, rng, noise_sd);
  for (Eigen::Index t = 1; t <= len; ++t) {  // 1-based
    double acc = 0.0;
    for (Eigen::Index j = 1; j <= n; ++j) {
      const Eigen::Index k = t - delay - j + 1;  // 1-based input index
      if (k >= 1 && k <= len) acc += x_true[j - 1] * d.u[k - 1];
    }
    d.y[t - 1] = acc + e[t - 1];
  }
  const Eigen::Index t_first = n + delay;
  d.noise_kept = e.segment(t_first - 1, len - t_first + 1);
  return d;
}

}  // namespace

TEST_CASE("build_regressor on tiny series") {
  VectorXd u(3), y(3);
  u << 1, 2, 3;
  y << 0, 0, 7;
  const RegressionData d = build_regressor(u, y, 2, 1);
  REQUIRE(d.m == 1);
  CHECK(d.H(0, 0) == 2.0);
  CHECK(d.H(0, 1) == 1.0);
  CHECK(d.z[0] == 7.0);

  VectorXd u2(2), y2(2);
  u2 << 1, 0;
  y2 << 5, 6;
  const RegressionData d2 = build_regressor(u2, y2, 1, 0);
  REQUIRE(d2.m == 2);
  CHECK(d2.H(0, 0) == 1.0);
  CHECK(d2.H(1, 0) == 0.0);
  CHECK(d2.z[0] == 5.0);
  CHECK(d2.z[1] == 6.0);
}

TEST_CASE("build_regressor keeps only fully determined rows") {
  std::mt19937_64 rng(1);
  const VectorXd u = randn(400, rng), y = randn(400, rng);
  const RegressionData d = build_regressor(u, y, 100, 1);
  CHECK(d.m == 300);
  CHECK(d.H.rows() == 300);
  CHECK(d.H.cols() == 100);
}

TEST_CASE("build_regressor rejects bad input") {
  CHECK_THROWS_AS(build_regressor(VectorXd::Ones(3), VectorXd::Ones(4), 2, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_regressor(VectorXd::Ones(3), VectorXd::Ones(3), 4, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_regressor(VectorXd::Ones(3), VectorXd::Ones(3), 3, 1),
                  std::invalid_argument);
}

TEST_CASE("regressor residual equals the injected noise") {
  std::mt19937_64 rng(2);
  const VectorXd x_true = randn(8, rng);
  const FirData fd = make_fir(60, x_true, 1, rng, 0.3);
  const RegressionData d = build_regressor(fd.u, fd.y, 8, 1);
  REQUIRE(d.m == fd.noise_kept.size());
  CHECK((d.z - d.H * x_true - fd.noise_kept).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("noise variance: noiseless FIR interpolates") {
  std::mt19937_64 rng(3);
  const VectorXd x_true = randn(5, rng);
  const FirData fd = make_fir(50, x_true, 1, rng, 0.0);
  CHECK(estimate_noise_variance(fd.u, fd.y, 5, 1) <= 1e-10);
  // A longer FIR model still interpolates.
  CHECK(estimate_noise_variance(fd.u, fd.y, 8, 1) <= 1e-10);
}

TEST_CASE("noise variance tracks the true variance at m=300") {
  std::mt19937_64 rng(4);
  int within = 0;
  double ratio_sum = 0.0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    VectorXd x_true(100);
    for (int j = 0; j < 100; ++j) x_true[j] = std::pow(0.9, j) * randn(1, rng)[0];
    const double sd = 0.5;
    const FirData fd = make_fir(400, x_true, 1, rng, sd);
    const double s2 = estimate_noise_variance(fd.u, fd.y, 100, 1);
    const double var_e = fd.noise_kept.squaredNorm() / double(fd.noise_kept.size());
    const double ratio = s2 / var_e;
    ratio_sum += ratio;
    if (ratio > 0.7 && ratio < 1.3) ++within;
  }
  CHECK(within >= 95);
  CHECK(ratio_sum / seeds == Catch::Approx(1.0).margin(0.1));
}

TEST_CASE("noise variance error cases") {
  std::mt19937_64 rng(5);
  const VectorXd u = randn(12, rng), y = randn(12, rng);
  CHECK_THROWS_AS(estimate_noise_variance(u, y, 11, 0), std::invalid_argument);  // m <= n
  // Constant-zero input: rank deficient regressor.
  CHECK_THROWS_AS(estimate_noise_variance(VectorXd::Zero(12), y, 3, 0), std::runtime_error);
}

TEST_CASE("marginal likelihood scalar value") {
  RegressionData d;
  d.H = MatrixXd::Ones(1, 1);
  d.z = VectorXd::Ones(1);
  d.m = 1;
  d.n = 1;
  d.sigma2_hat = 0.5;
  // Sigma_z = 1*0.5*1 + 0.5 = 1; z^2/1 + log 1 = 1.
  CHECK(marginal_likelihood_objective(1.0, 0.5, d) == Catch::Approx(1.0).margin(1e-12));
  CHECK_THROWS_AS(marginal_likelihood_objective(0.0, 0.5, d), std::invalid_argument);
}

TEST_CASE("marginal likelihood small-lambda limit") {
  std::mt19937_64 rng(6);
  RegressionData d;
  d.m = 6;
  d.n = 3;
  d.H = MatrixXd::Random(6, 3);
  d.z = randn(6, rng);
  d.sigma2_hat = 0.7;
  const double limit = d.z.squaredNorm() / 0.7 + 6.0 * std::log(0.7);
  CHECK(marginal_likelihood_objective(1e-14, 0.5, d) == Catch::Approx(limit).margin(1e-6));
}

TEST_CASE("marginal likelihood agrees with a dense-inverse evaluation") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    RegressionData d;
    d.m = 5;
    d.n = 3;
    d.H = MatrixXd::Random(5, 3);
    d.z = randn(5, rng);
    d.sigma2_hat = 0.4;
    const double lambda = 0.8, alpha = 0.6;
    const MatrixXd Q = stable_spline_gram(alpha, d.n);
    MatrixXd Sz = lambda * d.H * Q * d.H.transpose();
    Sz.diagonal().array() += d.sigma2_hat;
    const double direct = d.z.dot(Sz.inverse() * d.z) + std::log(Sz.determinant());
    CHECK(std::abs(marginal_likelihood_objective(lambda, alpha, d) - direct) <= 1e-9);
  }
}

TEST_CASE("ml fit recovers hyperparameters against an exhaustive grid") {
  std::mt19937_64 rng(8);
  // Draw x from the prior at known (lambda, alpha), then refit.
  const Eigen::Index n = 100;
  const double lam0 = 2.0, alpha0 = 0.85, sigma2 = 0.01;
  const StableSplineKernel kern(alpha0, n);
  const VectorXd x_true = std::sqrt(lam0) * (kern.Lfac * randn(n, rng));
  FirData fd = make_fir(400, x_true, 1, rng, std::sqrt(sigma2));
  RegressionData d = build_regressor(fd.u, fd.y, n, 1);
  d.sigma2_hat = sigma2;

  const std::vector<double> grid = default_alpha_grid();
  const auto [lam_hat, alpha_hat] = fit_hyperparameters_ml(d, grid);

  // Exhaustive oracle over the same alpha grid x a fine log-lambda grid.
  double best = std::numeric_limits<double>::infinity();
  double oracle_alpha = grid.front();
  for (double a : grid) {
    for (int i = 0; i < 61; ++i) {
      const double lam = 1e-6 * sigma2 * std::pow(1e12, i / 60.0);
      const double f = marginal_likelihood_objective(lam, a, d);
      if (f < best) {
        best = f;
        oracle_alpha = a;
      }
    }
  }
  // Within one grid cell of the oracle's alpha.
  auto idx = [&](double a) {
    return std::distance(grid.begin(), std::find(grid.begin(), grid.end(), a));
  };
  CHECK(std::abs(idx(alpha_hat) - idx(oracle_alpha)) <= 1);
  CHECK(lam_hat > 0.0);
}

TEST_CASE("ml fit degenerate grids") {
  std::mt19937_64 rng(9);
  RegressionData d;
  d.m = 8;
  d.n = 4;
  d.H = MatrixXd::Random(8, 4);
  d.z = randn(8, rng);
  d.sigma2_hat = 0.5;
  const auto [lam, alpha] = fit_hyperparameters_ml(d, {0.37});
  CHECK(alpha == 0.37);

  // H = 0: objective constant in lambda, tie-break to the smallest.
  RegressionData d0 = d;
  d0.H.setZero();
  const auto [lam0, alpha0] = fit_hyperparameters_ml(d0, {0.3, 0.6});
  CHECK(lam0 <= 2.0 * 1e-6 * d0.sigma2_hat);
  CHECK(alpha0 == 0.3);  // ties keep the smaller alpha

  CHECK_THROWS_AS(fit_hyperparameters_ml(d, {}), std::invalid_argument);
}

TEST_CASE("closed-form estimate basics") {
  std::mt19937_64 rng(10);
  RegressionData d;
  d.m = 10;
  d.n = 4;
  d.H = MatrixXd::Random(10, 4);
  d.z = VectorXd::Zero(10);
  d.sigma2_hat = 0.3;
  CHECK(estimate_ss_l2(d, 1.0, 0.8).x_hat.lpNorm<Eigen::Infinity>() == 0.0);

  d.z = randn(10, rng);
  const VectorXd x_small = estimate_ss_l2(d, 1e-12, 0.8).x_hat;
  CHECK(x_small.lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK(estimate_ss_l2(d, 1.0, 0.8).method == "ss_l2_ml");
}

TEST_CASE("interior-point path reproduces the closed form") {
  std::mt19937_64 rng(11);
  for (double alpha : {0.3, 0.6, 0.9}) {
    for (int trial = 0; trial < 4; ++trial) {
      const Eigen::Index n = 20;
      const StableSplineKernel kern(alpha, n);
      const VectorXd x_true = kern.Lfac * randn(n, rng);
      const FirData fd = make_fir(70, x_true, 1, rng, 0.1);
      RegressionData d = build_regressor(fd.u, fd.y, n, 1);
      REQUIRE(d.m == 50);
      d.sigma2_hat = 0.01;

      const double lambda = 0.5;
      const double gamma = d.sigma2_hat / lambda;
      const SsEstimate closed = estimate_ss_l2(d, lambda, alpha);
      const IpProblem prob = assemble_plq_problem(d, make_l2(d.m), make_l2(n), gamma, kern);
      const SsEstimate ip = estimate_ss_plq(prob, kern);
      CHECK((ip.x_hat - closed.x_hat).norm() <= 1e-6 * (1.0 + closed.x_hat.norm()));
    }
  }
}

TEST_CASE("reparametrized objective equals the impulse-response objective") {
  std::mt19937_64 rng(12);
  const Eigen::Index n = 10;
  const double alpha = 0.7, gamma = 0.3;
  const StableSplineKernel kern(alpha, n);
  const FirData fd = make_fir(40, randn(n, rng), 1, rng, 0.2);
  const RegressionData d = build_regressor(fd.u, fd.y, n, 1);
  const IpProblem prob = assemble_plq_problem(d, make_l2(d.m), make_l2(n), gamma, kern);
  const MatrixXd Qinv = kern.Q.inverse();
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd y = randn(n, rng);
    const VectorXd x = kern.Lfac * y;
    const double via_y = evaluate(prob.penalty, y);
    const double via_x =
        0.5 * (d.z - d.H * x).squaredNorm() + gamma * 0.5 * x.dot(Qinv * x);
    CHECK(std::abs(via_y - via_x) <= 1e-10 * (1.0 + std::abs(via_x)));
  }
}

TEST_CASE("constraints never decrease the optimum") {
  std::mt19937_64 rng(13);
  const Eigen::Index n = 8;
  const StableSplineKernel kern(0.8, n);
  const FirData fd = make_fir(40, randn(n, rng), 1, rng, 0.1);
  RegressionData d = build_regressor(fd.u, fd.y, n, 1);
  d.sigma2_hat = 0.01;

  const IpProblem free = assemble_plq_problem(d, make_l2(d.m), make_l2(n), 0.05, kern);
  const SolveReport rep_free = solve(free);
  REQUIRE(rep_free.status == SolveStatus::converged);

  // Force the first coefficient to at most -0.5: a genuinely binding box.
  MatrixXd A_x = MatrixXd::Zero(n, 1);
  A_x(0, 0) = 1.0;
  VectorXd a_x = VectorXd::Constant(1, -0.5);
  const IpProblem boxed = assemble_plq_problem(d, make_l2(d.m), make_l2(n), 0.05, kern, A_x, a_x);
  const SolveReport rep_boxed = solve(boxed);
  REQUIRE(rep_boxed.status == SolveStatus::converged);
  CHECK(rep_boxed.objective >= rep_free.objective - 1e-10);
  CHECK((kern.Lfac * rep_boxed.y_star)(0) <= -0.5 + 1e-7);
}

TEST_CASE("nonnegativity constraints hold at the solution") {
  std::mt19937_64 rng(14);
  const Eigen::Index n = 10;
  const StableSplineKernel kern(0.85, n);
  // Truth with negative entries so the constraint actually binds.
  VectorXd x_true = randn(n, rng);
  x_true[1] = -1.0;
  const FirData fd = make_fir(50, x_true, 1, rng, 0.05);
  RegressionData d = build_regressor(fd.u, fd.y, n, 1);
  d.sigma2_hat = 0.0025;

  const MatrixXd A_x = -MatrixXd::Identity(n, n);
  const VectorXd a_x = VectorXd::Zero(n);
  const IpProblem prob = assemble_plq_problem(d, make_l2(d.m), make_l2(n), 0.01, kern, A_x, a_x);
  const SsEstimate est = estimate_ss_plq(prob, kern);
  CHECK(est.x_hat.minCoeff() >= -1e-8);
}

TEST_CASE("assemble rejects mismatched shapes") {
  std::mt19937_64 rng(15);
  const Eigen::Index n = 6;
  const StableSplineKernel kern(0.8, n);
  const FirData fd = make_fir(30, randn(n, rng), 1, rng, 0.1);
  const RegressionData d = build_regressor(fd.u, fd.y, n, 1);
  CHECK_THROWS_AS(assemble_plq_problem(d, make_l2(d.m + 1), make_l2(n), 0.1, kern),
                  std::invalid_argument);
  CHECK_THROWS_AS(assemble_plq_problem(d, make_l2(d.m), make_l2(n + 1), 0.1, kern),
                  std::invalid_argument);
  CHECK_THROWS_AS(assemble_plq_problem(d, make_l2(d.m), make_l2(n), 0.1, kern,
                                       MatrixXd::Zero(n + 1, 1), VectorXd::Zero(1)),
                  std::invalid_argument);
}

TEST_CASE("l1 loss shrugs off a gross outlier") {
  std::mt19937_64 rng(16);
  const Eigen::Index n = 10;
  const double alpha = 0.85, gamma = 0.01, sd = 0.05;
  const StableSplineKernel kern(alpha, n);
  int l1_wins = 0;
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    VectorXd x_true(n);
    for (int j = 0; j < n; ++j) x_true[j] = std::pow(0.8, j) * randn(1, rng)[0];
    const FirData fd = make_fir(70, x_true, 1, rng, sd);
    RegressionData d = build_regressor(fd.u, fd.y, n, 1);
    d.sigma2_hat = sd * sd;
    d.z[d.m / 2] += 100.0 * sd;  // one gross outlier

    const SsEstimate e2 =
        estimate_ss_plq(assemble_plq_problem(d, make_l2(d.m), make_l2(n), gamma, kern), kern);
    const SsEstimate e1 =
        estimate_ss_plq(assemble_plq_problem(d, make_l1(d.m), make_l2(n), gamma, kern), kern);
    if ((e1.x_hat - x_true).norm() < (e2.x_hat - x_true).norm()) ++l1_wins;
  }
  CHECK(l1_wins >= 40);  // >= 80% of seeds
}

TEST_CASE("l1 loss with tiny gamma interpolates exact data") {
  std::mt19937_64 rng(17);
  const Eigen::Index n = 10;
  const StableSplineKernel kern(0.9, n);
  VectorXd x_true(n);
  for (int j = 0; j < n; ++j) x_true[j] = std::pow(0.7, j);
  const FirData fd = make_fir(50, x_true, 1, rng, 0.0);  // z = H x_true exactly
  RegressionData d = build_regressor(fd.u, fd.y, n, 1);
  const IpProblem prob = assemble_plq_problem(d, make_l1(d.m), make_l2(n), 1e-8, kern);
  const SsEstimate est = estimate_ss_plq(prob, kern);
  CHECK((est.x_hat - x_true).lpNorm<Eigen::Infinity>() <= 1e-4);
}

TEST_CASE("cv tuning degenerate grids") {
  std::mt19937_64 rng(18);
  const Eigen::Index n = 6;
  const FirData fd = make_fir(40, randn(n, rng), 1, rng, 0.1);
  auto loss = [](Eigen::Index m) { return make_l1(m); };

  const auto single = cv_tune_plq(fd.u, fd.y, n, 1, {0.8}, {0.01}, loss);
  CHECK(single.first == 0.8);
  CHECK(single.second == 0.01);

  const auto dedup = cv_tune_plq(fd.u, fd.y, n, 1, {0.6, 0.9}, {0.001, 0.1}, loss);
  const auto dup = cv_tune_plq(fd.u, fd.y, n, 1, {0.6, 0.9, 0.9}, {0.001, 0.1, 0.001}, loss);
  CHECK(dup.first == dedup.first);
  CHECK(dup.second == dedup.second);

  CHECK_THROWS_AS(cv_tune_plq(fd.u, fd.y, n, 1, {}, {0.1}, loss), std::invalid_argument);
}

TEST_CASE("cv picks the lightest regularization on noiseless data") {
  std::mt19937_64 rng(19);
  const Eigen::Index n = 6;
  auto loss = [](Eigen::Index m) { return make_l1(m); };
  int smallest = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    VectorXd x_true(n);
    for (int j = 0; j < n; ++j) x_true[j] = std::pow(0.75, j) * randn(1, rng)[0];
    const FirData fd = make_fir(44, x_true, 1, rng, 0.0);
    const auto [alpha, gamma] =
        cv_tune_plq(fd.u, fd.y, n, 1, {0.8, 0.9}, {1e-6, 1e-3, 1.0}, loss);
    if (gamma == 1e-6) ++smallest;
  }
  CHECK(smallest >= 18);  // >= 90% of seeds
}
