#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "plqid/kernel.hpp"
#include "plqid/penalty.hpp"
#include "plqid/solver.hpp"

namespace plqid {

/// Measurement model z = H x + noise, with H built from lagged inputs.
struct RegressionData {
  Eigen::MatrixXd H;   // m x n, row t has u(t - delay - j + 1), j = 1..n
  Eigen::VectorXd z;   // m
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  Eigen::Index delay = 0;
  double sigma2_hat = 0.0;
};

struct SsEstimate {
  Eigen::VectorXd x_hat;
  double alpha_hat = 0.0;
  double gamma_or_lambda = 0.0;
  std::string method;  // "ss_l2_ml" or "ss_plq_cv"
  double objective = 0.0;
  int iterations = 0;
};

/// Builds the convolution regressor from equally long input/output series.
/// Only output times whose full lag window lies inside the recorded input
/// are kept: 1-based t with t - delay - n + 1 >= 1 and t - delay <= len.
inline RegressionData build_regressor(const Eigen::VectorXd& u, const Eigen::VectorXd& y_out,
                                      Eigen::Index n, Eigen::Index delay) {
  if (u.size() != y_out.size())
    throw std::invalid_argument("build_regressor: input/output lengths differ");
  if (n < 1 || delay < 0) throw std::invalid_argument("build_regressor: bad n or delay");
  const Eigen::Index len = u.size();
  const Eigen::Index t_first = n + delay;       // 1-based first usable output time
  const Eigen::Index t_last = std::min(len, len + delay);  // lag t-delay must be <= len
  if (t_first > t_last)
    throw std::invalid_argument("build_regressor: series too short for given n and delay");

  RegressionData d;
  d.n = n;
  d.delay = delay;
  d.m = t_last - t_first + 1;
  d.H.resize(d.m, n);
  d.z.resize(d.m);
  for (Eigen::Index row = 0; row < d.m; ++row) {
    const Eigen::Index t = t_first + row;  // 1-based
    d.z[row] = y_out[t - 1];
    for (Eigen::Index j = 1; j <= n; ++j) d.H(row, j - 1) = u[t - delay - j];  // u(t-delay-j+1)
  }
  return d;
}

/// Residual variance of an ordinary least squares FIR fit of length n,
/// corrected by m - n degrees of freedom.
inline double estimate_noise_variance(const Eigen::VectorXd& u, const Eigen::VectorXd& y_out,
                                      Eigen::Index n, Eigen::Index delay) {
  RegressionData d = build_regressor(u, y_out, n, delay);
  if (d.m <= d.n)
    throw std::invalid_argument("estimate_noise_variance: need m > n rows for least squares");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.H);
  if (qr.rank() < d.n)
    throw std::runtime_error("estimate_noise_variance: regressor is rank deficient (input not exciting)");
  const Eigen::VectorXd x_ls = qr.solve(d.z);
  return (d.z - d.H * x_ls).squaredNorm() / static_cast<double>(d.m - d.n);
}

/// z^T Sigma_z^{-1} z + log det Sigma_z with Sigma_z = lambda H Q(alpha) H^T
/// + sigma2_hat I, evaluated through a Cholesky factorization of Sigma_z.
inline double marginal_likelihood_objective(double lambda, double alpha,
                                            const RegressionData& data) {
  if (!(lambda > 0.0)) throw std::invalid_argument("marginal likelihood: lambda must be > 0");
  const Eigen::MatrixXd Q = stable_spline_gram(alpha, data.n);
  Eigen::MatrixXd Sz = lambda * data.H * Q * data.H.transpose();
  Sz.diagonal().array() += data.sigma2_hat;
  Eigen::LLT<Eigen::MatrixXd> llt(Sz);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("marginal likelihood: Sigma_z not positive definite");
  const Eigen::VectorXd v = llt.matrixL().solve(data.z);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < data.m; ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return v.squaredNorm() + logdet;
}

/// The alpha grid of the benchmark protocol: 0.01, 0.05, 0.10, ..., 0.95, 0.99.
inline std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  g.push_back(0.01);
  for (int k = 1; k <= 19; ++k) g.push_back(0.05 * k);
  g.push_back(0.99);
  return g;
}

namespace detail {

// Per-alpha profile of the marginal likelihood in lambda, via an
// eigendecomposition of H Q H^T: each evaluation is then O(m).
struct MlLambdaProfile {
  Eigen::VectorXd eigvals;  // of H Q H^T, clamped at 0
  Eigen::VectorXd zt2;      // squared coordinates of z in the eigenbasis
  double sigma2;

  MlLambdaProfile(const RegressionData& data, double alpha) {
    const Eigen::MatrixXd Q = stable_spline_gram(alpha, data.n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(data.H * Q * data.H.transpose());
    eigvals = es.eigenvalues().cwiseMax(0.0);
    zt2 = (es.eigenvectors().transpose() * data.z).array().square();
    sigma2 = data.sigma2_hat;
  }

  double operator()(double lambda) const {
    const Eigen::ArrayXd d = lambda * eigvals.array() + sigma2;
    return (zt2.array() / d).sum() + d.log().sum();
  }
};

// Golden-section minimization over log lambda; returns the abscissa. On
// plateaus the comparison keeps the left bracket, biasing toward the
// smaller lambda.
template <typename F>
double golden_section_log(const F& f, double lo, double hi, double rel_tol) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(lo), b = std::log(hi);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(std::exp(x1)), f2 = f(std::exp(x2));
  while (b - a > rel_tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = f(std::exp(x1));
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = f(std::exp(x2));
    }
  }
  return f1 <= f2 ? std::exp(x1) : std::exp(x2);
}

}  // namespace detail

/// Minimizes the marginal likelihood over the alpha grid and, per alpha,
/// over lambda on [1e-6, 1e6]*sigma2_hat refined by golden section.
/// Ties break toward smaller alpha, then smaller lambda.
inline std::pair<double, double> fit_hyperparameters_ml(const RegressionData& data,
                                                        const std::vector<double>& alpha_grid) {
  if (alpha_grid.empty()) throw std::invalid_argument("fit_hyperparameters_ml: empty alpha grid");
  const double s2 = data.sigma2_hat > 0.0 ? data.sigma2_hat : 1.0;
  const double lam_lo = 1e-6 * s2, lam_hi = 1e6 * s2;

  double best_obj = std::numeric_limits<double>::infinity();
  double best_lambda = lam_lo, best_alpha = alpha_grid.front();
  for (double alpha : alpha_grid) {
    const detail::MlLambdaProfile prof(data, alpha);
    // Coarse log-spaced pass, then golden-section refinement around the
    // best coarse cell.
    const int coarse = 25;
    int best_i = 0;
    double best_f = std::numeric_limits<double>::infinity();
    for (int i = 0; i < coarse; ++i) {
      const double lam = lam_lo * std::pow(lam_hi / lam_lo, i / double(coarse - 1));
      const double f = prof(lam);
      if (f < best_f) {
        best_f = f;
        best_i = i;
      }
    }
    const double step = std::pow(lam_hi / lam_lo, 1.0 / (coarse - 1));
    const double lo = std::max(lam_lo, lam_lo * std::pow(step, best_i - 1));
    const double hi = std::min(lam_hi, lam_lo * std::pow(step, best_i + 1));
    const double lam = detail::golden_section_log(prof, lo, hi, 1e-3);
    const double obj = prof(lam);
    // Strict improvement only: ties keep the earlier (smaller) alpha.
    if (!std::isfinite(best_obj) || obj < best_obj - 1e-12 * (1.0 + std::abs(best_obj))) {
      best_obj = obj;
      best_lambda = lam;
      best_alpha = alpha;
    }
  }
  return {best_lambda, best_alpha};
}

/// Closed-form kernel-regularized estimate
/// x_hat = lambda Q H^T (lambda H Q H^T + sigma2 I)^{-1} z.
inline SsEstimate estimate_ss_l2(const RegressionData& data, double lambda_hat,
                                 double alpha_hat) {
  const Eigen::MatrixXd Q = stable_spline_gram(alpha_hat, data.n);
  Eigen::MatrixXd Sz = lambda_hat * data.H * Q * data.H.transpose();
  Sz.diagonal().array() += data.sigma2_hat;
  Eigen::LLT<Eigen::MatrixXd> llt(Sz);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("estimate_ss_l2: Sigma_z factorization failed");
  SsEstimate est;
  est.x_hat = lambda_hat * Q * data.H.transpose() * llt.solve(data.z);
  est.alpha_hat = alpha_hat;
  est.gamma_or_lambda = lambda_hat;
  est.method = "ss_l2_ml";
  return est;
}

/// Assembles min_{y in Y} V(H L y - z) + gamma W(y) as a constrained PLQ
/// program in y (x = L y). The regularizer block comes first; the gamma
/// weight is applied exactly on its dual data. Constraints A_x^T x <= a_x
/// become (L^T A_x)^T y <= a_x.
inline IpProblem assemble_plq_problem(const RegressionData& data, const PlqPenalty& loss,
                                      const PlqPenalty& reg, double gamma,
                                      const StableSplineKernel& kernel,
                                      const Eigen::MatrixXd& A_x = Eigen::MatrixXd(),
                                      const Eigen::VectorXd& a_x = Eigen::VectorXd()) {
  if (loss.primal_dim() != data.m)
    throw std::invalid_argument("assemble_plq_problem: loss dimension must equal m");
  if (reg.primal_dim() != data.n || kernel.n != data.n)
    throw std::invalid_argument("assemble_plq_problem: regularizer/kernel dimension must equal n");

  const PlqPenalty reg_scaled = scale_penalty(reg, gamma);
  const Eigen::MatrixXd HL = data.H * kernel.Lfac;
  // Loss block precomposed with y -> H L y - z.
  PlqPenalty loss_y = loss;
  loss_y.B = loss.B * HL;
  loss_y.b = loss.b - loss.B * data.z;
  if (loss.closed_form) {
    auto f = loss.closed_form;
    const Eigen::VectorXd z = data.z;
    loss_y.closed_form = [f, HL, z](const Eigen::VectorXd& y) { return f(HL * y - z); };
  } else {
    loss_y.closed_form = nullptr;
  }

  IpProblem prob;
  prob.penalty = direct_sum(reg_scaled, loss_y);
  // Collapse the two primal blocks onto the single variable y.
  const Eigen::Index n = data.n;
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(2 * n, n);
  F.topRows(n).setIdentity();
  F.bottomRows(n).setIdentity();
  prob.penalty = precompose_affine(prob.penalty, F, Eigen::VectorXd::Zero(2 * n));

  if (A_x.size() > 0) {
    if (A_x.rows() != n || a_x.size() != A_x.cols())
      throw std::invalid_argument("assemble_plq_problem: constraint shape mismatch");
    prob.A = kernel.Lfac.transpose() * A_x;
    prob.a = a_x;
  } else {
    prob.A.resize(n, 0);
    prob.a.resize(0);
  }

  if (auto diag = validate(prob))
    throw std::invalid_argument("assemble_plq_problem: " + *diag);
  return prob;
}

/// Runs the interior-point solver on an assembled problem and maps the
/// minimizer back to the impulse response, x_hat = L y*.
inline SsEstimate estimate_ss_plq(const IpProblem& problem, const StableSplineKernel& kernel,
                                  const SolveOptions& opts = {}) {
  const SolveReport rep = solve(problem, opts);
  if (rep.status == SolveStatus::numerical_failure)
    throw std::runtime_error("estimate_ss_plq: solver numerical failure");
  if (rep.status == SolveStatus::max_iterations)
    throw std::runtime_error("estimate_ss_plq: solver hit the iteration limit");
  SsEstimate est;
  est.x_hat = kernel.Lfac * rep.y_star;
  est.method = "ss_plq_cv";
  est.objective = rep.objective;
  est.iterations = rep.iterations;
  return est;
}

/// Hyperparameter selection for PLQ estimators by chronological
/// train/validation split of the usable rows. Scores each (alpha, gamma)
/// cell by the quadratic prediction error of the training-set estimate on
/// the validation half; ties break toward smaller gamma, then smaller alpha.
/// The caller refits on the full data with the returned pair.
template <typename LossFactory>
inline std::pair<double, double> cv_tune_plq(const Eigen::VectorXd& u,
                                             const Eigen::VectorXd& y_out, Eigen::Index n,
                                             Eigen::Index delay,
                                             const std::vector<double>& alpha_grid,
                                             const std::vector<double>& gamma_grid,
                                             const LossFactory& make_loss,
                                             const SolveOptions& opts = {}) {
  if (alpha_grid.empty() || gamma_grid.empty())
    throw std::invalid_argument("cv_tune_plq: empty grid");
  RegressionData full = build_regressor(u, y_out, n, delay);
  full.sigma2_hat = 0.0;
  const Eigen::Index m_train = full.m / 2;
  const Eigen::Index m_val = full.m - m_train;
  if (m_train < 1 || m_val < 1)
    throw std::invalid_argument("cv_tune_plq: too little data to split");

  RegressionData train;
  train.H = full.H.topRows(m_train);
  train.z = full.z.head(m_train);
  train.m = m_train;
  train.n = n;
  train.delay = delay;
  const Eigen::MatrixXd H_val = full.H.bottomRows(m_val);
  const Eigen::VectorXd z_val = full.z.tail(m_val);

  double best_score = std::numeric_limits<double>::infinity();
  double best_alpha = alpha_grid.front(), best_gamma = gamma_grid.front();
  for (double alpha : alpha_grid) {
    std::optional<StableSplineKernel> kernel_opt;
    try {
      kernel_opt.emplace(alpha, n);
    } catch (const std::exception&) {
      continue;  // alpha too extreme to factor at this horizon: skip
    }
    const StableSplineKernel& kernel = *kernel_opt;
    const PlqPenalty loss = make_loss(m_train);
    const PlqPenalty reg = make_l2(n);
    for (double gamma : gamma_grid) {
      double score;
      try {
        const IpProblem prob = assemble_plq_problem(train, loss, reg, gamma, kernel);
        const SsEstimate est = estimate_ss_plq(prob, kernel, opts);
        score = (z_val - H_val * est.x_hat).squaredNorm();
      } catch (const std::exception&) {
        continue;  // failed cell: skip, never aborts the sweep
      }
      if (!std::isfinite(best_score) ||
          (score < best_score &&
           !(std::abs(score - best_score) <= 1e-12 * (1.0 + std::abs(best_score))))) {
        best_score = score;
        best_alpha = alpha;
        best_gamma = gamma;
      } else if (std::abs(score - best_score) <= 1e-12 * (1.0 + std::abs(best_score))) {
        if (gamma < best_gamma || (gamma == best_gamma && alpha < best_alpha)) {
          best_gamma = gamma;
          best_alpha = alpha;
        }
      }
    }
  }
  if (!std::isfinite(best_score))
    throw std::runtime_error("cv_tune_plq: every grid cell failed");
  return {best_alpha, best_gamma};
}

}  // namespace plqid
