#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "plqid/estimator.hpp"

namespace plqid {

struct RandomSystemSpec {
  int ct_order = 30;
  double pole_radius_bound = 0.95;
  double bandwidth_multiplier = 3.0;  // sampling frequency f = bw * multiplier * 2*pi
};

struct NoiseModel {
  double outlier_fraction = 0.2;
  double outlier_variance_ratio = 100.0;
  // per-run sigma^2 = var(noiseless output) / Uniform[1,10]
  double snr_divisor_lo = 1.0;
  double snr_divisor_hi = 10.0;
};

struct GeneratedSystem {
  Eigen::VectorXd impulse;                  // discrete impulse response, delay-1 convention
  std::vector<std::complex<double>> poles;  // discrete poles
  double sample_time = 0.0;
  int redraws = 0;
};

struct SimulatedData {
  Eigen::VectorXd u;  // retained inputs
  Eigen::VectorXd y;  // retained noisy outputs
  double sigma2 = 0.0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 run_rng(std::uint64_t master_seed, std::uint64_t run_index) {
  return std::mt19937_64(splitmix64(master_seed ^ splitmix64(run_index)));
}

// Polynomial product; coefficients ascending in power.
inline Eigen::VectorXd poly_mul(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(a.size() + b.size() - 1);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

inline std::complex<double> poly_eval(const Eigen::VectorXd& coeffs, std::complex<double> s) {
  std::complex<double> v = 0.0;
  for (Eigen::Index i = coeffs.size() - 1; i >= 0; --i) v = v * s + coeffs[i];
  return v;
}

struct TransferFunction {
  Eigen::VectorXd num;  // ascending, degree < degree(den)
  Eigen::VectorXd den;  // ascending, monic

  double gain(double omega) const {
    const std::complex<double> s(0.0, omega);
    return std::abs(poly_eval(num, s) / poly_eval(den, s));
  }
};

// Controllable canonical state space of a strictly proper transfer function.
struct StateSpace {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
};

inline StateSpace to_state_space(const TransferFunction& tf) {
  const Eigen::Index n = tf.den.size() - 1;
  StateSpace ss;
  ss.A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) ss.A(0, i) = -tf.den[n - 1 - i];
  ss.A.block(1, 0, n - 1, n - 1).setIdentity();
  ss.B = Eigen::VectorXd::Zero(n);
  ss.B[0] = 1.0;
  ss.C = Eigen::RowVectorXd::Zero(n);
  for (Eigen::Index i = 0; i < tf.num.size(); ++i) ss.C[n - 1 - i] = tf.num[i];
  return ss;
}

// -3 dB bandwidth relative to the DC gain: first crossing on a 2048-point
// log-frequency grid, refined by bisection. Returns 0 on failure.
inline double bandwidth(const TransferFunction& tf) {
  const double g0 = tf.gain(0.0);
  if (!(g0 > 0.0) || !std::isfinite(g0)) return 0.0;
  const double target = g0 / std::sqrt(2.0);
  const int grid = 2048;
  const double w_lo = 1e-4, w_hi = 1e6;
  double w_prev = w_lo;
  if (tf.gain(w_lo) < target) return 0.0;  // already below at the bottom of the grid
  for (int i = 1; i < grid; ++i) {
    const double w = w_lo * std::pow(w_hi / w_lo, i / double(grid - 1));
    if (tf.gain(w) < target) {
      double a = w_prev, b = w;
      for (int it = 0; it < 60; ++it) {
        const double mid = std::sqrt(a * b);
        (tf.gain(mid) >= target ? a : b) = mid;
      }
      return std::sqrt(a * b);
    }
    w_prev = w;
  }
  return 0.0;
}

// Exact zero-order-hold discretization via the augmented matrix exponential.
inline void zoh(const StateSpace& ss, double Ts, Eigen::MatrixXd& Ad, Eigen::VectorXd& Bd) {
  const Eigen::Index n = ss.A.rows();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = ss.A * Ts;
  aug.topRightCorner(n, 1) = ss.B * Ts;
  const Eigen::MatrixXd E = aug.exp();
  Ad = E.topLeftCorner(n, n);
  Bd = E.topRightCorner(n, 1);
}

}  // namespace detail

/// Draws a random stable continuous-time SISO system of the given order,
/// discretizes it by zero-order hold at 3x its -3 dB bandwidth, and keeps it
/// only if every discrete pole has magnitude <= pole_radius_bound. The
/// returned impulse response follows the delay-1 convention (no g(0) term)
/// and is normalized to unit l2 energy over its samples.
inline GeneratedSystem generate_system(const RandomSystemSpec& spec, std::mt19937_64& rng,
                                       Eigen::Index impulse_len = 200) {
  if (spec.ct_order % 2 != 0)
    throw std::invalid_argument("generate_system: ct_order must be even (conjugate pole pairs)");
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    // Stable conjugate pole pairs: re = -10^U(-1,1), im = +-10^U(-1,1).
    detail::TransferFunction tf;
    tf.den = Eigen::VectorXd::Ones(1);
    for (int k = 0; k < spec.ct_order / 2; ++k) {
      const double re = -std::pow(10.0, uni(rng));
      const double im = std::pow(10.0, uni(rng));
      Eigen::VectorXd quad(3);  // (s - p)(s - conj(p)) = s^2 - 2 re s + |p|^2
      quad << re * re + im * im, -2.0 * re, 1.0;
      tf.den = detail::poly_mul(tf.den, quad);
    }
    tf.num = Eigen::VectorXd(spec.ct_order);
    for (Eigen::Index i = 0; i < tf.num.size(); ++i) tf.num[i] = gauss(rng);

    const double bw = detail::bandwidth(tf);
    if (!(bw > 0.0)) continue;
    const double Ts = 1.0 / (bw * spec.bandwidth_multiplier * 2.0 * M_PI);

    const detail::StateSpace ss = detail::to_state_space(tf);
    Eigen::MatrixXd Ad;
    Eigen::VectorXd Bd;
    detail::zoh(ss, Ts, Ad, Bd);

    const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(Ad, false).eigenvalues();
    if ((eig.array().abs() > spec.pole_radius_bound).any()) continue;

    GeneratedSystem out;
    out.sample_time = Ts;
    out.redraws = attempt;
    out.poles.assign(eig.data(), eig.data() + eig.size());
    out.impulse.resize(impulse_len);
    Eigen::VectorXd v = Bd;  // direct feedthrough is zero: g_k = C Ad^{k-1} Bd
    for (Eigen::Index k = 0; k < impulse_len; ++k) {
      out.impulse[k] = ss.C * v;
      v = Ad * v;
    }
    const double nrm = out.impulse.norm();
    if (!(nrm > 0.0) || !out.impulse.allFinite()) continue;
    out.impulse /= nrm;
    return out;
  }
  throw std::runtime_error("generate_system: rejection limit reached (1000 redraws)");
}

/// Simulates the system under white unit-variance Gaussian input, discards a
/// washout prefix of length(g) samples, and contaminates the retained
/// outputs with the two-component Gaussian mixture.
inline SimulatedData simulate(const Eigen::VectorXd& g, Eigen::Index horizon,
                              const NoiseModel& noise, std::mt19937_64& rng) {
  const Eigen::Index taps = g.size();
  if (horizon < 1) throw std::invalid_argument("simulate: horizon must be >= 1");
  const Eigen::Index washout = taps;
  const Eigen::Index total = washout + horizon;

  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd u(total);
  for (Eigen::Index t = 0; t < total; ++t) u[t] = gauss(rng);

  Eigen::VectorXd clean(horizon);
  for (Eigen::Index t = 0; t < horizon; ++t) {
    const Eigen::Index abs_t = washout + t;  // 0-based; y(t) = sum_j g_j u(t-j), delay 1
    double acc = 0.0;
    for (Eigen::Index j = 0; j < taps; ++j) acc += g[j] * u[abs_t - 1 - j];
    clean[t] = acc;
  }

  const double mean = clean.mean();
  const double var = (clean.array() - mean).square().sum() / double(horizon);
  std::uniform_real_distribution<double> div(noise.snr_divisor_lo, noise.snr_divisor_hi);
  const double sigma2 = var / div(rng);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  SimulatedData out;
  out.sigma2 = sigma2;
  out.u = u.tail(horizon);
  out.y = clean;
  const double sd = std::sqrt(sigma2);
  const double sd_out = std::sqrt(noise.outlier_variance_ratio) * sd;
  for (Eigen::Index t = 0; t < horizon; ++t)
    out.y[t] += (coin(rng) < noise.outlier_fraction ? sd_out : sd) * gauss(rng);
  return out;
}

/// F = 100 * (1 - ||g - g_hat|| / ||g - mean(g) 1||) over the first 100
/// coefficients; estimates are truncated or zero-padded to length 100.
inline double fit_measure(const Eigen::VectorXd& g_true, const Eigen::VectorXd& g_est) {
  const Eigen::Index n = 100;
  Eigen::VectorXd gt = Eigen::VectorXd::Zero(n), ge = Eigen::VectorXd::Zero(n);
  gt.head(std::min(n, g_true.size())) = g_true.head(std::min(n, g_true.size()));
  ge.head(std::min(n, g_est.size())) = g_est.head(std::min(n, g_est.size()));
  const double denom = (gt.array() - gt.mean()).matrix().norm();
  if (!(denom > 0.0))
    throw std::invalid_argument("fit_measure: true response is constant (zero denominator)");
  return 100.0 * (1.0 - (gt - ge).norm() / denom);
}

struct MonteCarloConfig {
  int runs = 30;
  std::uint64_t master_seed = 1;
  Eigen::Index n = 100;
  Eigen::Index delay = 1;
  Eigen::Index horizon = 400;
  bool run_ss_l2 = true;
  bool run_ss_plq = true;
  std::string plq_loss = "l1";  // loss of the PLQ estimator
  double plq_loss_param = 1.0;  // threshold/width where the loss takes one
  NoiseModel noise{};
  RandomSystemSpec system{};
  SolveOptions solver{};
};

struct EstimatorResult {
  std::string estimator;
  bool ok = false;
  double fit = std::numeric_limits<double>::quiet_NaN();
  double alpha = 0.0;
  double gamma_or_lambda = 0.0;
  int iterations = 0;
  double wall_ms = 0.0;
};

struct MonteCarloRun {
  int run = 0;
  Eigen::VectorXd g_true;  // first 100 coefficients
  std::vector<EstimatorResult> results;
};

namespace detail {

inline PlqPenalty make_named_loss(const std::string& name, Eigen::Index dim, double param) {
  if (name == "l2") return make_l2(dim);
  if (name == "l1") return make_l1(dim);
  if (name == "huber") return make_huber(dim, param);
  if (name == "vapnik") return make_vapnik(dim, param);
  if (name == "enet") return make_elastic_net(dim, param);
  if (name == "sil") return make_soft_insensitive(dim, param, 1.0);
  if (name == "hinge") return make_hinge(dim);
  throw std::invalid_argument("unknown loss name: " + name);
}

inline std::vector<double> log_spaced(double lo, double hi, int count) {
  std::vector<double> g(count);
  for (int i = 0; i < count; ++i)
    g[i] = lo * std::pow(hi / lo, count > 1 ? i / double(count - 1) : 0.0);
  return g;
}

}  // namespace detail

/// One full benchmark run: generate, simulate, estimate, score. Estimator
/// failures are recorded (ok = false) rather than aborting the run.
inline MonteCarloRun monte_carlo_run(const MonteCarloConfig& cfg, int run_index) {
  std::mt19937_64 rng = detail::run_rng(cfg.master_seed, static_cast<std::uint64_t>(run_index));
  MonteCarloRun out;
  out.run = run_index;

  const GeneratedSystem sys = generate_system(cfg.system, rng);
  out.g_true = sys.impulse.head(100);
  const SimulatedData sim = simulate(sys.impulse, cfg.horizon, cfg.noise, rng);

  RegressionData data = build_regressor(sim.u, sim.y, cfg.n, cfg.delay);
  double sigma2 = 0.0, lambda_hat = 0.0, alpha_ml = 0.0;
  bool tuned = false;
  try {
    sigma2 = estimate_noise_variance(sim.u, sim.y, cfg.n, cfg.delay);
    data.sigma2_hat = sigma2;
    std::tie(lambda_hat, alpha_ml) = fit_hyperparameters_ml(data, default_alpha_grid());
    tuned = true;
  } catch (const std::exception&) {
  }

  if (cfg.run_ss_l2) {
    EstimatorResult res;
    res.estimator = "ss_l2";
    const auto t0 = std::chrono::steady_clock::now();
    if (tuned) {
      try {
        const SsEstimate est = estimate_ss_l2(data, lambda_hat, alpha_ml);
        res.fit = fit_measure(out.g_true, est.x_hat);
        res.alpha = alpha_ml;
        res.gamma_or_lambda = lambda_hat;
        res.ok = true;
      } catch (const std::exception&) {
      }
    }
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.results.push_back(res);
  }

  if (cfg.run_ss_plq) {
    EstimatorResult res;
    res.estimator = "ss_" + cfg.plq_loss;
    const auto t0 = std::chrono::steady_clock::now();
    if (tuned) {
      try {
        const double gamma_ref = sigma2 / lambda_hat;
        const std::vector<double> gamma_grid =
            detail::log_spaced(gamma_ref / 100.0, gamma_ref * 100.0, 20);
        auto factory = [&](Eigen::Index dim) {
          return detail::make_named_loss(cfg.plq_loss, dim, cfg.plq_loss_param);
        };
        const auto [alpha_cv, gamma_cv] = cv_tune_plq(
            sim.u, sim.y, cfg.n, cfg.delay, default_alpha_grid(), gamma_grid, factory, cfg.solver);
        const StableSplineKernel kernel(alpha_cv, cfg.n);
        const IpProblem prob = assemble_plq_problem(
            data, factory(data.m), make_l2(cfg.n), gamma_cv, kernel);
        const SsEstimate est = estimate_ss_plq(prob, kernel, cfg.solver);
        res.fit = fit_measure(out.g_true, est.x_hat);
        res.alpha = alpha_cv;
        res.gamma_or_lambda = gamma_cv;
        res.iterations = est.iterations;
        res.ok = true;
      } catch (const std::exception&) {
      }
    }
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.results.push_back(res);
  }
  return out;
}

inline std::vector<MonteCarloRun> run_monte_carlo(const MonteCarloConfig& cfg) {
  if (cfg.runs < 1) throw std::invalid_argument("run_monte_carlo: runs must be >= 1");
  std::vector<MonteCarloRun> table;
  table.reserve(cfg.runs);
  for (int r = 0; r < cfg.runs; ++r) table.push_back(monte_carlo_run(cfg, r));
  return table;
}

struct EstimatorSummary {
  std::string estimator;
  int count = 0;  // runs with a recorded score
  double mean = 0.0;
  double median = 0.0;
  double q10 = 0.0, q25 = 0.0, q75 = 0.0, q90 = 0.0;
  std::vector<double> outliers;  // fits beyond the 10-90% whiskers
};

/// Quantile by linear interpolation between order statistics.
inline double quantile(std::vector<double> sorted_vals, double p) {
  if (sorted_vals.empty()) throw std::invalid_argument("quantile: empty sample");
  const double pos = p * (sorted_vals.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted_vals.size() - 1);
  const double frac = pos - double(lo);
  return sorted_vals[lo] + frac * (sorted_vals[hi] - sorted_vals[lo]);
}

inline std::vector<EstimatorSummary> summarize(const std::vector<MonteCarloRun>& table) {
  if (table.empty()) throw std::invalid_argument("summarize: empty table");
  std::vector<std::string> names;
  for (const auto& run : table)
    for (const auto& r : run.results)
      if (std::find(names.begin(), names.end(), r.estimator) == names.end())
        names.push_back(r.estimator);

  std::vector<EstimatorSummary> out;
  for (const auto& name : names) {
    std::vector<double> fits;
    for (const auto& run : table)
      for (const auto& r : run.results)
        if (r.estimator == name && r.ok) fits.push_back(r.fit);
    EstimatorSummary s;
    s.estimator = name;
    s.count = static_cast<int>(fits.size());
    if (!fits.empty()) {
      std::sort(fits.begin(), fits.end());
      s.mean = std::accumulate(fits.begin(), fits.end(), 0.0) / fits.size();
      s.median = quantile(fits, 0.5);
      s.q10 = quantile(fits, 0.10);
      s.q25 = quantile(fits, 0.25);
      s.q75 = quantile(fits, 0.75);
      s.q90 = quantile(fits, 0.90);
      for (double f : fits)
        if (f < s.q10 || f > s.q90) s.outliers.push_back(f);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace plqid
