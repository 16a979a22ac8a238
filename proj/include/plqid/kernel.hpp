#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace plqid {

/// First-order stable spline (TC) Gram matrix, Q(i,j) = alpha^(max(i,j)+1)
/// with 0-based storage indices, i.e. alpha^max(i,j) in 1-based terms.
inline Eigen::MatrixXd stable_spline_gram(double alpha, Eigen::Index n) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("stable spline kernel: alpha must lie in (0,1)");
  if (n < 1) throw std::invalid_argument("stable spline kernel: n must be >= 1");
  Eigen::MatrixXd Q(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      Q(i, j) = std::pow(alpha, static_cast<double>(std::max(i, j) + 1));
  return Q;
}

/// Cholesky factor with an explicit pivot guard; L lower triangular with
/// strictly positive diagonal, L L^T = Q.
inline Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& Q) {
  const Eigen::Index n = Q.rows();
  if (Q.cols() != n) throw std::invalid_argument("cholesky_factor: matrix must be square");
  const double pivot_floor = 1e-14 * Q.diagonal().maxCoeff();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = Q(j, j) - L.row(j).head(j).squaredNorm();
    if (d <= pivot_floor)
      throw std::runtime_error("cholesky_factor: pivot below tolerance (matrix not safely positive definite)");
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i)
      L(i, j) = (Q(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
  }
  return L;
}

/// alpha-parametrized TC kernel with its Cholesky factor, built once and
/// immutable afterwards.
struct StableSplineKernel {
  double alpha;
  Eigen::Index n;
  Eigen::MatrixXd Q;     // n x n Gram matrix
  Eigen::MatrixXd Lfac;  // lower triangular, Lfac Lfac^T = Q

  StableSplineKernel(double alpha_, Eigen::Index n_)
      : alpha(alpha_), n(n_), Q(stable_spline_gram(alpha_, n_)), Lfac(cholesky_factor(Q)) {}
};

}  // namespace plqid
