#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace plqid {

/// A piecewise linear quadratic penalty in dual form:
///   rho(y) = sup_{u : C^T u <= c} <u, b + B y> - 0.5 u^T M u
/// with M symmetric positive semidefinite and B injective. When the
/// constraint block is empty (L = 0) the dual set is all of R^K.
///
/// Values are immutable after construction; every operation below returns a
/// new penalty.
struct PlqPenalty {
  Eigen::SparseMatrix<double> M;  // K x K, symmetric psd
  Eigen::VectorXd b;              // K
  Eigen::MatrixXd B;              // K x N, trivial nullspace
  Eigen::SparseMatrix<double> C;  // K x L
  Eigen::VectorXd c;              // L, componentwise >= 0 so that 0 is dual-feasible

  // Exact evaluator when one is known (all built-ins and their
  // compositions). Empty for hand-assembled quadruples; evaluate() then
  // falls back to solving the dual QP.
  std::function<double(const Eigen::VectorXd&)> closed_form;

  Eigen::Index dual_dim() const { return M.rows(); }          // K
  Eigen::Index primal_dim() const { return B.cols(); }        // N
  Eigen::Index num_dual_constraints() const { return c.size(); }  // L

  std::string describe() const {
    std::ostringstream os;
    os << "PlqPenalty{K=" << dual_dim() << ", N=" << primal_dim()
       << ", L=" << num_dual_constraints() << ", nnz(M)=" << M.nonZeros()
       << ", nnz(C)=" << C.nonZeros() << ", |b|inf=" << (b.size() ? b.lpNorm<Eigen::Infinity>() : 0.0)
       << (closed_form ? ", closed-form" : ", dual-QP") << "}";
    return os.str();
  }
};

namespace detail {

inline Eigen::SparseMatrix<double> sparse_identity(Eigen::Index n) {
  Eigen::SparseMatrix<double> I(n, n);
  I.setIdentity();
  return I;
}

// sup_{u in [0,kappa]} t*u - u^2/2, the soft hinge piece.
inline double soft_hinge(double t, double kappa) {
  if (t <= 0.0) return 0.0;
  if (t <= kappa) return 0.5 * t * t;
  return kappa * t - 0.5 * kappa * kappa;
}

inline double huber_scalar(double t, double kappa) {
  const double a = std::abs(t);
  if (a <= kappa) return 0.5 * t * t;
  return kappa * a - 0.5 * kappa * kappa;
}

// Interval constraints lo <= u_i <= hi for a set of dual coordinates,
// emitted as two rows of C^T u <= c per coordinate.
struct IntervalRows {
  std::vector<Eigen::Triplet<double>> trips;  // entries of C
  std::vector<double> bounds;                 // entries of c
  void add(Eigen::Index coord, double lo, double hi) {
    const Eigen::Index col = static_cast<Eigen::Index>(bounds.size());
    trips.emplace_back(coord, col, 1.0);
    bounds.push_back(hi);
    trips.emplace_back(coord, col + 1, -1.0);
    bounds.push_back(-lo);
  }
  void fill(Eigen::Index K, Eigen::SparseMatrix<double>& C, Eigen::VectorXd& c) const {
    C.resize(K, static_cast<Eigen::Index>(bounds.size()));
    C.setFromTriplets(trips.begin(), trips.end());
    c = Eigen::Map<const Eigen::VectorXd>(bounds.data(), static_cast<Eigen::Index>(bounds.size()));
  }
};

inline void require_dim(Eigen::Index dim) {
  if (dim < 1) throw std::invalid_argument("penalty dimension must be >= 1");
}

}  // namespace detail

/// 0.5 * ||y||^2.
inline PlqPenalty make_l2(Eigen::Index dim) {
  detail::require_dim(dim);
  PlqPenalty p;
  p.M = detail::sparse_identity(dim);
  p.b = Eigen::VectorXd::Zero(dim);
  p.B = Eigen::MatrixXd::Identity(dim, dim);
  p.C.resize(dim, 0);
  p.c.resize(0);
  p.closed_form = [](const Eigen::VectorXd& y) { return 0.5 * y.squaredNorm(); };
  return p;
}

/// ||y||_1.
inline PlqPenalty make_l1(Eigen::Index dim) {
  detail::require_dim(dim);
  PlqPenalty p;
  p.M.resize(dim, dim);
  p.b = Eigen::VectorXd::Zero(dim);
  p.B = Eigen::MatrixXd::Identity(dim, dim);
  detail::IntervalRows rows;
  for (Eigen::Index i = 0; i < dim; ++i) rows.add(i, -1.0, 1.0);
  rows.fill(dim, p.C, p.c);
  p.closed_form = [](const Eigen::VectorXd& y) { return y.lpNorm<1>(); };
  return p;
}

/// Huber penalty with threshold kappa, applied coordinatewise.
inline PlqPenalty make_huber(Eigen::Index dim, double kappa) {
  detail::require_dim(dim);
  if (!(kappa > 0.0)) throw std::invalid_argument("huber: kappa must be > 0");
  PlqPenalty p;
  p.M = detail::sparse_identity(dim);
  p.b = Eigen::VectorXd::Zero(dim);
  p.B = Eigen::MatrixXd::Identity(dim, dim);
  detail::IntervalRows rows;
  for (Eigen::Index i = 0; i < dim; ++i) rows.add(i, -kappa, kappa);
  rows.fill(dim, p.C, p.c);
  p.closed_form = [kappa](const Eigen::VectorXd& y) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) v += detail::huber_scalar(y[i], kappa);
    return v;
  };
  return p;
}

/// Vapnik epsilon-insensitive loss (y-eps)_+ + (-y-eps)_+, coordinatewise.
inline PlqPenalty make_vapnik(Eigen::Index dim, double epsilon) {
  detail::require_dim(dim);
  if (epsilon < 0.0) throw std::invalid_argument("vapnik: epsilon must be >= 0");
  const Eigen::Index K = 2 * dim;
  PlqPenalty p;
  p.M.resize(K, K);
  p.b = Eigen::VectorXd::Constant(K, -epsilon);
  p.B = Eigen::MatrixXd::Zero(K, dim);
  detail::IntervalRows rows;
  for (Eigen::Index i = 0; i < dim; ++i) {
    p.B(2 * i, i) = 1.0;
    p.B(2 * i + 1, i) = -1.0;
    rows.add(2 * i, 0.0, 1.0);
    rows.add(2 * i + 1, 0.0, 1.0);
  }
  rows.fill(K, p.C, p.c);
  p.closed_form = [epsilon](const Eigen::VectorXd& y) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      v += std::max(0.0, y[i] - epsilon) + std::max(0.0, -y[i] - epsilon);
    return v;
  };
  return p;
}

/// Elastic net 0.5*y^2 + lambda*|y|, coordinatewise.
inline PlqPenalty make_elastic_net(Eigen::Index dim, double lambda) {
  detail::require_dim(dim);
  if (!(lambda > 0.0)) throw std::invalid_argument("elastic net: lambda must be > 0");
  const Eigen::Index K = 2 * dim;
  PlqPenalty p;
  {
    std::vector<Eigen::Triplet<double>> mt;
    for (Eigen::Index i = 0; i < dim; ++i) mt.emplace_back(2 * i, 2 * i, 1.0);
    p.M.resize(K, K);
    p.M.setFromTriplets(mt.begin(), mt.end());
  }
  p.b = Eigen::VectorXd::Zero(K);
  p.B = Eigen::MatrixXd::Zero(K, dim);
  detail::IntervalRows rows;
  for (Eigen::Index i = 0; i < dim; ++i) {
    p.B(2 * i, i) = 1.0;
    p.B(2 * i + 1, i) = 1.0;
    rows.add(2 * i + 1, -lambda, lambda);  // the quadratic dual coordinate is unconstrained
  }
  rows.fill(K, p.C, p.c);
  p.closed_form = [lambda](const Eigen::VectorXd& y) {
    return 0.5 * y.squaredNorm() + lambda * y.lpNorm<1>();
  };
  return p;
}

/// Soft insensitive loss: two soft-hinge blocks with dead zone [-eps, eps]
/// and Huber-style threshold kappa, coordinatewise.
inline PlqPenalty make_soft_insensitive(Eigen::Index dim, double epsilon, double kappa) {
  detail::require_dim(dim);
  if (epsilon < 0.0) throw std::invalid_argument("soft insensitive: epsilon must be >= 0");
  if (!(kappa > 0.0)) throw std::invalid_argument("soft insensitive: kappa must be > 0");
  const Eigen::Index K = 2 * dim;
  PlqPenalty p;
  p.M = detail::sparse_identity(K);
  p.b = Eigen::VectorXd::Constant(K, -epsilon);
  p.B = Eigen::MatrixXd::Zero(K, dim);
  detail::IntervalRows rows;
  for (Eigen::Index i = 0; i < dim; ++i) {
    p.B(2 * i, i) = 1.0;
    p.B(2 * i + 1, i) = -1.0;
    rows.add(2 * i, 0.0, kappa);
    rows.add(2 * i + 1, 0.0, kappa);
  }
  rows.fill(K, p.C, p.c);
  p.closed_form = [epsilon, kappa](const Eigen::VectorXd& y) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      v += detail::soft_hinge(y[i] - epsilon, kappa) + detail::soft_hinge(-y[i] - epsilon, kappa);
    return v;
  };
  return p;
}

/// max(0, y), coordinatewise.
inline PlqPenalty make_hinge(Eigen::Index dim) {
  detail::require_dim(dim);
  PlqPenalty p;
  p.M.resize(dim, dim);
  p.b = Eigen::VectorXd::Zero(dim);
  p.B = Eigen::MatrixXd::Identity(dim, dim);
  detail::IntervalRows rows;
  for (Eigen::Index i = 0; i < dim; ++i) rows.add(i, 0.0, 1.0);
  rows.fill(dim, p.C, p.c);
  p.closed_form = [](const Eigen::VectorXd& y) { return y.cwiseMax(0.0).sum(); };
  return p;
}

/// Block combination: (p1 ++ p2)(y1, y2) = p1(y1) + p2(y2). All dual data
/// is stacked block-diagonally.
inline PlqPenalty direct_sum(const PlqPenalty& p1, const PlqPenalty& p2) {
  const Eigen::Index K1 = p1.dual_dim(), K2 = p2.dual_dim();
  const Eigen::Index N1 = p1.primal_dim(), N2 = p2.primal_dim();
  const Eigen::Index L1 = p1.num_dual_constraints(), L2 = p2.num_dual_constraints();
  PlqPenalty p;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(p1.M.nonZeros() + p2.M.nonZeros()));
  for (int k = 0; k < p1.M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p1.M, k); it; ++it)
      trips.emplace_back(it.row(), it.col(), it.value());
  for (int k = 0; k < p2.M.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p2.M, k); it; ++it)
      trips.emplace_back(K1 + it.row(), K1 + it.col(), it.value());
  p.M.resize(K1 + K2, K1 + K2);
  p.M.setFromTriplets(trips.begin(), trips.end());

  trips.clear();
  for (int k = 0; k < p1.C.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p1.C, k); it; ++it)
      trips.emplace_back(it.row(), it.col(), it.value());
  for (int k = 0; k < p2.C.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p2.C, k); it; ++it)
      trips.emplace_back(K1 + it.row(), L1 + it.col(), it.value());
  p.C.resize(K1 + K2, L1 + L2);
  p.C.setFromTriplets(trips.begin(), trips.end());

  p.b.resize(K1 + K2);
  p.b << p1.b, p2.b;
  p.c.resize(L1 + L2);
  p.c << p1.c, p2.c;
  p.B = Eigen::MatrixXd::Zero(K1 + K2, N1 + N2);
  p.B.topLeftCorner(K1, N1) = p1.B;
  p.B.bottomRightCorner(K2, N2) = p2.B;

  if (p1.closed_form && p2.closed_form) {
    auto f1 = p1.closed_form;
    auto f2 = p2.closed_form;
    p.closed_form = [f1, f2, N1, N2](const Eigen::VectorXd& y) {
      return f1(y.head(N1)) + f2(y.tail(N2));
    };
  }
  return p;
}

/// p'(y) = p(F y + f). Requires B*F injective.
inline PlqPenalty precompose_affine(const PlqPenalty& p, const Eigen::MatrixXd& F,
                                    const Eigen::VectorXd& f) {
  if (F.rows() != p.primal_dim() || f.size() != p.primal_dim())
    throw std::invalid_argument("precompose_affine: shape mismatch");
  PlqPenalty q;
  q.M = p.M;
  q.C = p.C;
  q.c = p.c;
  q.B = p.B * F;
  q.b = p.b + p.B * f;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(q.B);
  if (qr.rank() < q.B.cols())
    throw std::invalid_argument("precompose_affine: B*F is rank deficient");
  if (p.closed_form) {
    auto g = p.closed_form;
    q.closed_form = [g, F, f](const Eigen::VectorXd& y) { return g(F * y + f); };
  }
  return q;
}

/// Exact scaling: (scale(p, gamma))(y) = gamma * p(y), via the dual
/// substitution u = gamma * v, which maps (M, c) to (M/gamma, gamma*c).
inline PlqPenalty scale_penalty(const PlqPenalty& p, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("scale_penalty: gamma must be > 0");
  PlqPenalty q;
  q.M = p.M / gamma;
  q.b = p.b;
  q.B = p.B;
  q.C = p.C;
  q.c = gamma * p.c;
  if (p.closed_form) {
    auto g = p.closed_form;
    q.closed_form = [g, gamma](const Eigen::VectorXd& y) { return gamma * g(y); };
  }
  return q;
}

namespace detail {

// Maximizes h^T u - 0.5 u^T M u over {u : C^T u <= c} by a primal-dual
// interior point iteration on the QP optimality system. Used only as the
// evaluate() fallback for penalties without a stored closed form.
inline double dual_qp_sup(const PlqPenalty& p, const Eigen::VectorXd& h) {
  const Eigen::Index K = p.dual_dim();
  const Eigen::Index L = p.num_dual_constraints();
  const Eigen::MatrixXd M = Eigen::MatrixXd(p.M);

  if (L == 0) {
    // Finite iff h is in range(M); otherwise the sup grows along a
    // direction in null(M) not orthogonal to h.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    const Eigen::VectorXd u = ldlt.solve(h);
    if (ldlt.info() != Eigen::Success ||
        (M * u - h).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + h.lpNorm<Eigen::Infinity>()))
      throw std::runtime_error("evaluate: sup is unbounded above (unconstrained U)");
    return h.dot(u) - 0.5 * u.dot(M * u);
  }

  const Eigen::MatrixXd C = Eigen::MatrixXd(p.C);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd s = (p.c.array() + 1.0).matrix();  // slack of C^T u <= c at u = 0
  Eigen::VectorXd q = Eigen::VectorXd::Ones(L);
  double mu = 1.0;
  const double tau = 0.995;
  const double scale = 1.0 + h.lpNorm<Eigen::Infinity>();

  for (int iter = 0; iter < 200; ++iter) {
    // Stationarity: M u - h + C q = 0; feasibility: C^T u + s = c; q.s = mu.
    const Eigen::VectorXd r_stat = M * u - h + C * q;
    const Eigen::VectorXd r_feas = C.transpose() * u + s - p.c;
    const Eigen::VectorXd r_comp = q.cwiseProduct(s).array() - mu;

    const double res = std::max(r_stat.lpNorm<Eigen::Infinity>(),
                                std::max(r_feas.lpNorm<Eigen::Infinity>(),
                                         q.cwiseProduct(s).lpNorm<Eigen::Infinity>()));
    if (res <= 1e-10 * scale && mu <= 1e-12 * scale)
      return h.dot(u) - 0.5 * u.dot(M * u);

    // Reduced system in du: (M + C diag(q/s) C^T) du = -r_stat + C S^{-1}(r_comp - Q r_feas)
    const Eigen::VectorXd qs = q.cwiseQuotient(s);
    Eigen::MatrixXd T = M + C * qs.asDiagonal() * C.transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(T);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("evaluate: dual QP iteration broke down");
    const Eigen::VectorXd rhs =
        -r_stat + C * ((r_comp - q.cwiseProduct(r_feas)).cwiseQuotient(s));
    const Eigen::VectorXd du = ldlt.solve(rhs);
    const Eigen::VectorXd ds = -r_feas - C.transpose() * du;
    const Eigen::VectorXd dq = (-r_comp - q.cwiseProduct(ds)).cwiseQuotient(s);

    double alpha = 1.0;
    for (Eigen::Index i = 0; i < L; ++i) {
      if (ds[i] < 0.0) alpha = std::min(alpha, -tau * s[i] / ds[i]);
      if (dq[i] < 0.0) alpha = std::min(alpha, -tau * q[i] / dq[i]);
    }
    u += alpha * du;
    s += alpha * ds;
    q += alpha * dq;
    mu = 0.1 * q.dot(s) / static_cast<double>(L);

    if (u.lpNorm<Eigen::Infinity>() > 1e10 * scale)
      throw std::runtime_error("evaluate: sup appears unbounded above");
  }
  throw std::runtime_error("evaluate: dual QP did not converge");
}

}  // namespace detail

/// rho(y) = sup_{u in U} <u, b + B y> - 0.5 u^T M u.
inline double evaluate(const PlqPenalty& p, const Eigen::VectorXd& y) {
  if (y.size() != p.primal_dim())
    throw std::invalid_argument("evaluate: argument dimension mismatch");
  if (p.closed_form) return p.closed_form(y);
  return detail::dual_qp_sup(p, p.b + p.B * y);
}

/// Same as evaluate() but always goes through the dual QP, ignoring any
/// stored closed form. Intended for consistency checks.
inline double evaluate_via_dual_qp(const PlqPenalty& p, const Eigen::VectorXd& y) {
  if (y.size() != p.primal_dim())
    throw std::invalid_argument("evaluate: argument dimension mismatch");
  return detail::dual_qp_sup(p, p.b + p.B * y);
}

}  // namespace plqid
