#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "plqid/penalty.hpp"

namespace plqid {

/// Constrained PLQ program: min_{y : A^T y <= a} rho(y).
struct IpProblem {
  PlqPenalty penalty;
  Eigen::MatrixXd A;  // N x P (P may be 0)
  Eigen::VectorXd a;  // P

  Eigen::Index num_constraints() const { return a.size(); }
};

inline IpProblem make_unconstrained(PlqPenalty penalty) {
  IpProblem prob;
  const Eigen::Index N = penalty.primal_dim();
  prob.penalty = std::move(penalty);
  prob.A.resize(N, 0);
  prob.a.resize(0);
  return prob;
}

/// Interior-point iterate. s,q are slack/multiplier of the dual constraints
/// C^T u <= c; r,w those of the primal constraints A^T y <= a.
struct IpState {
  Eigen::VectorXd y;  // N
  Eigen::VectorXd u;  // K
  Eigen::VectorXd q;  // L
  Eigen::VectorXd s;  // L
  Eigen::VectorXd w;  // P
  Eigen::VectorXd r;  // P
  double mu = 1.0;
};

struct IpStep {
  Eigen::VectorXd ds, dq, du, dr, dw, dy;
};

enum class SolveStatus { converged, max_iterations, numerical_failure };

struct IterationRecord {
  int iteration;
  double mu;
  double f0_inf;      // ||F_0||_inf after the step
  double step_length;
  double complementarity;  // q's + w'r after the step
  double min_positive;     // min over (s,q,w,r) after the step; +inf if none
};

struct SolveReport {
  Eigen::VectorXd y_star;
  double objective = 0.0;
  double kkt_residual_inf = 0.0;
  int iterations = 0;
  SolveStatus status = SolveStatus::numerical_failure;
  std::vector<IterationRecord> trace;  // filled when opts.keep_trace
};

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double sigma = 0.1;   // multiplicative reduction of mu vs complementarity average
  double tau = 0.995;   // fraction-to-boundary parameter
  bool keep_trace = false;
  bool verbose = false;
  std::ostream* log = nullptr;  // defaults to std::cerr-less silence when null
};

inline IpState initial_state(const IpProblem& prob) {
  IpState st;
  const Eigen::Index N = prob.penalty.primal_dim();
  const Eigen::Index K = prob.penalty.dual_dim();
  const Eigen::Index L = prob.penalty.num_dual_constraints();
  const Eigen::Index P = prob.num_constraints();
  st.y = Eigen::VectorXd::Zero(N);
  st.u = Eigen::VectorXd::Zero(K);
  st.q = Eigen::VectorXd::Ones(L);
  st.s = Eigen::VectorXd::Ones(L);
  st.w = Eigen::VectorXd::Ones(P);
  st.r = Eigen::VectorXd::Ones(P);
  st.mu = 1.0;
  return st;
}

/// Checks the solvability hypotheses: null(M) ∩ null(C^T) = {0}, B injective,
/// and (when P > 0) nonempty interior of Y. Returns an empty optional on
/// success, otherwise a diagnostic naming the violated hypothesis.
inline std::optional<std::string> validate(const IpProblem& prob) {
  const PlqPenalty& p = prob.penalty;
  const Eigen::Index K = p.dual_dim();

  // null(M) ∩ null(C^T) = {0}  <=>  M + C C^T positive definite.
  Eigen::SparseMatrix<double> G = p.M;
  if (p.num_dual_constraints() > 0) {
    Eigen::SparseMatrix<double> CCt = p.C * Eigen::SparseMatrix<double>(p.C.transpose());
    G = G + CCt;
  }
  {
    double scale = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) scale = std::max(scale, G.coeff(i, i));
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(G);
    if (ldlt.info() != Eigen::Success ||
        ldlt.vectorD().minCoeff() <= 1e-12 * std::max(scale, 1.0))
      return "nullspace condition violated: null(M) and null(C^T) intersect nontrivially";
  }

  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(p.B);
    if (qr.rank() < p.B.cols()) return "B is rank deficient: null(B) != {0}";
  }

  const Eigen::Index P = prob.num_constraints();
  if (P > 0) {
    // Look for a strictly interior point of {y : A^T y <= a} by aiming the
    // least-squares preimage at a - delta for shrinking margins delta.
    const double base = 1.0 + prob.a.lpNorm<Eigen::Infinity>();
    bool found = (prob.a.array() > 0.0).all();  // y = 0
    for (double delta = base; !found && delta > 1e-10 * base; delta *= 0.1) {
      const Eigen::VectorXd target = prob.a.array() - delta;
      const Eigen::VectorXd y =
          prob.A.transpose().jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(target);
      found = ((prob.A.transpose() * y - prob.a).array() < 0.0).all();
    }
    if (!found) return "constraint set Y has empty interior (no strictly feasible point found)";
  }
  return std::nullopt;
}

/// The six residual blocks of the mu-relaxed KKT system, stacked as
/// [s + C^T u - c; q.s - mu; B y - M u - C q + b; r + A^T y - a; w.r - mu;
///  B^T u + A w]. Blocks with L = 0 or P = 0 are empty.
inline Eigen::VectorXd kkt_residual(const IpProblem& prob, const IpState& st) {
  const PlqPenalty& p = prob.penalty;
  const Eigen::Index K = p.dual_dim();
  const Eigen::Index N = p.primal_dim();
  const Eigen::Index L = p.num_dual_constraints();
  const Eigen::Index P = prob.num_constraints();
  if (st.y.size() != N || st.u.size() != K || st.q.size() != L || st.s.size() != L ||
      st.w.size() != P || st.r.size() != P)
    throw std::invalid_argument("kkt_residual: state dimensions do not match problem");

  Eigen::VectorXd F(2 * L + K + 2 * P + N);
  Eigen::Index off = 0;
  F.segment(off, L) = st.s + p.C.transpose() * st.u - p.c;
  off += L;
  F.segment(off, L) = (st.q.cwiseProduct(st.s).array() - st.mu).matrix();
  off += L;
  F.segment(off, K) = p.B * st.y - p.M * st.u - p.C * st.q + p.b;
  off += K;
  F.segment(off, P) = st.r + prob.A.transpose() * st.y - prob.a;
  off += P;
  F.segment(off, P) = (st.w.cwiseProduct(st.r).array() - st.mu).matrix();
  off += P;
  F.segment(off, N) = p.B.transpose() * st.u + prob.A * st.w;
  return F;
}

inline double kkt_residual_inf(const IpProblem& prob, IpState st, double mu) {
  st.mu = mu;
  const Eigen::VectorXd F = kkt_residual(prob, st);
  return F.size() ? F.lpNorm<Eigen::Infinity>() : 0.0;
}

/// One Newton step on F_mu via block elimination:
///   T = M + C diag(q/s) C^T,  Omega = B^T T^{-1} B + A R^{-1} W A^T,
/// then Delta y = Omega^{-1} r6 and back substitution. T is factorized
/// sparsely, which keeps it cheap for the (block) diagonal T of the
/// built-in penalties and their direct sums.
inline IpStep newton_step(const IpProblem& prob, const IpState& st) {
  const PlqPenalty& p = prob.penalty;
  const Eigen::Index K = p.dual_dim();
  const Eigen::Index N = p.primal_dim();
  const Eigen::Index L = p.num_dual_constraints();
  const Eigen::Index P = prob.num_constraints();

  const Eigen::VectorXd r1 = -st.s - p.C.transpose() * st.u + p.c;
  const Eigen::VectorXd r2 =
      (Eigen::VectorXd::Constant(L, st.mu) +
       st.q.cwiseProduct(p.C.transpose() * st.u - p.c));
  const Eigen::VectorXd stat = p.B * st.y - p.M * st.u - p.C * st.q + p.b;
  Eigen::VectorXd r3 = -stat;
  if (L > 0) r3 += p.C * r2.cwiseQuotient(st.s);
  const Eigen::VectorXd r4 = -(st.r + prob.A.transpose() * st.y - prob.a);
  const Eigen::VectorXd r5 =
      (Eigen::VectorXd::Constant(P, st.mu) +
       st.w.cwiseProduct(prob.A.transpose() * st.y - prob.a));

  Eigen::SparseMatrix<double> T = p.M;
  if (L > 0) {
    const Eigen::VectorXd qs = st.q.cwiseQuotient(st.s);
    Eigen::SparseMatrix<double> D(L, L);
    D.reserve(Eigen::VectorXi::Ones(L));
    for (Eigen::Index i = 0; i < L; ++i) D.insert(i, i) = qs[i];
    D.makeCompressed();
    T = T + Eigen::SparseMatrix<double>(p.C * D * Eigen::SparseMatrix<double>(p.C.transpose()));
  }
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> Tfac(T);
  if (Tfac.info() != Eigen::Success)
    throw std::runtime_error("newton_step: factorization of T broke down");

  const Eigen::MatrixXd TinvB = Tfac.solve(p.B);
  const Eigen::VectorXd Tinv_r3 = Tfac.solve(r3);

  Eigen::VectorXd r6 = -(p.B.transpose() * st.u + prob.A * st.w) + p.B.transpose() * Tinv_r3;
  Eigen::MatrixXd Omega = p.B.transpose() * TinvB;
  if (P > 0) {
    const Eigen::VectorXd wr = st.w.cwiseQuotient(st.r);
    r6 -= prob.A * r5.cwiseQuotient(st.r);
    Omega += prob.A * wr.asDiagonal() * prob.A.transpose();
  }

  // Pivoted LDLT: Omega is symmetric positive definite in exact arithmetic
  // but becomes extremely graded as the barrier weights q/s spread out near
  // convergence, where a plain Cholesky can report a spurious breakdown.
  Eigen::LDLT<Eigen::MatrixXd> Ofac(Omega);
  if (Ofac.info() != Eigen::Success || !Ofac.isPositive())
    throw std::runtime_error("newton_step: factorization of Omega broke down");

  IpStep d;
  d.dy = Ofac.solve(r6);
  d.dw = P > 0 ? Eigen::VectorXd((r5 + st.w.cwiseProduct(prob.A.transpose() * d.dy)).cwiseQuotient(st.r))
               : Eigen::VectorXd(0);
  d.dr = r4 - prob.A.transpose() * d.dy;
  d.du = Tfac.solve(-r3 + p.B * d.dy);
  d.dq = L > 0 ? Eigen::VectorXd((r2 + st.q.cwiseProduct(p.C.transpose() * d.du)).cwiseQuotient(st.s))
               : Eigen::VectorXd(0);
  d.ds = r1 - p.C.transpose() * d.du;
  return d;
}

namespace detail {

inline void apply_step(IpState& st, const IpStep& d, double alpha) {
  st.y += alpha * d.dy;
  st.u += alpha * d.du;
  st.q += alpha * d.dq;
  st.s += alpha * d.ds;
  st.w += alpha * d.dw;
  st.r += alpha * d.dr;
}

inline double fraction_to_boundary(const Eigen::VectorXd& v, const Eigen::VectorXd& dv,
                                   double tau) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, tau * v[i] / (-dv[i]));
  return alpha;
}

}  // namespace detail

/// Damped Newton iteration on the relaxed KKT system, driving mu to zero.
/// Throws std::invalid_argument when validate() fails.
inline SolveReport solve(const IpProblem& prob, const SolveOptions& opts = {}) {
  if (auto diag = validate(prob)) throw std::invalid_argument("solve: " + *diag);

  const Eigen::Index L = prob.penalty.num_dual_constraints();
  const Eigen::Index P = prob.num_constraints();
  const bool has_barrier = (L + P) > 0;

  IpState st = initial_state(prob);
  if (!has_barrier) st.mu = 0.0;

  SolveReport rep;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    IpStep d;
    try {
      d = newton_step(prob, st);
    } catch (const std::runtime_error&) {
      rep.status = SolveStatus::numerical_failure;
      rep.y_star = st.y;
      rep.iterations = iter - 1;
      rep.kkt_residual_inf = kkt_residual_inf(prob, st, 0.0);
      return rep;
    }

    double alpha = 1.0;
    alpha = std::min(alpha, detail::fraction_to_boundary(st.s, d.ds, opts.tau));
    alpha = std::min(alpha, detail::fraction_to_boundary(st.q, d.dq, opts.tau));
    alpha = std::min(alpha, detail::fraction_to_boundary(st.w, d.dw, opts.tau));
    alpha = std::min(alpha, detail::fraction_to_boundary(st.r, d.dr, opts.tau));

    const double f_before = kkt_residual(prob, st).lpNorm<Eigen::Infinity>();
    IpState trial = st;
    detail::apply_step(trial, d, alpha);
    int halvings = 0;
    while (kkt_residual(prob, trial).lpNorm<Eigen::Infinity>() >= f_before && halvings < 30) {
      alpha *= 0.5;
      trial = st;
      detail::apply_step(trial, d, alpha);
      ++halvings;
    }
    st = trial;

    double comp = 0.0;
    if (has_barrier) {
      comp = st.q.dot(st.s) + st.w.dot(st.r);
      st.mu = opts.sigma * comp / static_cast<double>(L + P);
    }

    const double f0 = kkt_residual_inf(prob, st, 0.0);
    if (opts.keep_trace || opts.verbose) {
      double min_pos = std::numeric_limits<double>::infinity();
      for (const auto* v : {&st.s, &st.q, &st.w, &st.r})
        if (v->size() > 0) min_pos = std::min(min_pos, v->minCoeff());
      IterationRecord rec{iter, st.mu, f0, alpha, comp, min_pos};
      if (opts.keep_trace) rep.trace.push_back(rec);
      if (opts.verbose && opts.log)
        *opts.log << "iter=" << iter << " mu=" << st.mu << " f0_inf=" << f0
                  << " step=" << alpha << "\n";
    }

    if ((!has_barrier || st.mu <= opts.tol * 1e-2) && f0 <= opts.tol) {
      rep.status = SolveStatus::converged;
      rep.y_star = st.y;
      rep.iterations = iter;
      rep.kkt_residual_inf = f0;
      rep.objective = evaluate(prob.penalty, st.y);
      return rep;
    }
  }

  rep.status = SolveStatus::max_iterations;
  rep.y_star = st.y;
  rep.iterations = opts.max_iter;
  rep.kkt_residual_inf = kkt_residual_inf(prob, st, 0.0);
  rep.objective = evaluate(prob.penalty, st.y);
  return rep;
}

}  // namespace plqid
