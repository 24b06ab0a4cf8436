#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "robwc/core.hpp"
#include "robwc/qp.hpp"

namespace robwc {

// SQP for upper-C1 objectives with smooth inequality constraints. The
// objective oracle may be nonsmooth; any subgradient is a valid input to the
// quadratic subproblem, and the merit line search with a summable tolerance
// schedule drives the iterates to KKT points.

struct SqpConfig {
  double penalty_r = -1.0;       // < 0: 10 * (1 + ||g(x0)||)
  double lambda_max = 1.0;
  double epsilon0 = -1.0;        // < 0: 1e-3 * |f(x0)| + 1e-6
  double epsilon_decay = 0.5;    // geometric, hence summable
  double optimality_tol = 1e-6;
  double step_tol = 1e-8;
  int max_iter = 100;
  int line_search_depth = 25;    // grid lambda_max * {1, 1/2, ..., 2^-depth}
  bool line_search_full_scan = false;
  double elastic_weight = 1e4;   // slack penalty for infeasible linearizations
  double hessian_eig_lo = 1e-6;  // eigenvalue clamp keeping alpha <= H <= beta
  double hessian_eig_hi = 1e6;
};

// Smooth constraint side of the problem: values and Jacobian rows at x.
// Box bounds are passed through this interface as ordinary linear rows.
struct ConstraintModel {
  int count = 0;
  std::function<Vector(const Vector&)> values;
  std::function<Matrix(const Vector&)> jacobian;  // count x dim

  static ConstraintModel none(int dim) {
    ConstraintModel m;
    m.count = 0;
    m.values = [](const Vector& x) { return Vector(0); };
    m.jacobian = [dim](const Vector& x) { return Matrix(0, x.size()); };
    return m;
  }
};

// Appends box rows lo <= x <= hi to an existing model.
inline ConstraintModel with_box(ConstraintModel inner, const Vector& lo, const Vector& hi) {
  require(lo.size() == hi.size(), "with_box: bound size mismatch");
  const int dim = static_cast<int>(lo.size());
  ConstraintModel out;
  out.count = inner.count + 2 * dim;
  out.values = [inner, lo, hi, dim](const Vector& x) {
    Vector v(inner.count + 2 * dim);
    v.head(inner.count) = inner.values(x);
    v.segment(inner.count, dim) = x - hi;
    v.tail(dim) = lo - x;
    return v;
  };
  out.jacobian = [inner, dim](const Vector& x) {
    Matrix j(inner.count + 2 * dim, x.size());
    j.topRows(inner.count) = inner.jacobian(x);
    j.middleRows(inner.count, dim) = Matrix::Identity(dim, dim);
    j.bottomRows(dim) = -Matrix::Identity(dim, dim);
    return j;
  };
  return out;
}

// Objective oracle. value() returning nullopt signals an evaluation failure
// (e.g. instability met during a worst-case performance search); the solver
// aborts and reports the offending point upward.
struct NonsmoothOracle {
  std::function<std::optional<double>(const Vector&)> value;
  std::function<Vector(const Vector&)> subgradient;
};

// theta_r(x) = f(x) + r * sum_i max(0, c_i(x)).
struct MeritFunction {
  std::function<std::optional<double>(const Vector&)> objective;
  std::function<Vector(const Vector&)> constraint_values;
  double r = 0.0;

  std::optional<double> operator()(const Vector& x) const {
    auto f = objective(x);
    if (!f) return std::nullopt;
    double penalty = 0.0;
    const Vector c = constraint_values(x);
    for (Eigen::Index i = 0; i < c.size(); ++i) penalty += std::max(0.0, c[i]);
    return *f + r * penalty;
  }
};

struct LineSearchResult {
  double lambda = 0.0;
  double merit = 0.0;
  int evaluations = 0;
  bool stalled = false;       // no grid point improved on the base merit
  bool hit_failure = false;   // a trial point failed to evaluate
  Vector failure_point;
};

// Approximate argmin of theta_r along p over the backtracking grid
// lambda_max * {1, 1/2, ..., 2^-depth}. The scan stops once the profile has
// risen for several consecutive grid points past an established improvement;
// epsilon_k absorbs the gap to the exact grid minimum.
inline LineSearchResult line_search(const MeritFunction& merit, const Vector& x,
                                    const Vector& p, double lambda_max, double epsilon_k,
                                    double base_merit, int depth = 25, bool full_scan = false) {
  LineSearchResult out;
  out.merit = base_merit;
  double best = std::numeric_limits<double>::infinity();
  double best_lambda = 0.0;
  int rises = 0;
  double lambda = lambda_max;
  for (int j = 0; j <= depth; ++j, lambda *= 0.5) {
    const Vector trial = x + lambda * p;
    auto value = merit(trial);
    ++out.evaluations;
    if (!value) {
      out.hit_failure = true;
      out.failure_point = trial;
      return out;
    }
    if (*value < best) {
      best = *value;
      best_lambda = lambda;
      rises = 0;
    } else if (best < base_merit) {
      if (!full_scan && ++rises >= 4) break;
    }
  }
  if (best >= base_merit) {
    out.stalled = true;
    out.lambda = 0.0;
    out.merit = base_merit;
    return out;
  }
  (void)epsilon_k;
  out.lambda = best_lambda;
  out.merit = best;
  return out;
}

struct BfgsOutcome {
  Matrix hessian;
  bool skipped = false;
  bool clamped = false;
};

// Damped BFGS step on the Hessian approximation. Updates with flat or
// negative curvature are skipped; eigenvalues are clamped into
// [eig_lo, eig_hi] so the SPD bounds of the convergence conditions hold.
inline BfgsOutcome bfgs_update(const Matrix& h, const Vector& s, const Vector& y,
                               double eig_lo = 1e-6, double eig_hi = 1e6) {
  BfgsOutcome out;
  out.hessian = h;
  const double sy = s.dot(y);
  if (sy <= 1e-8 * s.norm() * y.norm() || s.norm() == 0.0) {
    out.skipped = true;
    return out;
  }
  const Vector hs = h * s;
  const double shs = s.dot(hs);
  out.hessian = h - (hs * hs.transpose()) / shs + (y * y.transpose()) / sy;
  out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix> es(out.hessian);
  const Vector& ev = es.eigenvalues();
  if (ev.minCoeff() < eig_lo || ev.maxCoeff() > eig_hi) {
    Vector clamped = ev.cwiseMax(eig_lo).cwiseMin(eig_hi);
    out.hessian = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
    out.clamped = true;
  }
  return out;
}

// Candidate worst case / constrained minimizer with its KKT data.
struct KktPoint {
  enum class Status {
    kkt,                 // stationarity residual within tolerance
    stalled_step,        // step length below step_tol
    line_search_stalled, // no grid point improved the merit
    max_iterations,
    evaluation_failure,  // oracle failed; failure_point carries the trial
  };
  Status status = Status::max_iterations;
  Vector x;
  Vector multipliers;
  double objective = 0.0;
  double stationarity_residual = std::numeric_limits<double>::infinity();
  double complementarity_residual = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  long long evaluations = 0;
  Vector failure_point;

  // Best strictly feasible iterate seen, kept so explorer handoffs never
  // regress even when the final iterate is worse.
  bool has_best_feasible = false;
  double best_feasible_value = std::numeric_limits<double>::infinity();
  Vector best_feasible_x;

  // Per-iteration bookkeeping for the Algorithm-1 contracts.
  std::vector<double> merit_before, merit_after, epsilon_used;
  std::vector<double> step_norms;
  std::vector<double> multiplier_inf_norms;
  std::vector<bool> descent_found;
  int penalty_escalations = 0;
  double final_penalty_r = 0.0;
};

namespace detail {

// Relaxed subproblem for infeasible linearizations: elastic slacks s >= 0 on
// every row, penalized linearly.
inline QpSolution solve_qp_elastic(const QpProblem& qp, double weight) {
  const auto k = qp.hessian.rows();
  const auto m = qp.normals.rows();
  QpProblem relaxed;
  relaxed.hessian = Matrix::Zero(k + m, k + m);
  relaxed.hessian.topLeftCorner(k, k) = qp.hessian;
  relaxed.hessian.bottomRightCorner(m, m) = 1e-8 * Matrix::Identity(m, m);
  relaxed.gradient = Vector(k + m);
  relaxed.gradient.head(k) = qp.gradient;
  relaxed.gradient.tail(m).setConstant(weight);
  relaxed.normals = Matrix::Zero(2 * m, k + m);
  relaxed.normals.topLeftCorner(m, k) = qp.normals;
  relaxed.normals.topRightCorner(m, m) = -Matrix::Identity(m, m);
  relaxed.normals.bottomRightCorner(m, m) = -Matrix::Identity(m, m);
  relaxed.offsets = Vector::Zero(2 * m);
  relaxed.offsets.head(m) = qp.offsets;

  QpSolution inner = solve_qp(relaxed);
  QpSolution out;
  out.status = inner.status == QpSolution::Status::max_pivots ? inner.status
                                                              : QpSolution::Status::optimal;
  out.p = inner.p.head(k);
  out.multipliers = inner.multipliers.head(m);
  out.pivots = inner.pivots;
  return out;
}

}  // namespace detail

// Algorithm-1 loop: QP subproblem on a subgradient, merit line search with
// summable epsilon schedule, damped BFGS curvature model, penalty escalation
// when multipliers approach the merit weight.
inline KktPoint sqp_minimize(const NonsmoothOracle& oracle, const ConstraintModel& constraints,
                             const Vector& x0, const SqpConfig& config = {}) {
  const auto dim = x0.size();
  KktPoint out;
  out.x = x0;

  auto counted_value = [&](const Vector& x) {
    ++out.evaluations;
    return oracle.value(x);
  };

  auto f0 = counted_value(x0);
  if (!f0) {
    out.status = KktPoint::Status::evaluation_failure;
    out.failure_point = x0;
    return out;
  }
  double f = *f0;
  out.objective = f;
  Vector g = oracle.subgradient(x0);
  double r = config.penalty_r > 0.0 ? config.penalty_r : 10.0 * (1.0 + g.norm());
  const double eps0 = config.epsilon0 >= 0.0 ? config.epsilon0 : 1e-3 * std::abs(f) + 1e-6;
  Matrix h = Matrix::Identity(dim, dim);

  Vector x = x0;
  Vector c = constraints.values(x);
  auto track_feasible = [&](const Vector& pt, double value, const Vector& cvals) {
    const double viol = cvals.size() ? cvals.maxCoeff() : 0.0;
    if (viol <= kFeasibilityTol && value < out.best_feasible_value) {
      out.best_feasible_value = value;
      out.best_feasible_x = pt;
      out.has_best_feasible = true;
    }
  };
  track_feasible(x, f, c);

  double epsilon_k = eps0;
  for (int iter = 0; iter < config.max_iter; ++iter) {
    out.iterations = iter + 1;
    const Matrix jac = constraints.jacobian(x);

    QpProblem qp{h, g, jac, c};
    QpSolution sol = solve_qp(qp);
    if (sol.status == QpSolution::Status::infeasible) {
      sol = detail::solve_qp_elastic(qp, config.elastic_weight);
    }
    if (sol.status == QpSolution::Status::max_pivots) {
      throw NoConvergence("sqp_minimize: QP subproblem exceeded pivot budget");
    }
    const Vector& p = sol.p;
    const Vector& u = sol.multipliers;
    out.multiplier_inf_norms.push_back(u.size() ? u.cwiseAbs().maxCoeff() : 0.0);

    // Prop. 3 condition (ii) monitoring: escalate the merit weight when the
    // multipliers grow toward it, then restart the curvature model.
    if (u.size() > 0 && u.cwiseAbs().maxCoeff() > 0.5 * r) {
      r *= 10.0;
      h = Matrix::Identity(dim, dim) * std::min(std::max(1.0, g.norm()), config.hessian_eig_hi);
      ++out.penalty_escalations;
      if (out.penalty_escalations > 20) {
        throw NoConvergence("sqp_minimize: penalty escalation diverged");
      }
      continue;
    }

    const KktResidual res = kkt_residual(g, jac, u, c);
    out.stationarity_residual = res.stationarity;
    out.complementarity_residual = res.complementarity;
    out.max_violation = res.feasibility;
    out.multipliers = u;
    out.objective = f;
    out.x = x;
    if (res.stationarity <= config.optimality_tol &&
        res.feasibility <= std::max(config.optimality_tol, kFeasibilityTol) &&
        res.complementarity <= std::max(config.optimality_tol, kFeasibilityTol)) {
      out.status = KktPoint::Status::kkt;
      out.final_penalty_r = r;
      return out;
    }

    MeritFunction merit{counted_value, constraints.values, r};
    const double base =
        f + r * c.array().max(0.0).sum();
    const LineSearchResult ls =
        line_search(merit, x, p, config.lambda_max, epsilon_k, base,
                    config.line_search_depth, config.line_search_full_scan);
    if (ls.hit_failure) {
      out.status = KktPoint::Status::evaluation_failure;
      out.failure_point = ls.failure_point;
      out.final_penalty_r = r;
      return out;
    }
    out.merit_before.push_back(base);
    out.merit_after.push_back(ls.merit);
    out.epsilon_used.push_back(epsilon_k);
    out.descent_found.push_back(!ls.stalled);
    out.step_norms.push_back(ls.lambda * p.norm());

    if (ls.stalled) {
      out.status = KktPoint::Status::line_search_stalled;
      out.final_penalty_r = r;
      return out;
    }

    const Vector x_next = x + ls.lambda * p;
    const Vector c_next = constraints.values(x_next);
    auto f_next = counted_value(x_next);
    if (!f_next) {
      out.status = KktPoint::Status::evaluation_failure;
      out.failure_point = x_next;
      out.final_penalty_r = r;
      return out;
    }
    const Vector g_next = oracle.subgradient(x_next);
    track_feasible(x_next, *f_next, c_next);

    const Vector s = x_next - x;
    const Vector y = g_next - g;
    h = bfgs_update(h, s, y, config.hessian_eig_lo, config.hessian_eig_hi).hessian;

    const double step = s.norm();
    x = x_next;
    f = *f_next;
    g = g_next;
    c = c_next;
    epsilon_k *= config.epsilon_decay;

    if (step < config.step_tol) {
      out.x = x;
      out.objective = f;
      out.status = KktPoint::Status::stalled_step;
      out.final_penalty_r = r;
      // Final residuals at the stalled point, with fresh multipliers.
      const Matrix jac2 = constraints.jacobian(x);
      QpSolution sol2 = solve_qp(QpProblem{h, g, jac2, c});
      if (sol2.status == QpSolution::Status::optimal) {
        const KktResidual res2 = kkt_residual(g, jac2, sol2.multipliers, c);
        out.multipliers = sol2.multipliers;
        out.stationarity_residual = res2.stationarity;
        out.complementarity_residual = res2.complementarity;
        out.max_violation = res2.feasibility;
        if (res2.stationarity <= config.optimality_tol &&
            res2.feasibility <= std::max(config.optimality_tol, kFeasibilityTol)) {
          out.status = KktPoint::Status::kkt;
        }
      }
      return out;
    }
  }
  out.x = x;
  out.objective = f;
  out.status = KktPoint::Status::max_iterations;
  out.final_penalty_r = r;
  return out;
}

}  // namespace robwc
