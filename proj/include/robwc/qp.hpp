#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "robwc/core.hpp"

namespace robwc {

// Strictly convex inequality-constrained quadratic program
//
//   minimize   g^T p + 1/2 p^T H p
//   subject to offsets_i + normals_i^T p <= 0
//
// solved with a dual active-set scheme (Goldfarb-Idnani ordering, dense
// re-solves: problem sizes here are tiny).
struct QpProblem {
  Matrix hessian;   // SPD, k x k
  Vector gradient;  // a subgradient of the outer objective
  Matrix normals;   // m x k, rows are constraint gradients
  Vector offsets;   // m, constraint values at the linearization point
};

struct QpSolution {
  enum class Status { optimal, infeasible, max_pivots };
  Status status = Status::optimal;
  Vector p;
  Vector multipliers;              // full length m, zeros on inactive rows
  Vector infeasibility_certificate;  // y >= 0 with y^T normals = 0, y^T offsets > 0
  int pivots = 0;

  double objective(const QpProblem& qp) const {
    return qp.gradient.dot(p) + 0.5 * p.dot(qp.hessian * p);
  }
};

struct KktResidual {
  double stationarity = 0.0;
  double complementarity = 0.0;
  double feasibility = 0.0;
};

// The three residual norms of the first-order conditions at (x, u):
// ||g + normals^T u||, ||u .* c||_inf, max(0, max_i c_i).
inline KktResidual kkt_residual(const Vector& g, const Matrix& normals, const Vector& u,
                                const Vector& c_values) {
  require(normals.rows() == u.size() && normals.rows() == c_values.size(),
          "kkt_residual: row count mismatch");
  require(normals.cols() == g.size() || normals.rows() == 0,
          "kkt_residual: column count mismatch");
  KktResidual r;
  Vector grad_lag = g;
  if (normals.rows() > 0) grad_lag += normals.transpose() * u;
  r.stationarity = grad_lag.norm();
  if (u.size() > 0) {
    r.complementarity = (u.array() * c_values.array()).abs().maxCoeff();
    r.feasibility = std::max(0.0, c_values.maxCoeff());
  }
  return r;
}

inline QpSolution solve_qp(const QpProblem& qp, double tol = 1e-11) {
  const auto k = qp.hessian.rows();
  const auto m = qp.normals.rows();
  require(qp.hessian.cols() == k && qp.gradient.size() == k, "solve_qp: H/g size mismatch");
  require(m == 0 || qp.normals.cols() == k, "solve_qp: normals column mismatch");
  require(qp.offsets.size() == m, "solve_qp: offsets size mismatch");

  QpSolution sol;
  sol.multipliers = Vector::Zero(m);

  Eigen::LLT<Matrix> hllt(qp.hessian);
  if (hllt.info() != Eigen::Success) throw InvalidArgument("solve_qp: H must be SPD");
  sol.p = -hllt.solve(qp.gradient);
  if (m == 0) return sol;

  std::vector<int> active;
  Vector u_active(0);
  const double feas_scale = 1.0 + qp.offsets.cwiseAbs().maxCoeff();
  const int max_pivots = 50 * static_cast<int>(m + 1);

  auto violation = [&](int j) { return qp.offsets[j] + qp.normals.row(j).dot(sol.p); };
  auto drop = [&](int slot) {
    active.erase(active.begin() + slot);
    Vector shrunk(active.size());
    Eigen::Index w = 0;
    for (Eigen::Index i = 0; i < u_active.size(); ++i) {
      if (i != slot) shrunk[w++] = u_active[i];
    }
    u_active = shrunk;
  };

  while (true) {
    // Most violated inactive constraint.
    int j = -1;
    double worst = tol * feas_scale;
    for (int i = 0; i < m; ++i) {
      if (std::find(active.begin(), active.end(), i) != active.end()) continue;
      const double v = violation(i);
      if (v > worst) {
        worst = v;
        j = i;
      }
    }
    if (j < 0) break;  // feasible and dual-feasible: done

    double pending = 0.0;  // multiplier accumulated for j across partial steps
    while (true) {
      if (++sol.pivots > max_pivots) {
        sol.status = QpSolution::Status::max_pivots;
        return sol;
      }
      const Vector a = qp.normals.row(j).transpose();
      const Vector hinv_a = hllt.solve(a);
      Vector r(active.size());
      Vector z = hinv_a;
      if (!active.empty()) {
        Matrix nact(k, active.size());
        for (std::size_t i = 0; i < active.size(); ++i) {
          nact.col(static_cast<Eigen::Index>(i)) = qp.normals.row(active[i]).transpose();
        }
        const Matrix hinv_n = hllt.solve(nact);
        const Matrix gram = nact.transpose() * hinv_n;
        r = gram.ldlt().solve(nact.transpose() * hinv_a);
        z = hinv_a - hinv_n * r;
      }
      const double curvature = a.dot(z);  // = z^T H z >= 0

      // Dual blocking step among active multipliers decreasing along r.
      double t1 = std::numeric_limits<double>::infinity();
      int blocker = -1;
      for (std::size_t i = 0; i < active.size(); ++i) {
        if (r[static_cast<Eigen::Index>(i)] > tol) {
          const double t = u_active[static_cast<Eigen::Index>(i)] / r[static_cast<Eigen::Index>(i)];
          if (t < t1) {
            t1 = t;
            blocker = static_cast<int>(i);
          }
        }
      }

      if (curvature <= tol * (1.0 + hinv_a.norm())) {
        // Constraint normal dependent on the active set: dual-only step.
        if (blocker < 0) {
          sol.status = QpSolution::Status::infeasible;
          sol.infeasibility_certificate = Vector::Zero(m);
          for (std::size_t i = 0; i < active.size(); ++i) {
            sol.infeasibility_certificate[active[i]] =
                std::max(0.0, -r[static_cast<Eigen::Index>(i)]);
          }
          sol.infeasibility_certificate[j] = 1.0;
          return sol;
        }
        u_active -= t1 * r;
        pending += t1;
        drop(blocker);
        continue;
      }

      const double t2 = violation(j) / curvature;  // full step to feasibility of j
      if (t2 <= t1) {
        sol.p -= t2 * z;
        if (!active.empty()) u_active -= t2 * r;
        pending += t2;
        active.push_back(j);
        Vector grown(active.size());
        grown.head(u_active.size()) = u_active;
        grown[static_cast<Eigen::Index>(active.size()) - 1] = pending;
        u_active = grown;
        break;
      }
      sol.p -= t1 * z;
      u_active -= t1 * r;
      pending += t1;
      drop(blocker);
    }
  }

  for (std::size_t i = 0; i < active.size(); ++i) {
    sol.multipliers[active[i]] = std::max(0.0, u_active[static_cast<Eigen::Index>(i)]);
  }
  return sol;
}

}  // namespace robwc
