#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "robwc/core.hpp"
#include "robwc/lfr.hpp"

namespace robwc {

struct StateSpace {
  Matrix A, B, C, D;

  int order() const { return static_cast<int>(A.rows()); }

  void validate() const {
    require(A.rows() == A.cols(), "A must be square");
    require(B.rows() == A.rows(), "B row count mismatch");
    require(C.cols() == A.rows(), "C column count mismatch");
    require(D.rows() == C.rows() && D.cols() == B.cols(), "D dimension mismatch");
  }
};

inline StateSpace to_statespace(const ClosedLoop& cl) {
  require(cl.well_posed, "to_statespace: closed loop is not well posed");
  return StateSpace{cl.A, cl.B, cl.C, cl.D};
}

// Frequency response C (jw I - A)^{-1} B + D; omega = +inf returns D.
inline ComplexMatrix freq_response(const StateSpace& ss, double omega) {
  if (ss.order() == 0 || std::isinf(omega)) return ss.D.cast<std::complex<double>>();
  const auto n = ss.A.rows();
  ComplexMatrix m = -ss.A.cast<std::complex<double>>();
  m.diagonal().array() += std::complex<double>(0.0, omega);
  return ss.C.cast<std::complex<double>>() * m.partialPivLu().solve(ss.B.cast<std::complex<double>>()) +
         ss.D.cast<std::complex<double>>();
}

// ---------------------------------------------------------------------------
// Spectral abscissa with active-eigenvalue data.
// ---------------------------------------------------------------------------

struct ActiveEigenvalue {
  std::complex<double> value;
  ComplexVector right;  // A v = lambda v
  ComplexVector left;   // u^H A = lambda u^H, scaled so u^H v = 1 when simple
  bool simple = false;
  bool conjugate_pair = false;
};

struct AbscissaResult {
  double value = 0.0;
  std::vector<ActiveEigenvalue> active;
  double tolerance = 0.0;
};

inline AbscissaResult spectral_abscissa(const Matrix& a, double active_tol = 1e-8) {
  require(a.rows() == a.cols(), "spectral_abscissa: A must be square");
  AbscissaResult out;
  out.tolerance = active_tol;
  const auto n = a.rows();
  if (n == 0) {
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  Eigen::EigenSolver<Matrix> right(a);
  if (right.info() != Eigen::Success) throw NumericalFailure("eigensolver failed");
  Eigen::EigenSolver<Matrix> left(a.transpose().eval());
  if (left.info() != Eigen::Success) throw NumericalFailure("eigensolver failed (A^T)");

  const ComplexVector lam = right.eigenvalues();
  out.value = lam.real().maxCoeff();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  const double cluster_tol = 1e-7 * scale;

  for (Eigen::Index i = 0; i < n; ++i) {
    if (lam[i].real() < out.value - active_tol) continue;
    // Conjugate pairs reported once through the Im >= 0 representative.
    if (lam[i].imag() < -cluster_tol) continue;

    ActiveEigenvalue ae;
    ae.value = lam[i];
    ae.conjugate_pair = lam[i].imag() > cluster_tol;
    ae.right = right.eigenvectors().col(i);

    int multiplicity = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(lam[j] - lam[i]) <= cluster_tol) ++multiplicity;
    }

    // Match a left eigenvector by eigenvalue proximity on A^T; w^T A = lambda w^T,
    // so u = conj(w) once w is rescaled to w^T v = 1.
    Eigen::Index best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = std::abs(left.eigenvalues()[j] - lam[i]);
      if (d < best_dist) {
        best_dist = d;
        best = j;
      }
    }
    ComplexVector w = left.eigenvectors().col(best);
    const std::complex<double> overlap = w.transpose() * ae.right;
    ae.simple = multiplicity == 1 && best_dist <= 1e-6 * scale &&
                std::abs(overlap) > 1e-10 * w.norm() * ae.right.norm();
    if (ae.simple) {
      w /= overlap;
      ae.left = w.conjugate();
    } else {
      ae.left = w.conjugate();
    }
    out.active.push_back(std::move(ae));
  }
  // Worst first, then by |Im| for a deterministic selection order downstream.
  std::sort(out.active.begin(), out.active.end(),
            [](const ActiveEigenvalue& x, const ActiveEigenvalue& y) {
              if (x.value.real() != y.value.real()) return x.value.real() > y.value.real();
              return std::abs(x.value.imag()) < std::abs(y.value.imag());
            });
  return out;
}

// ---------------------------------------------------------------------------
// Lyapunov equation A^T X + X A + Q = 0, dense Kronecker solve.
// ---------------------------------------------------------------------------

inline Matrix solve_lyapunov(const Matrix& a, const Matrix& q) {
  require(a.rows() == a.cols(), "solve_lyapunov: A must be square");
  require(q.rows() == q.cols() && q.rows() == a.rows(), "solve_lyapunov: Q dimension mismatch");
  require(q.size() == 0 || (q - q.transpose()).norm() <= 1e-10 * (1.0 + q.norm()),
          "solve_lyapunov: Q must be symmetric");
  const auto n = a.rows();
  if (n == 0) return Matrix(0, 0);

  // vec(A^T X) = (I (x) A^T) vec(X), vec(X A) = (A^T (x) I) vec(X).
  Matrix k = Matrix::Zero(n * n, n * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k.block(j * n, j * n, n, n) += a.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index l = 0; l < n; ++l) k(j * n + i, l * n + i) += a(l, j);
    }
  }
  Eigen::PartialPivLU<Matrix> lu(k);
  if (lu.rcond() < 1e-14) {
    throw NumericalFailure("solve_lyapunov: operator nearly singular (eigenvalues close to +/- pairing)");
  }
  Vector rhs(n * n);
  for (Eigen::Index j = 0; j < n; ++j) rhs.segment(j * n, n) = -q.col(j);
  const Vector x = lu.solve(rhs);
  Matrix X(n, n);
  for (Eigen::Index j = 0; j < n; ++j) X.col(j) = x.segment(j * n, n);
  X = 0.5 * (X + X.transpose()).eval();

  const double residual = (a.transpose() * X + X * a + q).norm();
  if (residual > 1e-8 * std::max(1e-300, q.norm())) {
    throw NumericalFailure("solve_lyapunov: residual above tolerance");
  }
  return X;
}

// ---------------------------------------------------------------------------
// Squared H2 norm with both gramians and the trace cross-check.
// ---------------------------------------------------------------------------

struct H2Result {
  double value_sq = 0.0;
  Matrix gramian_x, gramian_y;
};

inline H2Result h2_norm_sq(const StateSpace& ss) {
  ss.validate();
  if (ss.D.size() > 0 && !ss.D.isZero(0.0)) {
    throw NonzeroFeedthrough("h2_norm_sq: D must be zero");
  }
  H2Result out;
  if (ss.order() == 0) return out;
  if (spectral_abscissa(ss.A).value >= 0.0) {
    throw UnstableSystem("h2_norm_sq: A is not Hurwitz");
  }
  out.gramian_x = solve_lyapunov(ss.A, Matrix(ss.C.transpose() * ss.C));
  out.gramian_y = solve_lyapunov(ss.A.transpose(), Matrix(ss.B * ss.B.transpose()));
  const double via_x = (ss.B.transpose() * out.gramian_x * ss.B).trace();
  const double via_y = (ss.C * out.gramian_y * ss.C.transpose()).trace();
  if (std::abs(via_x - via_y) > 1e-8 * std::max({1.0, via_x, via_y})) {
    throw NumericalFailure("h2_norm_sq: gramian trace formulas disagree");
  }
  out.value_sq = via_x;
  return out;
}

// ---------------------------------------------------------------------------
// H-infinity norm by gamma bisection on the Hamiltonian imaginary-axis test.
// ---------------------------------------------------------------------------

struct ActiveFrequency {
  double omega = 0.0;  // rad/s, +inf for the D-term supremum
  double sigma = 0.0;
  ComplexVector left;   // output-side singular vector
  ComplexVector right;  // input-side singular vector
  int multiplicity = 1;
};

enum class HinfMethod { bisection, grid };

struct HinfResult {
  double value = 0.0;
  std::vector<ActiveFrequency> active;
  HinfMethod method = HinfMethod::bisection;
  double rel_tol = 0.0;
  int bisection_steps = 0;
};

namespace detail {

inline double sigma_max(const ComplexMatrix& m) {
  if (m.size() == 0) return 0.0;
  return m.jacobiSvd().singularValues()[0];
}

struct ImagAxisTest {
  bool crossing = false;
  std::vector<double> omegas;
};

// Imaginary-axis eigenvalues of the gamma-Hamiltonian; their frequencies
// bracket the intervals where sigma_max(T(jw)) exceeds gamma.
inline ImagAxisTest hamiltonian_crossings(const StateSpace& ss, double gamma) {
  const auto n = ss.A.rows();
  const auto nw = ss.B.cols();
  const auto nz = ss.C.rows();
  Matrix r = gamma * gamma * Matrix::Identity(nw, nw) - ss.D.transpose() * ss.D;
  Matrix s = gamma * gamma * Matrix::Identity(nz, nz) - ss.D * ss.D.transpose();
  Eigen::PartialPivLU<Matrix> rlu(r), slu(s);
  Matrix rinv_dt_c = rlu.solve(ss.D.transpose() * ss.C);
  Matrix h(2 * n, 2 * n);
  h.topLeftCorner(n, n) = ss.A + ss.B * rinv_dt_c;
  h.topRightCorner(n, n) = gamma * ss.B * rlu.solve(ss.B.transpose());
  h.bottomLeftCorner(n, n) = -gamma * ss.C.transpose() * slu.solve(ss.C);
  h.bottomRightCorner(n, n) = -h.topLeftCorner(n, n).transpose();

  Eigen::EigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) throw NumericalFailure("Hamiltonian eigensolver failed");
  ImagAxisTest out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const auto lam = es.eigenvalues()[i];
    if (std::abs(lam.real()) <= 1e-8 * (1.0 + std::abs(lam.imag()))) {
      out.crossing = true;
      if (lam.imag() >= 0.0) out.omegas.push_back(lam.imag());
    }
  }
  std::sort(out.omegas.begin(), out.omegas.end());
  return out;
}

}  // namespace detail

inline HinfResult hinf_norm(const StateSpace& ss, double rel_tol = 1e-6) {
  ss.validate();
  HinfResult out;
  out.rel_tol = rel_tol;
  const double inf = std::numeric_limits<double>::infinity();

  auto record = [&](double omega) {
    const ComplexMatrix t = freq_response(ss, omega);
    ActiveFrequency af;
    af.omega = omega;
    if (t.size() == 0) return af;
    Eigen::JacobiSVD<ComplexMatrix> svd(t, Eigen::ComputeThinU | Eigen::ComputeThinV);
    af.sigma = svd.singularValues()[0];
    af.left = svd.matrixU().col(0);
    af.right = svd.matrixV().col(0);
    af.multiplicity = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
      if (svd.singularValues()[i] >= af.sigma * (1.0 - 1e-6)) ++af.multiplicity;
    }
    return af;
  };

  if (ss.order() == 0) {
    ActiveFrequency af = record(inf);
    out.value = af.sigma;
    out.method = HinfMethod::grid;
    out.active.push_back(std::move(af));
    return out;
  }

  const AbscissaResult stab = spectral_abscissa(ss.A);
  if (stab.value >= -1e-9) {
    throw UnstableSystem("hinf_norm: A is not (robustly) Hurwitz, abscissa = " +
                         std::to_string(stab.value));
  }

  // Lower bound: D term, DC gain, and log-spaced probes around the eigenvalue
  // frequency range.
  Eigen::EigenSolver<Matrix> es(ss.A);
  double wmin = inf, wmax = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double mag = std::abs(es.eigenvalues()[i]);
    if (mag > 1e-12) {
      wmin = std::min(wmin, mag);
      wmax = std::max(wmax, mag);
    }
  }
  if (!std::isfinite(wmin)) wmin = 1e-2;
  if (wmax <= 0.0) wmax = 1e2;
  std::vector<double> probes{0.0, inf};
  const int n_probes = 20;
  const double lo_exp = std::log10(wmin) - 2.0, hi_exp = std::log10(wmax) + 2.0;
  for (int i = 0; i < n_probes; ++i) {
    probes.push_back(std::pow(10.0, lo_exp + (hi_exp - lo_exp) * i / (n_probes - 1.0)));
  }
  double gamma_lo = 0.0;
  double best_probe = 0.0;
  for (double w : probes) {
    const double s = detail::sigma_max(freq_response(ss, w));
    if (s > gamma_lo) {
      gamma_lo = s;
      best_probe = w;
    }
  }
  if (gamma_lo <= 0.0) {
    // Identically zero transfer.
    out.value = 0.0;
    out.method = HinfMethod::grid;
    out.active.push_back(record(0.0));
    return out;
  }

  const double sigma_d = detail::sigma_max(ss.D.cast<std::complex<double>>());
  double lo = gamma_lo;
  double hi = 2.0 * lo;
  std::vector<double> last_crossings{best_probe};

  int growth = 0;
  while (true) {
    auto test = detail::hamiltonian_crossings(ss, hi);
    if (!test.crossing) break;
    if (!test.omegas.empty()) last_crossings = test.omegas;
    lo = hi;
    hi *= 2.0;
    if (++growth > 60) throw NoConvergence("hinf_norm: upper bound search failed");
  }
  int steps = 0;
  while (hi - lo > rel_tol * lo) {
    const double mid = 0.5 * (lo + hi);
    auto test = detail::hamiltonian_crossings(ss, mid);
    if (test.crossing) {
      if (!test.omegas.empty()) last_crossings = test.omegas;
      lo = mid;
    } else {
      hi = mid;
    }
    if (++steps > 200) throw NoConvergence("hinf_norm: bisection failed to converge");
  }
  out.bisection_steps = steps;
  out.value = 0.5 * (lo + hi);

  // Peak frequencies: crossing frequencies of the last passing gamma plus
  // midpoints of consecutive crossings, then the DC and D-term candidates.
  std::vector<double> candidates = last_crossings;
  for (std::size_t i = 0; i + 1 < last_crossings.size(); ++i) {
    candidates.push_back(0.5 * (last_crossings[i] + last_crossings[i + 1]));
  }
  candidates.push_back(0.0);
  candidates.push_back(best_probe);
  if (sigma_d >= out.value * (1.0 - rel_tol)) candidates.push_back(inf);

  std::vector<ActiveFrequency> evaluated;
  for (double w : candidates) {
    bool dup = false;
    for (const auto& af : evaluated) {
      if ((std::isinf(w) && std::isinf(af.omega)) ||
          std::abs(w - af.omega) <= 1e-9 * (1.0 + std::abs(w))) {
        dup = true;
        break;
      }
    }
    if (!dup) evaluated.push_back(record(w));
  }
  double best_sigma = 0.0;
  for (const auto& af : evaluated) best_sigma = std::max(best_sigma, af.sigma);
  // The bisection interval certifies the value; candidate evaluation can only
  // sharpen it from below.
  out.value = std::max(out.value, best_sigma);

  const double active_tol = out.value * 1e-6 + out.value * rel_tol;
  for (auto& af : evaluated) {
    if (af.sigma >= out.value - active_tol) out.active.push_back(af);
  }
  if (out.active.empty()) {
    // Keep the best candidate so callers always have singular vectors.
    auto best = std::max_element(evaluated.begin(), evaluated.end(),
                                 [](const ActiveFrequency& x, const ActiveFrequency& y) {
                                   return x.sigma < y.sigma;
                                 });
    out.active.push_back(*best);
  }
  std::sort(out.active.begin(), out.active.end(),
            [](const ActiveFrequency& x, const ActiveFrequency& y) {
              if (x.sigma != y.sigma) return x.sigma > y.sigma;
              return x.omega < y.omega;
            });
  return out;
}

}  // namespace robwc
