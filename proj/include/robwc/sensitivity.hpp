#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <limits>

#include "robwc/analysis.hpp"
#include "robwc/core.hpp"
#include "robwc/lfr.hpp"

namespace robwc {

// Gradients are taken in the minimization convention of the worst-case
// problems: h2 = -||T||_2^2, hinf = -||T||_inf, a = -alpha. Complex
// intermediates never leave this header; entries are Re(.) projections.

struct SubgradientVector {
  Vector values;
  enum class Certificate { unique_active, multiple_active } certificate =
      Certificate::unique_active;
};

namespace detail {

// Sum of the diagonal entries of m over the repetition range of parameter i,
// i.e. Tr(m * Delta_i) for the diagonal selector Delta_i.
inline double block_trace(const Matrix& m, const BlockStructure& blocks, int i) {
  double s = 0.0;
  for (int j = 0; j < blocks.repetitions(i); ++j) {
    const int d = blocks.offset(i) + j;
    s += m(d, d);
  }
  return s;
}

struct LftFactors {
  Matrix delta;
  Matrix left;   // (I - Delta*D11)^{-1}
  Matrix right;  // (I - D11*Delta)^{-1}
};

inline LftFactors lft_factors(const LfrPlant& plant, const DeltaVector& delta) {
  LftFactors f;
  f.delta = expand_delta(delta, plant.blocks);
  const auto m = f.delta.rows();
  Eigen::PartialPivLU<Matrix> left(Matrix::Identity(m, m) - f.delta * plant.D11);
  Eigen::PartialPivLU<Matrix> right(Matrix::Identity(m, m) - plant.D11 * f.delta);
  if (m > 0 && (left.rcond() < detail::kLftRcondMin || right.rcond() < detail::kLftRcondMin)) {
    throw IllPosedLft("sensitivity: LFT ill-posed at requested delta");
  }
  f.left = left.solve(Matrix::Identity(m, m));
  f.right = right.solve(Matrix::Identity(m, m));
  return f;
}

}  // namespace detail

// Gradient of h2(delta) = -||T_zw(delta)||_2^2 through the tilde-form chain
// rule: dh2 = Tr(grad_tilde^T (I-Delta D11)^{-1} dDelta (I-D11 Delta)^{-1}).
inline SubgradientVector grad_h2(const LfrPlant& plant, const DeltaVector& delta,
                                 const ClosedLoop& closed, const H2Result& h2res) {
  require(closed.well_posed, "grad_h2: closed loop not well posed");
  const auto f = detail::lft_factors(plant, delta);
  const Matrix& x = h2res.gramian_x;
  const Matrix& y = h2res.gramian_y;
  const Matrix grad_tilde =
      -2.0 * (plant.B1.transpose() * x + plant.D21.transpose() * closed.C) * y *
          plant.C1.transpose() -
      2.0 * plant.B1.transpose() * x * closed.B * plant.D12.transpose();
  const Matrix m = f.right * grad_tilde.transpose() * f.left;
  SubgradientVector out;
  out.values.resize(plant.parameter_count());
  for (int i = 0; i < plant.parameter_count(); ++i) {
    out.values[i] = detail::block_trace(m, plant.blocks, i);
  }
  out.certificate = SubgradientVector::Certificate::unique_active;
  return out;
}

// Subgradient of hinf(delta) = -||T_zw(delta)||_inf at one active frequency.
// Active branch selection: largest sigma, ties broken by lowest frequency.
// Any active branch yields a valid subgradient of the upper-C1 function.
inline SubgradientVector subgrad_hinf(const LfrPlant& plant, const DeltaVector& delta,
                                      const HinfResult& hinfres) {
  require(!hinfres.active.empty(), "subgrad_hinf: no active frequency recorded");
  const ActiveFrequency& af = hinfres.active.front();  // sorted worst-first
  const auto f = detail::lft_factors(plant, delta);
  const ClosedLoop closed = close_loop(plant, delta);
  require(closed.well_posed, "subgrad_hinf: closed loop not well posed");

  // Star-product transfers between the q/p ports and the w/z ports after the
  // uncertainty loop is closed.
  ComplexMatrix t_qw, t_zp;
  const ComplexMatrix gleft = f.left.cast<std::complex<double>>();
  const ComplexMatrix gright = f.right.cast<std::complex<double>>();
  if (std::isinf(af.omega) || plant.state_count() == 0) {
    t_qw = gright * plant.D12.cast<std::complex<double>>();
    t_zp = plant.D21.cast<std::complex<double>>() * gleft;
  } else {
    ComplexMatrix res = -closed.A.cast<std::complex<double>>();
    res.diagonal().array() += std::complex<double>(0.0, af.omega);
    Eigen::PartialPivLU<ComplexMatrix> lu(res);
    t_qw = gright * (plant.C1.cast<std::complex<double>>() *
                         lu.solve(closed.B.cast<std::complex<double>>()) +
                     plant.D12.cast<std::complex<double>>());
    t_zp = (closed.C.cast<std::complex<double>>() *
                lu.solve(plant.B1.cast<std::complex<double>>()) +
            plant.D21.cast<std::complex<double>>()) *
           gleft;
  }
  const Matrix m =
      (t_qw * af.right * af.left.adjoint() * t_zp).real();
  SubgradientVector out;
  out.values.resize(plant.parameter_count());
  for (int i = 0; i < plant.parameter_count(); ++i) {
    out.values[i] = -detail::block_trace(m, plant.blocks, i);
  }
  out.certificate = (hinfres.active.size() == 1 && af.multiplicity == 1)
                        ? SubgradientVector::Certificate::unique_active
                        : SubgradientVector::Certificate::multiple_active;
  return out;
}

// Gradient of a(delta) = -alpha(A(delta)) at a simple active eigenvalue
// (largest real part, ties by smallest |Im|). Defective candidates are
// skipped; with none left the caller must fall back to derivative-free
// progress.
inline SubgradientVector grad_abscissa(const LfrPlant& plant, const DeltaVector& delta,
                                       const AbscissaResult& absres) {
  const ActiveEigenvalue* chosen = nullptr;
  for (const auto& ae : absres.active) {
    if (ae.simple) {
      chosen = &ae;
      break;
    }
  }
  if (!chosen) {
    throw NonSimpleActiveEigenvalue("grad_abscissa: all active eigenvalues defective");
  }
  const auto f = detail::lft_factors(plant, delta);
  const Matrix m =
      (f.right.cast<std::complex<double>>() * plant.C1.cast<std::complex<double>>() *
       chosen->right * chosen->left.adjoint() * plant.B1.cast<std::complex<double>>() *
       f.left.cast<std::complex<double>>())
          .real();
  SubgradientVector out;
  out.values.resize(plant.parameter_count());
  for (int i = 0; i < plant.parameter_count(); ++i) {
    out.values[i] = -detail::block_trace(m, plant.blocks, i);
  }
  out.certificate = absres.active.size() == 1
                        ? SubgradientVector::Certificate::unique_active
                        : SubgradientVector::Certificate::multiple_active;
  return out;
}

// Central finite differences; the independent oracle for the analytic
// gradients above. Default step balances truncation and round-off on
// unit-scaled parameters.
inline Vector fd_gradient(const std::function<double(const DeltaVector&)>& f,
                          const DeltaVector& x, double step = 1e-6) {
  Vector g(x.size());
  DeltaVector p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    p[i] = xi + step;
    const double fp = f(p);
    p[i] = xi - step;
    const double fm = f(p);
    p[i] = xi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

}  // namespace robwc
