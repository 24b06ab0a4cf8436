#include "robwc/sensitivity.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "robwc/rng.hpp"
#include "support/oracles.hpp"

namespace robwc {
namespace {

LfrPlant random_lfr(Rng& rng, int n, const BlockStructure& blocks, int nw, int nz,
                    bool h2_mode) {
  const int m = blocks.total_size();
  auto rand_mat = [&](int r, int c, double scale) {
    Matrix out(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) out(i, j) = scale * rng.uniform(-1, 1);
    }
    return out;
  };
  LfrPlant p;
  p.A1 = rand_mat(n, n, 1.0);
  p.A1 -= (spectral_abscissa(p.A1).value + rng.uniform(1.0, 2.0)) * Matrix::Identity(n, n);
  p.B1 = rand_mat(n, m, 0.4);
  p.B2 = rand_mat(n, nw, 1.0);
  p.C1 = rand_mat(m, n, 0.4);
  p.C2 = rand_mat(nz, n, 1.0);
  p.D11 = rand_mat(m, m, 0.2);
  p.D12 = h2_mode ? Matrix::Zero(m, nw) : rand_mat(m, nw, 0.3);
  p.D21 = rand_mat(nz, m, 0.3);
  p.D22 = Matrix::Zero(nz, nw);
  p.blocks = blocks;
  p.validate();
  return p;
}

double h2_objective(const LfrPlant& p, const DeltaVector& d) {
  ClosedLoop cl = close_loop(p, d);
  if (!cl.well_posed) throw IllPosedLft("ill-posed");
  return -h2_norm_sq(to_statespace(cl)).value_sq;
}

double hinf_objective(const LfrPlant& p, const DeltaVector& d) {
  ClosedLoop cl = close_loop(p, d);
  if (!cl.well_posed) throw IllPosedLft("ill-posed");
  return -hinf_norm(to_statespace(cl), 1e-9).value;
}

double abscissa_objective(const LfrPlant& p, const DeltaVector& d) {
  ClosedLoop cl = close_loop(p, d);
  if (!cl.well_posed) throw IllPosedLft("ill-posed");
  return -spectral_abscissa(cl.A).value;
}

TEST(FdGradient, ExactOnLinearFunction) {
  Vector a(3);
  a << 1.0, -2.0, 0.5;
  auto f = [&](const DeltaVector& x) { return a.dot(x); };
  Vector g = fd_gradient(f, Vector::Zero(3));
  EXPECT_LE((g - a).norm(), 1e-9);
}

TEST(FdGradient, QuadraticAtUnitVector) {
  auto f = [](const DeltaVector& x) { return x.squaredNorm(); };
  Vector e1 = Vector::Zero(3);
  e1[0] = 1.0;
  Vector g = fd_gradient(f, e1);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 0.0, 1e-8);
  EXPECT_NEAR(g[2], 0.0, 1e-8);
}

TEST(GradH2, ScalarPlantAnalytic) {
  // A(delta) = -1 + delta, B = C = 1: h2(delta) = -1/(2(1-delta)).
  LfrPlant p;
  p.A1 = Matrix::Constant(1, 1, -1.0);
  p.B1 = Matrix::Constant(1, 1, 1.0);
  p.B2 = Matrix::Constant(1, 1, 1.0);
  p.C1 = Matrix::Constant(1, 1, 1.0);
  p.C2 = Matrix::Constant(1, 1, 1.0);
  p.D11 = Matrix::Zero(1, 1);
  p.D12 = Matrix::Zero(1, 1);
  p.D21 = Matrix::Zero(1, 1);
  p.D22 = Matrix::Zero(1, 1);
  p.blocks = BlockStructure({{"d", 1}});
  const Vector delta = Vector::Zero(1);
  ClosedLoop cl = close_loop(p, delta);
  H2Result h2 = h2_norm_sq(to_statespace(cl));
  SubgradientVector g = grad_h2(p, delta, cl, h2);
  EXPECT_NEAR(g.values[0], -0.5, 1e-12);
}

TEST(GradH2, UnusedParameterHasZeroComponent) {
  Rng rng(101);
  BlockStructure blocks({{"used", 1}, {"unused", 1}});
  LfrPlant p = random_lfr(rng, 3, blocks, 1, 1, /*h2_mode=*/true);
  // Cut every coupling of the second block.
  p.B1.col(1).setZero();
  p.C1.row(1).setZero();
  p.D11.col(1).setZero();
  p.D11.row(1).setZero();
  p.D21.col(1).setZero();
  p.D12.row(1).setZero();
  Vector delta(2);
  delta << 0.2, -0.4;
  ClosedLoop cl = close_loop(p, delta);
  SubgradientVector g = grad_h2(p, delta, cl, h2_norm_sq(to_statespace(cl)));
  EXPECT_NEAR(g.values[1], 0.0, 1e-14);
}

TEST(GradH2, MatchesFiniteDifferences) {
  Rng rng(103);
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    BlockStructure blocks(
        {{"a", 1}, {"b", 1 + static_cast<int>(rng.next_below(2))}, {"c", 1}});
    LfrPlant p = random_lfr(rng, 4, blocks, 2, 2, /*h2_mode=*/true);
    Vector delta(3);
    for (int i = 0; i < 3; ++i) delta[i] = 0.5 * rng.uniform(-1, 1);
    ClosedLoop cl = close_loop(p, delta);
    if (!cl.well_posed || spectral_abscissa(cl.A).value >= -0.05) continue;
    SubgradientVector g = grad_h2(p, delta, cl, h2_norm_sq(to_statespace(cl)));
    Vector fd = fd_gradient([&](const DeltaVector& d) { return h2_objective(p, d); }, delta);
    EXPECT_LE((g.values - fd).norm(), 1e-5 * std::max(1.0, fd.norm())) << "trial " << trial;
    ++checked;
  }
  EXPECT_GE(checked, 8);
}

TEST(SubgradHinf, PureGainPlant) {
  // T(delta) = 1 + delta via the feedthrough path: hinf = -(1+delta).
  LfrPlant p;
  p.A1 = Matrix(0, 0);
  p.B1 = Matrix(0, 1);
  p.B2 = Matrix(0, 1);
  p.C1 = Matrix(1, 0);
  p.C2 = Matrix(1, 0);
  p.D11 = Matrix::Zero(1, 1);
  p.D12 = Matrix::Constant(1, 1, 1.0);
  p.D21 = Matrix::Constant(1, 1, 1.0);
  p.D22 = Matrix::Constant(1, 1, 1.0);
  p.blocks = BlockStructure({{"d", 1}});
  Vector delta(1);
  delta << 0.3;
  ClosedLoop cl = close_loop(p, delta);
  HinfResult hr = hinf_norm(to_statespace(cl));
  EXPECT_NEAR(hr.value, 1.3, 1e-12);
  SubgradientVector g = subgrad_hinf(p, delta, hr);
  EXPECT_NEAR(g.values[0], -1.0, 1e-12);
}

TEST(SubgradHinf, StructurallyAbsentParameterIsZero) {
  Rng rng(107);
  BlockStructure blocks({{"in", 1}, {"out", 1}});
  LfrPlant p = random_lfr(rng, 3, blocks, 1, 1, /*h2_mode=*/false);
  p.B1.col(1).setZero();
  p.C1.row(1).setZero();
  p.D11.col(1).setZero();
  p.D11.row(1).setZero();
  p.D21.col(1).setZero();
  p.D12.row(1).setZero();
  Vector delta(2);
  delta << 0.1, 0.6;
  ClosedLoop cl = close_loop(p, delta);
  HinfResult hr = hinf_norm(to_statespace(cl));
  SubgradientVector g = subgrad_hinf(p, delta, hr);
  EXPECT_NEAR(g.values[1], 0.0, 1e-12);
}

TEST(SubgradHinf, MatchesFiniteDifferencesAtSmoothPoints) {
  Rng rng(109);
  int checked = 0;
  for (int trial = 0; trial < 30 && checked < 8; ++trial) {
    BlockStructure blocks({{"a", 1}, {"b", 1}, {"c", 1}});
    LfrPlant p = random_lfr(rng, 4, blocks, 2, 2, /*h2_mode=*/false);
    Vector delta(3);
    for (int i = 0; i < 3; ++i) delta[i] = 0.5 * rng.uniform(-1, 1);
    ClosedLoop cl = close_loop(p, delta);
    if (!cl.well_posed || spectral_abscissa(cl.A).value >= -0.05) continue;
    HinfResult hr = hinf_norm(to_statespace(cl), 1e-9);
    if (hr.active.size() != 1 || hr.active.front().multiplicity != 1) continue;
    SubgradientVector g = subgrad_hinf(p, delta, hr);
    Vector fd = fd_gradient([&](const DeltaVector& d) { return hinf_objective(p, d); }, delta);
    EXPECT_LE((g.values - fd).norm(), std::max(1e-4 * fd.norm(), 1e-7) + 1e-4)
        << "trial " << trial;
    ++checked;
  }
  EXPECT_GE(checked, 6);
}

TEST(SubgradHinf, NonsmoothPointReturnsActiveBranchGradient) {
  // Two decoupled resonant channels with equal peaks: the subgradient must
  // coincide with one of the two single-branch gradients.
  auto resonator = [](double wn, double zeta) {
    Matrix a(2, 2);
    a << 0, 1, -wn * wn, -2 * zeta * wn;
    return a;
  };
  LfrPlant p;
  const int n = 4, m = 2, nw = 2, nz = 2;
  p.A1 = Matrix::Zero(n, n);
  p.A1.topLeftCorner(2, 2) = resonator(1.0, 0.05);
  p.A1.bottomRightCorner(2, 2) = resonator(2.0, 0.05);
  p.B1 = Matrix::Zero(n, m);
  p.B1(1, 0) = 1.0;
  p.B1(3, 1) = 1.0;
  p.C1 = Matrix::Zero(m, n);
  p.C1(0, 0) = 0.2;
  p.C1(1, 2) = 0.2;
  p.B2 = Matrix::Zero(n, nw);
  p.B2(1, 0) = 1.0;
  p.B2(3, 1) = 4.0;  // match DC gains so the peaks can tie
  p.C2 = Matrix::Zero(nz, n);
  p.C2(0, 0) = 1.0;
  p.C2(1, 2) = 1.0;
  p.D11 = Matrix::Zero(m, m);
  p.D12 = Matrix::Zero(m, nw);
  p.D21 = Matrix::Zero(nz, m);
  p.D22 = Matrix::Zero(nz, nw);
  p.blocks = BlockStructure({{"k1", 1}, {"k2", 1}});
  p.validate();

  auto peak = [&](int channel, const Vector& d) {
    LfrPlant sub = p.select_channel({channel}, {channel});
    ClosedLoop scl = close_loop(sub, d);
    return hinf_norm(to_statespace(scl), 1e-10).value;
  };
  Vector delta = Vector::Zero(2);
  double lo = -0.5, hi = 0.5;
  for (int it = 0; it < 60; ++it) {
    delta[1] = 0.5 * (lo + hi);
    // The channel-1 peak grows with delta[1] (softening stiffness).
    if (peak(1, delta) < peak(0, delta)) {
      lo = delta[1];
    } else {
      hi = delta[1];
    }
  }
  ASSERT_NEAR(peak(0, delta), peak(1, delta), 1e-6 * peak(0, delta));

  ClosedLoop cl = close_loop(p, delta);
  HinfResult hr = hinf_norm(to_statespace(cl), 1e-9);
  SubgradientVector g = subgrad_hinf(p, delta, hr);

  Vector branch[2];
  for (int ch = 0; ch < 2; ++ch) {
    LfrPlant sub = p.select_channel({ch}, {ch});
    ClosedLoop scl = close_loop(sub, delta);
    branch[ch] = subgrad_hinf(sub, delta, hinf_norm(to_statespace(scl), 1e-9)).values;
  }
  const double d0 = (g.values - branch[0]).norm();
  const double d1 = (g.values - branch[1]).norm();
  const double scale = std::max(branch[0].norm(), branch[1].norm());
  EXPECT_LE(std::min(d0, d1), 1e-4 * scale);
  EXPECT_GE((branch[0] - branch[1]).norm(), 1e-2 * scale);
}

TEST(GradAbscissa, ScalarPlantAnalytic) {
  LfrPlant p;
  p.A1 = Matrix::Constant(1, 1, -1.0);
  p.B1 = Matrix::Constant(1, 1, 1.0);
  p.B2 = Matrix::Constant(1, 1, 1.0);
  p.C1 = Matrix::Constant(1, 1, 1.0);
  p.C2 = Matrix::Constant(1, 1, 1.0);
  p.D11 = Matrix::Zero(1, 1);
  p.D12 = Matrix::Zero(1, 1);
  p.D21 = Matrix::Zero(1, 1);
  p.D22 = Matrix::Zero(1, 1);
  p.blocks = BlockStructure({{"d", 1}});
  const Vector delta = Vector::Zero(1);
  ClosedLoop cl = close_loop(p, delta);
  SubgradientVector g = grad_abscissa(p, delta, spectral_abscissa(cl.A));
  EXPECT_NEAR(g.values[0], -1.0, 1e-10);
}

TEST(GradAbscissa, OppositeSignEntriesCancel) {
  // One repeated parameter enters the dynamics twice with opposite signs;
  // the abscissa is even in delta so its derivative at 0 vanishes.
  LfrPlant p;
  p.A1 = (Matrix(2, 2) << -1.0, 0.3, 0.3, -1.0).finished();
  p.B1 = (Matrix(2, 2) << 1.0, 0.0, 0.0, -1.0).finished();
  p.C1 = (Matrix(2, 2) << 1.0, 0.0, 0.0, 1.0).finished();
  p.B2 = Matrix::Identity(2, 2);
  p.C2 = Matrix::Identity(2, 2);
  p.D11 = Matrix::Zero(2, 2);
  p.D12 = Matrix::Zero(2, 2);
  p.D21 = Matrix::Zero(2, 2);
  p.D22 = Matrix::Zero(2, 2);
  p.blocks = BlockStructure({{"d", 2}});
  p.validate();
  const Vector delta = Vector::Zero(1);
  ClosedLoop cl = close_loop(p, delta);
  SubgradientVector g = grad_abscissa(p, delta, spectral_abscissa(cl.A));
  EXPECT_NEAR(g.values[0], 0.0, 1e-9);
}

TEST(GradAbscissa, MatchesFiniteDifferencesAtSimpleEigs) {
  Rng rng(113);
  int checked = 0;
  for (int trial = 0; trial < 30 && checked < 8; ++trial) {
    BlockStructure blocks({{"a", 1}, {"b", 1}, {"c", 1}});
    LfrPlant p = random_lfr(rng, 6, blocks, 1, 1, /*h2_mode=*/false);
    Vector delta(3);
    for (int i = 0; i < 3; ++i) delta[i] = 0.5 * rng.uniform(-1, 1);
    ClosedLoop cl = close_loop(p, delta);
    if (!cl.well_posed) continue;
    AbscissaResult ar = spectral_abscissa(cl.A);
    if (ar.active.size() != 1 || !ar.active.front().simple) continue;
    SubgradientVector g = grad_abscissa(p, delta, ar);
    Vector fd =
        fd_gradient([&](const DeltaVector& d) { return abscissa_objective(p, d); }, delta);
    EXPECT_LE((g.values - fd).norm(), 1e-5 * std::max(1.0, fd.norm())) << "trial " << trial;
    ++checked;
  }
  EXPECT_GE(checked, 6);
}

TEST(GradAbscissa, AllDefectiveThrows) {
  // Jordan block: the only active eigenvalue is defective.
  LfrPlant p;
  p.A1 = (Matrix(2, 2) << 0.0, 1.0, 0.0, 0.0).finished();
  p.B1 = Matrix::Zero(2, 1);
  p.C1 = Matrix::Zero(1, 2);
  p.B2 = Matrix::Zero(2, 1);
  p.C2 = Matrix::Zero(1, 2);
  p.D11 = Matrix::Zero(1, 1);
  p.D12 = Matrix::Zero(1, 1);
  p.D21 = Matrix::Zero(1, 1);
  p.D22 = Matrix::Zero(1, 1);
  p.blocks = BlockStructure({{"d", 1}});
  const Vector delta = Vector::Zero(1);
  ClosedLoop cl = close_loop(p, delta);
  AbscissaResult ar = spectral_abscissa(cl.A);
  EXPECT_THROW(grad_abscissa(p, delta, ar), NonSimpleActiveEigenvalue);
}

}  // namespace
}  // namespace robwc
