#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robwc/core.hpp"

#include "json.hpp"

namespace robwc {

// ---------------------------------------------------------------------------
// Uncertainty block structure: Delta = diag(delta_i * I_{n_i}).
// ---------------------------------------------------------------------------

struct UncertainBlock {
  std::string name;
  int repetitions = 1;
};

class BlockStructure {
 public:
  BlockStructure() = default;

  explicit BlockStructure(std::vector<UncertainBlock> entries)
      : entries_(std::move(entries)) {
    offsets_.reserve(entries_.size());
    int off = 0;
    for (const auto& b : entries_) {
      require(b.repetitions >= 1, "block '" + b.name + "': repetitions must be >= 1");
      offsets_.push_back(off);
      off += b.repetitions;
    }
    total_ = off;
  }

  int parameter_count() const { return static_cast<int>(entries_.size()); }
  int total_size() const { return total_; }
  const std::vector<UncertainBlock>& entries() const { return entries_; }
  int offset(int i) const { return offsets_[static_cast<std::size_t>(i)]; }
  int repetitions(int i) const { return entries_[static_cast<std::size_t>(i)].repetitions; }

  // Basis matrix dDelta/ddelta_i: identity on block i, zero elsewhere.
  Matrix basis(int i) const {
    require(i >= 0 && i < parameter_count(), "basis: block index out of range");
    Matrix d = Matrix::Zero(total_, total_);
    d.block(offset(i), offset(i), repetitions(i), repetitions(i)).setIdentity();
    return d;
  }

 private:
  std::vector<UncertainBlock> entries_;
  std::vector<int> offsets_;
  int total_ = 0;
};

inline Matrix expand_delta(const DeltaVector& delta, const BlockStructure& blocks) {
  require(delta.size() == blocks.parameter_count(),
          "expand_delta: delta length does not match block structure");
  Matrix d = Matrix::Zero(blocks.total_size(), blocks.total_size());
  for (int i = 0; i < blocks.parameter_count(); ++i) {
    d.block(blocks.offset(i), blocks.offset(i), blocks.repetitions(i), blocks.repetitions(i))
        .diagonal()
        .setConstant(delta[i]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Nonlinear parametric constraints c_i(delta) <= 0.
// ---------------------------------------------------------------------------

struct Constraint {
  std::string name;
  std::function<double(const DeltaVector&)> value;
  // Optional analytic gradient; central finite differences otherwise.
  std::function<Vector(const DeltaVector&)> gradient;
  // Structured description for model-file round trips; empty for ad-hoc
  // lambdas, in which case the owning model cannot be serialized.
  nlohmann::json spec;
};

class ConstraintSet {
 public:
  static constexpr double kFdStep = 1e-6;

  void add(Constraint c) { constraints_.push_back(std::move(c)); }

  // Equality c(x) = 0 stored as the pair c <= 0, -c <= 0.
  void add_equality(Constraint c) {
    Constraint neg;
    neg.name = c.name + "(-)";
    auto value = c.value;
    neg.value = [value](const DeltaVector& d) { return -value(d); };
    if (c.gradient) {
      auto grad = c.gradient;
      neg.gradient = [grad](const DeltaVector& d) { return Vector(-grad(d)); };
    }
    c.name += "(+)";
    constraints_.push_back(std::move(c));
    constraints_.push_back(std::move(neg));
  }

  int size() const { return static_cast<int>(constraints_.size()); }
  bool empty() const { return constraints_.empty(); }
  const std::vector<Constraint>& items() const { return constraints_; }

  Vector evaluate(const DeltaVector& delta) const {
    Vector v(size());
    for (int i = 0; i < size(); ++i) {
      double ci;
      try {
        ci = constraints_[static_cast<std::size_t>(i)].value(delta);
      } catch (const std::exception& e) {
        throw ConstraintEvaluationError(i, e.what());
      }
      if (!std::isfinite(ci)) throw ConstraintEvaluationError(i, "non-finite value");
      v[i] = ci;
    }
    return v;
  }

  // Rows are gradient transposes, one per constraint.
  Matrix jacobian(const DeltaVector& delta) const {
    Matrix j(size(), delta.size());
    for (int i = 0; i < size(); ++i) {
      const auto& c = constraints_[static_cast<std::size_t>(i)];
      if (c.gradient) {
        j.row(i) = c.gradient(delta).transpose();
      } else {
        DeltaVector x = delta;
        for (int q = 0; q < delta.size(); ++q) {
          const double x0 = x[q];
          x[q] = x0 + kFdStep;
          const double fp = c.value(x);
          x[q] = x0 - kFdStep;
          const double fm = c.value(x);
          x[q] = x0;
          j(i, q) = (fp - fm) / (2.0 * kFdStep);
        }
      }
    }
    return j;
  }

  bool feasible(const DeltaVector& delta, double tol = 0.0) const {
    return empty() || evaluate(delta).maxCoeff() <= tol;
  }

 private:
  std::vector<Constraint> constraints_;
};

struct ConstraintEval {
  Vector values;
  bool feasible = true;
};

// ---------------------------------------------------------------------------
// LFR plant: the fixed part M(s) of an upper LFT F_u(M, Delta), partitioned
//
//   [ xdot ]   [ A1  | B1   B2  ] [ x ]
//   [  q   ] = [ C1  | D11  D12 ] [ p ],   p = Delta q
//   [  z   ]   [ C2  | D21  D22 ] [ w ]
// ---------------------------------------------------------------------------

struct LfrPlant {
  Matrix A1, B1, B2, C1, C2, D11, D12, D21, D22;
  BlockStructure blocks;
  ConstraintSet constraints;

  int state_count() const { return static_cast<int>(A1.rows()); }
  int delta_size() const { return static_cast<int>(D11.rows()); }
  int input_count() const { return static_cast<int>(B2.cols()); }
  int output_count() const { return static_cast<int>(C2.rows()); }
  int parameter_count() const { return blocks.parameter_count(); }

  void validate() const {
    const auto n = A1.rows();
    const auto m = D11.rows();
    const auto nw = B2.cols();
    const auto nz = C2.rows();
    require(A1.cols() == n, "A1 must be square");
    require(B1.rows() == n && B1.cols() == m, "B1 dimension mismatch");
    require(B2.rows() == n, "B2 dimension mismatch");
    require(C1.rows() == m && C1.cols() == n, "C1 dimension mismatch");
    require(C2.cols() == n, "C2 dimension mismatch");
    require(D11.cols() == m, "D11 must be square");
    require(D12.rows() == m && D12.cols() == nw, "D12 dimension mismatch");
    require(D21.rows() == nz && D21.cols() == m, "D21 dimension mismatch");
    require(D22.rows() == nz && D22.cols() == nw, "D22 dimension mismatch");
    require(blocks.total_size() == m,
            "block structure size does not match D11 dimension");
  }

  // H2 queries need a vanishing closed-loop feedthrough: D22 = 0 and D12 = 0
  // or D21 = 0.
  bool h2_assumptions_ok(std::string* why = nullptr) const {
    auto zero = [](const Matrix& m) { return m.size() == 0 || m.isZero(0.0); };
    if (!zero(D22)) {
      if (why) *why = "D22 must be zero for H2 queries";
      return false;
    }
    if (!zero(D12) && !zero(D21)) {
      if (why) *why = "either D12 or D21 must be zero for H2 queries";
      return false;
    }
    return true;
  }

  // Restriction to a sub-channel: keeps selected w columns and z rows.
  LfrPlant select_channel(const std::vector<int>& inputs,
                          const std::vector<int>& outputs) const {
    LfrPlant out = *this;
    if (!inputs.empty()) {
      out.B2.resize(B2.rows(), static_cast<Eigen::Index>(inputs.size()));
      out.D12.resize(D12.rows(), static_cast<Eigen::Index>(inputs.size()));
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        require(inputs[j] >= 0 && inputs[j] < input_count(), "input index out of range");
        out.B2.col(static_cast<Eigen::Index>(j)) = B2.col(inputs[j]);
        out.D12.col(static_cast<Eigen::Index>(j)) = D12.col(inputs[j]);
      }
    }
    if (!outputs.empty()) {
      out.C2.resize(static_cast<Eigen::Index>(outputs.size()), C2.cols());
      out.D21.resize(static_cast<Eigen::Index>(outputs.size()), D21.cols());
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        require(outputs[i] >= 0 && outputs[i] < output_count(), "output index out of range");
        out.C2.row(static_cast<Eigen::Index>(i)) = C2.row(outputs[i]);
        out.D21.row(static_cast<Eigen::Index>(i)) = D21.row(outputs[i]);
      }
    }
    out.D22.resize(out.C2.rows(), out.B2.cols());
    for (Eigen::Index i = 0; i < out.D22.rows(); ++i) {
      for (Eigen::Index j = 0; j < out.D22.cols(); ++j) {
        int r = outputs.empty() ? static_cast<int>(i) : outputs[static_cast<std::size_t>(i)];
        int c = inputs.empty() ? static_cast<int>(j) : inputs[static_cast<std::size_t>(j)];
        out.D22(i, j) = D22(r, c);
      }
    }
    return out;
  }
};

// Closed loop at a fixed delta. Ill-posedness is a value, not an exception:
// well_posed = false when I - Delta*D11 is numerically singular.
struct ClosedLoop {
  Matrix A, B, C, D;
  Matrix tilde_delta;
  bool well_posed = false;
};

namespace detail {

// Reciprocal condition threshold below which I - Delta*D11 is treated as
// singular. Worst-case search must not crash mid-run, so closing the loop
// reports ill-posedness instead of throwing.
inline constexpr double kLftRcondMin = 1e-12;

inline std::optional<Matrix> try_tilde_delta(const Matrix& delta, const Matrix& d11) {
  const auto m = delta.rows();
  Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(m, m) - delta * d11);
  if (m > 0 && lu.rcond() < kLftRcondMin) return std::nullopt;
  return lu.solve(delta);
}

}  // namespace detail

// Tilde-form uncertainty (I - Delta*D11)^{-1} Delta, checked against the
// alternative factorization Delta (I - D11*Delta)^{-1}.
inline Matrix tilde_delta(const Matrix& delta, const Matrix& d11) {
  require(delta.rows() == delta.cols() && d11.rows() == d11.cols() &&
              delta.rows() == d11.rows(),
          "tilde_delta: square conformable matrices expected");
  auto left = detail::try_tilde_delta(delta, d11);
  if (!left) throw IllPosedLft("tilde_delta: I - Delta*D11 is singular");
  const auto m = delta.rows();
  Matrix right =
      (delta * (Matrix::Identity(m, m) - d11 * delta).partialPivLu().solve(
                   Matrix::Identity(m, m)))
          .eval();
  const double scale = 1.0 + left->norm();
  if ((*left - right).norm() > 1e-8 * scale) {
    throw NumericalFailure("tilde_delta: factorizations of Eq. form disagree");
  }
  return *left;
}

inline ClosedLoop close_loop(const LfrPlant& plant, const DeltaVector& delta) {
  require(delta.size() == plant.parameter_count(),
          "close_loop: delta length does not match plant");
  ClosedLoop cl;
  const Matrix d = expand_delta(delta, plant.blocks);
  auto td = detail::try_tilde_delta(d, plant.D11);
  if (!td) {
    cl.well_posed = false;
    return cl;
  }
  cl.tilde_delta = *td;
  cl.A = plant.A1 + plant.B1 * cl.tilde_delta * plant.C1;
  cl.B = plant.B2 + plant.B1 * cl.tilde_delta * plant.D12;
  cl.C = plant.C2 + plant.D21 * cl.tilde_delta * plant.C1;
  cl.D = plant.D22 + plant.D21 * cl.tilde_delta * plant.D12;
  cl.well_posed = true;
  return cl;
}

inline ConstraintEval eval_constraints(const LfrPlant& plant, const DeltaVector& delta) {
  ConstraintEval out;
  out.values = plant.constraints.evaluate(delta);
  out.feasible = out.values.size() == 0 || out.values.maxCoeff() <= 0.0;
  return out;
}

}  // namespace robwc
