#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace robwc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

// Normalized point of the uncertain-parameter hypercube, one entry per
// declared parameter, each in [-1, 1] once projected.
using DeltaVector = Eigen::VectorXd;

// Structurally invalid input: mismatched dimensions, bad options, broken
// preconditions the caller could have checked.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// I - Delta*D11 is numerically singular; the LFT cannot be closed.
class IllPosedLft : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A norm was requested for a system that is not Hurwitz.
class UnstableSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// H2 norm requested with a nonzero direct feedthrough term.
class NonzeroFeedthrough : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterative routine exhausted its budget without meeting its tolerance.
class NoConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A dense linear solve hit an effectively singular system.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Constraint callback threw or produced a non-finite value.
class ConstraintEvaluationError : public std::runtime_error {
 public:
  ConstraintEvaluationError(int index, const std::string& what)
      : std::runtime_error("constraint " + std::to_string(index) + ": " + what),
        index(index) {}
  int index;
};

// Every active eigenvalue at the queried point is defective, so no
// eigenvector-based gradient exists.
class NonSimpleActiveEigenvalue : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feasibility restoration ran out of budget before reaching the feasible set.
class RestoreFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform slack used whenever "c(delta) <= 0" has to be decided on floating
// point output of an optimizer (sampled points are still checked exactly).
inline constexpr double kFeasibilityTol = 1e-9;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace robwc
