#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "robwc/core.hpp"
#include "robwc/rng.hpp"
#include "robwc/sqp.hpp"

namespace robwc {

// Pointwise minimum of a finite family of smooth branches, each with an
// analytic gradient. The evaluator reports the active index set; the
// subgradient picks the gradient of one active branch (lowest index), which
// is a valid element of the subdifferential of the min.
class MinOfSmoothBranches {
 public:
  struct Branch {
    std::function<double(const Vector&)> value;
    std::function<Vector(const Vector&)> gradient;
  };

  void add_branch(Branch b) { branches_.push_back(std::move(b)); }
  int branch_count() const { return static_cast<int>(branches_.size()); }

  double value(const Vector& x) const {
    double best = branches_.front().value(x);
    for (std::size_t s = 1; s < branches_.size(); ++s) {
      best = std::min(best, branches_[s].value(x));
    }
    return best;
  }

  std::vector<int> active_set(const Vector& x, double tol = 1e-10) const {
    const double v = value(x);
    std::vector<int> active;
    for (std::size_t s = 0; s < branches_.size(); ++s) {
      if (branches_[s].value(x) <= v + tol * (1.0 + std::abs(v))) {
        active.push_back(static_cast<int>(s));
      }
    }
    return active;
  }

  Vector subgradient(const Vector& x) const {
    return branches_[static_cast<std::size_t>(active_set(x).front())].gradient(x);
  }

  Vector branch_gradient(int s, const Vector& x) const {
    return branches_[static_cast<std::size_t>(s)].gradient(x);
  }

  NonsmoothOracle oracle() const {
    return NonsmoothOracle{
        [this](const Vector& x) { return std::optional<double>(value(x)); },
        [this](const Vector& x) { return subgradient(x); }};
  }

  // Family of convex quadratic branches 1/2 (x-z)^T Q (x-z) + b with random
  // SPD curvature, random centers in the box and downward offsets, so the
  // minimum surface has genuinely nonsmooth seams.
  static MinOfSmoothBranches random_quadratics(int dim, int n_branches, Rng& rng,
                                               double center_range = 1.0,
                                               double offset_range = 1.0) {
    MinOfSmoothBranches f;
    for (int s = 0; s < n_branches; ++s) {
      Matrix m(dim, dim);
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
      }
      Matrix q = m.transpose() * m + 0.3 * Matrix::Identity(dim, dim);
      Vector z(dim);
      for (int i = 0; i < dim; ++i) z[i] = rng.uniform(-center_range, center_range);
      const double b = rng.uniform(-offset_range, 0.0);
      f.add_branch(Branch{
          [q, z, b](const Vector& x) { return 0.5 * (x - z).dot(q * (x - z)) + b; },
          [q, z](const Vector& x) { return Vector(q * (x - z)); }});
    }
    return f;
  }

 private:
  std::vector<Branch> branches_;
};

}  // namespace robwc
