#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <vector>

#include "robwc/core.hpp"
#include "robwc/lfr.hpp"
#include "robwc/parallel.hpp"
#include "robwc/rng.hpp"

namespace robwc {

// Global exploration of the [-1,1]^k box: penalty particle swarm and
// Monte-Carlo sampling with the probabilistic sample-size bound.

// Objective values at or above this sentinel mark failed evaluations
// (instability or ill-posedness mapped to a large finite number so the swarm
// keeps moving).
inline constexpr double kObjectiveSentinel = 1e12;

inline DeltaVector project_box(DeltaVector x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], -1.0, 1.0);
  return x;
}

struct SwarmConfig {
  int swarm_size = 500;
  double inertia_lo = 0.6;
  double inertia_hi = 1.1;
  int stall_iterations = 20;       // 10 inside the synthesis loop
  double function_tolerance = 0.10;
  std::optional<double> objective_limit;
  int max_iterations = 200;
  std::uint64_t seed = 0;
  double tau0 = -1.0;              // < 0: 1e3 * (1 + |f(center)|)
  double tau_growth = 100.0;
  int max_penalty_rounds = 3;
  double cognitive = 1.49;
  double social = 1.49;
};

struct McPlan {
  double gamma = 1e-5;
  double epsilon = 1e-5;
  long long samples = 0;  // derived from (gamma, epsilon) when <= 0
  std::uint64_t seed = 0;
};

struct ExplorationResult {
  enum class Status { ok, no_feasible_point, objective_limit_reached, feasible_draw_timeout };
  Status status = Status::ok;
  DeltaVector best_point;
  double best_value = std::numeric_limits<double>::infinity();
  bool feasible = false;
  long long evaluations = 0;  // objective calls only
  long long discarded = 0;    // infeasible draws (MC)
  std::vector<double> history;  // per-iteration best
  std::vector<DeltaVector> failure_points;  // sentinel-valued evaluations
  int penalty_rounds = 1;
};

// Smallest N with N >= ln(gamma)/ln(1-epsilon); with confidence 1-gamma the
// empirical worst case over N feasible samples covers all but an
// epsilon-probability tail.
inline long long mc_sample_size(double gamma, double epsilon) {
  require(gamma > 0.0 && gamma < 1.0, "mc_sample_size: gamma must be in (0,1)");
  require(epsilon > 0.0 && epsilon < 1.0, "mc_sample_size: epsilon must be in (0,1)");
  const double bound = std::log(gamma) / std::log1p(-epsilon);
  return std::max<long long>(1, static_cast<long long>(std::ceil(bound - 1e-12)));
}

using BoxObjective = std::function<double(const DeltaVector&)>;

namespace detail {

inline DeltaVector uniform_point(Rng& rng, int dim) {
  DeltaVector x(dim);
  for (int i = 0; i < dim; ++i) x[i] = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace detail

// Penalty PSO over the box: minimizes f + tau * sum max(0, c_i) with particle
// positions projected into the box each iteration. The reported best is the
// best raw-feasible point seen; when a penalty round ends without one, tau is
// escalated and the swarm restarted. Deterministic given the seed, including
// under parallel particle evaluation.
inline ExplorationResult pso_minimize(const BoxObjective& objective,
                                      const ConstraintSet* constraints, int dim,
                                      const SwarmConfig& config) {
  require(config.swarm_size >= 2, "pso_minimize: swarm_size must be >= 2");
  require(config.inertia_lo > 0.0 && config.inertia_lo <= config.inertia_hi,
          "pso_minimize: invalid inertia range");
  ExplorationResult out;
  std::mutex record_mutex;

  auto violation = [&](const DeltaVector& x) {
    if (!constraints || constraints->empty()) return 0.0;
    const Vector c = constraints->evaluate(x);
    double s = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) s += std::max(0.0, c[i]);
    return s;
  };
  double tau = config.tau0;

  for (int round = 0; round < config.max_penalty_rounds; ++round) {
    out.penalty_rounds = round + 1;
    const std::uint64_t round_seed = Rng::derive(config.seed, "pso-round", static_cast<std::uint64_t>(round));

    const int n = config.swarm_size;
    std::vector<DeltaVector> pos(static_cast<std::size_t>(n)), vel(static_cast<std::size_t>(n));
    std::vector<Rng> streams;
    streams.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      streams.emplace_back(Rng::derive(round_seed, "particle", static_cast<std::uint64_t>(i)));
      pos[static_cast<std::size_t>(i)] = detail::uniform_point(streams.back(), dim);
      DeltaVector v(dim);
      for (int q = 0; q < dim; ++q) v[q] = streams.back().uniform(-2.0, 2.0);
      vel[static_cast<std::size_t>(i)] = v;
    }

    std::vector<double> fraw(static_cast<std::size_t>(n)), fpen(static_cast<std::size_t>(n));
    std::vector<double> cviol(static_cast<std::size_t>(n));
    auto evaluate_swarm = [&]() {
      parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const double v = violation(pos[i]);
        const double f = objective(pos[i]);
        cviol[i] = v;
        fraw[i] = f;
        fpen[i] = f + tau * v;
        if (f >= kObjectiveSentinel) {
          std::lock_guard<std::mutex> lock(record_mutex);
          out.failure_points.push_back(pos[i]);
        }
      });
      out.evaluations += n;
    };

    if (tau < 0.0) {
      const double f_center = objective(DeltaVector::Zero(dim));
      ++out.evaluations;
      tau = 1e3 * (1.0 + std::min(std::abs(f_center), 1e6));
    }

    evaluate_swarm();

    std::vector<DeltaVector> pbest_x = pos;
    std::vector<double> pbest_f = fpen;
    int gbest = 0;
    for (int i = 1; i < n; ++i) {
      if (fpen[static_cast<std::size_t>(i)] < fpen[static_cast<std::size_t>(gbest)]) gbest = i;
    }
    DeltaVector gbest_x = pos[static_cast<std::size_t>(gbest)];
    double gbest_f = fpen[static_cast<std::size_t>(gbest)];

    bool round_feasible = false;
    DeltaVector round_best_x;
    double round_best_f = std::numeric_limits<double>::infinity();
    auto absorb_feasible = [&]() {
      for (int i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(i);
        if (cviol[s] <= 0.0 && fraw[s] < round_best_f && fraw[s] < kObjectiveSentinel) {
          round_best_f = fraw[s];
          round_best_x = pos[s];
          round_feasible = true;
        }
      }
    };
    absorb_feasible();

    double inertia = config.inertia_hi;
    int stall_counter = 0;
    std::deque<double> window;
    window.push_back(gbest_f);
    out.history.push_back(gbest_f);

    bool limit_hit = config.objective_limit && round_feasible &&
                     round_best_f <= *config.objective_limit;
    for (int iter = 0; iter < config.max_iterations && !limit_hit; ++iter) {
      for (int i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(i);
        Rng& rng = streams[s];
        for (int q = 0; q < dim; ++q) {
          const double r1 = rng.next_unit();
          const double r2 = rng.next_unit();
          vel[s][q] = inertia * vel[s][q] +
                      config.cognitive * r1 * (pbest_x[s][q] - pos[s][q]) +
                      config.social * r2 * (gbest_x[q] - pos[s][q]);
          vel[s][q] = std::clamp(vel[s][q], -2.0, 2.0);
        }
        pos[s] = project_box(pos[s] + vel[s]);
      }
      evaluate_swarm();
      absorb_feasible();

      bool improved = false;
      for (int i = 0; i < n; ++i) {
        const std::size_t s = static_cast<std::size_t>(i);
        if (fpen[s] < pbest_f[s]) {
          pbest_f[s] = fpen[s];
          pbest_x[s] = pos[s];
        }
        if (fpen[s] < gbest_f) {
          gbest_f = fpen[s];
          gbest_x = pos[s];
          improved = true;
        }
      }
      out.history.push_back(gbest_f);

      // Adaptive inertia: widen exploration while improving, shrink on stalls.
      stall_counter = improved ? std::max(0, stall_counter - 1) : stall_counter + 1;
      if (stall_counter < 2) {
        inertia = std::min(config.inertia_hi, 2.0 * inertia);
      } else if (stall_counter > 5) {
        inertia = std::max(config.inertia_lo, 0.5 * inertia);
      }

      if (config.objective_limit && round_feasible && round_best_f <= *config.objective_limit) {
        limit_hit = true;
      }

      // Relative-improvement stall window.
      window.push_back(gbest_f);
      if (static_cast<int>(window.size()) > config.stall_iterations + 1) {
        window.pop_front();
        const double ref = window.front();
        const double gain = ref - gbest_f;
        if (gain <= config.function_tolerance * std::max(std::abs(ref), 1e-6)) break;
      }
    }

    if (round_feasible) {
      out.best_point = round_best_x;
      out.best_value = round_best_f;
      out.feasible = true;
      out.status = limit_hit ? ExplorationResult::Status::objective_limit_reached
                             : ExplorationResult::Status::ok;
      return out;
    }
    tau *= config.tau_growth;
  }

  out.status = ExplorationResult::Status::no_feasible_point;
  out.feasible = false;
  return out;
}

// Monte-Carlo exploration: uniform i.i.d. draws over the box, infeasible
// draws discarded and counted, exactly N objective evaluations of feasible
// samples. Draw j's randomness depends only on (seed, j).
inline ExplorationResult mc_sample(const BoxObjective& objective,
                                   const ConstraintSet* constraints, int dim,
                                   const McPlan& plan) {
  ExplorationResult out;
  const long long target =
      plan.samples > 0 ? plan.samples : mc_sample_size(plan.gamma, plan.epsilon);

  constexpr long long kProbeWindow = 1000000;
  long long window_rejects = 0;
  long long draw_index = 0;

  const int chunk = 4096;
  std::vector<DeltaVector> accepted;
  accepted.reserve(static_cast<std::size_t>(chunk));
  std::vector<double> values(static_cast<std::size_t>(chunk));

  while (out.evaluations < target) {
    accepted.clear();
    while (static_cast<long long>(accepted.size()) <
               std::min<long long>(chunk, target - out.evaluations)) {
      Rng rng(Rng::derive(plan.seed, "draw", static_cast<std::uint64_t>(draw_index++)));
      DeltaVector x = detail::uniform_point(rng, dim);
      if (constraints && !constraints->empty() && !constraints->feasible(x)) {
        ++out.discarded;
        if (++window_rejects >= kProbeWindow) {
          out.status = ExplorationResult::Status::feasible_draw_timeout;
          return out;
        }
        continue;
      }
      window_rejects = 0;
      accepted.push_back(std::move(x));
    }
    parallel_for(accepted.size(), [&](std::size_t i) { values[i] = objective(accepted[i]); });
    for (std::size_t i = 0; i < accepted.size(); ++i) {
      ++out.evaluations;
      if (values[i] >= kObjectiveSentinel) {
        out.failure_points.push_back(accepted[i]);
        continue;
      }
      if (values[i] < out.best_value) {
        out.best_value = values[i];
        out.best_point = accepted[i];
        out.feasible = true;
      }
    }
    out.history.push_back(out.best_value);
  }
  if (!out.feasible) out.status = ExplorationResult::Status::no_feasible_point;
  return out;
}

}  // namespace robwc
