#pragma once

/// @file
/// Reference solver for the frozen-time problem
///   min_u f(u) + h(Π1u u + Π1w w) + g(Π2u u + Π2w w)
/// by running the offline saddle flow of the proximal augmented Lagrangian
/// in pseudo-time until the field vanishes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ofo/closed_loop.hpp"
#include "ofo/errors.hpp"
#include "ofo/lti.hpp"
#include "ofo/prox.hpp"

namespace ofo {

struct FrozenProblem {
  FrozenFunctions fns;
  SteadyStateMaps maps;
  VectorXd w;
  double mu = 1.0;
  /// p2 x p2; zero for the exact problem.
  MatrixXd gammaQ;

  Index m() const { return fns.f.dim(); }
  Index p2() const { return fns.g.dim(); }
};

inline FrozenProblem frozen_problem(const ClosedLoop& loop, double t,
                                    const VectorXd& w) {
  return {loop.delta().at(t), loop.maps(), w, loop.mu(), loop.gammaQ()};
}

/// (-∇_u L_μ, ∇_λ L_μ) stacked; the λ part includes the -γQλ term.
inline VectorXd saddle_field(const FrozenProblem& prob, const VectorXd& u,
                             const VectorXd& lambda) {
  const auto& M = prob.maps;
  const Index m = u.size(), p2 = lambda.size();
  VectorXd out(m + p2);
  VectorXd du = -gradient(prob.fns.f, u);
  if (prob.fns.h.dim() > 0) {
    const VectorXd y1 = M.Pi1u * u + M.Pi1w * prob.w;
    du -= M.Pi1u.transpose() * gradient(prob.fns.h, y1);
  }
  if (p2 > 0) {
    const VectorXd y2 = M.Pi2u * u + M.Pi2w * prob.w;
    const VectorXd gm = moreau_grad(prob.fns.g, y2 + prob.mu * lambda, prob.mu);
    du -= M.Pi2u.transpose() * gm;
    VectorXd dl = prob.mu * (gm - lambda);
    if (prob.gammaQ.size() > 0) dl -= prob.gammaQ * lambda;
    out.tail(p2) = dl;
  }
  out.head(m) = du;
  return out;
}

struct OracleOptions {
  double tol = 1e-9;
  long max_iter = 2'000'000;
  /// Iterations without a 1% improvement of the best residual before giving up.
  long stall_window = 200'000;
  /// Keep every k-th residual in the report (0 disables the history).
  long history_stride = 100;
};

struct FrozenSolution {
  VectorXd u, lambda;
  double residual = 0.0;
  long iterations = 0;
  std::vector<double> residual_history;
};

/// Extragradient iteration on the saddle field with a secant step control:
/// the step grows while α·L_loc stays small and is halved when it does not.
inline FrozenSolution solve_frozen(
    const FrozenProblem& prob, const OracleOptions& opt = {},
    const std::optional<std::pair<VectorXd, VectorXd>>& start = std::nullopt) {
  const Index m = prob.m(), p2 = prob.p2();
  if (prob.maps.Pi2u.rows() != p2 || prob.maps.Pi2u.cols() != m ||
      prob.maps.Pi1u.rows() != prob.fns.h.dim() || prob.w.size() != prob.maps.Pi1w.cols()) {
    throw DimensionError("solve_frozen: problem dimensions are inconsistent");
  }
  VectorXd z = VectorXd::Zero(m + p2);
  if (start) {
    if (start->first.size() != m || start->second.size() != p2) {
      throw DimensionError("solve_frozen: warm start has wrong size");
    }
    z << start->first, start->second;
  }
  auto field = [&](const VectorXd& v) {
    return saddle_field(prob, v.head(m), v.tail(p2));
  };

  FrozenSolution sol;
  double alpha = 1e-2;
  VectorXd F = field(z);
  double res = F.norm();
  double best = res;
  long best_iter = 0;
  long k = 0;
  for (; k < opt.max_iter; ++k) {
    if (!std::isfinite(res)) break;
    if (opt.history_stride > 0 && k % opt.history_stride == 0) {
      sol.residual_history.push_back(res);
    }
    if (res < opt.tol) break;
    if (res < 0.99 * best) {
      best = res;
      best_iter = k;
    } else if (k - best_iter > opt.stall_window) {
      break;
    }
    VectorXd zh, Fh;
    for (int tries = 0;; ++tries) {
      zh = z + alpha * F;
      Fh = field(zh);
      const double dz = (zh - z).norm();
      const double L = dz > 0.0 ? (Fh - F).norm() / dz : 0.0;
      if (alpha * L <= 0.7 || tries > 60) {
        if (alpha * L < 0.3) alpha *= 1.2;
        break;
      }
      alpha *= 0.5;
    }
    z += alpha * Fh;
    F = field(z);
    res = F.norm();
  }
  sol.u = z.head(m);
  sol.lambda = z.tail(p2);
  sol.residual = res;
  sol.iterations = k;
  if (!(res < opt.tol)) {
    throw NonConvergenceError(
        "solve_frozen: residual " + std::to_string(res) + " above tol after " +
            std::to_string(k) + " iterations (infeasible or badly scaled)",
        res, k);
  }
  return sol;
}

/// Samples of z* = (x̄, u*, λ*) with finite-difference rates.
struct OptimalTrajectory {
  std::vector<double> times;
  std::vector<VectorXd> z;
  std::vector<VectorXd> zdot;
  std::vector<double> residuals;
};

inline VectorXd optimal_point(const ClosedLoop& loop, const FrozenSolution& s,
                              const VectorXd& w) {
  VectorXd z(loop.state_dim());
  z << loop.plant_equilibrium(s.u, w), s.u, s.lambda;
  return z;
}

/// Warm-started frozen solves at `times` (increasing). ż* is a central
/// difference in the interior and one-sided at the ends.
inline OptimalTrajectory optimal_trajectory(const ClosedLoop& loop,
                                            const DisturbanceSignal& w,
                                            const std::vector<double>& times,
                                            const OracleOptions& opt = {}) {
  OptimalTrajectory out;
  std::optional<std::pair<VectorXd, VectorXd>> warm;
  for (double t : times) {
    const VectorXd wt = w.value(t);
    FrozenSolution s;
    try {
      s = solve_frozen(frozen_problem(loop, t, wt), opt, warm);
    } catch (const NonConvergenceError& e) {
      throw NonConvergenceError(std::string(e.what()) + " at t = " + std::to_string(t),
                                e.residual(), e.iterations());
    }
    warm = std::make_pair(s.u, s.lambda);
    out.times.push_back(t);
    out.z.push_back(optimal_point(loop, s, wt));
    out.residuals.push_back(s.residual);
  }
  const std::size_t K = out.times.size();
  out.zdot.assign(K, VectorXd::Zero(loop.state_dim()));
  if (K >= 2) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t a = k == 0 ? 0 : k - 1;
      const std::size_t b = k + 1 == K ? K - 1 : k + 1;
      out.zdot[k] = (out.z[b] - out.z[a]) / (out.times[b] - out.times[a]);
    }
  }
  return out;
}

}  // namespace ofo
