#pragma once

/// @file
/// Linearized swing-equation grids, the average-mode reduction and DC-OPF
/// controller configurations.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ofo/closed_loop.hpp"
#include "ofo/errors.hpp"
#include "ofo/lti.hpp"
#include "ofo/oracle.hpp"
#include "ofo/prox.hpp"
#include "ofo/saddleflow.hpp"

namespace ofo {

struct Line {
  Index from = 0, to = 0;  // 0-based bus indices
  double b = 1.0;          // susceptance, p.u.
  double p_min = -1.5, p_max = 1.5;
};

struct GridModel {
  Index n_bus = 0;
  std::vector<Line> lines;
  VectorXd M, D;  // diagonal inertia and damping
  std::vector<Index> gen_buses, load_buses;
  MatrixXd Y;  // Bc diag(b) Bcᵀ
  MatrixXd E;  // diag(b) Bcᵀ

  Index n_line() const { return static_cast<Index>(lines.size()); }
  VectorXd p_min() const {
    VectorXd v(n_line());
    for (Index l = 0; l < n_line(); ++l) v[l] = lines[l].p_min;
    return v;
  }
  VectorXd p_max() const {
    VectorXd v(n_line());
    for (Index l = 0; l < n_line(); ++l) v[l] = lines[l].p_max;
    return v;
  }
};

/// Fills Y and E and validates the data.
inline GridModel make_grid(Index n_bus, std::vector<Line> lines, VectorXd M,
                           VectorXd D, std::vector<Index> gens,
                           std::vector<Index> loads) {
  if (n_bus < 2) throw DimensionError("make_grid: need at least two buses");
  if (M.size() != n_bus || D.size() != n_bus) {
    throw DimensionError("make_grid: M and D must have one entry per bus");
  }
  if ((M.array() <= 0.0).any() || (D.array() <= 0.0).any()) {
    throw DimensionError("make_grid: inertia and damping must be positive");
  }
  auto check_bus = [&](Index i) {
    if (i < 0 || i >= n_bus) {
      throw DimensionError("make_grid: bus index " + std::to_string(i) +
                           " out of range");
    }
  };
  for (Index g : gens) check_bus(g);
  for (Index l : loads) check_bus(l);
  GridModel g;
  g.n_bus = n_bus;
  g.M = std::move(M);
  g.D = std::move(D);
  g.gen_buses = std::move(gens);
  g.load_buses = std::move(loads);
  const Index L = static_cast<Index>(lines.size());
  MatrixXd Bc = MatrixXd::Zero(n_bus, L);
  VectorXd b(L);
  for (Index k = 0; k < L; ++k) {
    const Line& ln = lines[k];
    check_bus(ln.from);
    check_bus(ln.to);
    if (ln.from == ln.to || !(ln.b > 0.0) || !(ln.p_min < ln.p_max)) {
      throw DimensionError("make_grid: invalid line " + std::to_string(k + 1));
    }
    Bc(ln.from, k) = 1.0;
    Bc(ln.to, k) = -1.0;
    b[k] = ln.b;
  }
  g.lines = std::move(lines);
  g.E = b.asDiagonal() * Bc.transpose();
  g.Y = Bc * g.E;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g.Y, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues()(1) > 1e-9 * std::max(1.0, es.eigenvalues().maxCoeff()))) {
    throw DimensionError("make_grid: line graph is disconnected");
  }
  return g;
}

/// Unreduced swing model, state (θ, ω), output y = (p_l, ω̄).
struct SwingModel {
  MatrixXd A, Bu, Bw, C;
};

inline SwingModel build_swing(const GridModel& g) {
  const Index n = g.n_bus, L = g.n_line();
  const VectorXd Minv = g.M.cwiseInverse();
  SwingModel s;
  s.A = MatrixXd::Zero(2 * n, 2 * n);
  s.A.topRightCorner(n, n).setIdentity();
  s.A.bottomLeftCorner(n, n) = -(Minv.asDiagonal() * g.Y);
  s.A.bottomRightCorner(n, n).diagonal() = -Minv.cwiseProduct(g.D);
  auto selector = [&](const std::vector<Index>& buses) {
    MatrixXd B = MatrixXd::Zero(2 * n, static_cast<Index>(buses.size()));
    for (std::size_t k = 0; k < buses.size(); ++k) {
      B(n + buses[k], static_cast<Index>(k)) = Minv[buses[k]];
    }
    return B;
  };
  s.Bu = selector(g.gen_buses);
  s.Bw = selector(g.load_buses);
  s.C = MatrixXd::Zero(L + 1, 2 * n);
  s.C.topLeftCorner(L, n) = g.E;
  s.C.bottomRightCorner(1, n).setConstant(1.0 / static_cast<double>(n));
  return s;
}

/// Coordinates with the rotational (average-angle) mode removed.
struct ReducedPlant {
  MatrixXd U;  // n x (n-1), orthonormal, Uᵀ𝟙 = 0
  MatrixXd T;  // blockdiag(U, I)
  MatrixXd A, Bu, Bw, C;
};

inline ReducedPlant reduce(const GridModel& g, const SwingModel& s) {
  const Index n = g.n_bus;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g.Y);
  ReducedPlant r;
  // Eigenvalues ascend; the first belongs to 𝟙 on a connected graph.
  r.U = es.eigenvectors().rightCols(n - 1);
  r.T = MatrixXd::Zero(2 * n, 2 * n - 1);
  r.T.topLeftCorner(n, n - 1) = r.U;
  r.T.bottomRightCorner(n, n).setIdentity();
  r.A = r.T.transpose() * s.A * r.T;
  r.Bu = r.T.transpose() * s.Bu;
  r.Bw = r.T.transpose() * s.Bw;
  r.C = s.C * r.T;
  const auto hc = hurwitz_check(r.A);
  if (!hc.stable) {
    throw SingularityError("reduce: reduced swing model is not Hurwitz (abscissa " +
                           std::to_string(hc.abscissa) + ")");
  }
  return r;
}

/// IEEE 9-bus system, lossless, buses renumbered from 0.
inline GridModel ieee9_grid() {
  const double x[9][3] = {{1, 4, 0.0576}, {4, 5, 0.092},  {5, 6, 0.17},
                          {3, 6, 0.0586}, {6, 7, 0.1008}, {7, 8, 0.072},
                          {8, 2, 0.0625}, {8, 9, 0.161},  {9, 4, 0.085}};
  std::vector<Line> lines;
  for (const auto& r : x) {
    lines.push_back({static_cast<Index>(r[0]) - 1, static_cast<Index>(r[1]) - 1,
                     1.0 / r[2], -1.5, 1.5});
  }
  VectorXd M = VectorXd::Constant(9, 0.1);
  M.head(3).setConstant(1.0);
  return make_grid(9, std::move(lines), M, VectorXd::Constant(9, 0.1), {0, 1, 2},
                   {4, 6, 8});
}

enum class OpfMode { none, soft, approximate };

inline std::string to_string(OpfMode m) {
  switch (m) {
    case OpfMode::none: return "none";
    case OpfMode::soft: return "soft";
    case OpfMode::approximate: return "approximate";
  }
  return "?";
}

inline OpfMode parse_mode(const std::string& s) {
  if (s == "none") return OpfMode::none;
  if (s == "soft") return OpfMode::soft;
  if (s == "approximate" || s == "approx") return OpfMode::approximate;
  throw DimensionError("unknown mode '" + s + "'");
}

struct OpfParams {
  double eta = 4.0;
  double mu = 4.0;
  double gamma = 1e-2;
  double epsilon = 1e-2;
  /// Cost ½uᵀHu + cᵀu; empty means H = I, c = 𝟙.
  MatrixXd H;
  VectorXd c;
};

/// Line-limit schedule entry acting on line `line` (0-based).
struct LineLimitEvent {
  double t = 0.0;
  Index line = 0;
  double p_min = -1.5, p_max = 1.5;
};

/// Turns line limit changes into a schedule on the h (soft) or g (approximate)
/// function. An event that restores the base limit clears the override.
inline ParamSchedule line_limit_schedule(const GridModel& g, OpfMode mode,
                                         const std::vector<LineLimitEvent>& events) {
  const Target target = mode == OpfMode::approximate ? Target::g : Target::h;
  std::vector<ScheduleEntry> entries;
  std::vector<std::optional<std::pair<double, double>>> active(g.lines.size());
  for (const auto& ev : events) {
    if (ev.line < 0 || ev.line >= g.n_line()) {
      throw DimensionError("line_limit_schedule: line index out of range");
    }
    const Line& base = g.lines[ev.line];
    if (ev.p_min == base.p_min && ev.p_max == base.p_max) {
      active[ev.line].reset();
    } else {
      active[ev.line] = std::make_pair(ev.p_min, ev.p_max);
    }
    ScheduleEntry e{ev.t, {}};
    for (std::size_t l = 0; l < active.size(); ++l) {
      if (active[l]) {
        e.overrides.push_back(
            {target, static_cast<Index>(l), active[l]->first, active[l]->second});
      }
    }
    if (!entries.empty() && entries.back().t == ev.t) {
      entries.back() = e;
    } else {
      entries.push_back(std::move(e));
    }
  }
  return ParamSchedule(std::move(entries));
}

/// Plant plus DC-OPF controller functions for one mode.
///
/// soft:        h = (η/2)‖s(p_l)‖² on y1 = p_l, g = {0} on y2 = ω̄.
/// approximate: g = box(p_l) × {0}(ω̄) on y2 = (p_l, ω̄), γQ = γ diag(I, 0).
/// none:        the soft structure; simulations freeze the controller.
inline ClosedLoop build_dcopf(const GridModel& grid, OpfMode mode,
                              const OpfParams& prm,
                              const std::vector<LineLimitEvent>& events = {}) {
  const ReducedPlant rp = reduce(grid, build_swing(grid));
  const Index n = rp.A.rows(), L = grid.n_line(), q = rp.Bw.cols();
  const Index m = rp.Bu.cols();
  const MatrixXd H = prm.H.size() ? prm.H : MatrixXd::Identity(m, m);
  const VectorXd c = prm.c.size() ? prm.c : VectorXd::Ones(m);
  const ProxSpec f = ProxSpec::quadratic(H, c);
  const ParamSchedule sched = line_limit_schedule(grid, mode, events);
  if (mode == OpfMode::approximate) {
    if (!(prm.gamma > 0.0)) {
      throw DimensionError("build_dcopf: approximate mode needs gamma > 0");
    }
    StateSpace sys(rp.A, rp.Bu, rp.Bw, MatrixXd::Zero(0, n), rp.C,
                   MatrixXd::Zero(0, q), MatrixXd::Zero(L + 1, q));
    const ProxSpec g = ProxSpec::composite(
        {ProxSpec::box(grid.p_min(), grid.p_max()), ProxSpec::zero_set(1)});
    MatrixXd Q = MatrixXd::Zero(L + 1, L + 1);
    Q.topLeftCorner(L, L).setIdentity();
    return ClosedLoop(std::move(sys),
                      make_delta_map(f, ProxSpec::empty(), g, prm.mu, sched),
                      prm.epsilon, MatrixXd(prm.gamma * Q));
  }
  if (!(prm.eta > 0.0)) throw DimensionError("build_dcopf: soft mode needs eta > 0");
  StateSpace sys(rp.A, rp.Bu, rp.Bw, rp.C.topRows(L), rp.C.bottomRows(1),
                 MatrixXd::Zero(L, q), MatrixXd::Zero(1, q));
  const ProxSpec h = ProxSpec::soft_box(prm.eta, grid.p_min(), grid.p_max());
  return ClosedLoop(std::move(sys),
                    make_delta_map(f, h, ProxSpec::zero_set(1), prm.mu, sched),
                    prm.epsilon);
}

/// The event script on the IEEE9 case: line 1 tightened to ±0.5 p.u. on
/// [10, 20) s; from 50 s the first load follows -0.9 (1 + cos 0.2 t).
struct Ieee9Script {
  std::vector<LineLimitEvent> line_events;
  DisturbanceSignal w;
  double t_end = 100.0;
};

inline Ieee9Script ieee9_script() {
  Ieee9Script s;
  s.line_events = {{10.0, 0, -0.5, 0.5}, {20.0, 0, -1.5, 1.5}};
  VectorXd w0(3);
  w0 << -0.9, -1.0, -1.25;
  VectorXd amp(3);
  amp << -0.9, 0.0, 0.0;
  s.w = DisturbanceSignal({DisturbanceSegment{0.0, w0, {}, 0.0, {}},
                           DisturbanceSegment{50.0, w0, amp, 0.2, {}}});
  return s;
}

/// Scenario starting at the optimal stationary point of `loop` at t = 0.
inline Scenario stationary_start_scenario(const ClosedLoop& loop,
                                          const DisturbanceSignal& w,
                                          double t_end, double dt,
                                          const OracleOptions& opt = {}) {
  const VectorXd w0 = w.value(0.0);
  const FrozenSolution s = solve_frozen(frozen_problem(loop, 0.0, w0), opt);
  Scenario sc;
  sc.t_end = t_end;
  sc.dt = dt;
  sc.w = w;
  sc.z0 = {loop.plant_equilibrium(s.u, w0), s.u, s.lambda};
  return sc;
}

}  // namespace ofo
