#pragma once

/// @file
/// Online closed-loop dynamics and a fixed-step RK4 simulator.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ofo/closed_loop.hpp"
#include "ofo/errors.hpp"
#include "ofo/oracle.hpp"

namespace ofo {

namespace detail {

/// Time derivative of the stacked state for frozen functions and input w.
inline VectorXd rhs_stacked(const ClosedLoop& loop, const FrozenFunctions& fns,
                            const VectorXd& z, const VectorXd& w,
                            bool freeze_controller = false) {
  const StateSpace& sys = loop.sys();
  const Index n = loop.n(), m = loop.m(), p2 = loop.p2();
  if (z.size() != loop.state_dim() || w.size() != sys.q()) {
    throw DimensionError("rhs: state or disturbance has wrong size");
  }
  if (!z.allFinite() || !w.allFinite()) {
    throw DimensionError("rhs: non-finite state or disturbance");
  }
  const auto x = z.head(n);
  const auto u = z.segment(n, m);
  const auto lambda = z.tail(p2);
  VectorXd dz(z.size());
  dz.head(n) = (sys.A() * x + sys.B() * u + sys.Bw() * w) / loop.epsilon();
  if (freeze_controller) {
    dz.tail(m + p2).setZero();
    return dz;
  }
  const auto& maps = loop.maps();
  VectorXd du = -gradient(fns.f, u);
  if (loop.p1() > 0) {
    const VectorXd y1 = sys.C1() * x + sys.D1w() * w;
    du -= maps.Pi1u.transpose() * gradient(fns.h, y1);
  }
  if (p2 > 0) {
    const double mu = loop.mu();
    const VectorXd y2 = sys.C2() * x + sys.D2w() * w;
    const VectorXd gm = moreau_grad(fns.g, y2 + mu * lambda, mu);
    du -= maps.Pi2u.transpose() * gm;
    dz.tail(p2) = mu * (gm - lambda);
    if (loop.regularized()) dz.tail(p2) -= loop.gammaQ() * lambda;
  }
  dz.segment(n, m) = du;
  return dz;
}

}  // namespace detail

/// ż for the loop in optimizer time (plant row carries 1/ε).
inline ControllerState rhs(const ClosedLoop& loop, const ControllerState& z,
                           double t, const VectorXd& w) {
  const VectorXd dz =
      detail::rhs_stacked(loop, loop.delta().at(t), z.stacked(), w);
  return ControllerState::split(dz, loop.n(), loop.m(), loop.p2());
}

/// ‖ż‖ / (1 + ‖z‖).
inline double stationarity_residual(const ClosedLoop& loop,
                                    const ControllerState& z, double t,
                                    const VectorXd& w) {
  const VectorXd zs = z.stacked();
  const VectorXd dz = detail::rhs_stacked(loop, loop.delta().at(t), zs, w);
  return dz.norm() / (1.0 + zs.norm());
}

/// Largest 1-2-5 value not above 0.25/ρ(A_ε), capped at 1e-2.
inline double default_step(const ClosedLoop& loop) {
  const double r = spectral_radius(loop.interconnection().A);
  double target = r > 0.0 ? std::min(1e-2, 0.25 / r) : 1e-2;
  double decade = std::pow(10.0, std::floor(std::log10(target)));
  for (double mant : {5.0, 2.0, 1.0}) {
    if (mant * decade <= target * (1.0 + 1e-12)) return mant * decade;
  }
  return decade;
}

struct Scenario {
  double t_end = 1.0;
  double dt = 1e-3;
  DisturbanceSignal w;
  /// Replaces the loop's parameter schedule when set.
  std::optional<ParamSchedule> events;
  ControllerState z0;

  std::size_t steps() const {
    return static_cast<std::size_t>(std::floor(t_end / dt + 1e-9));
  }
};

struct TrajectoryLog {
  Index n = 0, m = 0, p1 = 0, p2 = 0;
  std::vector<double> times;
  std::vector<VectorXd> z;
  std::vector<VectorXd> y1, y2;
  std::vector<VectorXd> zstar;
  std::vector<double> err;

  std::size_t size() const { return times.size(); }
  ControllerState state(std::size_t k) const {
    return ControllerState::split(z[k], n, m, p2);
  }
  bool has_oracle() const { return !zstar.empty(); }
};

/// Thrown when ‖z‖ leaves the divergence threshold; carries the log so far.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrajectoryLog log)
      : std::runtime_error(what),
        log_(std::make_shared<TrajectoryLog>(std::move(log))) {}
  const TrajectoryLog& log() const { return *log_; }

 private:
  std::shared_ptr<const TrajectoryLog> log_;
};

struct IntegrateOptions {
  bool with_oracle = false;
  std::size_t oracle_stride = 10;
  OracleOptions oracle;
  double divergence_threshold = 1e9;
  /// Hold u and λ at z0 (open-loop plant with constant input).
  bool freeze_controller = false;
};

namespace detail {

inline bool on_grid(double t, double dt) {
  const double k = std::round(t / dt);
  return std::abs(t - k * dt) <= 1e-9 * std::max(1.0, std::abs(t));
}

inline std::size_t grid_index(double t, double dt) {
  return static_cast<std::size_t>(std::llround(t / dt));
}

}  // namespace detail

/// Checks a scenario against a loop and returns the schedule to use.
inline ParamSchedule validate_scenario(const ClosedLoop& loop,
                                       const Scenario& sc) {
  if (!(sc.dt > 0.0) || !std::isfinite(sc.dt)) {
    throw DimensionError("Scenario: dt must be positive");
  }
  if (!(sc.t_end >= sc.dt) || !std::isfinite(sc.t_end)) {
    throw DimensionError("Scenario: t_end must be finite and at least dt");
  }
  if (sc.w.segments().empty() || sc.w.dim() != loop.sys().q()) {
    throw DimensionError("Scenario: disturbance dimension does not match B_w");
  }
  if (sc.z0.x.size() != loop.n() || sc.z0.u.size() != loop.m() ||
      sc.z0.lambda.size() != loop.p2()) {
    throw DimensionError("Scenario: z0 has wrong dimensions");
  }
  const ParamSchedule sched = sc.events ? *sc.events : loop.delta().schedule;
  for (const auto& e : sched.entries()) {
    if (!detail::on_grid(e.t, sc.dt)) {
      throw ScheduleError("Scenario: event at t = " + std::to_string(e.t) +
                          " is not on the step grid");
    }
  }
  for (const auto& s : sc.w.segments()) {
    if (!detail::on_grid(s.t_start, sc.dt)) {
      throw ScheduleError("Scenario: disturbance switch at t = " +
                          std::to_string(s.t_start) + " is not on the step grid");
    }
  }
  if (sc.events) {
    DeltaMap d = loop.delta();
    d.schedule = sched;
    for (const auto& e : sched.entries()) (void)d.at(e.t);
  }
  return sched;
}

/// Classical RK4 with parameters and disturbance segment frozen at the step
/// start (right-continuous switching on the grid).
inline TrajectoryLog integrate(const ClosedLoop& loop_in, const Scenario& sc,
                               const IntegrateOptions& opt = {}) {
  ClosedLoop loop = loop_in;
  loop.mutable_delta().schedule = validate_scenario(loop_in, sc);
  const StateSpace& sys = loop.sys();
  const std::size_t N = sc.steps();
  const double dt = sc.dt;

  TrajectoryLog log;
  log.n = loop.n();
  log.m = loop.m();
  log.p1 = loop.p1();
  log.p2 = loop.p2();
  log.times.reserve(N + 1);
  log.z.reserve(N + 1);
  log.y1.reserve(N + 1);
  log.y2.reserve(N + 1);

  auto record = [&](double t, const VectorXd& z) {
    const VectorXd w = sc.w.value(t);
    const auto x = z.head(loop.n());
    log.times.push_back(t);
    log.z.push_back(z);
    log.y1.push_back(sys.C1() * x + sys.D1w() * w);
    log.y2.push_back(sys.C2() * x + sys.D2w() * w);
  };

  VectorXd z = sc.z0.stacked();
  record(0.0, z);
  int active = -2;
  FrozenFunctions fns;
  for (std::size_t k = 0; k < N; ++k) {
    const double t = static_cast<double>(k) * dt;
    const int idx = loop.delta().schedule.active_index(t);
    if (idx != active) {
      fns = loop.delta().at(t);
      active = idx;
    }
    const DisturbanceSegment& seg = sc.w.segments()[sc.w.segment_index(t)];
    auto f = [&](double tau, const VectorXd& v) {
      return detail::rhs_stacked(loop, fns, v, seg.value(tau),
                                 opt.freeze_controller);
    };
    const VectorXd k1 = f(t, z);
    const VectorXd k2 = f(t + 0.5 * dt, z + 0.5 * dt * k1);
    const VectorXd k3 = f(t + 0.5 * dt, z + 0.5 * dt * k2);
    const VectorXd k4 = f(t + dt, z + dt * k3);
    z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double tn = static_cast<double>(k + 1) * dt;
    if (!z.allFinite() || z.norm() > opt.divergence_threshold) {
      throw DivergenceError("integrate: state norm exceeded " +
                                std::to_string(opt.divergence_threshold) +
                                " at t = " + std::to_string(tn),
                            std::move(log));
    }
    record(tn, z);
  }

  if (opt.with_oracle) {
    // Samples every `stride` rows, at the end, and on both sides of every
    // switch so interpolation never straddles a jump in z*.
    const std::size_t stride = std::max<std::size_t>(1, opt.oracle_stride);
    std::vector<char> sample(N + 1, 0);
    for (std::size_t k = 0; k <= N; k += stride) sample[k] = 1;
    sample[N] = 1;
    auto mark_switch = [&](double ts) {
      const std::size_t ke = detail::grid_index(ts, dt);
      if (ke <= N) sample[ke] = 1;
      if (ke >= 1 && ke - 1 <= N) sample[ke - 1] = 1;
    };
    for (const auto& e : loop.delta().schedule.entries()) mark_switch(e.t);
    for (const auto& s : sc.w.segments()) mark_switch(s.t_start);

    std::vector<double> ts;
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k <= N; ++k) {
      if (sample[k]) {
        ts.push_back(log.times[k]);
        ks.push_back(k);
      }
    }
    const OptimalTrajectory traj = optimal_trajectory(loop, sc.w, ts, opt.oracle);
    log.zstar.resize(N + 1);
    log.err.resize(N + 1);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      log.zstar[ks[j]] = traj.z[j];
      if (j + 1 < ks.size()) {
        const std::size_t a = ks[j], b = ks[j + 1];
        for (std::size_t k = a + 1; k < b; ++k) {
          const double s = static_cast<double>(k - a) / static_cast<double>(b - a);
          log.zstar[k] = (1.0 - s) * traj.z[j] + s * traj.z[j + 1];
        }
      }
    }
    for (std::size_t k = 0; k <= N; ++k) {
      log.err[k] = (log.z[k] - log.zstar[k]).norm();
    }
  }
  return log;
}

namespace detail {

inline void put_num(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  os << buf;
}

}  // namespace detail

/// One row per logged time. Columns: t, x, u, λ, y1, y2, err, then z* when
/// the oracle ran. err is "nan" without the oracle.
inline void write_csv(std::ostream& os, const TrajectoryLog& log) {
  os << 't';
  auto names = [&](const char* base, Index count) {
    for (Index i = 1; i <= count; ++i) os << ',' << base << '_' << i;
  };
  names("x", log.n);
  names("u", log.m);
  names("lambda", log.p2);
  names("y1", log.p1);
  names("y2", log.p2);
  os << ",err";
  if (log.has_oracle()) names("zstar", log.n + log.m + log.p2);
  os << '\n';
  for (std::size_t k = 0; k < log.size(); ++k) {
    detail::put_num(os, log.times[k]);
    auto vec = [&](const VectorXd& v) {
      for (Index i = 0; i < v.size(); ++i) {
        os << ',';
        detail::put_num(os, v[i]);
      }
    };
    vec(log.z[k]);
    vec(log.y1[k]);
    vec(log.y2[k]);
    os << ',';
    if (log.err.empty()) {
      os << "nan";
    } else {
      detail::put_num(os, log.err[k]);
    }
    if (log.has_oracle()) vec(log.zstar[k]);
    os << '\n';
  }
}

}  // namespace ofo
