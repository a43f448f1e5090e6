#pragma once

/// @file
/// Closed-loop model: plant, controller functions, regularization and the
/// ε time-scale, plus the piecewise disturbance signal that drives it.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ofo/errors.hpp"
#include "ofo/lti.hpp"
#include "ofo/prox.hpp"

namespace ofo {

/// z = (x, u, λ).
struct ControllerState {
  VectorXd x, u, lambda;

  VectorXd stacked() const {
    VectorXd z(x.size() + u.size() + lambda.size());
    z << x, u, lambda;
    return z;
  }
  static ControllerState split(const VectorXd& z, Index n, Index m, Index p2) {
    if (z.size() != n + m + p2) {
      throw DimensionError("ControllerState: stacked size mismatch");
    }
    return {z.head(n), z.segment(n, m), z.tail(p2)};
  }
};

/// w_i(t) = offset_i + amplitude_i cos(frequency t + phase_i) on [t_start, next).
struct DisturbanceSegment {
  double t_start = 0.0;
  VectorXd offset;
  VectorXd amplitude;  // empty => constant segment
  double frequency = 0.0;
  VectorXd phase;  // empty => zero phase

  VectorXd value(double t) const {
    if (amplitude.size() == 0) return offset;
    VectorXd w = offset;
    for (Index i = 0; i < w.size(); ++i) {
      const double ph = phase.size() ? phase[i] : 0.0;
      w[i] += amplitude[i] * std::cos(frequency * t + ph);
    }
    return w;
  }
  VectorXd derivative(double t) const {
    VectorXd d = VectorXd::Zero(offset.size());
    if (amplitude.size() == 0) return d;
    for (Index i = 0; i < d.size(); ++i) {
      const double ph = phase.size() ? phase[i] : 0.0;
      d[i] = -amplitude[i] * frequency * std::sin(frequency * t + ph);
    }
    return d;
  }
};

/// Right-continuous piecewise disturbance on [0, ∞).
class DisturbanceSignal {
 public:
  DisturbanceSignal() = default;
  explicit DisturbanceSignal(std::vector<DisturbanceSegment> segments)
      : segments_(std::move(segments)) {
    if (segments_.empty() || segments_.front().t_start != 0.0) {
      throw ScheduleError("DisturbanceSignal: first segment must start at 0");
    }
    const Index q = segments_.front().offset.size();
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& s = segments_[i];
      if (i > 0 && !(s.t_start > segments_[i - 1].t_start)) {
        throw ScheduleError("DisturbanceSignal: segments must not overlap");
      }
      if (s.offset.size() != q ||
          (s.amplitude.size() != 0 && s.amplitude.size() != q) ||
          (s.phase.size() != 0 && s.phase.size() != q)) {
        throw DimensionError("DisturbanceSignal: inconsistent segment sizes");
      }
    }
  }

  static DisturbanceSignal constant(VectorXd w) {
    return DisturbanceSignal({DisturbanceSegment{0.0, std::move(w), {}, 0.0, {}}});
  }

  Index dim() const { return segments_.empty() ? 0 : segments_.front().offset.size(); }
  const std::vector<DisturbanceSegment>& segments() const { return segments_; }

  std::size_t segment_index(double t) const {
    if (!std::isfinite(t) || t < 0.0 || segments_.empty()) {
      throw ScheduleError("DisturbanceSignal: undefined at t = " + std::to_string(t));
    }
    std::size_t idx = 0;
    for (std::size_t i = 1; i < segments_.size(); ++i) {
      const double ts = segments_[i].t_start;
      if (ts <= t + 1e-9 * std::max(1.0, ts)) idx = i;
    }
    return idx;
  }
  VectorXd value(double t) const { return segments_[segment_index(t)].value(t); }
  VectorXd derivative(double t) const {
    return segments_[segment_index(t)].derivative(t);
  }

 private:
  std::vector<DisturbanceSegment> segments_;
};

/// Plant in feedback with the proximal augmented Lagrangian saddle flow.
///
/// Time is measured on the optimizer's clock: the plant runs 1/ε faster,
/// ẋ = (A x + B u + B_w w)/ε. This is the ε-slowed optimizer in rescaled
/// time, and exactly the system certified by assemble_interconnection(.., ε).
class ClosedLoop {
 public:
  ClosedLoop(StateSpace sys, DeltaMap delta, double epsilon = 1.0,
             std::optional<MatrixXd> gammaQ = std::nullopt)
      : sys_(std::move(sys)),
        maps_(steady_state_maps(sys_)),
        delta_(std::move(delta)),
        epsilon_(epsilon) {
    if (!(epsilon_ > 0.0) || !std::isfinite(epsilon_)) {
      throw DimensionError("ClosedLoop: epsilon must be positive");
    }
    if (delta_.dim_u() != sys_.m() || delta_.p1() != sys_.p1() ||
        delta_.p2() != sys_.p2()) {
      throw DimensionError(
          "ClosedLoop: function dimensions (f, h, g) must match (m, p1, p2)");
    }
    const Index p2 = sys_.p2();
    if (gammaQ) {
      detail::require_shape(*gammaQ, p2, p2, "gammaQ");
      if (!detail::is_psd(*gammaQ)) {
        throw DimensionError("ClosedLoop: gammaQ must be PSD");
      }
      gammaQ_ = *gammaQ;
      regularized_ = true;
    } else {
      gammaQ_ = MatrixXd::Zero(p2, p2);
    }
    // null(Π2u Π2uᵀ) ∩ null(Q) = {0}  <=>  Π2u Π2uᵀ + Q ≻ 0 (both PSD).
    const MatrixXd S = maps_.Pi2u * maps_.Pi2u.transpose() + gammaQ_;
    if (p2 == 0) {
      rank_condition_ = true;
    } else {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(S, Eigen::EigenvaluesOnly);
      const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
      rank_condition_ = es.eigenvalues().minCoeff() > 1e-10 * scale;
    }
  }

  const StateSpace& sys() const { return sys_; }
  const SteadyStateMaps& maps() const { return maps_; }
  const DeltaMap& delta() const { return delta_; }
  DeltaMap& mutable_delta() { return delta_; }
  double mu() const { return delta_.mu; }
  double epsilon() const { return epsilon_; }
  const MatrixXd& gammaQ() const { return gammaQ_; }
  bool regularized() const { return regularized_; }
  /// Π2uΠ2uᵀ ≻ 0, or with regularization null(Π2uΠ2uᵀ) ∩ null(γQ) = {0}.
  bool rank_condition() const { return rank_condition_; }

  Index n() const { return sys_.n(); }
  Index m() const { return sys_.m(); }
  Index p1() const { return sys_.p1(); }
  Index p2() const { return sys_.p2(); }
  Index state_dim() const { return n() + m() + p2(); }

  Interconnection interconnection() const {
    return assemble_interconnection(
        sys_, delta_.m_strong, delta_.mu,
        regularized_ ? std::optional<MatrixXd>(gammaQ_) : std::nullopt,
        epsilon_);
  }

  /// x̄ = -A^{-1}(B u + B_w w), the plant equilibrium for constant (u, w).
  VectorXd plant_equilibrium(const VectorXd& u, const VectorXd& w) const {
    return -sys_.A().partialPivLu().solve(sys_.B() * u + sys_.Bw() * w);
  }

 private:
  StateSpace sys_;
  SteadyStateMaps maps_;
  DeltaMap delta_;
  double epsilon_ = 1.0;
  MatrixXd gammaQ_;
  bool regularized_ = false;
  bool rank_condition_ = false;
};

}  // namespace ofo
