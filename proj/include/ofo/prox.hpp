#pragma once

/// @file
/// Proximal operators and Moreau envelopes for the function classes used by
/// the online controller, piecewise-constant parameter schedules, and the
/// sector-bounded nonlinearity Δ of the closed-loop interconnection.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ofo/errors.hpp"

namespace ofo {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// f(x) = ½ xᵀ H x + cᵀ x with H symmetric positive definite.
struct Quadratic {
  MatrixXd H;
  VectorXd c;
};

/// Indicator of {lo <= x <= hi}; bounds may be infinite.
struct BoxIndicator {
  VectorXd lo, hi;
};

/// Indicator of {0}.
struct ZeroSetIndicator {
  Index dim = 0;
};

/// (η/2) ‖s_{lo,hi}(x)‖², gradient η s_{lo,hi}(x), Lipschitz constant η.
struct SoftBoxPenalty {
  double eta = 0.0;
  VectorXd lo, hi;
};

class ProxSpec;

/// Separable sum over consecutive index blocks, in order.
struct Composite {
  std::vector<ProxSpec> blocks;
};

class ProxSpec {
 public:
  using Kind = std::variant<Quadratic, BoxIndicator, ZeroSetIndicator,
                            SoftBoxPenalty, Composite>;

  ProxSpec() : kind_(Composite{}) {}
  ProxSpec(Quadratic q) : kind_(std::move(q)) { validate(); }
  ProxSpec(BoxIndicator b) : kind_(std::move(b)) { validate(); }
  ProxSpec(ZeroSetIndicator z) : kind_(z) { validate(); }
  ProxSpec(SoftBoxPenalty s) : kind_(std::move(s)) { validate(); }
  ProxSpec(Composite c) : kind_(std::move(c)) { validate(); }

  static ProxSpec quadratic(MatrixXd H, VectorXd c) {
    return ProxSpec(Quadratic{std::move(H), std::move(c)});
  }
  static ProxSpec box(VectorXd lo, VectorXd hi) {
    return ProxSpec(BoxIndicator{std::move(lo), std::move(hi)});
  }
  static ProxSpec zero_set(Index dim) { return ProxSpec(ZeroSetIndicator{dim}); }
  static ProxSpec soft_box(double eta, VectorXd lo, VectorXd hi) {
    return ProxSpec(SoftBoxPenalty{eta, std::move(lo), std::move(hi)});
  }
  static ProxSpec composite(std::vector<ProxSpec> blocks) {
    return ProxSpec(Composite{std::move(blocks)});
  }
  /// Zero-dimensional placeholder for an absent function.
  static ProxSpec empty() { return ProxSpec(); }

  const Kind& kind() const { return kind_; }
  Kind& mutable_kind() { return kind_; }
  Index dim() const { return dim_; }
  std::string kind_name() const {
    static constexpr const char* names[] = {"quadratic", "box", "zero_set",
                                            "soft_box", "composite"};
    return names[kind_.index()];
  }

  void validate() {
    dim_ = std::visit([](const auto& k) { return check(k); }, kind_);
  }

 private:
  static Index check(const Quadratic& q) {
    if (q.H.rows() != q.H.cols() || q.H.rows() != q.c.size()) {
      throw DimensionError("Quadratic: H must be square and match c");
    }
    if (!q.H.allFinite() || !q.c.allFinite()) {
      throw DimensionError("Quadratic: non-finite entries");
    }
    const double scale = std::max(1.0, q.H.cwiseAbs().maxCoeff());
    if ((q.H - q.H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw DimensionError("Quadratic: H must be symmetric");
    }
    return q.c.size();
  }
  static void check_bounds(const VectorXd& lo, const VectorXd& hi,
                           const char* who) {
    if (lo.size() != hi.size()) {
      throw DimensionError(std::string(who) + ": lo/hi size mismatch");
    }
    for (Index i = 0; i < lo.size(); ++i) {
      if (std::isnan(lo[i]) || std::isnan(hi[i]) || lo[i] > hi[i]) {
        throw DimensionError(std::string(who) + ": requires lo <= hi");
      }
    }
  }
  static Index check(const BoxIndicator& b) {
    check_bounds(b.lo, b.hi, "BoxIndicator");
    return b.lo.size();
  }
  static Index check(const ZeroSetIndicator& z) {
    if (z.dim < 0) throw DimensionError("ZeroSetIndicator: negative dim");
    return z.dim;
  }
  static Index check(const SoftBoxPenalty& s) {
    if (!(s.eta >= 0.0)) throw DimensionError("SoftBoxPenalty: eta must be >= 0");
    check_bounds(s.lo, s.hi, "SoftBoxPenalty");
    return s.lo.size();
  }
  static Index check(const Composite& c) {
    Index d = 0;
    for (const auto& b : c.blocks) d += b.dim();
    return d;
  }

  Kind kind_;
  Index dim_ = 0;
};

namespace detail {

inline void require_dim(const ProxSpec& spec, const VectorXd& v,
                        const char* who) {
  if (v.size() != spec.dim()) {
    throw DimensionError(std::string(who) + ": vector has size " +
                         std::to_string(v.size()) + ", function has dim " +
                         std::to_string(spec.dim()));
  }
}

inline void require_mu(double mu, const char* who) {
  if (!(mu > 0.0) || !std::isfinite(mu)) {
    throw DimensionError(std::string(who) + ": mu must be positive");
  }
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace detail

/// Componentwise distance-to-box with sign: v - lo below, 0 inside, v - hi above.
inline VectorXd soft_threshold(const VectorXd& lo, const VectorXd& hi,
                               const VectorXd& v) {
  if (lo.size() != v.size() || hi.size() != v.size()) {
    throw DimensionError("soft_threshold: size mismatch");
  }
  VectorXd out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] <= lo[i]) {
      out[i] = v[i] - lo[i];
    } else if (v[i] >= hi[i]) {
      out[i] = v[i] - hi[i];
    } else {
      out[i] = 0.0;
    }
  }
  return out;
}

/// Function value; +inf outside the domain of an indicator.
inline double value(const ProxSpec& spec, const VectorXd& x) {
  detail::require_dim(spec, x, "value");
  constexpr double inf = std::numeric_limits<double>::infinity();
  return std::visit(
      detail::overloaded{
          [&](const Quadratic& q) { return 0.5 * x.dot(q.H * x) + q.c.dot(x); },
          [&](const BoxIndicator& b) {
            for (Index i = 0; i < x.size(); ++i) {
              if (x[i] < b.lo[i] || x[i] > b.hi[i]) return inf;
            }
            return 0.0;
          },
          [&](const ZeroSetIndicator&) { return x.isZero(0.0) ? 0.0 : inf; },
          [&](const SoftBoxPenalty& s) {
            return 0.5 * s.eta * soft_threshold(s.lo, s.hi, x).squaredNorm();
          },
          [&](const Composite& c) {
            double total = 0.0;
            Index off = 0;
            for (const auto& b : c.blocks) {
              total += value(b, x.segment(off, b.dim()));
              off += b.dim();
            }
            return total;
          }},
      spec.kind());
}

/// Gradient of a differentiable kind (Quadratic, SoftBoxPenalty, Composite
/// of those). Indicators have no gradient.
inline VectorXd gradient(const ProxSpec& spec, const VectorXd& x) {
  detail::require_dim(spec, x, "gradient");
  return std::visit(
      detail::overloaded{
          [&](const Quadratic& q) -> VectorXd { return q.H * x + q.c; },
          [&](const BoxIndicator&) -> VectorXd {
            throw CapabilityError("gradient: box indicator is not differentiable");
          },
          [&](const ZeroSetIndicator&) -> VectorXd {
            throw CapabilityError(
                "gradient: zero-set indicator is not differentiable");
          },
          [&](const SoftBoxPenalty& s) -> VectorXd {
            return s.eta * soft_threshold(s.lo, s.hi, x);
          },
          [&](const Composite& c) -> VectorXd {
            VectorXd out(x.size());
            Index off = 0;
            for (const auto& b : c.blocks) {
              out.segment(off, b.dim()) = gradient(b, x.segment(off, b.dim()));
              off += b.dim();
            }
            return out;
          }},
      spec.kind());
}

/// prox_{μg}(v) = argmin_x g(x) + ‖x - v‖² / (2μ).
inline VectorXd prox(const ProxSpec& spec, const VectorXd& v, double mu) {
  detail::require_dim(spec, v, "prox");
  detail::require_mu(mu, "prox");
  return std::visit(
      detail::overloaded{
          [&](const Quadratic& q) -> VectorXd {
            MatrixXd M = mu * q.H;
            M.diagonal().array() += 1.0;
            return M.ldlt().solve(v - mu * q.c);
          },
          [&](const BoxIndicator& b) -> VectorXd {
            return v.cwiseMax(b.lo).cwiseMin(b.hi);
          },
          [&](const ZeroSetIndicator&) -> VectorXd {
            return VectorXd::Zero(v.size());
          },
          [&](const SoftBoxPenalty&) -> VectorXd {
            throw CapabilityError(
                "prox: soft box penalty is only used through its gradient");
          },
          [&](const Composite& c) -> VectorXd {
            VectorXd out(v.size());
            Index off = 0;
            for (const auto& b : c.blocks) {
              out.segment(off, b.dim()) = prox(b, v.segment(off, b.dim()), mu);
              off += b.dim();
            }
            return out;
          }},
      spec.kind());
}

/// ∇M_{μg}(v) = (v - prox_{μg}(v)) / μ.
inline VectorXd moreau_grad(const ProxSpec& spec, const VectorXd& v,
                            double mu) {
  return (v - prox(spec, v, mu)) / mu;
}

/// M_{μg}(v) = g(prox) + ‖prox - v‖² / (2μ).
inline double moreau_envelope_value(const ProxSpec& spec, const VectorXd& v,
                                    double mu) {
  const VectorXd p = prox(spec, v, mu);
  return value(spec, p) + (p - v).squaredNorm() / (2.0 * mu);
}

/// Gradient Lipschitz constant of a differentiable kind; 0 for empty specs.
inline double lipschitz_constant(const ProxSpec& spec) {
  return std::visit(
      detail::overloaded{
          [](const Quadratic& q) {
            if (q.H.size() == 0) return 0.0;
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(q.H,
                                                       Eigen::EigenvaluesOnly);
            return es.eigenvalues().maxCoeff();
          },
          [](const BoxIndicator&) -> double {
            throw CapabilityError("lipschitz_constant: indicator");
          },
          [](const ZeroSetIndicator&) -> double {
            throw CapabilityError("lipschitz_constant: indicator");
          },
          [](const SoftBoxPenalty& s) { return s.eta; },
          [](const Composite& c) {
            double L = 0.0;
            for (const auto& b : c.blocks) L = std::max(L, lipschitz_constant(b));
            return L;
          }},
      spec.kind());
}

/// Strong convexity modulus; positive only for Quadratic with H ≻ 0.
inline double strong_convexity(const ProxSpec& spec) {
  if (const auto* q = std::get_if<Quadratic>(&spec.kind())) {
    if (q->H.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(q->H, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
  if (const auto* c = std::get_if<Composite>(&spec.kind())) {
    if (c->blocks.empty()) return 0.0;
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : c->blocks) m = std::min(m, strong_convexity(b));
    return m;
  }
  return 0.0;
}

/// Returns a copy with the bounds of flattened component `index` replaced.
/// Applies to BoxIndicator and SoftBoxPenalty components.
inline ProxSpec with_bounds(const ProxSpec& spec, Index index, double lo,
                            double hi) {
  if (index < 0 || index >= spec.dim()) {
    throw DimensionError("with_bounds: index out of range");
  }
  ProxSpec out = spec;
  std::visit(
      detail::overloaded{
          [&](BoxIndicator& b) {
            b.lo[index] = lo;
            b.hi[index] = hi;
          },
          [&](SoftBoxPenalty& s) {
            s.lo[index] = lo;
            s.hi[index] = hi;
          },
          [&](Composite& c) {
            Index off = 0;
            for (auto& b : c.blocks) {
              if (index < off + b.dim()) {
                b = with_bounds(b, index - off, lo, hi);
                return;
              }
              off += b.dim();
            }
          },
          [&](auto&) {
            throw CapabilityError("with_bounds: " + spec.kind_name() +
                                  " has no bounds");
          }},
      out.mutable_kind());
  out.validate();
  return out;
}

enum class Target { f, h, g };

struct BoundOverride {
  Target target = Target::g;
  Index index = 0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ScheduleEntry {
  double t = 0.0;
  /// Replaces the base bounds while this entry is active; empty restores them.
  std::vector<BoundOverride> overrides;
};

/// Piecewise-constant, right-continuous parameter schedule on t >= 0.
/// At time t the latest entry with entry.t <= t is active; before the first
/// entry the base functions apply.
class ParamSchedule {
 public:
  ParamSchedule() = default;
  explicit ParamSchedule(std::vector<ScheduleEntry> entries)
      : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!std::isfinite(entries_[i].t) || entries_[i].t < 0.0) {
        throw ScheduleError("ParamSchedule: entry times must be finite and >= 0");
      }
      if (i > 0 && !(entries_[i].t > entries_[i - 1].t)) {
        throw ScheduleError("ParamSchedule: entry times must be increasing");
      }
    }
  }

  const std::vector<ScheduleEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  /// Index of the active entry, or -1 before the first entry.
  int active_index(double t) const {
    if (!std::isfinite(t) || t < 0.0) {
      throw ScheduleError("ParamSchedule: undefined at t = " + std::to_string(t));
    }
    int idx = -1;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const double tk = entries_[i].t;
      if (tk <= t + 1e-9 * std::max(1.0, std::abs(tk))) idx = static_cast<int>(i);
    }
    return idx;
  }

 private:
  std::vector<ScheduleEntry> entries_;
};

/// The three problem functions at one time instant.
struct FrozenFunctions {
  ProxSpec f, h, g;
};

/// Δ(y) = [∇f(y_u) - m y_u; ∇h(y_1); μ ∇M_{μg}(y_2)] with time-varying
/// parameters from `schedule`.
struct DeltaMap {
  ProxSpec f, h, g;
  double mu = 1.0;
  double m_strong = 1.0;
  double Lf = 1.0;
  double Lh = 0.0;
  ParamSchedule schedule;

  Index dim_u() const { return f.dim(); }
  Index p1() const { return h.dim(); }
  Index p2() const { return g.dim(); }
  Index channels() const { return f.dim() + h.dim() + g.dim(); }
  double Lf_hat() const { return Lf - m_strong; }

  FrozenFunctions at(double t) const {
    const int idx = schedule.active_index(t);
    FrozenFunctions out{f, h, g};
    if (idx < 0) return out;
    for (const auto& ov : schedule.entries()[idx].overrides) {
      ProxSpec& target = ov.target == Target::f   ? out.f
                         : ov.target == Target::h ? out.h
                                                  : out.g;
      target = with_bounds(target, ov.index, ov.lo, ov.hi);
    }
    return out;
  }
};

/// Builds a DeltaMap; m and L_f are read off f, L_h off h.
inline DeltaMap make_delta_map(ProxSpec f, ProxSpec h, ProxSpec g, double mu,
                               ParamSchedule schedule = {}) {
  detail::require_mu(mu, "make_delta_map");
  DeltaMap d;
  d.m_strong = strong_convexity(f);
  if (!(d.m_strong > 0.0)) {
    throw DimensionError("make_delta_map: f must be strongly convex");
  }
  d.Lf = lipschitz_constant(f);
  d.Lh = h.dim() > 0 ? lipschitz_constant(h) : 0.0;
  d.f = std::move(f);
  d.h = std::move(h);
  d.g = std::move(g);
  d.mu = mu;
  d.schedule = std::move(schedule);
  // Overrides must refer to existing bounded components.
  for (const auto& e : d.schedule.entries()) {
    for (const auto& ov : e.overrides) {
      const ProxSpec& t = ov.target == Target::f   ? d.f
                          : ov.target == Target::h ? d.h
                                                   : d.g;
      (void)with_bounds(t, ov.index, ov.lo, ov.hi);
    }
  }
  return d;
}

inline VectorXd delta_eval(const FrozenFunctions& fns, double mu,
                           double m_strong, const VectorXd& y) {
  const Index m = fns.f.dim(), p1 = fns.h.dim(), p2 = fns.g.dim();
  if (y.size() != m + p1 + p2) {
    throw DimensionError("delta_eval: y has size " + std::to_string(y.size()) +
                         ", expected " + std::to_string(m + p1 + p2));
  }
  VectorXd out(y.size());
  out.head(m) = gradient(fns.f, y.head(m)) - m_strong * y.head(m);
  if (p1 > 0) out.segment(m, p1) = gradient(fns.h, y.segment(m, p1));
  if (p2 > 0) out.tail(p2) = mu * moreau_grad(fns.g, y.tail(p2), mu);
  return out;
}

inline VectorXd delta_eval(const DeltaMap& map, const VectorXd& y, double t) {
  return delta_eval(map.at(t), map.mu, map.m_strong, y);
}

}  // namespace ofo
