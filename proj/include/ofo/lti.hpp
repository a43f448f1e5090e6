#pragma once

/// @file
/// Dense LTI plant model, transfer-function evaluation, steady-state maps and
/// the closed-loop interconnection matrices of the online saddle flow.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <optional>
#include <string>

#include "ofo/errors.hpp"

namespace ofo {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Complex = std::complex<double>;

namespace detail {

inline std::string shape(const MatrixXd& M) {
  return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

inline void require_shape(const MatrixXd& M, Index rows, Index cols,
                          const char* name) {
  if (M.rows() != rows || M.cols() != cols) {
    throw DimensionError(std::string(name) + " must be " +
                         std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + shape(M));
  }
}

inline void require_finite(const MatrixXd& M, const char* name) {
  if (!M.allFinite()) {
    throw DimensionError(std::string(name) + " has non-finite entries");
  }
}

// Reciprocal condition estimates below this are treated as singular.
constexpr double kSingularRcond = 1e-14;
// Condition numbers above this are flagged as ill-conditioned.
constexpr double kConditionWarning = 1e12;

}  // namespace detail

struct HurwitzResult {
  bool stable = false;
  /// Largest real part over the spectrum.
  double abscissa = 0.0;
};

/// Eigenvalue-based stability test. Strict inequality, no margin.
inline HurwitzResult hurwitz_check(const MatrixXd& A) {
  if (A.rows() != A.cols() || A.rows() == 0) {
    throw DimensionError("hurwitz_check: A must be square and non-empty, got " +
                         detail::shape(A));
  }
  detail::require_finite(A, "A");
  Eigen::EigenSolver<MatrixXd> es(A, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("hurwitz_check: eigenvalue iteration failed");
  }
  const double abscissa = es.eigenvalues().real().maxCoeff();
  return {abscissa < 0.0, abscissa};
}

inline double spectral_radius(const MatrixXd& A) {
  Eigen::EigenSolver<MatrixXd> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// LTI plant
///   ẋ  = A x + B u + Bw w
///   y1 = C1 x + D1w w
///   y2 = C2 x + D2w w
/// There is no control feedthrough: steady-state outputs are Π_u u + Π_w w
/// with Π_u = G_u(0). A must be Hurwitz.
class StateSpace {
 public:
  StateSpace(MatrixXd A, MatrixXd B, MatrixXd Bw, MatrixXd C1, MatrixXd C2,
             MatrixXd D1w, MatrixXd D2w)
      : A_(std::move(A)),
        B_(std::move(B)),
        Bw_(std::move(Bw)),
        C1_(std::move(C1)),
        C2_(std::move(C2)),
        D1w_(std::move(D1w)),
        D2w_(std::move(D2w)) {
    const Index n = A_.rows();
    if (n == 0 || A_.cols() != n) {
      throw DimensionError("StateSpace: A must be square with n >= 1, got " +
                           detail::shape(A_));
    }
    detail::require_shape(B_, n, B_.cols(), "B");
    detail::require_shape(Bw_, n, Bw_.cols(), "Bw");
    detail::require_shape(C1_, C1_.rows(), n, "C1");
    detail::require_shape(C2_, C2_.rows(), n, "C2");
    detail::require_shape(D1w_, C1_.rows(), Bw_.cols(), "D1w");
    detail::require_shape(D2w_, C2_.rows(), Bw_.cols(), "D2w");
    for (const auto* M : {&A_, &B_, &Bw_, &C1_, &C2_, &D1w_, &D2w_}) {
      detail::require_finite(*M, "StateSpace matrix");
    }
    const auto h = hurwitz_check(A_);
    if (!h.stable) {
      throw DimensionError("StateSpace: A is not Hurwitz (spectral abscissa " +
                           std::to_string(h.abscissa) + ")");
    }
    abscissa_ = h.abscissa;
  }

  const MatrixXd& A() const { return A_; }
  const MatrixXd& B() const { return B_; }
  const MatrixXd& Bw() const { return Bw_; }
  const MatrixXd& C1() const { return C1_; }
  const MatrixXd& C2() const { return C2_; }
  const MatrixXd& D1w() const { return D1w_; }
  const MatrixXd& D2w() const { return D2w_; }

  Index n() const { return A_.rows(); }
  Index m() const { return B_.cols(); }
  Index q() const { return Bw_.cols(); }
  Index p1() const { return C1_.rows(); }
  Index p2() const { return C2_.rows(); }
  double spectral_abscissa() const { return abscissa_; }

 private:
  MatrixXd A_, B_, Bw_, C1_, C2_, D1w_, D2w_;
  double abscissa_ = 0.0;
};

enum class Channel { k1u, k2u, k1w, k2w };

/// C (sI - A)^{-1} B for arbitrary (A, B, C).
inline MatrixXcd evaluate_transfer(const MatrixXd& A, const MatrixXd& B,
                                   const MatrixXd& C, Complex s) {
  const Index n = A.rows();
  MatrixXcd M = -A.cast<Complex>();
  M.diagonal().array() += s;
  Eigen::PartialPivLU<MatrixXcd> lu(M);
  if (!(lu.rcond() > detail::kSingularRcond)) {
    throw SingularityError("transfer evaluation: sI - A is singular at s = (" +
                           std::to_string(s.real()) + ", " +
                           std::to_string(s.imag()) + ")");
  }
  if (n == 0) return MatrixXcd::Zero(C.rows(), B.cols());
  return C.cast<Complex>() * lu.solve(B.cast<Complex>());
}

/// G_iu(s) = C_i (sI - A)^{-1} B, G_iw(s) = C_i (sI - A)^{-1} B_w + D_iw.
inline MatrixXcd transfer_eval(const StateSpace& sys, Channel which,
                               Complex s) {
  switch (which) {
    case Channel::k1u:
      return evaluate_transfer(sys.A(), sys.B(), sys.C1(), s);
    case Channel::k2u:
      return evaluate_transfer(sys.A(), sys.B(), sys.C2(), s);
    case Channel::k1w:
      return evaluate_transfer(sys.A(), sys.Bw(), sys.C1(), s) +
             sys.D1w().cast<Complex>();
    case Channel::k2w:
      return evaluate_transfer(sys.A(), sys.Bw(), sys.C2(), s) +
             sys.D2w().cast<Complex>();
  }
  throw DimensionError("transfer_eval: unknown channel");
}

struct SteadyStateMaps {
  MatrixXd Pi1u, Pi2u, Pi1w, Pi2w;
  /// 1/rcond estimate of A used for the solve.
  double condition_estimate = 1.0;
  bool ill_conditioned() const {
    return condition_estimate > detail::kConditionWarning;
  }
};

/// Π_iu = -C_i A^{-1} B, Π_iw = -C_i A^{-1} B_w + D_iw.
inline SteadyStateMaps steady_state_maps(const StateSpace& sys) {
  Eigen::PartialPivLU<MatrixXd> lu(sys.A());
  const double rcond = lu.rcond();
  if (!(rcond > detail::kSingularRcond)) {
    throw SingularityError("steady_state_maps: A is singular");
  }
  const MatrixXd AinvB = lu.solve(sys.B());
  const MatrixXd AinvBw = lu.solve(sys.Bw());
  SteadyStateMaps maps;
  maps.Pi1u = -sys.C1() * AinvB;
  maps.Pi2u = -sys.C2() * AinvB;
  maps.Pi1w = -sys.C1() * AinvBw + sys.D1w();
  maps.Pi2w = -sys.C2() * AinvBw + sys.D2w();
  maps.condition_estimate = 1.0 / rcond;
  return maps;
}

struct InterconnectionDims {
  Index n = 0, m = 0, p1 = 0, p2 = 0, q = 0;
  /// Size of the stacked state z = (x, u, λ).
  Index states() const { return n + m + p2; }
  /// Size of the nonlinearity's input/output y = (y_u, y_1, y_2).
  Index channels() const { return m + p1 + p2; }
};

/// Closed loop written as an LTI block G(s) in feedback with Δ:
///   ż = A z + B Δ(y) + Bw w,   y = C z + Dw w.
struct Interconnection {
  MatrixXd A, B, Bw, C, Dw;
  double m_strong = 1.0;
  double mu = 1.0;
  /// p2 x p2, zero when the loop is not regularized.
  MatrixXd gammaQ;
  double epsilon = 1.0;
  InterconnectionDims dims;

  MatrixXd shifted(double rho) const {
    return A + rho * MatrixXd::Identity(A.rows(), A.cols());
  }
};

namespace detail {

inline bool is_psd(const MatrixXd& M, double tol = 1e-10) {
  if (M.rows() != M.cols()) return false;
  if (M.size() == 0) return true;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol * scale;
}

}  // namespace detail

/// Builds the interconnection matrices for z = (x, u, λ):
///
///   A = [A  B  0; 0 -mI 0; 0 0 -μI - γQ]      (plant row scaled by 1/ε)
///   B = [0 0 0; -I -Π1uᵀ -Π2uᵀ/μ; 0 0 I]
///   C = [0 I 0; C1 0 0; C2 0 μI],  Bw = [Bw; 0; 0],  Dw = [0; D1w; D2w]
inline Interconnection assemble_interconnection(
    const StateSpace& sys, double m_strong, double mu,
    const std::optional<MatrixXd>& gammaQ = std::nullopt,
    std::optional<double> epsilon = std::nullopt) {
  if (!(m_strong > 0.0) || !(mu > 0.0)) {
    throw DimensionError("assemble_interconnection: m and mu must be positive");
  }
  if (epsilon && !(*epsilon > 0.0)) {
    throw DimensionError("assemble_interconnection: epsilon must be positive");
  }
  const Index n = sys.n(), m = sys.m(), p1 = sys.p1(), p2 = sys.p2(),
              q = sys.q();
  if (gammaQ) {
    detail::require_shape(*gammaQ, p2, p2, "gammaQ");
    if (!detail::is_psd(*gammaQ)) {
      throw DimensionError("assemble_interconnection: gammaQ must be PSD");
    }
  }
  const auto maps = steady_state_maps(sys);
  const double inv_eps = epsilon ? 1.0 / *epsilon : 1.0;

  Interconnection out;
  out.dims = {n, m, p1, p2, q};
  out.m_strong = m_strong;
  out.mu = mu;
  out.epsilon = epsilon.value_or(1.0);
  out.gammaQ = gammaQ ? *gammaQ : MatrixXd::Zero(p2, p2);

  const Index N = n + m + p2, K = m + p1 + p2;
  out.A = MatrixXd::Zero(N, N);
  out.A.block(0, 0, n, n) = inv_eps * sys.A();
  out.A.block(0, n, n, m) = inv_eps * sys.B();
  out.A.block(n, n, m, m) = -m_strong * MatrixXd::Identity(m, m);
  out.A.block(n + m, n + m, p2, p2) =
      -mu * MatrixXd::Identity(p2, p2) - out.gammaQ;

  out.B = MatrixXd::Zero(N, K);
  out.B.block(n, 0, m, m) = -MatrixXd::Identity(m, m);
  out.B.block(n, m, m, p1) = -maps.Pi1u.transpose();
  out.B.block(n, m + p1, m, p2) = -maps.Pi2u.transpose() / mu;
  out.B.block(n + m, m + p1, p2, p2) = MatrixXd::Identity(p2, p2);

  out.Bw = MatrixXd::Zero(N, q);
  out.Bw.block(0, 0, n, q) = inv_eps * sys.Bw();

  out.C = MatrixXd::Zero(K, N);
  out.C.block(0, n, m, m) = MatrixXd::Identity(m, m);
  out.C.block(m, 0, p1, n) = sys.C1();
  out.C.block(m + p1, 0, p2, n) = sys.C2();
  out.C.block(m + p1, n + m, p2, p2) = mu * MatrixXd::Identity(p2, p2);

  out.Dw = MatrixXd::Zero(K, q);
  out.Dw.block(m, 0, p1, q) = sys.D1w();
  out.Dw.block(m + p1, 0, p2, q) = sys.D2w();
  return out;
}

/// G_ρ(s) = C (sI - A - ρI)^{-1} B of the interconnection.
inline MatrixXcd interconnection_transfer(const Interconnection& inter,
                                          double rho, Complex s) {
  return evaluate_transfer(inter.shifted(rho), inter.B, inter.C, s);
}

}  // namespace ofo
