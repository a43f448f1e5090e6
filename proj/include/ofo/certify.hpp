#pragma once

/// @file
/// Stability and tracking certificates for the saddle-flow interconnection:
/// the static IQC multiplier, the LMI feasibility search, the sampled
/// frequency-domain screen, the ε → 0 limit transfer function and the
/// closed-form timescale-separation test.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ofo/errors.hpp"
#include "ofo/lti.hpp"

namespace ofo {

struct MultiplierDims {
  Index m = 0, p1 = 0, p2 = 0;
  Index channels() const { return m + p1 + p2; }
};

inline MultiplierDims multiplier_dims(const Interconnection& inter) {
  return {inter.dims.m, inter.dims.p1, inter.dims.p2};
}

struct MultiplierParts {
  MatrixXd f, h, g;  // f and h carry the φ1 / φ2 scaling, g the unit block
};

/// The three channel blocks of Ξ, each 2K x 2K with K = m + p1 + p2.
inline MultiplierParts multiplier_parts(double Lf_hat, double Lh,
                                        const MultiplierDims& d) {
  if (!(Lf_hat >= 0.0) || !(Lh >= 0.0)) {
    throw DimensionError("multiplier: Lipschitz constants must be >= 0");
  }
  const Index K = d.channels();
  const Index off[3] = {0, d.m, d.m + d.p1};
  const Index sz[3] = {d.m, d.p1, d.p2};
  auto channel = [&](int c, double L) {
    MatrixXd X = MatrixXd::Zero(2 * K, 2 * K);
    const Index a = off[c], b = K + off[c], s = sz[c];
    X.block(a, b, s, s).diagonal().setConstant(L);
    X.block(b, a, s, s).diagonal().setConstant(L);
    X.block(b, b, s, s).diagonal().setConstant(-2.0);
    return X;
  };
  return {channel(0, Lf_hat), channel(1, Lh), channel(2, 1.0)};
}

/// Ξφ over (y_u, y_1, y_2, Δ_u, Δ_1, Δ_2).
inline MatrixXd build_multiplier(double Lf_hat, double Lh, double phi1,
                                 double phi2, const MultiplierDims& d) {
  if (!(phi1 >= 0.0) || !(phi2 >= 0.0)) {
    throw DimensionError("build_multiplier: phi must be >= 0");
  }
  const auto parts = multiplier_parts(Lf_hat, Lh, d);
  return phi1 * parts.f + phi2 * parts.h + parts.g;
}

/// [(y-ŷ); (u-û)]ᵀ Ξ [(y-ŷ); (u-û)].
inline double iqc_residual(const MatrixXd& Xi, const VectorXd& y,
                           const VectorXd& y_hat, const VectorXd& u,
                           const VectorXd& u_hat) {
  const Index K = y.size();
  if (y_hat.size() != K || u.size() != K || u_hat.size() != K ||
      Xi.rows() != 2 * K || Xi.cols() != 2 * K) {
    throw DimensionError("iqc_residual: dimension mismatch");
  }
  VectorXd v(2 * K);
  v << y - y_hat, u - u_hat;
  return v.dot(Xi * v);
}

struct Certificate {
  bool feasible = false;
  double rho = 0.0;
  MatrixXd P;
  double phi1 = 0.0, phi2 = 0.0;
  double kappaP = std::numeric_limits<double>::infinity();
  /// -λ_max of the LMI matrix at the returned point; positive when feasible.
  double margin = -std::numeric_limits<double>::infinity();
  double Lf_hat = 0.0, Lh = 0.0;
  int newton_steps = 0;
  std::string diagnostics;
};

struct LmiOptions {
  /// Use max(L̂f, Lh) for both channels.
  bool unified_lipschitz = false;
  /// Accept once λ_max ≤ -accept_tol · scale.
  double accept_tol = 1e-9;
  int max_newton = 600;
  /// Keep optimizing after the first feasible point instead of stopping.
  bool optimize_margin = false;
};

namespace detail {

/// Smallest-eigenvalue guard via LLT.
inline bool is_pd(const MatrixXd& S) {
  Eigen::LLT<MatrixXd> llt(S);
  return llt.info() == Eigen::Success;
}

inline double lambda_max(const MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (S + S.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// LMI data: F(P, φ) = JᵀPK + KᵀPJ + Σ φ_k G_k, with J = [I 0], K = [Aρ B].
struct LmiData {
  Index N = 0, K = 0;
  MatrixXd Kmat;               // N x (N+K)
  std::vector<MatrixXd> G;     // active multiplier blocks, (N+K) square
  std::vector<int> phi_slot;   // 0 -> φ1, 1 -> φ2, 2 -> φ3

  MatrixXd F(const MatrixXd& P, const VectorXd& phi) const {
    const Index L = N + K;
    MatrixXd out = MatrixXd::Zero(L, L);
    const MatrixXd PK = P * Kmat;  // N x L
    out.topRows(N) += PK;
    out.leftCols(N) += PK.transpose();
    for (std::size_t i = 0; i < G.size(); ++i) out += phi[i] * G[i];
    return out;
  }
};

}  // namespace detail

/// Searches P ≻ 0, φ1, φ2 ≥ 0 with
///   [[AρᵀP + PAρ, PB], [BᵀP, 0]] + [C 0; 0 I]ᵀ Ξφ [C 0; 0 I] ⪯ 0,  Aρ = A + ρI.
///
/// Log-barrier interior-point method on min t s.t. F(P, φ) ⪯ tI, P ⪰ δI,
/// φ > 0, with the g-channel block carrying its own scale φ3 and the
/// normalization trace(P) + Σφ = N + #φ. The result is rescaled to φ3 = 1.
inline Certificate lmi_feasibility(const Interconnection& inter, double rho,
                                   double Lf_hat, double Lh,
                                   const LmiOptions& opt = {}) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) {
    throw DimensionError("lmi_feasibility: rho must be >= 0");
  }
  if (opt.unified_lipschitz) Lf_hat = Lh = std::max(Lf_hat, Lh);
  const MultiplierDims md = multiplier_dims(inter);
  const Index N = inter.A.rows(), K = md.channels(), L = N + K;
  const auto parts = multiplier_parts(Lf_hat, Lh, md);

  detail::LmiData D;
  D.N = N;
  D.K = K;
  D.Kmat.resize(N, L);
  D.Kmat << inter.shifted(rho), inter.B;
  MatrixXd T = MatrixXd::Zero(2 * K, L);
  T.topLeftCorner(K, N) = inter.C;
  T.bottomRightCorner(K, K).setIdentity();
  const Index sizes[3] = {md.m, md.p1, md.p2};
  const MatrixXd* X[3] = {&parts.f, &parts.h, &parts.g};
  for (int c = 0; c < 3; ++c) {
    if (sizes[c] == 0) continue;
    D.G.push_back(T.transpose() * (*X[c]) * T);
    D.phi_slot.push_back(c);
  }
  const Index nphi = static_cast<Index>(D.G.size());
  const Index nP = N * (N + 1) / 2;
  const Index nv = nP + nphi + 1;  // + t

  // Variable layout: P upper triangle (row-major), φ, t.
  std::vector<std::pair<Index, Index>> idx;
  idx.reserve(nP);
  for (Index a = 0; a < N; ++a)
    for (Index b = a; b < N; ++b) idx.emplace_back(a, b);

  auto unpack = [&](const VectorXd& v, MatrixXd& P, VectorXd& phi, double& t) {
    P.resize(N, N);
    for (Index i = 0; i < nP; ++i) {
      P(idx[i].first, idx[i].second) = v[i];
      P(idx[i].second, idx[i].first) = v[i];
    }
    phi = v.segment(nP, nphi);
    t = v[nv - 1];
  };

  const double budget = static_cast<double>(N + nphi);
  const double delta = 1e-8 * budget / static_cast<double>(N);
  VectorXd a_eq = VectorXd::Zero(nv);
  for (Index i = 0; i < nP; ++i)
    if (idx[i].first == idx[i].second) a_eq[i] = 1.0;
  a_eq.segment(nP, nphi).setOnes();

  VectorXd v = VectorXd::Zero(nv);
  for (Index i = 0; i < nP; ++i)
    if (idx[i].first == idx[i].second) v[i] = 1.0;
  v.segment(nP, nphi).setOnes();
  {
    MatrixXd P;
    VectorXd phi;
    double t;
    unpack(v, P, phi, t);
    const MatrixXd F0 = D.F(P, phi);
    v[nv - 1] = detail::lambda_max(F0) + 1.0 + 0.1 * F0.cwiseAbs().maxCoeff();
  }

  // Scale for acceptance: size of the LMI operator at the start point.
  double scale;
  {
    MatrixXd P;
    VectorXd phi;
    double t;
    unpack(v, P, phi, t);
    scale = std::max(1.0, D.F(P, phi).norm() / std::sqrt(double(L)));
  }

  const MatrixXd IL = MatrixXd::Identity(L, L);
  const MatrixXd IN = MatrixXd::Identity(N, N);
  auto barrier = [&](const VectorXd& x, double tau, bool& ok) {
    MatrixXd P;
    VectorXd phi;
    double t;
    unpack(x, P, phi, t);
    ok = false;
    if ((phi.array() <= 0.0).any()) return 0.0;
    const MatrixXd S = t * IL - D.F(P, phi);
    Eigen::LLT<MatrixXd> ls(0.5 * (S + S.transpose()));
    if (ls.info() != Eigen::Success) return 0.0;
    Eigen::LLT<MatrixXd> lp(P - delta * IN);
    if (lp.info() != Eigen::Success) return 0.0;
    ok = true;
    const double ld_s = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
    const double ld_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
    return tau * t - ld_s - ld_p - phi.array().log().sum();
  };

  Certificate cert;
  cert.rho = rho;
  cert.Lf_hat = Lf_hat;
  cert.Lh = Lh;
  double best_lmax = std::numeric_limits<double>::infinity();
  VectorXd best_v = v;
  auto lmax_at = [&](const VectorXd& x) {
    MatrixXd P;
    VectorXd phi;
    double t;
    unpack(x, P, phi, t);
    return detail::lambda_max(D.F(P, phi));
  };

  const double nu = static_cast<double>(L + N + nphi);
  double tau = nu / std::max(1e-12, std::abs(v[nv - 1]));
  int steps = 0;
  bool done = false;
  while (!done && steps < opt.max_newton) {
    // Centering.
    for (int inner = 0; inner < 80 && steps < opt.max_newton; ++inner, ++steps) {
      MatrixXd P;
      VectorXd phi;
      double t;
      unpack(v, P, phi, t);
      const MatrixXd S = t * IL - D.F(P, phi);
      const MatrixXd W = S.llt().solve(IL);
      const MatrixXd V = (P - delta * IN).llt().solve(IN);
      const MatrixXd Jt = IL.leftCols(N);  // L x N
      const MatrixXd WK = W * D.Kmat.transpose();  // L x N
      const MatrixXd Sjj = W.topLeftCorner(N, N);
      const MatrixXd Sjk = WK.topRows(N);          // J W Kᵀ
      const MatrixXd Skk = D.Kmat * WK;            // K W Kᵀ
      std::vector<MatrixXd> R;                     // J W G W Kᵀ
      std::vector<MatrixXd> WG;
      for (Index k = 0; k < nphi; ++k) {
        WG.push_back(W * D.G[k]);
        R.push_back((WG.back() * WK).topRows(N));
      }
      const MatrixXd RI = (W * WK).topRows(N);    // J W W Kᵀ
      (void)Jt;

      VectorXd g = VectorXd::Zero(nv);
      MatrixXd H = MatrixXd::Zero(nv, nv);
      // Unit pairs composing the symmetric basis element of slot i.
      auto units = [&](Index i, std::pair<Index, Index>* u) {
        const auto [a, b] = idx[i];
        u[0] = {a, b};
        if (a == b) return 1;
        u[1] = {b, a};
        return 2;
      };
      std::pair<Index, Index> ui[2], uj[2];
      for (Index i = 0; i < nP; ++i) {
        const int ni = units(i, ui);
        double gi = 0.0, gpi = 0.0;
        for (int s = 0; s < ni; ++s) {
          gi += 2.0 * Sjk(ui[s].first, ui[s].second);
          gpi -= V(ui[s].second, ui[s].first);
        }
        g[i] = gi + gpi;
        for (Index j = i; j < nP; ++j) {
          const int nj = units(j, uj);
          double h = 0.0;
          for (int s = 0; s < ni; ++s) {
            const auto [a, b] = ui[s];
            for (int r = 0; r < nj; ++r) {
              const auto [c, d] = uj[r];
              h += 2.0 * Sjk(a, d) * Sjk(c, b) + 2.0 * Sjj(a, c) * Skk(b, d);
              h += V(b, c) * V(d, a);
            }
          }
          H(i, j) = h;
          H(j, i) = h;
        }
        for (Index k = 0; k < nphi; ++k) {
          double h = 0.0;
          for (int s = 0; s < ni; ++s) h += 2.0 * R[k](ui[s].first, ui[s].second);
          H(i, nP + k) = H(nP + k, i) = h;
        }
        double ht = 0.0;
        for (int s = 0; s < ni; ++s) ht -= 2.0 * RI(ui[s].first, ui[s].second);
        H(i, nv - 1) = H(nv - 1, i) = ht;
      }
      for (Index k = 0; k < nphi; ++k) {
        g[nP + k] = WG[k].trace() - 1.0 / phi[k];
        for (Index l = k; l < nphi; ++l) {
          const double h = (WG[k].cwiseProduct(WG[l].transpose())).sum();
          H(nP + k, nP + l) = H(nP + l, nP + k) = h;
        }
        H(nP + k, nP + k) += 1.0 / (phi[k] * phi[k]);
        const double ht = -(W * WG[k]).trace();
        H(nP + k, nv - 1) = H(nv - 1, nP + k) = ht;
      }
      g[nv - 1] = tau - W.trace();
      H(nv - 1, nv - 1) = W.squaredNorm();

      Eigen::LDLT<MatrixXd> ldlt(H);
      const VectorXd y1 = ldlt.solve(g);
      const VectorXd y2 = ldlt.solve(a_eq);
      const double nu_eq = -a_eq.dot(y1) / a_eq.dot(y2);
      const VectorXd dx = -y1 - nu_eq * y2;
      const double dec2 = -g.dot(dx);
      if (!std::isfinite(dec2)) {
        cert.diagnostics = "Newton system became singular";
        done = true;
        break;
      }
      if (dec2 < 1e-9) break;

      bool ok0;
      const double f0 = barrier(v, tau, ok0);
      double s = 1.0;
      VectorXd vn;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, s *= 0.5) {
        vn = v + s * dx;
        bool ok;
        const double fn = barrier(vn, tau, ok);
        if (ok && fn <= f0 - 0.25 * s * dec2) {
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      v = vn;
      const double lm = lmax_at(v);
      if (lm < best_lmax) {
        best_lmax = lm;
        best_v = v;
      }
      if (!opt.optimize_margin && lm <= -opt.accept_tol * scale) {
        done = true;
        ++steps;
        break;
      }
    }
    if (done) break;
    if (nu / tau < 1e-11 * scale) break;
    tau *= 8.0;
  }

  MatrixXd P;
  VectorXd phi;
  double t;
  unpack(best_v, P, phi, t);
  double ph[3] = {0.0, 0.0, 1.0};
  for (Index k = 0; k < nphi; ++k) ph[D.phi_slot[k]] = phi[k];
  const double s3 = md.p2 > 0 ? ph[2] : 1.0;
  cert.P = P / s3;
  cert.phi1 = ph[0] / s3;
  cert.phi2 = ph[1] / s3;
  cert.margin = -best_lmax / s3;
  cert.newton_steps = steps;
  cert.feasible = best_lmax <= -opt.accept_tol * scale;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cert.P, Eigen::EigenvaluesOnly);
  const double emin = es.eigenvalues().minCoeff(), emax = es.eigenvalues().maxCoeff();
  cert.kappaP = emin > 0.0 ? emax / emin : std::numeric_limits<double>::infinity();
  if (cert.feasible &&
      !(emin > 1e-8 * cert.P.trace() / static_cast<double>(N))) {
    cert.feasible = false;
    cert.diagnostics = "P is numerically singular";
  }
  if (!cert.feasible && cert.diagnostics.empty()) {
    cert.diagnostics = "no feasible point found; best lambda_max = " +
                       std::to_string(best_lmax);
  }
  return cert;
}

/// Full LMI matrix for given (P, φ1, φ2) with the unit g-channel block.
inline MatrixXd lmi_matrix(const Interconnection& inter, double rho,
                           const MatrixXd& P, const MatrixXd& Xi) {
  const Index N = inter.A.rows(), K = inter.B.cols(), L = N + K;
  detail::require_shape(P, N, N, "P");
  detail::require_shape(Xi, 2 * K, 2 * K, "Xi");
  const MatrixXd Ar = inter.shifted(rho);
  MatrixXd M = MatrixXd::Zero(L, L);
  M.topLeftCorner(N, N) = Ar.transpose() * P + P * Ar;
  M.topRightCorner(N, K) = P * inter.B;
  M.bottomLeftCorner(K, N) = inter.B.transpose() * P;
  MatrixXd T = MatrixXd::Zero(2 * K, L);
  T.topLeftCorner(K, N) = inter.C;
  T.bottomRightCorner(K, K).setIdentity();
  return M + T.transpose() * Xi * T;
}

inline MatrixXd certificate_multiplier(const Interconnection& inter,
                                       const Certificate& c) {
  return build_multiplier(c.Lf_hat, c.Lh, c.phi1, c.phi2, multiplier_dims(inter));
}

// ---------------------------------------------------------------------------
// Frequency domain.

struct FdiResult {
  bool holds = true;
  /// Largest eigenvalue of [G;I]*Ξ[G;I] over the grid and ω → ∞.
  double worst = -std::numeric_limits<double>::infinity();
  double worst_omega = 0.0;
};

/// ω = 0 plus `points` log-spaced frequencies. The span runs from
/// 1e-3·min(1, σ_min(A)) to 1e4·‖A‖₂ so both the optimizer and the plant
/// time scales are covered.
inline std::vector<double> default_frequency_grid(const MatrixXd& A,
                                                  int points = 400) {
  Eigen::JacobiSVD<MatrixXd> svd(A);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double lo = 1e-3 * std::max(1e-3, std::min(1.0, smin));
  const double hi = 1e4 * std::max(1.0, smax);
  std::vector<double> grid{0.0};
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < points; ++i) {
    grid.push_back(std::pow(10.0, a + (b - a) * i / std::max(1, points - 1)));
  }
  return grid;
}

/// Sampled check of [G_ρ(jω); I]* Ξ [G_ρ(jω); I] ⪯ 0. This is a necessary
/// condition screen on a finite grid, not a proof.
inline FdiResult fdi_sampled_check(const Interconnection& inter, double rho,
                                   const MatrixXd& Xi,
                                   const std::vector<double>& grid,
                                   double tol = 1e-8) {
  const Index K = inter.B.cols();
  detail::require_shape(Xi, 2 * K, 2 * K, "Xi");
  FdiResult r;
  const MatrixXcd Xc = Xi.cast<Complex>();
  auto consider = [&](double val, double omega) {
    if (val > r.worst) {
      r.worst = val;
      r.worst_omega = omega;
    }
  };
  for (double w : grid) {
    MatrixXcd G;
    try {
      G = interconnection_transfer(inter, rho, Complex(0.0, w));
    } catch (const SingularityError&) {
      consider(std::numeric_limits<double>::infinity(), w);
      continue;
    }
    MatrixXcd S(2 * K, K);
    S << G, MatrixXcd::Identity(K, K);
    const MatrixXcd M = S.adjoint() * Xc * S;
    Eigen::SelfAdjointEigenSolver<MatrixXcd> es(0.5 * (M + M.adjoint()),
                                                Eigen::EigenvaluesOnly);
    consider(es.eigenvalues().maxCoeff(), w);
  }
  {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Xi.bottomRightCorner(K, K),
                                               Eigen::EigenvaluesOnly);
    consider(es.eigenvalues().maxCoeff(), std::numeric_limits<double>::infinity());
  }
  const double scale = std::max(1.0, Xi.cwiseAbs().maxCoeff());
  r.holds = r.worst <= tol * scale;
  return r;
}

// ---------------------------------------------------------------------------
// ε → 0 limit and closed-form timescale conditions.

/// H_ρ(s) = [Π̄1u 0; Π2u μI] diag(g_m I, g_μ) [-Π̄1uᵀ -Π2uᵀ/μ; 0 I] with
/// g_m = (s + m - ρ)^{-1}, g_μ = (sI + (μ - ρ)I + γQ)^{-1}, Π̄1u = [I; Π1u].
inline MatrixXcd limit_transfer_H(const SteadyStateMaps& maps, double m_strong,
                                  double mu, double rho, Complex s,
                                  const std::optional<MatrixXd>& gammaQ = std::nullopt) {
  const Index m = maps.Pi1u.cols(), p1 = maps.Pi1u.rows(), p2 = maps.Pi2u.rows();
  const Index K = m + p1 + p2;
  const double m_rho = m_strong - rho, mu_rho = mu - rho;
  const Complex dm = s + m_rho;
  if (std::abs(dm) <= 1e-14 * std::max(1.0, std::abs(m_rho))) {
    throw SingularityError("limit_transfer_H: s is at the pole -(m - rho)");
  }
  MatrixXcd Mg = MatrixXcd::Identity(p2, p2) * (s + mu_rho);
  if (gammaQ) {
    detail::require_shape(*gammaQ, p2, p2, "gammaQ");
    Mg += gammaQ->cast<Complex>();
  }
  Eigen::PartialPivLU<MatrixXcd> lu(Mg);
  if (p2 > 0 && !(lu.rcond() > detail::kSingularRcond)) {
    throw SingularityError("limit_transfer_H: s is at a pole of the dual block");
  }
  MatrixXd Pbar(m + p1, m);
  Pbar << MatrixXd::Identity(m, m), maps.Pi1u;

  MatrixXcd Lft = MatrixXcd::Zero(K, m + p2);
  Lft.topLeftCorner(m + p1, m) = Pbar.cast<Complex>();
  Lft.bottomLeftCorner(p2, m) = maps.Pi2u.cast<Complex>();
  Lft.bottomRightCorner(p2, p2) = MatrixXcd::Identity(p2, p2) * mu;

  MatrixXcd Rgt = MatrixXcd::Zero(m + p2, K);
  Rgt.topLeftCorner(m, m + p1) = -Pbar.transpose().cast<Complex>();
  Rgt.topRightCorner(m, p2) = -(maps.Pi2u.transpose() / mu).cast<Complex>();
  Rgt.bottomRightCorner(p2, p2).setIdentity();

  MatrixXcd mid = MatrixXcd::Zero(m + p2, m + p2);
  mid.topLeftCorner(m, m) = MatrixXcd::Identity(m, m) / dm;
  if (p2 > 0) mid.bottomRightCorner(p2, p2) = lu.inverse();
  return Lft * mid * Rgt;
}

struct TimescaleResult {
  bool holds = true;
  /// Smallest eigenvalue of the block matrix over the grid (> 0 passes).
  double worst = std::numeric_limits<double>::infinity();
  double worst_omega = 0.0;
};

/// The 2x2 block matrix whose positive definiteness (with φ1 = φ2 = 1 and
/// L̄ = μ) is equivalent to the frequency-domain inequality on H_ρ.
inline MatrixXd timescale_block(const SteadyStateMaps& maps, double m_strong,
                                double mu, double rho, double omega,
                                const std::optional<MatrixXd>& gammaQ = std::nullopt) {
  const Index m = maps.Pi1u.cols(), p1 = maps.Pi1u.rows(), p2 = maps.Pi2u.rows();
  const double m_rho = m_strong - rho, mu_rho = mu - rho, w2 = omega * omega;
  MatrixXd Pbar(m + p1, m);
  Pbar << MatrixXd::Identity(m, m), maps.Pi1u;
  const double gm = m_rho / (m_rho * m_rho + w2);
  MatrixXd out(m + p1 + p2, m + p1 + p2);
  out.topLeftCorner(m + p1, m + p1) =
      mu * gm * Pbar * Pbar.transpose() + MatrixXd::Identity(m + p1, m + p1);
  out.topRightCorner(m + p1, p2) = gm * Pbar * maps.Pi2u.transpose();
  out.bottomLeftCorner(p2, m + p1) = out.topRightCorner(m + p1, p2).transpose();
  MatrixXd br = (gm / mu) * maps.Pi2u * maps.Pi2u.transpose();
  if (gammaQ) {
    detail::require_shape(*gammaQ, p2, p2, "gammaQ");
    const MatrixXd I = MatrixXd::Identity(p2, p2);
    const MatrixXd M = mu_rho * I + *gammaQ;
    const MatrixXd Gam =
        (w2 * I + M * M).ldlt().solve(w2 * I + M * (*gammaQ - rho * I));
    br += 0.5 * (Gam + Gam.transpose());
  } else {
    br.diagonal().array() += (w2 - rho * mu_rho) / (mu_rho * mu_rho + w2);
  }
  out.bottomRightCorner(p2, p2) = br;
  return out;
}

inline TimescaleResult timescale_condition(
    const SteadyStateMaps& maps, double m_strong, double mu, double rho,
    const std::vector<double>& omega_grid,
    const std::optional<MatrixXd>& gammaQ = std::nullopt) {
  if (!(rho < m_strong) || !(rho < mu)) {
    throw DimensionError("timescale_condition: rho must be below m and mu");
  }
  TimescaleResult r;
  for (double w : omega_grid) {
    const MatrixXd B = timescale_block(maps, m_strong, mu, rho, w, gammaQ);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(B, Eigen::EigenvaluesOnly);
    const double e = es.eigenvalues().minCoeff();
    if (e < r.worst) {
      r.worst = e;
      r.worst_omega = w;
    }
  }
  r.holds = r.worst > 0.0;
  return r;
}

/// ω = 0 plus log-spaced points spanning the optimizer poles.
inline std::vector<double> timescale_grid(double m_strong, double mu,
                                          int points = 400) {
  const double lo = 1e-3 * std::min(m_strong, mu);
  const double hi = 1e3 * std::max(m_strong, mu);
  std::vector<double> g{0.0};
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < points; ++i)
    g.push_back(std::pow(10.0, a + (b - a) * i / std::max(1, points - 1)));
  return g;
}

/// Largest ρ in [lo, hi] with passes(ρ), by bisection to relative width
/// rel_tol. Throws when the range minimum already fails.
inline double find_max_rho(const std::function<bool(double)>& passes, double lo,
                           double hi, double rel_tol = 1e-4) {
  if (!(lo > 0.0) || !(hi > lo)) {
    throw DimensionError("find_max_rho: need 0 < lo < hi");
  }
  if (!passes(lo)) {
    throw NonConvergenceError(
        "find_max_rho: certificate fails at the range minimum", lo, 0);
  }
  if (passes(hi)) return hi;
  while (hi - lo > rel_tol * lo) {
    const double mid = 0.5 * (lo + hi);
    (passes(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace ofo
