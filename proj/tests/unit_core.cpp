// Linear-system utilities and proximal/Moreau primitives.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ofo/json_io.hpp"
#include "ofo/lti.hpp"
#include "ofo/prox.hpp"
#include "test_util.hpp"

using namespace ofo;
using ofo::fixtures::randn;
using ofo::fixtures::randv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd s11(double v) { return MatrixXd::Constant(1, 1, v); }
VectorXd v1(double v) { return VectorXd::Constant(1, v); }
const double kInf = std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------- hurwitz

TEST(Hurwitz, ScalarStable) {
  const auto h = hurwitz_check(s11(-1));
  EXPECT_TRUE(h.stable);
  EXPECT_DOUBLE_EQ(h.abscissa, -1.0);
}

TEST(Hurwitz, ImaginaryAxisIsNotStable) {
  MatrixXd A(2, 2);
  A << 0, 1, -1, 0;
  const auto h = hurwitz_check(A);
  EXPECT_FALSE(h.stable);
  EXPECT_NEAR(h.abscissa, 0.0, 1e-14);
}

TEST(Hurwitz, RejectsBadInput) {
  EXPECT_THROW(hurwitz_check(MatrixXd::Zero(2, 3)), DimensionError);
  MatrixXd A = s11(-1);
  A(0, 0) = std::nan("");
  EXPECT_THROW(hurwitz_check(A), DimensionError);
}

TEST(StateSpaceCtor, ValidatesShapesAndStability) {
  EXPECT_THROW(StateSpace(s11(1), s11(1), s11(0), s11(1), s11(1), s11(0), s11(0)),
               DimensionError);
  EXPECT_THROW(StateSpace(s11(-1), MatrixXd::Zero(2, 1), s11(0), s11(1), s11(1), s11(0),
                          s11(0)),
               DimensionError);
  EXPECT_THROW(StateSpace(s11(-1), s11(1), s11(0), s11(1), s11(1), MatrixXd::Zero(2, 1),
                          s11(0)),
               DimensionError);
}

// ---------------------------------------------------------------- transfer

TEST(TransferEval, ScalarAtZero) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  const auto G = transfer_eval(sys, Channel::k1u, {0.0, 0.0});
  EXPECT_NEAR(std::abs(G(0, 0) - Complex(1.0, 0.0)), 0.0, 1e-15);
}

TEST(TransferEval, ScalarAtJ) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  const auto G = transfer_eval(sys, Channel::k1u, {0.0, 1.0});
  EXPECT_NEAR(std::abs(G(0, 0) - 1.0 / Complex(1.0, 1.0)), 0.0, 1e-15);
}

TEST(TransferEval, PureFeedthrough) {
  const StateSpace sys(s11(-1), s11(1), s11(0), s11(1), s11(1), s11(2), s11(0));
  for (Complex s : {Complex(0, 0), Complex(0, 3), Complex(2, -1)}) {
    EXPECT_NEAR(std::abs(transfer_eval(sys, Channel::k1w, s)(0, 0) - 2.0), 0.0, 1e-15);
  }
}

TEST(TransferEval, PoleIsSingular) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  EXPECT_THROW(transfer_eval(sys, Channel::k1u, {-1.0, 0.0}), SingularityError);
}

TEST(TransferEval, ConjugateSymmetry) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sys = fixtures::random_statespace(rng, 1 + trial % 5, 1 + trial % 3, 2, 1, 2);
    const Complex s(U(rng), U(rng));
    for (auto ch : {Channel::k1u, Channel::k2u, Channel::k1w, Channel::k2w}) {
      const MatrixXcd a = transfer_eval(sys, ch, s);
      const MatrixXcd b = transfer_eval(sys, ch, std::conj(s));
      EXPECT_LT((a.conjugate() - b).norm(), 1e-10 * (1.0 + a.norm()));
    }
  }
}

// ---------------------------------------------------------------- steady state

TEST(SteadyStateMaps, ScalarGain) {
  const auto sys = fixtures::scalar_plant(-2, 4, 1, 1);
  EXPECT_NEAR(steady_state_maps(sys).Pi1u(0, 0), 2.0, 1e-15);
}

TEST(SteadyStateMaps, DisturbanceWithFeedthrough) {
  const StateSpace sys(s11(-1), s11(1), s11(1), s11(1), s11(1), s11(0), s11(1));
  EXPECT_NEAR(steady_state_maps(sys).Pi2w(0, 0), 2.0, 1e-15);
}

TEST(SteadyStateMaps, AgreesWithTransferAtZero) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sys = fixtures::random_statespace(rng, 1 + trial % 7, 1 + trial % 4,
                                                trial % 3, 1 + trial % 2, 1 + trial % 3);
    const auto maps = steady_state_maps(sys);
    auto check = [&](const MatrixXd& Pi, Channel ch) {
      const MatrixXd G = transfer_eval(sys, ch, {0.0, 0.0}).real();
      EXPECT_LT((Pi - G).norm(), 1e-10 * (1.0 + G.norm()));
    };
    check(maps.Pi1u, Channel::k1u);
    check(maps.Pi2u, Channel::k2u);
    check(maps.Pi1w, Channel::k1w);
    check(maps.Pi2w, Channel::k2w);
  }
}

// ---------------------------------------------------------------- interconnection

TEST(Interconnection, ScalarBlocks) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  const auto inter = assemble_interconnection(sys, 1.0, 2.0);
  MatrixXd expect(3, 3);
  expect << -1, 1, 0, 0, -1, 0, 0, 0, -2;
  EXPECT_LT((inter.A - expect).norm(), 1e-15);
}

TEST(Interconnection, FastPlantScaling) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  const auto inter = assemble_interconnection(sys, 1.0, 2.0, std::nullopt, 0.1);
  EXPECT_NEAR(inter.A(0, 0), -10.0, 1e-12);
  EXPECT_NEAR(inter.A(0, 1), 10.0, 1e-12);
  EXPECT_NEAR(inter.A(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(inter.A(2, 2), -2.0, 1e-15);
}

TEST(Interconnection, RegularizedDualBlock) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  const auto inter = assemble_interconnection(sys, 1.0, 2.0, s11(0.5));
  EXPECT_NEAR(inter.A(2, 2), -2.5, 1e-15);
}

TEST(Interconnection, RejectsBadParameters) {
  const auto sys = fixtures::scalar_plant(-1, 1, 1, 1);
  EXPECT_THROW(assemble_interconnection(sys, 0.0, 1.0), DimensionError);
  EXPECT_THROW(assemble_interconnection(sys, 1.0, -1.0), DimensionError);
  EXPECT_THROW(assemble_interconnection(sys, 1.0, 1.0, std::nullopt, 0.0), DimensionError);
  EXPECT_THROW(assemble_interconnection(sys, 1.0, 1.0, s11(-1.0)), DimensionError);
  EXPECT_THROW(assemble_interconnection(sys, 1.0, 1.0, MatrixXd::Identity(2, 2)),
               DimensionError);
}

TEST(Interconnection, EpsilonScalesOnlyPlantRows) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = fixtures::random_statespace(rng, 3, 2, 1, 2, 2);
    const double eps = 0.05 + 0.1 * trial;
    const auto a = assemble_interconnection(sys, 0.7, 1.3);
    const auto b = assemble_interconnection(sys, 0.7, 1.3, std::nullopt, eps);
    MatrixXd scaled = a.A;
    scaled.topRows(3) /= eps;
    EXPECT_LT((scaled - b.A).norm(), 1e-12 * scaled.norm());
    MatrixXd bw = a.Bw;
    bw.topRows(3) /= eps;
    EXPECT_LT((bw - b.Bw).norm(), 1e-12 * (1.0 + bw.norm()));
    EXPECT_EQ(a.B, b.B);
    EXPECT_EQ(a.C, b.C);
    EXPECT_EQ(a.Dw, b.Dw);
  }
}

namespace {

// Entry-by-entry construction written independently of the library builder.
struct Reference {
  MatrixXd A, B, C, Bw, Dw;
};

Reference reference_interconnection(const StateSpace& s, double m, double mu, const MatrixXd& gQ,
                                    double eps) {
  const Index n = s.n(), nu = s.m(), p1 = s.p1(), p2 = s.p2(), q = s.q();
  const MatrixXd Ainv = s.A().inverse();
  const MatrixXd P1 = -s.C1() * Ainv * s.B();
  const MatrixXd P2 = -s.C2() * Ainv * s.B();
  const Index N = n + nu + p2, K = nu + p1 + p2;
  Reference r{MatrixXd::Zero(N, N), MatrixXd::Zero(N, K), MatrixXd::Zero(K, N),
              MatrixXd::Zero(N, q), MatrixXd::Zero(K, q)};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) r.A(i, j) = s.A()(i, j) / eps;
    for (Index j = 0; j < nu; ++j) r.A(i, n + j) = s.B()(i, j) / eps;
    for (Index j = 0; j < q; ++j) r.Bw(i, j) = s.Bw()(i, j) / eps;
  }
  for (Index i = 0; i < nu; ++i) {
    r.A(n + i, n + i) = -m;
    r.B(n + i, i) = -1.0;
    for (Index j = 0; j < p1; ++j) r.B(n + i, nu + j) = -P1(j, i);
    for (Index j = 0; j < p2; ++j) r.B(n + i, nu + p1 + j) = -P2(j, i) / mu;
    r.C(i, n + i) = 1.0;
  }
  for (Index i = 0; i < p2; ++i) {
    for (Index j = 0; j < p2; ++j) r.A(n + nu + i, n + nu + j) = -gQ(i, j) - (i == j ? mu : 0.0);
    r.B(n + nu + i, nu + p1 + i) = 1.0;
    r.C(nu + p1 + i, n + nu + i) = mu;
    for (Index j = 0; j < n; ++j) r.C(nu + p1 + i, j) = s.C2()(i, j);
    for (Index j = 0; j < q; ++j) r.Dw(nu + p1 + i, j) = s.D2w()(i, j);
  }
  for (Index i = 0; i < p1; ++i) {
    for (Index j = 0; j < n; ++j) r.C(nu + i, j) = s.C1()(i, j);
    for (Index j = 0; j < q; ++j) r.Dw(nu + i, j) = s.D1w()(i, j);
  }
  return r;
}

}  // namespace

TEST(Interconnection, MatchesReferenceOnRandomDimensions) {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> D(1, 5), D0(0, 3);
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = D(rng), m = D(rng), p1 = D0(rng), p2 = D(rng), q = D(rng);
    const auto sys = fixtures::random_statespace(rng, n, m, p1, p2, q);
    const MatrixXd L = randn(rng, p2, p2);
    const MatrixXd gQ = 0.1 * L * L.transpose();
    const double eps = trial % 2 ? 0.2 : 1.0;
    const auto got = assemble_interconnection(sys, 0.8, 1.7, gQ, eps);
    const auto ref = reference_interconnection(sys, 0.8, 1.7, gQ, eps);
    const double tol = 1e-9;
    EXPECT_LT((got.A - ref.A).norm(), tol * (1 + ref.A.norm())) << "trial " << trial;
    EXPECT_LT((got.B - ref.B).norm(), tol * (1 + ref.B.norm())) << "trial " << trial;
    EXPECT_LT((got.C - ref.C).norm(), tol * (1 + ref.C.norm())) << "trial " << trial;
    EXPECT_LT((got.Bw - ref.Bw).norm(), tol * (1 + ref.Bw.norm())) << "trial " << trial;
    EXPECT_LT((got.Dw - ref.Dw).norm(), tol * (1 + ref.Dw.norm())) << "trial " << trial;
  }
}

// ---------------------------------------------------------------- prox examples

TEST(Prox, BoxProjectsOutside) {
  EXPECT_DOUBLE_EQ(prox(ProxSpec::box(v1(0), v1(1)), v1(5), 1.0)[0], 1.0);
}

TEST(Prox, BoxKeepsInterior) {
  EXPECT_DOUBLE_EQ(prox(ProxSpec::box(v1(0), v1(1)), v1(0.3), 1.0)[0], 0.3);
}

TEST(Prox, ZeroSetMapsToOrigin) {
  for (double mu : {0.1, 1.0, 7.0}) {
    EXPECT_DOUBLE_EQ(prox(ProxSpec::zero_set(1), v1(3.7), mu)[0], 0.0);
  }
}

TEST(Prox, QuadraticClosedForm) {
  MatrixXd H(2, 2);
  H << 2, 0.5, 0.5, 1;
  const VectorXd c = (VectorXd(2) << 1, -1).finished();
  const VectorXd v = (VectorXd(2) << 0.3, 2.0).finished();
  const double mu = 0.7;
  const VectorXd expect = (MatrixXd::Identity(2, 2) + mu * H).inverse() * (v - mu * c);
  EXPECT_LT((prox(ProxSpec::quadratic(H, c), v, mu) - expect).norm(), 1e-14);
}

TEST(Prox, SoftBoxHasNoProx) {
  EXPECT_THROW(prox(ProxSpec::soft_box(4, v1(-0.5), v1(0.5)), v1(1), 1.0), CapabilityError);
}

TEST(Prox, RejectsBadInput) {
  EXPECT_THROW(prox(ProxSpec::box(v1(0), v1(1)), v1(1), 0.0), DimensionError);
  EXPECT_THROW(prox(ProxSpec::box(v1(0), v1(1)), VectorXd::Zero(2), 1.0), DimensionError);
  EXPECT_THROW(ProxSpec::box(v1(1), v1(0)), DimensionError);
}

TEST(MoreauGrad, BoxOutside) {
  EXPECT_DOUBLE_EQ(moreau_grad(ProxSpec::box(v1(0), v1(1)), v1(3), 2.0)[0], 1.0);
}

TEST(MoreauGrad, ZeroSet) {
  EXPECT_DOUBLE_EQ(moreau_grad(ProxSpec::zero_set(1), v1(3), 2.0)[0], 1.5);
}

TEST(MoreauGrad, BoxInside) {
  EXPECT_DOUBLE_EQ(moreau_grad(ProxSpec::box(v1(0), v1(1)), v1(0.5), 1.0)[0], 0.0);
}

TEST(SoftThreshold, Examples) {
  EXPECT_DOUBLE_EQ(soft_threshold(v1(0), v1(1), v1(5))[0], 4.0);
  EXPECT_DOUBLE_EQ(soft_threshold(v1(0), v1(1), v1(-2))[0], -2.0);
  EXPECT_DOUBLE_EQ(soft_threshold(v1(0), v1(1), v1(0.7))[0], 0.0);
}

TEST(SoftThreshold, EqualsScaledMoreauGradOfBox) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd a = randv(rng, 3), b = randv(rng, 3);
    const VectorXd lo = a.cwiseMin(b), hi = a.cwiseMax(b);
    const VectorXd v = randv(rng, 3, 2.0);
    const double mu = 0.1 + trial * 0.01;
    const VectorXd st = soft_threshold(lo, hi, v);
    EXPECT_LT((st - mu * moreau_grad(ProxSpec::box(lo, hi), v, mu)).norm(), 1e-12);
  }
}

TEST(EnvelopeValue, Examples) {
  const VectorXd v = (VectorXd(2) << 1.0, -2.0).finished();
  EXPECT_NEAR(moreau_envelope_value(ProxSpec::zero_set(2), v, 0.5), 5.0, 1e-14);
  EXPECT_DOUBLE_EQ(moreau_envelope_value(ProxSpec::box(v1(0), v1(1)), v1(0.4), 1.0), 0.0);
  EXPECT_DOUBLE_EQ(moreau_envelope_value(ProxSpec::box(v1(0), v1(1)), v1(3), 1.0), 2.0);
}

// ---------------------------------------------------------------- delta map

TEST(DeltaEval, StrongConvexityRemovedFromIdentityHessian) {
  const auto d = make_delta_map(ProxSpec::quadratic(MatrixXd::Identity(1, 1), v1(0)),
                                ProxSpec::empty(), ProxSpec::zero_set(1), 4.0);
  EXPECT_DOUBLE_EQ(d.Lf, 1.0);
  EXPECT_DOUBLE_EQ(d.Lf_hat(), 0.0);
  for (double y : {-3.0, 0.0, 2.5}) {
    const VectorXd out = delta_eval(d, (VectorXd(2) << y, 0.0).finished(), 0.0);
    EXPECT_NEAR(out[0], 0.0, 1e-15);
  }
}

TEST(DeltaEval, ZeroSetBlock) {
  const auto d = make_delta_map(ProxSpec::quadratic(MatrixXd::Identity(1, 1), v1(0)),
                                ProxSpec::empty(), ProxSpec::zero_set(1), 4.0);
  EXPECT_DOUBLE_EQ(delta_eval(d, (VectorXd(2) << 0.0, 2.0).finished(), 0.0)[1], 2.0);
}

TEST(DeltaEval, SoftBoxBlock) {
  const auto d = make_delta_map(ProxSpec::quadratic(MatrixXd::Identity(1, 1), v1(0)),
                                ProxSpec::soft_box(4.0, v1(-0.5), v1(0.5)),
                                ProxSpec::zero_set(1), 4.0);
  EXPECT_DOUBLE_EQ(delta_eval(d, (VectorXd(3) << 0.0, 1.0, 0.0).finished(), 0.0)[1], 2.0);
}

TEST(DeltaEval, RejectsWrongSize) {
  const auto d = make_delta_map(ProxSpec::quadratic(MatrixXd::Identity(1, 1), v1(0)),
                                ProxSpec::empty(), ProxSpec::zero_set(1), 4.0);
  EXPECT_THROW(delta_eval(d, VectorXd::Zero(3), 0.0), DimensionError);
}

TEST(DeltaEval, ScheduleSwitchesBounds) {
  ParamSchedule sched({{1.0, {{Target::h, 0, -0.2, 0.2}}}, {2.0, {}}});
  const auto d = make_delta_map(ProxSpec::quadratic(MatrixXd::Identity(1, 1), v1(0)),
                                ProxSpec::soft_box(1.0, v1(-0.5), v1(0.5)),
                                ProxSpec::zero_set(1), 1.0, sched);
  const VectorXd y = (VectorXd(3) << 0.0, 1.0, 0.0).finished();
  EXPECT_NEAR(delta_eval(d, y, 0.5)[1], 0.5, 1e-15);
  EXPECT_NEAR(delta_eval(d, y, 1.0)[1], 0.8, 1e-15);
  EXPECT_NEAR(delta_eval(d, y, 1.5)[1], 0.8, 1e-15);
  EXPECT_NEAR(delta_eval(d, y, 2.0)[1], 0.5, 1e-15);
}

TEST(ParamScheduleCtor, RejectsBadTimes) {
  EXPECT_THROW(ParamSchedule({{1.0, {}}, {1.0, {}}}), ScheduleError);
  EXPECT_THROW(ParamSchedule(std::vector<ScheduleEntry>{{-1.0, {}}}), ScheduleError);
  EXPECT_THROW(make_delta_map(ProxSpec::quadratic(MatrixXd::Identity(1, 1), v1(0)),
                              ProxSpec::soft_box(1.0, v1(-0.5), v1(0.5)), ProxSpec::zero_set(1),
                              1.0, ParamSchedule({{1.0, {{Target::h, 3, -1.0, 1.0}}}})),
               DimensionError);
}

// ---------------------------------------------------------------- prox properties

namespace {

std::vector<ProxSpec> random_specs(std::mt19937_64& rng, Index dim) {
  const VectorXd a = randv(rng, dim), b = randv(rng, dim);
  VectorXd lo = a.cwiseMin(b), hi = a.cwiseMax(b);
  lo[0] = -kInf;
  const MatrixXd L = randn(rng, dim, dim);
  const MatrixXd H = L * L.transpose() + 0.1 * MatrixXd::Identity(dim, dim);
  std::vector<ProxSpec> out{ProxSpec::box(lo, hi), ProxSpec::zero_set(dim),
                            ProxSpec::quadratic(H, randv(rng, dim))};
  if (dim >= 2) {
    out.push_back(ProxSpec::composite(
        {ProxSpec::box(lo.head(dim - 1), hi.head(dim - 1)), ProxSpec::zero_set(1)}));
  }
  return out;
}

}  // namespace

TEST(ProxProperty, Nonexpansive) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const Index dim = 1 + trial % 4;
    const double mu = 0.05 + 0.02 * (trial % 50);
    for (const auto& spec : random_specs(rng, dim)) {
      const VectorXd u = randv(rng, dim, 3.0), v = randv(rng, dim, 3.0);
      EXPECT_LE((prox(spec, u, mu) - prox(spec, v, mu)).norm(),
                (u - v).norm() * (1 + 1e-12) + 1e-15)
          << spec.kind_name();
    }
  }
}

TEST(ProxProperty, MoreauGradLipschitz) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 300; ++trial) {
    const Index dim = 1 + trial % 4;
    const double mu = 0.05 + 0.02 * (trial % 50);
    for (const auto& spec : random_specs(rng, dim)) {
      const VectorXd u = randv(rng, dim, 3.0), v = randv(rng, dim, 3.0);
      EXPECT_LE((moreau_grad(spec, u, mu) - moreau_grad(spec, v, mu)).norm(),
                (u - v).norm() / mu * (1 + 1e-12) + 1e-15)
          << spec.kind_name();
    }
  }
}

TEST(ProxProperty, BoxMatchesGridSearch) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  const double h = 2e-3;
  for (int trial = 0; trial < 20; ++trial) {
    const Index dim = 1 + trial % 2;
    VectorXd lo(dim), hi(dim), v(dim);
    for (Index i = 0; i < dim; ++i) {
      const double a = U(rng), b = U(rng);
      lo[i] = std::min(a, b);
      hi[i] = std::max(a, b);
      v[i] = 1.5 * U(rng);
    }
    const double mu = 0.5;
    const auto spec = ProxSpec::box(lo, hi);
    // Objective on the box reduces to the quadratic term.
    VectorXd best = lo;
    double best_val = kInf;
    const int nx = int((hi[0] - lo[0]) / h) + 1;
    const int ny = dim == 2 ? int((hi[1] - lo[1]) / h) + 1 : 1;
    for (int i = 0; i <= nx; ++i) {
      for (int j = 0; j <= (dim == 2 ? ny : 0); ++j) {
        VectorXd x(dim);
        x[0] = std::min(lo[0] + i * h, hi[0]);
        if (dim == 2) x[1] = std::min(lo[1] + j * h, hi[1]);
        const double val = value(spec, x) + (x - v).squaredNorm() / (2 * mu);
        if (val < best_val) {
          best_val = val;
          best = x;
        }
      }
    }
    EXPECT_LE((prox(spec, v, mu) - best).cwiseAbs().maxCoeff(), 2 * h);
  }
}

TEST(ProxProperty, EnvelopeIntegratesGradient) {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 30; ++trial) {
    const Index dim = 1 + trial % 3;
    const double mu = 0.3 + 0.1 * (trial % 5);
    for (const auto& spec : random_specs(rng, dim)) {
      const VectorXd a = randv(rng, dim, 2.0), b = randv(rng, dim, 2.0);
      // Composite Simpson along the segment a -> b.
      const int n = 20000;
      double acc = 0.0;
      for (int k = 0; k <= n; ++k) {
        const double t = double(k) / n;
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        acc += w * moreau_grad(spec, a + t * (b - a), mu).dot(b - a);
      }
      acc /= 3.0 * n;
      const double diff = moreau_envelope_value(spec, b, mu) - moreau_envelope_value(spec, a, mu);
      EXPECT_NEAR(acc, diff, 1e-6) << spec.kind_name();
    }
  }
}

TEST(DeltaProperty, BlockwiseLipschitzBounds) {
  std::mt19937_64 rng(35);
  const Index m = 3, p1 = 2, p2 = 2;
  const MatrixXd L = randn(rng, m, m);
  const MatrixXd H = L * L.transpose() + 0.5 * MatrixXd::Identity(m, m);
  const auto d = make_delta_map(
      ProxSpec::quadratic(H, randv(rng, m)),
      ProxSpec::soft_box(3.0, VectorXd::Constant(p1, -0.5), VectorXd::Constant(p1, 0.5)),
      ProxSpec::composite({ProxSpec::box(v1(-1), v1(1)), ProxSpec::zero_set(1)}), 2.0);
  const double bounds[3] = {d.Lf_hat(), d.Lh, 1.0};
  for (int trial = 0; trial < 10000; ++trial) {
    const VectorXd y = randv(rng, m + p1 + p2, 2.0), z = randv(rng, m + p1 + p2, 2.0);
    const VectorXd dy = delta_eval(d, y, 0.0), dz = delta_eval(d, z, 0.0);
    const Index off[4] = {0, m, m + p1, m + p1 + p2};
    for (int b = 0; b < 3; ++b) {
      const Index len = off[b + 1] - off[b];
      const double lhs = (dy.segment(off[b], len) - dz.segment(off[b], len)).norm();
      const double rhs = bounds[b] * (y.segment(off[b], len) - z.segment(off[b], len)).norm();
      ASSERT_LE(lhs, rhs * (1 + 1e-8) + 1e-14) << "block " << b;
    }
  }
}

// ---------------------------------------------------------------- json

TEST(JsonIo, StateSpaceRoundTrip) {
  std::mt19937_64 rng(41);
  const auto sys = fixtures::random_statespace(rng, 3, 2, 0, 1, 2);
  const auto back = statespace_from_json(json::parse(statespace_to_json(sys).dump()));
  EXPECT_EQ(back.A(), sys.A());
  EXPECT_EQ(back.Bw(), sys.Bw());
  EXPECT_EQ(back.p1(), 0);
  EXPECT_EQ(back.C1().cols(), 3);
  EXPECT_EQ(back.D2w(), sys.D2w());
  EXPECT_THROW(statespace_from_json(json{{"A", {{-1.0}}}}), DimensionError);
}

TEST(JsonIo, ProxSpecRoundTrip) {
  VectorXd lo(2), hi(2);
  lo << -kInf, 0.0;
  hi << 1.0, kInf;
  const auto spec = ProxSpec::composite(
      {ProxSpec::box(lo, hi), ProxSpec::zero_set(1), ProxSpec::soft_box(2.0, v1(-1), v1(1))});
  const auto back = proxspec_from_json(json::parse(proxspec_to_json(spec).dump()));
  EXPECT_EQ(back.dim(), 4);
  const VectorXd v = (VectorXd(4) << -5.0, 2.0, 0.0, 3.0).finished();
  EXPECT_EQ(back.kind_name(), spec.kind_name());
  EXPECT_DOUBLE_EQ(value(back, v), value(spec, v));
  EXPECT_DOUBLE_EQ(value(back, v), 4.0);
  EXPECT_THROW(proxspec_from_json(json{{"kind", "nope"}}), DimensionError);
}

TEST(JsonIo, ScheduleRoundTrip) {
  ParamSchedule s({{10.0, {{Target::h, 0, -0.5, 0.5}}}, {20.0, {}}});
  const auto back = schedule_from_json(json::parse(schedule_to_json(s).dump()));
  ASSERT_EQ(back.entries().size(), 2u);
  EXPECT_EQ(back.entries()[0].overrides[0].target, Target::h);
  EXPECT_DOUBLE_EQ(back.entries()[0].overrides[0].hi, 0.5);
  EXPECT_EQ(back.active_index(15.0), 0);
  EXPECT_EQ(back.active_index(25.0), 1);
}
