#include <gtest/gtest.h>

#include "livsic/cocycle.hpp"

using namespace livsic;

namespace {

auto cat = std::make_shared<const BaseSystem>(BaseSystem::cat_map());

double c0_gap(const Diffeo& g, const Diffeo& h, int per_dim = 32) {
  double m = 0;
  for (const auto& y : fiber_grid(g.dim(), per_dim)) m = std::max(m, fiber_distance(g.eval_lift(y), h.eval_lift(y)));
  return m;
}

std::vector<Cocycle> sample_cocycles() {
  std::vector<Cocycle> out;
  out.push_back(families::rotation(cat, 0.05, 0.1, {1, 0}));
  out.push_back(families::shear(cat, 1, 0.3, 0.2, {1, 1}));
  for (const auto& fam : families::transfer_families(cat)) out.push_back(make_coboundary(cat, fam.q, fam.u, fam.name));
  DiffeoField nudge = [](const BasePoint&) {
    Vec t(2);
    t << 0.01, 0.02;
    return Diffeo::translation(t);
  };
  out.push_back(families::perturb(families::shear(cat, 2, 0.2, 0.1, {0, 1}, {1, 1}, 1), nudge, "perturbed torus shear"));
  return out;
}

Mat dense_product(const std::vector<Mat>& ms, std::size_t from, std::size_t to) {
  Mat p = Mat::Identity(ms[0].rows(), ms[0].cols());
  for (std::size_t i = from; i < to; ++i) p = ms[i] * p;
  return p;
}

}  // namespace

TEST(Cocycle, ZeroIterateIsIdentity) {
  const auto A = families::shear(cat, 1, 0.4, 0.1, {1, 0});
  EXPECT_TRUE(A.iterate(BasePoint(TorusPoint{0.3, 0.2}), 0).is_identity());
}

TEST(Cocycle, CocycleIdentity) {
  CounterRng rng(21);
  const auto cs = sample_cocycles();
  int trials = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto& A = cs[static_cast<std::size_t>(t) % cs.size()];
    const BasePoint x = cat->random_point(rng);
    const int n = static_cast<int>(rng.below(21)), m = static_cast<int>(rng.below(21));
    const auto lhs = A.iterate(x, n + m);
    const auto rhs = compose(A.iterate(cat->iterate(x, m), n), A.iterate(x, m));
    ASSERT_LE(c0_gap(lhs, rhs, A.fiber_dim() == 1 ? 32 : 8), 1e-9) << A.name();
    ++trials;
  }
  EXPECT_EQ(trials, 1000);
}

TEST(Cocycle, InverseIdentity) {
  CounterRng rng(22);
  const auto cs = sample_cocycles();
  for (int t = 0; t < 200; ++t) {
    const auto& A = cs[static_cast<std::size_t>(t) % cs.size()];
    const BasePoint x = cat->random_point(rng);
    const int n = 1 + static_cast<int>(rng.below(15));
    const auto lhs = A.iterate(cat->iterate(x, n), -n);
    const auto rhs = A.iterate(x, n).inverse();
    ASSERT_LE(c0_gap(lhs, rhs, A.fiber_dim() == 1 ? 32 : 8), 1e-9) << A.name();
  }
}

TEST(Cocycle, TreeCap) {
  const auto A = families::shear(cat, 1, 0.4, 0.1, {1, 0});
  EXPECT_THROW(A.iterate(BasePoint(TorusPoint{0.3, 0.2}), 2000), Error);
}

TEST(SkewProduct, IdentityKeepsFiber) {
  const auto A = families::identity(cat, 1);
  SkewPoint z{TorusPoint{0.1, 0.7}, Vec::Constant(1, 0.3)};
  const auto w = A.skew_step(z, 25);
  EXPECT_EQ(w.fiber(0), 0.3);
}

TEST(SkewProduct, ConstantRotation) {
  const auto A = families::constant(cat, Diffeo::rotation(0.137));
  SkewPoint z{TorusPoint{0.1, 0.7}, Vec::Constant(1, 0.3)};
  const auto w = A.skew_step(z, 40);
  EXPECT_LE(fiber_distance(w.fiber, Vec::Constant(1, 0.3 + 40 * 0.137)), 1e-12);
}

TEST(SkewProduct, MatchesIterate) {
  CounterRng rng(23);
  for (const auto& A : sample_cocycles()) {
    const BasePoint x = cat->random_point(rng);
    Vec y(A.fiber_dim());
    for (int i = 0; i < y.size(); ++i) y(i) = rng.uniform();
    const auto w = A.skew_step({x, y}, 50);
    EXPECT_LE(fiber_distance(w.fiber, A.iterate(x, 50).eval(y)), 1e-9) << A.name();
    EXPECT_EQ(cat->distance(w.base, cat->iterate(x, 50)), 0.0);
    // backward iteration amplifies round-off by the inverse derivatives
    const auto back = A.skew_step(w, -50);
    EXPECT_LE(fiber_distance(back.fiber, y), 1e-6) << A.name();
  }
}

TEST(Derivative, IdentityHasUnitSingularValues) {
  const auto A = families::identity(cat, 2);
  const auto tr = A.derivative_cocycle({TorusPoint{0.2, 0.4}, Vec::Zero(2)}, 500);
  for (const auto& s : tr.log_svals) EXPECT_LE(s.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Derivative, ConstantLinearExponent) {
  Mat L(2, 2);
  L << 2, 1, 1, 1;
  const auto A = families::constant(cat, Diffeo::linear(L));
  const int n = 10000;
  const auto tr = A.derivative_cocycle({TorusPoint{0.2, 0.4}, Vec::Zero(2)}, n);
  // eigenvalues are the roots of t^2 - 3t + 1
  const double mu = (3 + std::sqrt(5.0)) / 2;
  EXPECT_NEAR(tr.log_svals.back()(0) / n, std::log(mu), 1e-3);
  EXPECT_NEAR(tr.log_svals.back()(1) / n, -std::log(mu), 1e-3);
}

TEST(Derivative, ChainRuleAgainstTree) {
  CounterRng rng(24);
  for (const auto& A : sample_cocycles()) {
    const BasePoint x = cat->random_point(rng);
    Vec y(A.fiber_dim());
    for (int i = 0; i < y.size(); ++i) y(i) = rng.uniform();
    const auto tr = A.derivative_cocycle({x, y}, 30, 10, true);
    for (int n = 1; n <= 30; n += 7) {
      const Mat direct = A.iterate(x, n).deriv(y);
      const Mat prod = dense_product(tr.matrices, 0, static_cast<std::size_t>(n));
      EXPECT_LE((direct - prod).norm() / direct.norm(), 1e-6) << A.name() << " n=" << n;
    }
  }
}

TEST(Derivative, MatrixCocycleIdentity) {
  CounterRng rng(25);
  for (const auto& A : sample_cocycles()) {
    const BasePoint x = cat->random_point(rng);
    Vec y(A.fiber_dim());
    for (int i = 0; i < y.size(); ++i) y(i) = rng.uniform();
    const int n = 17, m = 13;
    const auto whole = A.derivative_cocycle({x, y}, n + m, 10, true);
    const auto first = A.derivative_cocycle({x, y}, m, 10, true);
    const auto second = A.derivative_cocycle(first.end, n, 10, true);
    const Mat lhs = dense_product(whole.matrices, 0, static_cast<std::size_t>(n + m));
    const Mat rhs = dense_product(second.matrices, 0, static_cast<std::size_t>(n)) *
                    dense_product(first.matrices, 0, static_cast<std::size_t>(m));
    EXPECT_LE((lhs - rhs).norm() / lhs.norm(), 1e-8) << A.name();
  }
}

TEST(Derivative, RefactorIntervalInvariance) {
  Mat L(2, 2);
  L << 2, 1, 1, 1;
  const auto A = families::perturb(families::constant(cat, Diffeo::linear(L)),
                                   families::shear_field(cat, 2, 0.1, 0.05, {1, 0}, {1, 0}, 1), "linear+shear");
  SkewPoint z{TorusPoint{0.31, 0.77}, Vec::Constant(2, 0.2)};
  const auto a = A.derivative_cocycle(z, 10000, 10);
  const auto b = A.derivative_cocycle(z, 10000, 1);
  double worst = 0;
  for (std::size_t i = 0; i < a.log_svals.size(); ++i) {
    const double scale = std::max(1.0, std::abs(a.log_svals[i](0)));
    worst = std::max(worst, (a.log_svals[i] - b.log_svals[i]).cwiseAbs().maxCoeff() / scale);
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(Poc, IdentityResidualZero) {
  const auto A = families::identity(cat, 1);
  const auto r = A.poc_residual(cat->periodic_points(3)[2]);
  EXPECT_EQ(r.c0, 0.0);
  EXPECT_EQ(r.c1, 0.0);
}

TEST(Poc, ShearAtFixedPoint) {
  const auto A = families::constant(cat, Diffeo::shear(1, 0.5));
  const auto r = A.poc_residual(cat->periodic_points(1)[0]);
  EXPECT_NEAR(r.c0, 0.5 / two_pi, 1e-12);
}

TEST(Poc, CoboundariesSatisfyPoc) {
  for (const auto& fam : families::transfer_families(cat)) {
    const auto A = make_coboundary(cat, fam.q, fam.u, fam.name);
    for (int n = 1; n <= 6; ++n) {
      double worst = 0;
      for (const auto& po : cat->periodic_points(n)) worst = std::max(worst, A.poc_residual(po, fam.q == 1 ? 64 : 16).c1);
      EXPECT_LE(worst, 1e-8) << fam.name << " n=" << n;
    }
  }
}

TEST(Coboundary, ConstantTransferGivesIdentity) {
  const auto g = Diffeo::shear(1, 0.4);
  const auto A = make_coboundary(cat, 1, [g](const BasePoint&) { return g; }, "const");
  CounterRng rng(26);
  for (int i = 0; i < 20; ++i) EXPECT_LE(c0_gap(A(cat->random_point(rng)), Diffeo::identity(1)), 1e-12);
}

TEST(Coboundary, AbelianCase) {
  auto psi = [](const BasePoint& x) { return 0.2 * std::sin(two_pi * as_torus(x).x); };
  const auto A = make_coboundary(cat, 1, [psi](const BasePoint& x) { return Diffeo::rotation(psi(x)); }, "rot");
  CounterRng rng(27);
  for (int i = 0; i < 20; ++i) {
    const BasePoint x = cat->random_point(rng);
    EXPECT_LE(c0_gap(A(x), Diffeo::rotation(psi(cat->step(x)) - psi(x))), 1e-14);
  }
}

TEST(Holder, ConstantIsDegenerate) {
  const auto A = families::constant(cat, Diffeo::shear(1, 0.3));
  CounterRng rng(28);
  const auto h = A.estimate_holder(100, 1.0, rng);
  EXPECT_TRUE(h.degenerate);
  EXPECT_EQ(h.K, 0.0);
}

TEST(Holder, LipschitzRotationSlope) {
  const auto A = families::rotation(cat, 0.0, 0.1, {1, 0});
  CounterRng rng(29);
  const auto h = A.estimate_holder(400, 1.0, rng);
  EXPECT_FALSE(h.degenerate);
  EXPECT_NEAR(h.beta_fit, 1.0, 0.1);
}

TEST(Holder, CoboundaryHasFiniteConstant) {
  const auto fam = families::transfer_families(cat)[1];
  const auto A = make_coboundary(cat, 1, fam.u, fam.name);
  CounterRng rng(30);
  const double beta = 0.5;
  const auto h = A.estimate_holder(200, beta, rng);
  EXPECT_TRUE(std::isfinite(h.K));
  EXPECT_GT(h.K, 0.0);
  EXPECT_GE(h.beta_fit, beta);
}
