#include <gtest/gtest.h>

#include "livsic/shadowing.hpp"

using namespace livsic;

namespace {

auto cat = std::make_shared<const BaseSystem>(BaseSystem::cat_map());
auto shift2 = std::make_shared<const BaseSystem>(BaseSystem(FullShift(2, 64)));

const double golden_log = std::log((3 + std::sqrt(5.0)) / 2);

Vec v1(double a) {
  Vec v(1);
  v << a;
  return v;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Mat diag2(double a, double b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

// f(u, s) = (3u + c s^2, 0.3 s + c (s^2 + u^2) / 2)
TangentMap quadratic(double c) {
  return [c](const Vec& x) {
    const double u = x(0), s = x(1);
    Jet j;
    j.value = v2(3 * u + c * s * s, 0.3 * s + c * (s * s + u * u) / 2);
    j.jacobian.resize(2, 2);
    j.jacobian << 3, 2 * c * s, c * u, 0.3 + c * s;
    return j;
  };
}

// u0 on the stable set over s0: bisect on the sign of u at the first exit
// from |u| <= 2 within 20 steps.
double bisect_stable(const TangentMap& f, double s0) {
  const auto exit_sign = [&](double u0) {
    Vec x = v2(u0, s0);
    for (int k = 0; k < 20; ++k) {
      x = f(x).value;
      if (std::abs(x(0)) > 2) return x(0) > 0 ? 1 : -1;
    }
    return 0;
  };
  double lo = -1, hi = 1;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    const int s = exit_sign(mid);
    if (s == 0) return mid;
    (s > 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

double scale_to(double target) {
  const auto pts = box_grid(2, 1.0, 33);
  return target / c1_gap(quadratic(1.0), linear_map(diag2(3, 0.3)), pts);
}

// first k with d(z_k, z_{k+n}) < eps along an exact grid orbit
SkewPoint recurrent_start(const Cocycle& A, SkewPoint z, int n, double eps, int max_steps = 200000) {
  std::vector<SkewPoint> orbit{z};
  for (int k = 0; k < n; ++k) orbit.push_back(A.skew_step(orbit.back()));
  for (int k = 0; k < max_steps; ++k) {
    const auto& a = orbit[orbit.size() - 1 - static_cast<std::size_t>(n)];
    if (skew_distance(A.base(), a, orbit.back()) < eps) return a;
    orbit.push_back(A.skew_step(orbit.back()));
  }
  throw std::runtime_error("no recurrence found");
}

FakeSetParams shear_params() {
  auto p = make_fake_set_params({std::log(0.5)}, golden_log, 1.0, 1.0, 0.0, 1.0, 40);
  p.epsilon0 = 0.05;
  return p;
}

}  // namespace

TEST(Bump, EndpointValues) {
  for (double r : {0.1, 0.01}) {
    EXPECT_EQ(bump(r, 0), 1.0);
    EXPECT_EQ(bump(r, r), 1.0);
    EXPECT_EQ(bump(r, 2 * r), 0.0);
    EXPECT_EQ(bump(r, 3 * r), 0.0);
  }
}

TEST(Bump, DerivativeBound) {
  for (double r : {0.1, 0.01}) {
    double mx = 0, mx_fd = 0;
    const double h = r * 1e-6;
    for (int i = 0; i <= 100000; ++i) {
      const double t = 2.5 * r * i / 100000;
      mx = std::max(mx, std::abs(bump_slope(r, t)));
      mx_fd = std::max(mx_fd, std::abs(bump(r, t + h) - bump(r, t)) / h);
    }
    EXPECT_NEAR(mx, 1.5 / r, 1e-6 / r);
    EXPECT_LE(mx_fd, 2 / r);
  }
}

TEST(Bump, C1AtGluingRadii) {
  const double r = 0.1, h = 1e-7;
  EXPECT_EQ(bump_slope(r, r), 0.0);
  EXPECT_EQ(bump_slope(r, 2 * r), 0.0);
  // the slope vanishes linearly on both sides: |rho'| <= 6 h / r^2
  EXPECT_LE(std::abs(bump_slope(r, r + h)), 6 * h / (r * r) * (1 + 1e-6));
  EXPECT_LE(std::abs(bump_slope(r, 2 * r - h)), 6 * h / (r * r) * (1 + 1e-6));
}

TEST(Localize, RejectsLargeRadius) {
  EXPECT_THROW(localize(Diffeo::identity(1), v1(0), 0.2), Error);
}

TEST(Localize, LinearMapUnchanged) {
  Mat L(2, 2);
  L << 2, 1, 1, 1;
  const auto loc = localize(Diffeo::linear(L), v2(0.3, 0.7), 0.05);
  CounterRng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec v = 0.15 * random_unit(2, rng) * rng.uniform();
    const Jet j = loc(v);
    EXPECT_LE((j.value - L * v).norm(), 1e-14);
    EXPECT_LE((j.jacobian - L).norm(), 1e-14);
  }
}

TEST(Localize, BranchesAreExact) {
  const Diffeo g = compose(Diffeo::shear(2, 0.4, {1, 1}, 0), Diffeo::translation(v2(0.1, 0.05)));
  const FiberPoint y = v2(0.2, 0.6);
  const double r = 0.05;
  const auto loc = localize(g, y, r);
  CounterRng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Vec dir = random_unit(2, rng);
    const Vec inner = r * rng.uniform() * dir;
    const Jet a = loc(inner);
    const Jet b = g.jet_lift(y + inner);
    EXPECT_EQ(a.value, b.value - loc.gy);
    EXPECT_EQ(a.jacobian, b.jacobian);
    const Vec outer = (2 * r + rng.uniform()) * dir;
    const Jet c = loc(outer);
    EXPECT_EQ(c.value, loc.D * outer);
    EXPECT_EQ(c.jacobian, loc.D);
  }
}

TEST(Localize, JacobianMatchesFiniteDifferences) {
  const Diffeo g = Diffeo::shear(2, 0.4, {1, 2}, 1);
  const auto loc = localize(g, v2(0.1, 0.3), 0.1);
  CounterRng rng(3);
  const double h = 1e-6;
  for (int i = 0; i < 200; ++i) {
    const Vec v = (0.1 + 0.1 * rng.uniform()) * random_unit(2, rng);
    Mat fd(2, 2);
    for (int a = 0; a < 2; ++a) {
      Vec e = Vec::Zero(2);
      e(a) = h;
      fd.col(a) = (loc(v + e).value - loc(v - e).value) / (2 * h);
    }
    EXPECT_LE((fd - loc(v).jacobian).norm(), 1e-6);
  }
}

TEST(Localize, CircleShearSlope) {
  const auto s = localization_slope(Diffeo::shear(1, 0.5), {0.1, 0.05, 0.025, 0.0125});
  EXPECT_FALSE(s.affine);
  EXPECT_NEAR(s.slope, 1.0, 0.1);
}

TEST(Localize, BuiltinFamilySlopes) {
  const std::vector<Diffeo> family{
      Diffeo::shear(1, 0.3), Diffeo::shear(1, 0.45, {2, 0}),
      compose(Diffeo::rotation(0.2), Diffeo::shear(1, 0.4)),
      Diffeo::shear(2, 0.3, {1, 1}, 0), compose(Diffeo::shear(2, 0.2, {0, 1}, 0), Diffeo::shear(2, 0.3, {1, 0}, 1)),
  };
  for (const auto& g : family) {
    const auto s = localization_slope(g, {0.1, 0.05, 0.025, 0.0125});
    EXPECT_FALSE(s.affine) << g.describe();
    EXPECT_NEAR(s.slope, 1.0, 0.1) << g.describe();
    EXPECT_GT(s.constant, 0);
  }
}

TEST(Localize, AffineFamiliesHaveNoGap) {
  Mat L(2, 2);
  L << 2, 1, 1, 1;
  EXPECT_TRUE(localization_slope(Diffeo::rotation(0.3), {0.1, 0.05}).affine);
  EXPECT_TRUE(localization_slope(Diffeo::linear(L), {0.1, 0.05}).affine);
  EXPECT_TRUE(localization_slope(Diffeo::translation(v2(0.1, 0.2)), {0.1, 0.05}).affine);
}

TEST(ConjugatedGap, IdentityGivesDelta) {
  const auto g = linear_map(diag2(1.2, 0.8));
  const TangentMap h = [](const Vec& v) {
    Jet j{v2(1.2 * v(0) + 0.01 * std::sin(v(1)), 0.8 * v(1)), diag2(1.2, 0.8)};
    j.jacobian(0, 1) = 0.01 * std::cos(v(1));
    return j;
  };
  const auto grid = box_grid(2, 1.0, 21);
  const auto rep = conjugated_gap_check(Mat::Identity(2, 2), Mat::Identity(2, 2), g, h, 1.0 + 1e-9, 0.1, grid);
  EXPECT_DOUBLE_EQ(rep.gap, rep.delta);
  EXPECT_LT(rep.gap, rep.bound);
}

TEST(ConjugatedGap, EqualMapsGiveZero) {
  const auto g = quadratic(0.3);
  const auto rep = conjugated_gap_check(diag2(2, 1), diag2(1, 2), g, g, 2.5, 0.2, box_grid(2, 1.0, 11));
  EXPECT_EQ(rep.gap, 0.0);
}

TEST(ConjugatedGap, RejectsBadPreconditions) {
  const auto g = quadratic(0.3);
  const auto grid = box_grid(2, 1.0, 5);
  EXPECT_THROW(conjugated_gap_check(diag2(1, 1), diag2(1, 1), g, g, 2.0, 0.3, grid), Error);  // e^0.3 > 4/3
  EXPECT_THROW(conjugated_gap_check(diag2(2.1, 1), diag2(2.1, 1), g, g, 2.0, 0.2, grid), Error);
}

TEST(ConjugatedGap, RandomTrials) {
  CounterRng rng(44);
  const double ell = 3, eta = 0.2;
  const auto grid = box_grid(2, 0.5, 9);
  int passed = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto bounded = [&](double bound) {
      Mat m(2, 2);
      for (int i = 0; i < 4; ++i) m(i / 2, i % 2) = rng.normal();
      return Mat(m * (bound * (0.05 + 0.95 * rng.uniform()) / op_norm(m)));
    };
    const bool swap = rng.below(2) == 1;
    const Mat A = bounded(swap ? ell : ell * std::exp(eta) * (1 - 1e-12));
    const Mat B = bounded(swap ? ell * std::exp(eta) * (1 - 1e-12) : ell);
    const Mat L = bounded(2.0);
    const double c1 = rng.uniform() - 0.5, c2 = rng.uniform() - 0.5, w = 1 + 3 * rng.uniform();
    const TangentMap g = linear_map(L);
    const TangentMap h = [=](const Vec& v) {
      Jet j{L * v, L};
      j.value(0) += c1 * std::sin(w * v(1));
      j.value(1) += c2 * std::cos(w * v(0));
      j.jacobian(0, 1) += c1 * w * std::cos(w * v(1));
      j.jacobian(1, 0) -= c2 * w * std::sin(w * v(0));
      return j;
    };
    const auto rep = conjugated_gap_check(A, B, g, h, ell, eta, grid);
    ASSERT_LT(rep.gap, rep.bound);
    ++passed;
  }
  EXPECT_EQ(passed, 1000);
}

TEST(GraphTransform, LinearGraphsAreFlat) {
  const std::vector<Mat> L{diag2(3, 0.3), diag2(2.5, 0.4)};
  const std::vector<TangentMap> f{linear_map(L[0]), linear_map(L[1])};
  const auto G = finite_graph_transform(L, f, 1, 1, 0.5);
  for (const auto& g : G.values)
    for (const auto& u : g) EXPECT_EQ(u.norm(), 0.0);
}

TEST(GraphTransform, MatchesBisectionOracle) {
  const double lambda = 0.5;
  const double c = scale_to(hadamard_perron_radius(lambda) / 2);
  const auto f = quadratic(c);
  const auto G = finite_graph_transform({diag2(3, 0.3)}, {f}, 1, 1, lambda);
  EXPECT_LE(G.invariance_residual, 1e-8);
  EXPECT_LE(G.max_slope, 1.0);
  double worst = 0;
  for (int i = 0; i <= 40; ++i) {
    const double s = -1 + 2.0 * i / 40;
    worst = std::max(worst, std::abs(G.eval(0, v1(s))(0) - bisect_stable(f, s)));
  }
  EXPECT_LE(worst, 1e-4);
  // the perturbation bends the graph away from the flat one
  EXPECT_GT(std::abs(G.eval(0, v1(1.0))(0)), 1e-3);
}

TEST(GraphTransform, VaryingSequence) {
  const double lambda = 0.5;
  const double c = scale_to(hadamard_perron_radius(lambda) / 2);
  std::vector<Mat> L;
  std::vector<TangentMap> f;
  for (double w : {1.0, -0.5, 0.8}) {
    L.push_back(diag2(3, 0.3));
    f.push_back(quadratic(w * c));
  }
  const auto G = finite_graph_transform(L, f, 1, 1, lambda);
  EXPECT_LE(G.invariance_residual, 1e-8);
  // graph 0 against the oracle for the periodic composition
  const TangentMap composed = [&](const Vec& x) { return f[2](f[1](f[0](x).value).value); };
  for (double s : {-0.8, -0.3, 0.0, 0.4, 0.9}) EXPECT_NEAR(G.eval(0, v1(s))(0), bisect_stable(composed, s), 1e-4);
}

TEST(GraphTransform, ContractionRate) {
  const double lambda = 0.5;
  const auto f = quadratic(scale_to(hadamard_perron_radius(lambda) / 2));
  const auto G = finite_graph_transform({diag2(3, 0.3)}, {f}, 1, 1, lambda);
  CounterRng rng(9);
  for (int t = 0; t < 50; ++t) {
    const double a = 2 * rng.uniform() - 1, b = 2 * rng.uniform() - 1;
    const auto ratios = graph_contraction(G, {f}, 0, v1(a), v1(b), 15);
    for (std::size_t k = 0; k < ratios.size(); ++k) ASSERT_LT(ratios[k], std::pow(lambda, static_cast<double>(k + 1)));
    const double rate = -std::log(ratios.back()) / 15;
    EXPECT_GE(rate, -std::log(lambda) - 0.05);
  }
}

TEST(GraphTransform, TwoStableDirections) {
  Mat L = Mat::Zero(3, 3);
  L.diagonal() << 3, 0.3, 0.2;
  const double lambda = 0.5, c = 0.01;
  const TangentMap f = [L, c](const Vec& x) {
    Jet j{L * x, L};
    j.value(0) += c * x(1) * x(2);
    j.value(1) += c * x(0) * x(0);
    j.jacobian(0, 1) += c * x(2);
    j.jacobian(0, 2) += c * x(1);
    j.jacobian(1, 0) += 2 * c * x(0);
    return j;
  };
  const auto G = finite_graph_transform({L}, {f}, 1, 2, lambda, 1.0, 33);
  EXPECT_LE(G.invariance_residual, 1e-8);
  EXPECT_LE(G.max_slope, 1.0);
}

TEST(GraphTransform, RejectsBadHypotheses) {
  const std::vector<TangentMap> lin{linear_map(diag2(3, 0.3))};
  EXPECT_THROW(finite_graph_transform({diag2(1.5, 0.3)}, {linear_map(diag2(1.5, 0.3))}, 1, 1, 0.5), Error);
  EXPECT_THROW(finite_graph_transform({diag2(3, 0.3)}, {quadratic(1.0)}, 1, 1, 0.5), Error);
  Mat skew = diag2(3, 0.3);
  skew(0, 1) = 0.1;
  EXPECT_THROW(finite_graph_transform({skew}, lin, 1, 1, 0.5), Error);
}

TEST(FakeSetParams, Invariants) {
  for (double beta : {0.5, 1.0}) {
    const auto p = make_fake_set_params({0.4, -0.3}, golden_log, beta, 2.0, 3.0, 1.0, 30);
    EXPECT_LT(p.eta, beta * beta * p.kappa);
    EXPECT_LT(p.kappa, 0.5 * std::min(0.7, golden_log));
    EXPECT_LT(p.eta, 0.7 / 2 - p.kappa);
    EXPECT_LT(p.r0, 1.0 / 4);
    EXPECT_LT(p.r0, std::pow(p.alpha2 / (8 * 3.0 * 4), 1 / beta));
    EXPECT_DOUBLE_EQ(p.C_tilde, 2.0);
    ASSERT_EQ(p.radii.size(), 31u);
    for (int n = 0; n <= 30; ++n) {
      EXPECT_DOUBLE_EQ(p.radius(n), p.radius(30 - n));
      if (n < 30) {
        EXPECT_LE(std::abs(std::log(p.radius(n + 1) / p.radius(n))), p.eta / (beta * beta) * (1 + 1e-12));
      }
    }
  }
}

TEST(FakeSetParams, TrivialSpectrumUsesTau) {
  const auto p = make_fake_set_params({0.0}, golden_log, 1.0, 1.0, 0.0, 1.0, 10);
  EXPECT_NEAR(p.kappa, 0.99 * golden_log / 2, 1e-12);
}

TEST(FakeSetParams, LocalInvariance) {
  for (const auto& base : std::vector<std::shared_ptr<const BaseSystem>>{cat, shift2}) {
    const auto A = families::shear(base, 1, 0.3, 0.2, {1, 0});
    auto p = make_fake_set_params({0.0}, base->hyperbolicity().tau, 1.0, 1.0, 0.0, 1.0, 20);
    CounterRng rng(5);
    std::vector<SkewPoint> orbit{SkewPoint{base->random_point(rng), v1(0.3)}};
    for (int k = 0; k < 20; ++k) orbit.push_back(A.skew_step(orbit.back()));
    const double C = calibrate_local_invariance(A, orbit, p, rng);
    EXPECT_EQ(C, std::exp2(std::round(std::log2(C))));
    EXPECT_GE(C, 2.0);  // both bases expand by more than e^{eta}
    // a fresh sample at the calibrated C
    CounterRng fresh(6);
    for (int k = 0; k < 20; ++k)
      for (int s = 0; s < 100; ++s) {
        const double rk = p.radius(k) / C;
        SkewPoint z{base->random_point_near(orbit[static_cast<std::size_t>(k)].base, rk, fresh),
                    wrap_fiber(orbit[static_cast<std::size_t>(k)].fiber + v1(rk * (2 * fresh.uniform() - 1)))};
        EXPECT_LT(skew_distance(*base, A.skew_step(z), orbit[static_cast<std::size_t>(k + 1)]), p.radius(k + 1));
      }
  }
}

TEST(FakeStablePoint, IdentityKeepsFiber) {
  const auto A = families::identity(cat, 2);
  const auto p = make_fake_set_params({0.0}, golden_log, 1.0, 1.0, 0.0, 1.0, 40);
  const SkewPoint z{BasePoint(TorusPoint{0.25, 0.6}), v2(0.3, 0.4)};
  const auto& T = cat->torus();
  const BasePoint target = ToralAutomorphism::translate(as_torus(z.base), 0.01 * T.stable_direction());
  const auto fp = fake_stable_point(A, z, target, p, 60);
  EXPECT_EQ(fp.point.fiber, z.fiber);
  EXPECT_EQ(fp.mode, "neutral");
  EXPECT_NEAR(fp.base_rate, golden_log, 1e-6);
  BasePoint x = z.base;
  for (std::size_t k = 0; k < fp.orbit.size(); ++k) {
    EXPECT_NEAR(skew_distance(*cat, fp.orbit[k], {x, z.fiber}), cat->distance(fp.orbit[k].base, x), 1e-15);
    x = cat->step(x);
  }
}

TEST(FakeStablePoint, ContractingShear) {
  const auto A = families::constant(cat, Diffeo::shear(1, 0.5));
  const auto p = shear_params();
  CounterRng rng(12);
  const auto& T = cat->torus();
  for (int t = 0; t < 10; ++t) {
    const SkewPoint z{cat->random_point(rng), v1(rng.uniform())};
    const BasePoint target = ToralAutomorphism::translate(as_torus(z.base), (0.02 * rng.uniform()) * T.stable_direction());
    const auto fp = fake_stable_point(A, z, target, p, 150);
    EXPECT_EQ(fp.mode, "hyperbolic");
    EXPECT_LE(fp.certificate, p.C_tilde);
    EXPECT_NEAR(fp.kappa_cert, std::min(golden_log, std::log(2.0)), 0.05);
  }
}

TEST(FakeStablePoint, ShearFromFiberPerturbation) {
  // target on the stable leaf and a perturbed fiber seed: the shooting must
  // still find the contracting point
  const auto A = families::shear(cat, 1, -0.6, 0.1, {1, 0});
  auto p = shear_params();
  CounterRng rng(13);
  const SkewPoint z{cat->random_point(rng), v1(0.1)};
  const BasePoint target = ToralAutomorphism::translate(as_torus(z.base), 0.01 * cat->torus().stable_direction());
  const auto fp = fake_stable_point(A, z, target, p, 100);
  EXPECT_EQ(fp.mode, "hyperbolic");
  EXPECT_LE(fp.certificate, p.C_tilde);
}

TEST(FakeStablePoint, CoboundaryIsNeutral) {
  for (const auto& fam : families::transfer_families(cat)) {
    const auto A = make_coboundary(cat, fam.q, fam.u, fam.name);
    auto p = make_fake_set_params({0.0}, golden_log, 1.0, 2.0, 0.0, 1.0, 40);
    CounterRng rng(14);
    const SkewPoint z{cat->random_point(rng), fam.q == 1 ? v1(0.4) : v2(0.4, 0.7)};
    const BasePoint target = ToralAutomorphism::translate(as_torus(z.base), 1e-3 * cat->torus().stable_direction());
    const auto fp = fake_stable_point(A, z, target, p, 60);
    EXPECT_EQ(fp.mode, "neutral") << fam.name;
    EXPECT_LE(fp.certificate, p.C_tilde) << fam.name;
  }
}

TEST(FiberClose, ClosedOrbitHasZeroDeviation) {
  const auto A = families::constant(cat, Diffeo::shear(1, 0.5));
  const auto p = shear_params();
  const SkewPoint z{BasePoint(TorusPoint{0, 0}), v1(0.5)};
  const auto r = fiber_close(A, z, 1, p);
  for (double d : r.deviations) EXPECT_EQ(d, 0.0);
  EXPECT_EQ(r.bound_constant, 0.0);
}

TEST(FiberClose, ContractingShearRates) {
  const auto A = families::constant(cat, Diffeo::shear(1, 0.5));
  const auto p = shear_params();
  CounterRng rng(31);
  for (int t = 0; t < 5; ++t) {
    const SkewPoint z0 = recurrent_start(A, {cat->random_point(rng), v1(rng.uniform())}, 40, p.epsilon0);
    const auto r = fiber_close(A, z0, 40, p);
    EXPECT_EQ(r.base_period, 40);
    EXPECT_EQ(r.mode, "hyperbolic");
    EXPECT_GE(r.rate_forward, p.kappa - 0.05);
    EXPECT_GE(r.rate_backward, p.kappa - 0.05);
    EXPECT_EQ(cat->distance(r.closed_orbit.front().base, r.closed_orbit.back().base), 0.0);
    EXPECT_LE(r.base_orbit_defect, 1e-12);
    EXPECT_FALSE(r.bound_flagged);
    for (int i = 0; i <= 40; ++i)
      EXPECT_LE(r.deviations[static_cast<std::size_t>(i)],
                r.bound_constant * r.gap * std::exp(-p.kappa * std::min(i, 40 - i)) * (1 + 1e-9) + p.floor);
  }
}

TEST(FiberClose, IdentityReducesToBaseClosing) {
  const auto A = families::identity(cat, 1);
  const auto p = shear_params();
  CounterRng rng(32);
  const SkewPoint z0 = recurrent_start(A, {cat->random_point(rng), v1(0.3)}, 20, 0.05);
  const auto r = fiber_close(A, z0, 20, p);
  const auto cl = cat->anosov_close(z0.base, 20);
  EXPECT_EQ(r.mode, "neutral");
  for (int i = 0; i <= 20; ++i) {
    const auto& w = r.closed_orbit[static_cast<std::size_t>(i)];
    EXPECT_EQ(w.fiber, z0.fiber);
    EXPECT_EQ(cat->distance(w.base, cl.p.orbit[static_cast<std::size_t>(i % 20)]), 0.0);
  }
}

TEST(FiberClose, CoboundaryNeutral) {
  const auto fam = families::transfer_families(cat)[1];
  const auto A = make_coboundary(cat, fam.q, fam.u, fam.name);
  auto p = make_fake_set_params({0.0}, golden_log, 1.0, 2.0, 0.0, 1.0, 30);
  p.epsilon0 = 0.05;
  CounterRng rng(33);
  const SkewPoint z0 = recurrent_start(A, {cat->random_point(rng), v1(0.2)}, 30, p.epsilon0);
  const auto r = fiber_close(A, z0, 30, p);
  EXPECT_EQ(r.mode, "neutral");
  EXPECT_GE(r.rate_forward, p.kappa - 0.05);
  EXPECT_GE(r.rate_backward, p.kappa - 0.05);
}

TEST(FiberClose, RejectsNonRecurrent) {
  const auto A = families::identity(cat, 1);
  const SkewPoint z{BasePoint(TorusPoint{0.1, 0.2}), v1(0)};
  try {
    fiber_close(A, z, 3, shear_params());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotRecurrent);
  }
}
