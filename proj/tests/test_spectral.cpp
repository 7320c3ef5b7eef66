#include <gtest/gtest.h>

#include "livsic/spectral.hpp"

using namespace livsic;

namespace {

auto cat = std::make_shared<const BaseSystem>(BaseSystem::cat_map());

Mat mat2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

Mat random_matrix(int d, CounterRng& rng) {
  Mat m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

LyapunovSpectrum manual_spectrum(std::vector<double> ex, std::vector<int> mult) {
  LyapunovSpectrum s;
  s.exponents = std::move(ex);
  s.multiplicities = std::move(mult);
  return s;
}

const double golden_log = std::log((3 + std::sqrt(5.0)) / 2);

}  // namespace

TEST(SingularValues, Diagonal) {
  const auto s = singular_values(mat2(2, 0, 0, 0.5));
  EXPECT_NEAR(s.svals(0), 2.0, 1e-15);
  EXPECT_NEAR(s.svals(1), 0.5, 1e-15);
}

TEST(SingularValues, Rotation) {
  const double t = 0.7;
  const auto s = singular_values(mat2(std::cos(t), -std::sin(t), std::sin(t), std::cos(t)));
  EXPECT_NEAR(s.svals(0), 1.0, 1e-14);
  EXPECT_NEAR(s.svals(1), 1.0, 1e-14);
}

TEST(SingularValues, SingularThrows) {
  EXPECT_THROW(singular_values(mat2(1, 2, 2, 4)), Error);
}

TEST(SingularValues, SphereSearchOracle) {
  CounterRng rng(31);
  for (int t = 0; t < 20; ++t) {
    const Mat m = random_matrix(2, rng);
    double best = 0, worst = INFINITY;
    for (int i = 0; i < 10000; ++i) {
      const double th = std::numbers::pi * i / 10000.0;
      Vec v(2);
      v << std::cos(th), std::sin(th);
      best = std::max(best, (m * v).norm());
      worst = std::min(worst, (m * v).norm());
    }
    const auto s = singular_values(m);
    EXPECT_NEAR(s.svals(0), best, 1e-3);
    EXPECT_NEAR(s.svals(1), worst, 1e-3);
  }
}

TEST(SingularValues, ProductIsDeterminantAndInverseReciprocal) {
  CounterRng rng(32);
  for (int t = 0; t < 500; ++t) {
    const int d = 1 + static_cast<int>(rng.below(3));
    const Mat m = random_matrix(d, rng);
    const auto s = singular_values(m);
    const auto si = singular_values(m.inverse());
    EXPECT_NEAR(s.svals.prod() / std::abs(m.determinant()), 1.0, 1e-10);
    for (int i = 0; i < d; ++i) EXPECT_NEAR(s.svals(i) * si.svals(d - 1 - i), 1.0, 1e-10);
  }
}

TEST(Ellipsoid, BallInsideAxes) {
  CounterRng rng(33);
  const Ellipsoid E{Mat::Identity(2, 2), Vec::Ones(2)};
  Vec rf(2);
  rf << 2, 3;
  const auto r = ellipsoid_ordering_check(E, Ellipsoid{Mat::Identity(2, 2), rf}, 1000, rng);
  EXPECT_TRUE(r.ordered);
  EXPECT_EQ(r.radii_f(0), 3.0);
}

TEST(Ellipsoid, EqualEllipsoids) {
  CounterRng rng(34);
  Vec rf(2);
  rf << 2, 3;
  const Ellipsoid F{random_orthogonal(2, rng), rf};
  const auto r = ellipsoid_ordering_check(F, F, 1000, rng);
  EXPECT_TRUE(r.ordered);
  EXPECT_EQ(r.radii_e, r.radii_f);
}

TEST(Ellipsoid, NotContainedThrows) {
  CounterRng rng(35);
  Vec re(2);
  re << 1.5, 0.1;
  try {
    ellipsoid_ordering_check(Ellipsoid{Mat::Identity(2, 2), re}, Ellipsoid{Mat::Identity(2, 2), Vec::Ones(2)}, 100, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotContained);
  }
}

TEST(Ellipsoid, RandomContainedPairsAreOrdered) {
  CounterRng rng(36);
  for (int t = 0; t < 1000; ++t) {
    const int d = 2 + static_cast<int>(rng.below(2));
    Vec rf(d);
    for (int i = 0; i < d; ++i) rf(i) = rng.uniform(0.1, 5.0);
    const Ellipsoid F{random_orthogonal(d, rng), rf};
    // S_E = S_F K with |K| < 1 keeps E inside F whatever the rotation in K
    const Mat K = random_bounded_conjugator(d, 2.0, rng) / 2.0 * rng.uniform(0.5, 0.999);
    Eigen::JacobiSVD<Mat> svd(F.shape() * K, Eigen::ComputeFullU);
    const Ellipsoid E{svd.matrixU(), svd.singularValues()};
    const auto r = ellipsoid_ordering_check(E, F, 64, rng);
    ASSERT_TRUE(r.ordered) << "trial " << t;
  }
}

TEST(Exponents, IdentityIsZero) {
  const auto A = families::identity(cat, 2);
  const auto s = exponent_estimate(A, {TorusPoint{0.3, 0.1}, Vec::Zero(2)}, 2000);
  EXPECT_EQ(s.all.cwiseAbs().maxCoeff(), 0.0);
  ASSERT_EQ(s.exponents.size(), 1u);
  EXPECT_EQ(s.multiplicities[0], 2);
}

TEST(Exponents, ConstantLinearFiber) {
  const auto A = families::constant(cat, Diffeo::linear(mat2(2, 1, 1, 1)));
  const auto s = exponent_estimate(A, {TorusPoint{0.3, 0.1}, Vec::Constant(2, 0.2)}, 10000);
  ASSERT_EQ(s.exponents.size(), 2u);
  EXPECT_NEAR(s.exponents[0], golden_log, 1e-3);
  EXPECT_NEAR(s.exponents[1], -golden_log, 1e-3);
  EXPECT_NEAR(s.exponents[0] + s.exponents[1], s.det_rate, 1e-10);
}

TEST(Exponents, ShearAtAttractingFixedPoint) {
  const auto A = families::constant(cat, Diffeo::shear(1, 0.5));
  const auto s = exponent_estimate(A, {TorusPoint{0.3, 0.1}, Vec::Constant(1, 0.5)}, 10000);
  EXPECT_NEAR(s.exponents[0], std::log(0.5), 1e-3);
}

TEST(Exponents, SumMatchesDeterminantRate) {
  const auto A = families::perturb(families::constant(cat, Diffeo::linear(mat2(2, 1, 1, 1))),
                                   families::shear_field(cat, 2, 0.1, 0.2, {1, 0}, {0, 1}, 0), "perturbed");
  const auto s = exponent_estimate(A, {TorusPoint{0.3, 0.1}, Vec::Constant(2, 0.2)}, 4000, 5e-2);
  EXPECT_NEAR(s.all.sum(), s.det_rate, 1e-8);
}

TEST(Exponents, CoboundariesVanish) {
  CounterRng rng(37);
  for (const auto& fam : families::transfer_families(cat)) {
    const auto A = make_coboundary(cat, fam.q, fam.u, fam.name);
    Vec y(fam.q);
    for (int i = 0; i < fam.q; ++i) y(i) = rng.uniform();
    const auto s = exponent_estimate(A, {cat->random_point(rng), y}, 10000);
    EXPECT_LE(s.all.cwiseAbs().maxCoeff(), 1e-2) << fam.name;
  }
}

TEST(Exponents, ShortHorizonRejected) {
  const auto A = families::identity(cat, 1);
  EXPECT_THROW(exponent_estimate(A, {TorusPoint{0.3, 0.1}, Vec::Zero(1)}, 999), Error);
}

TEST(Exponents, Clustering) {
  LyapunovSpectrum s;
  s.tol = 1e-2;
  s.all.resize(3);
  s.all << 0.5, 0.495, -0.3;
  cluster_exponents(s);
  ASSERT_EQ(s.exponents.size(), 2u);
  EXPECT_EQ(s.multiplicities[0], 2);
  EXPECT_NEAR(s.exponents[0], 0.4975, 1e-12);
}

namespace {

std::vector<ScaledMatrix> cat_trace(int len) {
  std::vector<ScaledMatrix> tr;
  ScaledMatrix p = ScaledMatrix::identity(2);
  for (int n = 0; n < len; ++n) {
    p = p.left_multiplied(mat2(2, 1, 1, 1));
    tr.push_back(p);
  }
  return tr;
}

}  // namespace

TEST(BoundedConjugacy, Threshold) {
  EXPECT_EQ(conjugacy_threshold(2.0, 0.1), 28);
  EXPECT_EQ(conjugacy_threshold(1.0, 0.1), 1);
}

TEST(BoundedConjugacy, OrthogonalConjugatorsExact) {
  Vec lam(2);
  lam << golden_log, -golden_log;
  const auto rep = bounded_conjugacy_stability(cat_trace(60), lam, 1.0, 0.1, 50, 41, 0.05);
  EXPECT_EQ(rep.N, 1);
  EXPECT_EQ(rep.violations, 0);
  EXPECT_LE(rep.worst_deviation, 1e-9);
}

TEST(BoundedConjugacy, EllTwoDeltaTenth) {
  Vec lam(2);
  lam << golden_log, -golden_log;
  const auto rep = bounded_conjugacy_stability(cat_trace(80), lam, 2.0, 0.1, 1000, 42, 0.05, 4);
  EXPECT_EQ(rep.N, 28);
  EXPECT_EQ(rep.violations, 0);
  EXPECT_EQ(rep.sandwich_violations, 0);
  EXPECT_LE(rep.worst_sandwich, 1e-9);
}

TEST(BoundedConjugacy, SerialParallelIdentical) {
  Vec lam(2);
  lam << golden_log, -golden_log;
  const auto a = bounded_conjugacy_stability(cat_trace(40), lam, 2.0, 0.1, 64, 43, 0.05, 1);
  const auto b = bounded_conjugacy_stability(cat_trace(40), lam, 2.0, 0.1, 64, 43, 0.05, 8);
  EXPECT_EQ(a.worst_deviation, b.worst_deviation);
  EXPECT_EQ(a.worst_sandwich, b.worst_sandwich);
}

TEST(BoundedConjugacy, PreconditionNamesIndex) {
  Vec lam(2);
  lam << 0.5, -0.5;
  try {
    bounded_conjugacy_stability(cat_trace(10), lam, 2.0, 0.1, 1, 44, 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PreconditionViolated);
    EXPECT_NE(std::string(e.what()).find("n = 1"), std::string::npos);
  }
}

TEST(BoundedConjugacy, AdversarialAlignedSandwich) {
  // C = D = diag(2, 1/2) aligned with the singular frame of A = diag(e^a, e^-a):
  // sigma_1 is multiplied by exactly ell^2 = 4
  const double a = 3.0;
  const Mat A = mat2(std::exp(a), 0, 0, std::exp(-a));
  const Mat C = mat2(2, 0, 0, 0.5);
  const auto s = singular_values(A);
  const auto sc = singular_values(C * A * C);
  const double ell = 2;
  for (int i = 0; i < 2; ++i) {
    EXPECT_LE(s.svals(i) / (ell * ell), sc.svals(i) * (1 + 1e-14));
    EXPECT_LE(sc.svals(i), ell * ell * s.svals(i) * (1 + 1e-14));
  }
  EXPECT_NEAR(sc.svals(0), 4 * s.svals(0), 1e-9 * s.svals(0));
}

namespace {

ConeSystem diagonal_cones(double l1, double l2, double delta) {
  return make_cone_system({1, 1}, Mat::Identity(2, 2), {l1, l2}, delta);
}

}  // namespace

TEST(Cones, ValidatesDelta) {
  EXPECT_THROW(diagonal_cones(0.5, -0.5, 0.3), Error);
  EXPECT_THROW(diagonal_cones(-0.5, 0.5, 0.1), Error);
  const auto c = diagonal_cones(0.5, -0.5, 0.2);
  EXPECT_DOUBLE_EQ(c.kappa, 0.5);
}

TEST(Cones, DiagonalClosedFormAperture) {
  auto c = diagonal_cones(0.5, -0.5, 0.2);
  c.gamma = 0.1;
  CounterRng rng(51);
  const std::vector<Mat> A{mat2(std::exp(0.5), 0, 0, std::exp(-0.5))};
  const auto rep = cone_invariance_check(c, A, {}, 1000, rng);
  EXPECT_TRUE(rep.passed);
  // image aperture is gamma e^{-2 kappa} <= gamma e^{-kappa}, attained on every boundary sample
  EXPECT_NEAR(rep.worst_fast_aperture, std::exp(-2 * c.kappa), 1e-12);
  EXPECT_NEAR(rep.worst_slow_aperture, std::exp(-2 * c.kappa), 1e-12);
  EXPECT_LE(rep.worst_fast_aperture, std::exp(-c.kappa));
}

TEST(Cones, BlockHypothesisEnforced) {
  const auto c = diagonal_cones(0.5, -0.5, 0.2);
  CounterRng rng(52);
  EXPECT_THROW(cone_invariance_check(c, {mat2(std::exp(0.5), 0.3, 0, std::exp(-0.5))}, {}, 10, rng), Error);
  EXPECT_THROW(cone_invariance_check(c, {mat2(std::exp(0.6), 0, 0, std::exp(-0.5))}, {}, 10, rng), Error);
}

TEST(Cones, EscapeReportsWitness) {
  auto c = diagonal_cones(0.5, -0.5, 0.2);
  c.gamma = 0.1;
  CounterRng rng(53);
  const std::vector<Mat> A{mat2(std::exp(0.5), 0, 0, std::exp(-0.5))};
  const std::vector<Mat> P{mat2(0, 0, 0.8, 0)};
  const auto rep = cone_invariance_check(c, A, P, 100, rng, false);
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.witness.size(), 2);
  EXPECT_THROW(cone_invariance_check(c, A, P, 100, rng), Error);
}

TEST(Cones, CalibratedPerturbationsPass) {
  auto c = diagonal_cones(0.5, -0.5, 0.2);
  CounterRng rng(54);
  const std::vector<Mat> A{mat2(std::exp(0.5), 0, 0, std::exp(-0.5)), mat2(std::exp(0.47), 0, 0, std::exp(-0.53))};
  calibrate_gamma(c, A, rng);
  calibrate_alpha1(c, A, 55);
  ASSERT_GT(c.alpha1, 0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<Mat> P;
    for (std::size_t i = 0; i < A.size(); ++i) P.push_back(detail::random_perturbation(2, c.alpha1, rng));
    const auto rep = cone_invariance_check(c, A, P, 8, rng, false);
    ASSERT_TRUE(rep.passed) << rep.failure << " trial " << t;
  }
}

TEST(Cones, ThreeBlocks) {
  Vec e(3);
  e << 1.0, 0.0, -1.0;
  const Mat D = e.array().exp().matrix().asDiagonal();
  CounterRng rng(56);
  const Mat Q = random_orthogonal(3, rng);
  auto c = make_cone_system({1, 1, 1}, Q, {1.0, 0.0, -1.0}, 0.2);
  calibrate_gamma(c, {Mat(Q * D * Q.transpose())}, rng);
  const auto rep = cone_invariance_check(c, {Mat(Q * D * Q.transpose())}, {}, 1000, rng);
  EXPECT_TRUE(rep.passed);
}

TEST(Cones, IteratedApertureForBlockPreservingPerturbation) {
  auto c = diagonal_cones(0.5, -0.5, 0.2);
  c.gamma = 0.1;
  CounterRng rng(57);
  std::vector<Mat> C;
  for (int n = 0; n < 30; ++n) {
    const double j1 = rng.uniform(-0.05, 0.05), j2 = rng.uniform(-0.05, 0.05);
    C.push_back(mat2(std::exp(0.5 + j1), 0, 0, std::exp(-0.5 + j2)));
  }
  EXPECT_LE(iterated_aperture_excess(c, C, -c.kappa + c.delta / 2, 200, rng), 1.0);
}

namespace {

Vec slow_eigenvector(const Mat& m) {
  Eigen::EigenSolver<Mat> es(m);
  const auto ev = es.eigenvalues();
  const int idx = std::abs(ev(0)) < std::abs(ev(1)) ? 0 : 1;
  Vec v = es.eigenvectors().col(idx).real();
  return v / v.norm();
}

ConeSystem cat_cones() {
  const Mat M = mat2(2, 1, 1, 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(M);
  Mat basis(2, 2);
  basis << es.eigenvectors().col(1), es.eigenvectors().col(0);
  return make_cone_system({1, 1}, basis, {golden_log, -golden_log}, 0.3);
}

}  // namespace

TEST(Flags, UnperturbedBlockDiagonal) {
  auto c = diagonal_cones(0.5, -0.5, 0.2);
  const std::vector<Mat> C(50, mat2(std::exp(0.5), 0, 0, std::exp(-0.5)));
  const auto f = flag_construction(c, C, 50);
  ASSERT_EQ(f.H.size(), 2u);
  EXPECT_EQ(f.H[1].cols(), 1);
  EXPECT_LE(std::abs(f.H[1](0, 0)), 1e-15);
  EXPECT_NEAR(f.rates[0], 0.5, 1e-12);
  EXPECT_NEAR(f.rates[1], -0.5, 1e-12);
}

TEST(Flags, PerturbedCatDerivative) {
  const auto c = cat_cones();
  CounterRng rng(58);
  for (int t = 0; t < 20; ++t) {
    const Mat P = detail::random_perturbation(2, 1e-3, rng);
    const Mat CM = mat2(2, 1, 1, 1) + P;
    const std::vector<Mat> C(200, CM);
    const auto f = flag_construction(c, C, 200);
    EXPECT_LE(subspace_angle(f.H[1], slow_eigenvector(CM)), 1e-2);
    EXPECT_NEAR(f.rates[0], golden_log, c.delta / 2);
    EXPECT_NEAR(f.rates[1], -golden_log, c.delta / 2);
  }
}

TEST(Flags, HorizonBeyondSequenceRejected) {
  const auto c = cat_cones();
  EXPECT_THROW(flag_construction(c, std::vector<Mat>(3, mat2(2, 1, 1, 1)), 4), Error);
}

TEST(LyapunovFrame, ConstantDiagonal) {
  const Mat D = mat2(std::exp(0.5), 0, 0, std::exp(-0.5));
  const auto fr = lyapunov_coordinates(std::vector<Mat>(100, D), manual_spectrum({0.5, -0.5}, {1, 1}), 0.05);
  for (const auto& C : fr.C) EXPECT_LE((C - Mat::Identity(2, 2)).norm(), 1e-14);
  for (const auto& B : fr.B) EXPECT_LE((B - D).norm(), 1e-14);
  EXPECT_EQ(fr.band_fraction, 1.0);
}

TEST(LyapunovFrame, ConjugatedDiagonal) {
  const Mat D = mat2(std::exp(0.7), 0, 0, std::exp(-0.2));
  const Mat P = mat2(1, 0.6, -0.3, 1.2);
  const Mat A = P * D * P.inverse();
  const std::vector<Mat> trace(300, A);
  const double eta = 0.05;
  const auto fr = lyapunov_coordinates(trace, manual_spectrum({0.7, -0.2}, {1, 1}), eta);
  EXPECT_LE(fr.max_off_block, 1e-8);
  EXPECT_EQ(fr.band_fraction, 1.0);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Mat B = fr.C[i + 1] * trace[i] * fr.C[i].inverse();
    EXPECT_EQ(B, fr.B[i]);
    EXPECT_NEAR(std::log(std::abs(B(0, 0))), 0.7, eta + 1e-9);
    EXPECT_NEAR(std::log(std::abs(B(1, 1))), -0.2, eta + 1e-9);
  }
  EXPECT_LT(fr.ell, 10.0);
}

TEST(LyapunovFrame, GapTooSmall) {
  const std::vector<Mat> trace(10, Mat::Identity(2, 2));
  try {
    lyapunov_coordinates(trace, manual_spectrum({0.1, 0.0}, {1, 1}), 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GapTooSmall);
  }
}

TEST(LyapunovFrame, CoboundaryUniformityBlock) {
  CounterRng rng(59);
  const double eta = 0.05;
  for (const auto& fam : families::transfer_families(cat)) {
    const auto A = make_coboundary(cat, fam.q, fam.u, fam.name);
    Vec y(fam.q);
    for (int i = 0; i < fam.q; ++i) y(i) = rng.uniform();
    const auto tr = A.derivative_cocycle({cat->random_point(rng), y}, 500, 10, true);
    const auto spec = manual_spectrum({0.0}, {fam.q});
    const auto fr = lyapunov_coordinates(tr.matrices, spec, eta);
    EXPECT_GE(fr.band_fraction, 0.95) << fam.name;
    // the transfer function bounds the distortion, so a modest ell covers most indices
    EXPECT_GE(fr.uniformity_fraction(fr.ell), 1.0);
    EXPECT_TRUE(std::isfinite(fr.ell));
  }
}
