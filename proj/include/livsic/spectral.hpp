#pragma once

// Singular values, fibred Lyapunov exponents and the linear-algebra checks
// built on them: ellipsoid ordering, stability of singular exponents under
// bounded conjugation, invariant cone families and their flags, and
// finite-horizon Lyapunov block coordinates.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "livsic/cocycle.hpp"
#include "livsic/linalg.hpp"
#include "livsic/parallel.hpp"

namespace livsic {

// ---------------------------------------------------------------- singular values

struct SingularSpectrum {
  Vec svals;  // descending
  int source_n = 0;
};

/// sigma_i(m), descending. These are the square roots of the eigenvalues of
/// m m^T, but forming m m^T squares the condition number, so a one-sided
/// Jacobi SVD is used instead.
inline SingularSpectrum singular_values(const Mat& m, int source_n = 0) {
  const int q = static_cast<int>(m.rows());
  Eigen::JacobiSVD<Mat> svd(m);
  SingularSpectrum s;
  s.source_n = source_n;
  s.svals = svd.singularValues();
  const double cond = s.svals(q - 1) > 0 ? s.svals(0) / s.svals(q - 1) : INFINITY;
  if (!(cond <= 1e14)) throw Error(ErrorCode::Singular, "condition estimate " + std::to_string(cond));
  return s;
}

// ---------------------------------------------------------------- ellipsoids

/// { axes * diag(radii) * t : |t| <= 1 } with orthonormal axes.
struct Ellipsoid {
  Mat axes;
  Vec radii;
  Mat shape() const { return axes * radii.asDiagonal(); }
};

struct EllipsoidReport {
  bool ordered = true;
  Vec radii_e, radii_f;       // descending
  double containment = 0;     // max |S_F^{-1} e| over sampled boundary points e of E
  int violating_index = -1;   // first i with r_i(E) > r_i(F)
};

inline EllipsoidReport ellipsoid_ordering_check(const Ellipsoid& E, const Ellipsoid& F, int witness_trials,
                                                CounterRng& rng) {
  const int d = static_cast<int>(E.radii.size());
  const Mat se = E.shape();
  const Mat sf_inv = F.shape().inverse();
  EllipsoidReport r;
  for (int t = 0; t < witness_trials; ++t) {
    const Vec e = se * random_unit(d, rng);
    r.containment = std::max(r.containment, (sf_inv * e).norm());
  }
  // the sampled value is a lower bound of the exact one
  const double exact = op_norm(sf_inv * se);
  if (r.containment > 1.0 + 1e-12 || exact > 1.0 + 1e-12)
    throw Error(ErrorCode::NotContained, "E is not inside F (sup |S_F^-1 e| = " + std::to_string(exact) + ")");
  r.radii_e = E.radii;
  r.radii_f = F.radii;
  std::sort(r.radii_e.data(), r.radii_e.data() + d, std::greater<>());
  std::sort(r.radii_f.data(), r.radii_f.data() + d, std::greater<>());
  for (int i = 0; i < d; ++i)
    if (r.radii_e(i) > r.radii_f(i) * (1 + 1e-12)) {
      r.ordered = false;
      r.violating_index = i;
      break;
    }
  return r;
}

// ---------------------------------------------------------------- exponents

struct LyapunovSpectrum {
  Vec all;                        // per-direction estimates, descending
  std::vector<double> exponents;  // distinct values (cluster means)
  std::vector<int> multiplicities;
  double tol = 1e-2;
  double slope = 0;               // max_i |lambda_i(n) - lambda_i(n/2)|
  double det_rate = 0;            // (1/n) log |det|
  int n = 0;
};

/// Group descending values into clusters separated by gaps > 2 tol.
inline void cluster_exponents(LyapunovSpectrum& s) {
  s.exponents.clear();
  s.multiplicities.clear();
  const int q = static_cast<int>(s.all.size());
  int start = 0;
  for (int i = 1; i <= q; ++i) {
    if (i == q || s.all(i - 1) - s.all(i) > 2 * s.tol) {
      double mean = 0;
      for (int j = start; j < i; ++j) mean += s.all(j);
      s.exponents.push_back(mean / (i - start));
      s.multiplicities.push_back(i - start);
      start = i;
    }
  }
}

inline LyapunovSpectrum spectrum_from_trace(const DerivativeTrace& tr, double tol) {
  const int n = static_cast<int>(tr.log_svals.size());
  LyapunovSpectrum s;
  s.tol = tol;
  s.n = n;
  s.all = tr.log_svals.back() / n;
  const Vec half = tr.log_svals[static_cast<std::size_t>(n / 2 - 1)] / (n / 2);
  s.slope = (s.all - half).cwiseAbs().maxCoeff();
  s.det_rate = tr.log_det.back() / n;
  cluster_exponents(s);
  return s;
}

/// (1/n) log sigma_i of the derivative cocycle along the orbit of z.
inline LyapunovSpectrum exponent_estimate(const Cocycle& A, const SkewPoint& z, int n, double tol = 1e-2,
                                          bool require_convergence = true) {
  if (n < 1000) throw Error(ErrorCode::PreconditionViolated, "exponent_estimate needs n >= 1000");
  const auto tr = A.derivative_cocycle(z, n);
  auto s = spectrum_from_trace(tr, tol);
  if (require_convergence && s.slope > tol)
    throw Error(ErrorCode::NotConverged, "exponent slope " + std::to_string(s.slope) + " > tol");
  return s;
}

// ---------------------------------------------------------------- bounded conjugation

struct ConjugacyReport {
  int N = 0;                     // ceil(4 log ell / delta)
  int trials = 0;
  int violations = 0;            // (trial, n >= N, i) with |rate - lambda_i| > delta
  int largest_violating_n = 0;
  int sandwich_violations = 0;
  double worst_sandwich = 0;     // max |log sigma_i(CAD) - log sigma_i(A)| - 2 log ell  (<= 0 when it holds)
  double worst_deviation = 0;    // max over n >= N of |rate - lambda_i|
};

inline int conjugacy_threshold(double ell, double delta) {
  return std::max(1, static_cast<int>(std::ceil(4.0 * std::log(ell) / delta - 1e-12)));
}

/// For random C_n, D_n with |C|, |C^-1|, |D|, |D^-1| <= ell, checks
/// |(1/n) log sigma_i(C_n A_n D_n) - lambda_i| <= delta for n >= N and the
/// sandwich sigma_i(A)/ell^2 <= sigma_i(CAD) <= ell^2 sigma_i(A) for all n.
/// `trace[n-1]` holds A_n; the hypothesis window on the trace is `window`.
inline ConjugacyReport bounded_conjugacy_stability(const std::vector<ScaledMatrix>& trace, const Vec& lambda,
                                                   double ell, double delta, int trials, std::uint64_t seed,
                                                   double window, int workers = 1) {
  for (std::size_t n = 1; n <= trace.size(); ++n) {
    const Vec rate = trace[n - 1].log_singular_values() / static_cast<double>(n);
    for (int i = 0; i < lambda.size(); ++i)
      if (std::abs(rate(i) - lambda(i)) > window)
        throw Error(ErrorCode::PreconditionViolated,
                    "trace leaves the hypothesis window at n = " + std::to_string(n) + ", i = " + std::to_string(i));
  }
  ConjugacyReport rep;
  rep.N = conjugacy_threshold(ell, delta);
  rep.trials = trials;
  rep.worst_sandwich = -INFINITY;
  const double two_log_ell = 2 * std::log(ell);
  const int q = trace.empty() ? 0 : trace[0].dim();
  struct Partial {
    int violations = 0, largest = 0, sandwich = 0;
    double worst_sandwich = -INFINITY, worst_dev = 0;
  };
  const auto parts = parallel_map(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    CounterRng rng(seed, t);
    Partial p;
    for (std::size_t n = 1; n <= trace.size(); ++n) {
      const Mat C = random_bounded_conjugator(q, ell, rng);
      const Mat D = random_bounded_conjugator(q, ell, rng);
      const Vec base = trace[n - 1].log_singular_values();
      const Vec conj = trace[n - 1].left_multiplied(C).right_multiplied(D).log_singular_values();
      for (int i = 0; i < q; ++i) {
        const double excess = std::abs(conj(i) - base(i)) - two_log_ell;
        p.worst_sandwich = std::max(p.worst_sandwich, excess);
        if (excess > 1e-9) ++p.sandwich;
        if (static_cast<int>(n) >= rep.N) {
          const double dev = std::abs(conj(i) / static_cast<double>(n) - lambda(i));
          p.worst_dev = std::max(p.worst_dev, dev);
          if (dev > delta) {
            ++p.violations;
            p.largest = std::max(p.largest, static_cast<int>(n));
          }
        }
      }
    }
    return p;
  });
  for (const auto& p : parts) {
    rep.violations += p.violations;
    rep.largest_violating_n = std::max(rep.largest_violating_n, p.largest);
    rep.sandwich_violations += p.sandwich;
    rep.worst_sandwich = std::max(rep.worst_sandwich, p.worst_sandwich);
    rep.worst_deviation = std::max(rep.worst_deviation, p.worst_dev);
  }
  return rep;
}

// ---------------------------------------------------------------- cones

/// Orthogonal splitting R^d = E^1 + ... + E^k (columns of `basis`, grouped by
/// `dims`) with exponents lambda_1 > ... > lambda_k.
struct ConeSystem {
  std::vector<int> dims;
  Mat basis;
  std::vector<double> lambdas;
  double gamma = 0.1;
  double kappa = 0;
  double delta = 0;
  double alpha1 = 0;

  int k() const { return static_cast<int>(dims.size()); }
  int d() const { return static_cast<int>(basis.rows()); }
  /// number of coordinates in the first j blocks
  int lead(int j) const {
    int s = 0;
    for (int i = 0; i < j; ++i) s += dims[static_cast<std::size_t>(i)];
    return s;
  }
  /// (|v_{<=j}|, |v_{>j}|)
  std::pair<double, double> split(const Vec& v, int j) const {
    const Vec c = basis.transpose() * v;
    const int l = lead(j);
    return {c.head(l).norm(), c.tail(d() - l).norm()};
  }
  Vec block_vector(const Vec& head, const Vec& tail) const {
    Vec c(d());
    c << head, tail;
    return basis * c;
  }
};

inline ConeSystem make_cone_system(std::vector<int> dims, Mat basis, std::vector<double> lambdas, double delta) {
  ConeSystem c;
  c.dims = std::move(dims);
  c.basis = std::move(basis);
  c.lambdas = std::move(lambdas);
  if (c.dims.size() != c.lambdas.size() || c.dims.size() < 2)
    throw Error(ErrorCode::PreconditionViolated, "cone system needs >= 2 blocks with one exponent each");
  if (c.lead(c.k()) != c.d()) throw Error(ErrorCode::PreconditionViolated, "block dimensions do not fill the space");
  if ((c.basis.transpose() * c.basis - Mat::Identity(c.d(), c.d())).norm() > 1e-12)
    throw Error(ErrorCode::PreconditionViolated, "splitting basis is not orthonormal");
  double gap = INFINITY;
  for (int i = 0; i + 1 < c.k(); ++i) {
    const double g = c.lambdas[static_cast<std::size_t>(i)] - c.lambdas[static_cast<std::size_t>(i + 1)];
    if (!(g > 0)) throw Error(ErrorCode::PreconditionViolated, "exponents must be strictly decreasing");
    gap = std::min(gap, g);
  }
  c.kappa = 0.5 * gap;
  c.delta = delta;
  if (!(delta > 0 && delta < c.kappa / 2))
    throw Error(ErrorCode::PreconditionViolated, "need 0 < delta < kappa / 2");
  return c;
}

/// A_n(E^i) = E^i with |A|E^i| and conorm in (e^{lambda_i - window}, e^{lambda_i + window}).
inline void check_block_hypothesis(const ConeSystem& c, const std::vector<Mat>& A, double window) {
  for (std::size_t n = 0; n < A.size(); ++n) {
    const Mat M = c.basis.transpose() * A[n] * c.basis;
    int off = 0;
    for (int i = 0; i < c.k(); ++i) {
      const int di = c.dims[static_cast<std::size_t>(i)];
      const Mat blk = M.block(off, off, di, di);
      const double leak = (M.block(0, off, c.d(), di).norm() - blk.norm());
      if (std::abs(leak) > 1e-10 * std::max(1.0, blk.norm()) ||
          (M.block(0, off, c.d(), di).squaredNorm() - blk.squaredNorm()) > 1e-20 * std::max(1.0, blk.squaredNorm()))
        throw Error(ErrorCode::PreconditionViolated, "A_" + std::to_string(n + 1) + " does not preserve the splitting");
      const double lam = c.lambdas[static_cast<std::size_t>(i)];
      const double hi = std::log(op_norm(blk)), lo = std::log(conorm(blk));
      if (hi >= lam + window || lo <= lam - window)
        throw Error(ErrorCode::PreconditionViolated,
                    "block " + std::to_string(i + 1) + " of A_" + std::to_string(n + 1) + " leaves its norm window");
      off += di;
    }
  }
}

struct ConeReport {
  int samples = 0;
  double rate_exponent = 0;          // aperture contraction factor is gamma * e^{rate_exponent}
  double worst_fast_aperture = 0;    // max aperture of C(K^j_gamma) relative to gamma
  double worst_slow_aperture = 0;    // max aperture of C^{-1}(K_{j,gamma}) relative to gamma
  double worst_slow_growth = 0;      // max log(|Cv| / |v|) - (lambda_{j+1} + w), v in K_{j,gamma}
  double worst_fast_growth = 0;      // max (lambda_j - w) - log(|Cu| / |u|), u in K^j_gamma
  double worst_conorm = 0;           // max (lambda_k - w) - log conorm(C)
  bool passed = true;
  Vec witness;
  std::string failure;
};

namespace detail {

inline Vec cone_sample(const ConeSystem& c, int j, bool fast_cone, double scale, CounterRng& rng) {
  const int l = c.lead(j);
  const Vec head = random_unit(l, rng);
  const Vec tail = random_unit(c.d() - l, rng);
  // fast cone K^j: |tail| = scale * gamma * |head|; slow cone K_j: the reverse
  return fast_cone ? c.block_vector(head, scale * c.gamma * tail) : c.block_vector(scale * c.gamma * head, tail);
}

/// One pass of the cone checks for a single matrix C; `w` is the growth
/// window and `rate` the allowed aperture exponent.
inline void check_one(const ConeSystem& c, const Mat& C, double w, double rate, int samples, CounterRng& rng,
                      ConeReport& rep) {
  const Mat Ci = C.inverse();
  const double lam_k = c.lambdas.back();
  const double cn = std::log(conorm(C));
  const double conorm_excess = (lam_k - w) - cn;
  rep.worst_conorm = std::max(rep.worst_conorm, conorm_excess);
  if (conorm_excess > 0 && rep.passed) {
    rep.passed = false;
    rep.failure = "conorm";
    Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullV);
    rep.witness = svd.matrixV().col(c.d() - 1);
  }
  const double bound = std::exp(rate);
  for (int s = 0; s < samples; ++s) {
    const int j = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.k() - 1)));
    const double lj = c.lambdas[static_cast<std::size_t>(j - 1)], lj1 = c.lambdas[static_cast<std::size_t>(j)];
    // boundary of the fast cone, mapped forward
    const Vec u = cone_sample(c, j, true, 1.0, rng);
    const Vec cu = C * u;
    const auto [h1, t1] = c.split(cu, j);
    const double ap_fast = t1 / h1 / c.gamma;
    rep.worst_fast_aperture = std::max(rep.worst_fast_aperture, ap_fast);
    // boundary of the slow cone, mapped backward
    const Vec v = cone_sample(c, j, false, 1.0, rng);
    const Vec civ = Ci * v;
    const auto [h2, t2] = c.split(civ, j);
    const double ap_slow = h2 / t2 / c.gamma;
    rep.worst_slow_aperture = std::max(rep.worst_slow_aperture, ap_slow);
    // growth inside the cones (interior points too)
    const double sc = rng.uniform();
    const Vec vi = cone_sample(c, j, false, sc, rng);
    const double g_slow = std::log((C * vi).norm() / vi.norm()) - (lj1 + w);
    const Vec ui = cone_sample(c, j, true, sc, rng);
    const double g_fast = (lj - w) - std::log((C * ui).norm() / ui.norm());
    rep.worst_slow_growth = std::max(rep.worst_slow_growth, g_slow);
    rep.worst_fast_growth = std::max(rep.worst_fast_growth, g_fast);
    ++rep.samples;
    if (rep.passed) {
      if (ap_fast > bound) {
        rep.passed = false;
        rep.failure = "fast cone aperture";
        rep.witness = u;
      } else if (ap_slow > bound) {
        rep.passed = false;
        rep.failure = "slow cone aperture";
        rep.witness = v;
      } else if (g_slow > 0) {
        rep.passed = false;
        rep.failure = "growth in slow cone";
        rep.witness = vi;
      } else if (g_fast > 0) {
        rep.passed = false;
        rep.failure = "growth in fast cone";
        rep.witness = ui;
      }
    }
  }
}

inline Mat random_perturbation(int d, double radius, CounterRng& rng) {
  Mat p(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) p(i, j) = rng.normal();
  return p * (radius / op_norm(p));
}

}  // namespace detail

/// Samples cone boundaries and interiors for C_n = A_n + P_n. With all P_n = 0
/// the unperturbed rates apply (aperture factor e^{-kappa + delta/4}, growth
/// window delta/3); otherwise the perturbed ones (e^{-kappa + delta/2}, delta/2).
/// Growth is checked as |C v| <= e^{lambda_{j+1} + w}|v| on K_{j,gamma} and
/// |C u| >= e^{lambda_j - w}|u| on K^j_gamma.
inline ConeReport cone_invariance_check(const ConeSystem& c, const std::vector<Mat>& A, const std::vector<Mat>& P,
                                        int samples, CounterRng& rng, bool throw_on_escape = true) {
  check_block_hypothesis(c, A, c.delta / 4);
  bool perturbed = false;
  for (const auto& p : P) perturbed = perturbed || p.norm() > 0;
  const double w = perturbed ? c.delta / 2 : c.delta / 3;
  ConeReport rep;
  rep.rate_exponent = perturbed ? -c.kappa + c.delta / 2 : -c.kappa + c.delta / 4;
  for (std::size_t n = 0; n < A.size(); ++n) {
    const Mat C = P.empty() ? A[n] : Mat(A[n] + P[n]);
    detail::check_one(c, C, w, rep.rate_exponent, samples, rng, rep);
  }
  if (!rep.passed && throw_on_escape) throw Error(ErrorCode::ConeEscape, rep.failure);
  return rep;
}

/// gamma from 0.1, halved until the unperturbed growth bounds hold on samples.
inline double calibrate_gamma(ConeSystem& c, const std::vector<Mat>& A, CounterRng& rng, int samples = 200) {
  check_block_hypothesis(c, A, c.delta / 4);
  c.gamma = 0.1;
  for (int it = 0; it < 40; ++it) {
    ConeReport rep;
    for (const auto& M : A) detail::check_one(c, M, c.delta / 3, -c.kappa + c.delta / 4, samples, rng, rep);
    if (rep.passed) return c.gamma;
    c.gamma *= 0.5;
  }
  throw Error(ErrorCode::NotConverged, "no admissible cone aperture found");
}

/// Largest radius r (by bisection) for which `trials` random perturbations of
/// norm r pass every perturbed cone check; alpha1 is half of it.
inline double calibrate_alpha1(ConeSystem& c, const std::vector<Mat>& A, std::uint64_t seed, int trials = 1000,
                               int samples_per_trial = 8) {
  auto passes = [&](double r) {
    CounterRng rng(seed, static_cast<std::uint64_t>(std::llround(r * 1e12)));
    for (int t = 0; t < trials; ++t) {
      const auto& M = A[rng.below(A.size())];
      const Mat C = M + detail::random_perturbation(c.d(), r, rng);
      ConeReport rep;
      detail::check_one(c, C, c.delta / 2, -c.kappa + c.delta / 2, samples_per_trial, rng, rep);
      if (!rep.passed) return false;
    }
    return true;
  };
  double lo = 0, hi = 1.0;
  for (const auto& M : A) hi = std::min(hi, conorm(M));
  while (passes(hi) && hi < 1e3) hi *= 2;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (passes(mid)) lo = mid;
    else hi = mid;
  }
  c.alpha1 = 0.5 * lo;
  return c.alpha1;
}

/// Largest aperture ratio of C^{(n)} u / (gamma e^{n rate}) over samples u on
/// the fast-cone boundary, for n = 1..A.size().
inline double iterated_aperture_excess(const ConeSystem& c, const std::vector<Mat>& C, double rate, int samples,
                                       CounterRng& rng) {
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    const int j = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.k() - 1)));
    Vec u = detail::cone_sample(c, j, true, 1.0, rng);
    for (std::size_t n = 0; n < C.size(); ++n) {
      u = C[n] * u;
      u /= u.norm();
      const auto [h, t] = c.split(u, j);
      const double allowed = c.gamma * std::exp(static_cast<double>(n + 1) * rate);
      worst = std::max(worst, (t / h) / allowed);
    }
  }
  return worst;
}

// ---------------------------------------------------------------- flags

struct Flag {
  std::vector<Mat> H;         // H[j-1] = H_j, orthonormal columns, dims decreasing
  std::vector<double> rates;  // (1/T) log |C^{(T)} v| for v in H_j orthogonal to H_{j+1}
  int horizon = 0;
};

/// H_j = (C^{(T)})^{-1}(E^j + ... + E^k), pulled back one matrix at a time
/// with re-orthonormalization. Rates: for j < k a unit vector of H_j
/// orthogonal to H_{j+1} is pushed forward (block j dominates, so this is
/// stable); for j = k the per-step volume growth of the pulled-back basis is
/// averaged, since forward iteration inside the slowest space is not.
inline Flag flag_construction(const ConeSystem& c, const std::vector<Mat>& C, int horizon) {
  if (horizon < 1 || static_cast<std::size_t>(horizon) > C.size())
    throw Error(ErrorCode::PreconditionViolated, "horizon exceeds the matrix sequence");
  Flag f;
  f.horizon = horizon;
  const int d = c.d();
  f.H.push_back(Mat::Identity(d, d));
  double last_log_growth = 0;
  for (int j = 2; j <= c.k(); ++j) {
    const int l = c.lead(j - 1);
    Mat Y = c.basis.rightCols(d - l);
    double log_growth = 0;
    for (int n = horizon - 1; n >= 0; --n) {
      const Mat Z = C[static_cast<std::size_t>(n)].inverse() * Y;
      Eigen::HouseholderQR<Mat> qr(Z);
      const Vec diag = qr.matrixQR().diagonal().head(Z.cols()).cwiseAbs();
      if (!(diag.minCoeff() > 1e-13 * diag.maxCoeff()))
        throw Error(ErrorCode::DimensionCollapse, "flag basis lost rank at n = " + std::to_string(n + 1));
      log_growth -= diag.array().log().sum() / static_cast<double>(Z.cols());
      Y = qr.householderQ() * Mat::Identity(d, Z.cols());
    }
    f.H.push_back(Y);
    last_log_growth = log_growth;
  }
  for (int j = 1; j < c.k(); ++j) {
    const Mat& Hj = f.H[static_cast<std::size_t>(j - 1)];
    const Mat& Hn = f.H[static_cast<std::size_t>(j)];
    const Mat proj = Hj - Hn * (Hn.transpose() * Hj);
    Eigen::JacobiSVD<Mat> svd(proj, Eigen::ComputeThinU);
    Vec v = svd.matrixU().col(0);
    double log_norm = 0;
    for (int n = 0; n < horizon; ++n) {
      v = C[static_cast<std::size_t>(n)] * v;
      const double nv = v.norm();
      log_norm += std::log(nv);
      v /= nv;
    }
    f.rates.push_back(log_norm / horizon);
  }
  f.rates.push_back(last_log_growth / horizon);
  return f;
}

// ---------------------------------------------------------------- Lyapunov coordinates

struct LyapunovFrame {
  std::vector<Mat> C;      // C[i] = C_eta(z_i), i = 0..L
  std::vector<Mat> B;      // B[i] = C[i+1] * trace[i] * C[i]^{-1}
  std::vector<int> dims;   // block sizes
  std::vector<double> lambdas;
  double eta = 0;
  double ell = 0;                   // max_i max(|C_i|, |C_i^{-1}|)
  std::vector<double> distortion;   // per index max(|C_i|, |C_i^{-1}|)
  double max_off_block = 0;         // largest off-block entry of the B[i]
  double band_fraction = 0;         // indices whose blocks lie in [e^{lambda-eta}, e^{lambda+eta}]
  double tempered_fraction = 0;     // consecutive distortion ratios within (e^-eta, e^eta)

  /// indices i with distortion <= bound (empirical uniformity block)
  double uniformity_fraction(double bound) const {
    if (distortion.empty()) return 0;
    std::size_t c = 0;
    for (double k : distortion) c += k <= bound;
    return static_cast<double>(c) / static_cast<double>(distortion.size());
  }
};

namespace detail {
inline Vec sign_normalized(Vec v) {
  int idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  return v(idx) < 0 ? Vec(-v) : v;
}
}  // namespace detail

/// Coordinates C_i in which B_i becomes block diagonal with block singular
/// values in [e^{lambda_j - eta}, e^{lambda_j + eta}]. The splitting is
/// invariant by construction: the fast line is pushed forward from the top
/// right singular vector of the whole product, the slow line pulled back
/// from the bottom left singular vector. Per block, C_{i+1} is the
/// least-distorting map that moves the singular values of the block into the
/// band.
inline LyapunovFrame lyapunov_coordinates(const std::vector<Mat>& trace, const LyapunovSpectrum& spec, double eta) {
  if (trace.empty()) throw Error(ErrorCode::PreconditionViolated, "empty trace");
  const int q = static_cast<int>(trace[0].rows());
  const std::size_t L = trace.size();
  const int k = static_cast<int>(spec.exponents.size());
  for (int i = 0; i + 1 < k; ++i)
    if (spec.exponents[static_cast<std::size_t>(i)] - spec.exponents[static_cast<std::size_t>(i + 1)] <= 4 * eta)
      throw Error(ErrorCode::GapTooSmall, "exponent gap <= 4 eta");
  if (k > 2) throw Error(ErrorCode::PreconditionViolated, "at most two blocks are supported");

  LyapunovFrame fr;
  fr.dims = spec.multiplicities;
  fr.lambdas = spec.exponents;
  fr.eta = eta;

  // adapted bases P_i (columns: fast block then slow block)
  std::vector<Mat> P(L + 1, Mat::Identity(q, q));
  if (k == 2) {
    ScaledMatrix prod = ScaledMatrix::identity(q);
    for (const auto& m : trace) prod = prod.left_multiplied(m);
    Eigen::JacobiSVD<Mat> svd(prod.m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const int df = spec.multiplicities[0];
    Mat fast = svd.matrixV().leftCols(df);
    Mat slow = svd.matrixU().rightCols(q - df);
    std::vector<Mat> F(L + 1), S(L + 1);
    F[0] = fast;
    for (std::size_t i = 0; i < L; ++i) {
      Eigen::HouseholderQR<Mat> qr(trace[i] * F[i]);
      F[i + 1] = qr.householderQ() * Mat::Identity(q, df);
    }
    S[L] = slow;
    for (std::size_t i = L; i-- > 0;) {
      Eigen::HouseholderQR<Mat> qr(trace[i].inverse() * S[i + 1]);
      S[i] = qr.householderQ() * Mat::Identity(q, q - df);
    }
    for (std::size_t i = 0; i <= L; ++i) {
      if (df == 1) F[i].col(0) = detail::sign_normalized(F[i].col(0));
      if (q - df == 1) S[i].col(0) = detail::sign_normalized(S[i].col(0));
      P[i] << F[i], S[i];
    }
  }

  // block-diagonal parts in the adapted bases and the greedy scaling
  fr.C.resize(L + 1);
  fr.C[0] = P[0].inverse();
  std::vector<Mat> Dblk(static_cast<std::size_t>(k));  // current per-block scaling
  {
    int off = 0;
    for (int b = 0; b < k; ++b) {
      const int db = spec.multiplicities[static_cast<std::size_t>(b)];
      Dblk[static_cast<std::size_t>(b)] = Mat::Identity(db, db);
      off += db;
    }
  }
  std::size_t in_band = 0;
  for (std::size_t i = 0; i < L; ++i) {
    const Mat M = P[i + 1].inverse() * trace[i] * P[i];
    Mat Dnext = Mat::Zero(q, q);
    int off = 0;
    for (int b = 0; b < k; ++b) {
      const int db = spec.multiplicities[static_cast<std::size_t>(b)];
      const double lam = spec.exponents[static_cast<std::size_t>(b)];
      const Mat X = M.block(off, off, db, db) * Dblk[static_cast<std::size_t>(b)].inverse();
      Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeFullU | Eigen::ComputeFullV);
      const Vec s = svd.singularValues();
      Vec t(db);
      for (int r = 0; r < db; ++r) t(r) = std::clamp(s(r), std::exp(lam - eta), std::exp(lam + eta)) / s(r);
      const Mat Db = svd.matrixU() * t.asDiagonal() * svd.matrixU().transpose();
      Dblk[static_cast<std::size_t>(b)] = Db;
      Dnext.block(off, off, db, db) = Db;
      off += db;
    }
    fr.C[i + 1] = Dnext * P[i + 1].inverse();
  }

  // conjugated matrices and diagnostics
  fr.B.resize(L);
  fr.distortion.resize(L + 1);
  for (std::size_t i = 0; i <= L; ++i)
    fr.distortion[i] = std::max(op_norm(fr.C[i]), op_norm(fr.C[i].inverse()));
  fr.ell = *std::max_element(fr.distortion.begin(), fr.distortion.end());
  for (std::size_t i = 0; i < L; ++i) {
    fr.B[i] = fr.C[i + 1] * trace[i] * fr.C[i].inverse();
    int off = 0;
    bool ok = true;
    for (int b = 0; b < k; ++b) {
      const int db = spec.multiplicities[static_cast<std::size_t>(b)];
      const double lam = spec.exponents[static_cast<std::size_t>(b)];
      const Mat blk = fr.B[i].block(off, off, db, db);
      const double hi = std::log(op_norm(blk)), lo = std::log(conorm(blk));
      if (hi > lam + eta + 1e-9 || lo < lam - eta - 1e-9) ok = false;
      for (int r = 0; r < q; ++r)
        for (int cc = off; cc < off + db; ++cc)
          if (r < off || r >= off + db) fr.max_off_block = std::max(fr.max_off_block, std::abs(fr.B[i](r, cc)));
      off += db;
    }
    in_band += ok;
  }
  fr.band_fraction = static_cast<double>(in_band) / static_cast<double>(L);
  std::size_t tempered = 0;
  for (std::size_t i = 0; i < L; ++i) {
    const double r = fr.distortion[i] / fr.distortion[i + 1];
    tempered += (r > std::exp(-eta) && r < std::exp(eta));
  }
  fr.tempered_fraction = static_cast<double>(tempered) / static_cast<double>(L);
  return fr;
}

}  // namespace livsic
