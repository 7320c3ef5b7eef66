#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "livsic/error.hpp"
#include "livsic/rng.hpp"

namespace livsic {

// Small dense types. Every dimension in the lab is at most 3, so these
// never touch the heap.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline double op_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

inline double conorm(const Mat& m) {
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(m.rows() - 1);
}

/// Random orthogonal matrix (Haar up to sign conventions).
inline Mat random_orthogonal(int d, CounterRng& rng) {
  Mat g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

inline Vec random_unit(int d, CounterRng& rng) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v / v.norm();
}

/// Matrix with max(|C|, |C^-1|) <= ell: U diag(s) V with s in [1/ell, ell].
inline Mat random_bounded_conjugator(int d, double ell, CounterRng& rng) {
  Mat s = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i) s(i, i) = std::exp(rng.uniform(-1.0, 1.0) * std::log(ell));
  return random_orthogonal(d, rng) * s * random_orthogonal(d, rng);
}

/// A matrix e^{log_scale} * m together with log|det|. Products of long
/// matrix sequences are carried in this form so that neither the largest
/// nor the smallest singular value under- or overflows.
struct ScaledMatrix {
  Mat m;
  double log_scale = 0.0;
  double log_abs_det = 0.0;

  static ScaledMatrix from(const Mat& a) {
    ScaledMatrix s{a, 0.0, std::log(std::abs(a.determinant()))};
    s.normalize();
    return s;
  }

  static ScaledMatrix identity(int d) { return ScaledMatrix{Mat::Identity(d, d), 0.0, 0.0}; }

  int dim() const { return static_cast<int>(m.rows()); }

  void normalize() {
    const double mx = m.cwiseAbs().maxCoeff();
    if (mx > 0 && std::isfinite(mx)) {
      m /= mx;
      log_scale += std::log(mx);
    }
  }

  ScaledMatrix left_multiplied(const Mat& c) const {
    ScaledMatrix r{c * m, log_scale, log_abs_det + std::log(std::abs(c.determinant()))};
    r.normalize();
    return r;
  }

  ScaledMatrix right_multiplied(const Mat& d) const {
    ScaledMatrix r{m * d, log_scale, log_abs_det + std::log(std::abs(d.determinant()))};
    r.normalize();
    return r;
  }

  /// log sigma_i, descending. For q <= 2 the smallest value is recovered
  /// from the determinant, which keeps it accurate at any condition number.
  Vec log_singular_values() const {
    const int q = dim();
    Vec out(q);
    if (q == 1) {
      out(0) = log_scale + std::log(std::abs(m(0, 0)));
      return out;
    }
    Eigen::JacobiSVD<Mat> svd(m);
    const auto& s = svd.singularValues();
    out(0) = log_scale + std::log(s(0));
    if (q == 2) {
      out(1) = log_abs_det - out(0);
    } else {
      out(q - 1) = log_scale + std::log(s(q - 1));
      double middle = log_abs_det - out(0) - out(q - 1);
      if (q == 3) out(1) = middle;
      else
        for (int i = 1; i < q - 1; ++i) out(i) = log_scale + std::log(s(i));
    }
    return out;
  }

  Mat dense() const { return std::exp(log_scale) * m; }
};

/// Least-squares line y = a + b x; returns {a, b}.
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double nn = static_cast<double>(n);
  const double den = nn * sxx - sx * sx;
  if (n < 2 || den == 0.0) return {n ? sy / nn : 0.0, 0.0};
  const double b = (nn * sxy - sx * sy) / den;
  return {(sy - b * sx) / nn, b};
}

/// Angle between two subspaces spanned by the columns of a and b
/// (largest principal angle).
inline double subspace_angle(const Mat& a, const Mat& b) {
  Eigen::HouseholderQR<Mat> qa(a), qb(b);
  Mat ua = qa.householderQ() * Mat::Identity(a.rows(), a.cols());
  Mat ub = qb.householderQ() * Mat::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Mat> svd(ua.transpose() * ub);
  const double c = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(c);
}

}  // namespace livsic
