#pragma once

// Small statistics toolkit: sample moments, least squares, Student-t
// quantiles, two-sample Kolmogorov-Smirnov.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hlab/error.hpp"

namespace hlab {

struct MeanStderr {
  double mean = 0.0;
  double stderr = 0.0;
};

inline MeanStderr mean_stderr(std::span<const double> v) {
  MeanStderr r;
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.stderr = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

/// Two-sided (1 - level) Student-t critical value, e.g. level = 0.05 -> t_{0.975}.
inline double student_t_critical(double dof, double level = 0.05) {
  if (dof < 1) return std::numeric_limits<double>::infinity();
  boost::math::students_t dist(dof);
  return boost::math::quantile(boost::math::complement(dist, level / 2.0));
}

struct LeastSquaresFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd covariance;  ///< sigma^2 (X^T X)^{-1}
  double rss = 0.0;
  int dof = 0;

  double stderr_of(int i) const { return std::sqrt(std::max(0.0, covariance(i, i))); }
};

inline LeastSquaresFit least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) throw InvalidArgument("least_squares: shape mismatch");
  if (X.rows() < X.cols()) throw InvalidArgument("least_squares: fewer observations than parameters");
  LeastSquaresFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < X.cols()) throw InvalidArgument("least_squares: design matrix is rank deficient");
  fit.coef = qr.solve(y);
  fit.residuals = y - X * fit.coef;
  fit.rss = fit.residuals.squaredNorm();
  fit.dof = static_cast<int>(X.rows() - X.cols());
  const double sigma2 = fit.dof > 0 ? fit.rss / fit.dof : 0.0;
  const Eigen::MatrixXd xtx = X.transpose() * X;
  fit.covariance = sigma2 * xtx.inverse();
  return fit;
}

/// y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  int dof = 0;
  double rms_residual = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = x[static_cast<std::size_t>(i)];
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  const auto f = least_squares(X, Y);
  LineFit r;
  r.intercept = f.coef(0);
  r.slope = f.coef(1);
  r.intercept_stderr = f.stderr_of(0);
  r.slope_stderr = f.stderr_of(1);
  r.dof = f.dof;
  r.rms_residual = std::sqrt(f.rss / static_cast<double>(n));
  return r;
}

/// Kolmogorov distribution tail Q(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2).
inline double kolmogorov_tail(double t) {
  if (t < 1e-3) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    s += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction of the effective size).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d)};
}

/// Spectral norm of a complex matrix.
inline double spectral_norm(const Eigen::MatrixXcd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  return svd.singularValues()(0);
}

}  // namespace hlab
