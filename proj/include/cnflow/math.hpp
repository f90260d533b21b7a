#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace cnflow {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Numerically stable softplus log(1 + e^x) and its inverse log(e^y - 1).
inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Defined for y > 0; caller checks the domain.
inline double softplus_inv(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline double logistic(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double normal_logpdf(double x) { return -0.5 * (x * x + kLog2Pi); }

inline double laplace_logpdf(double x, double loc, double scale) {
  return -std::log(2.0 * scale) - std::abs(x - loc) / scale;
}

inline double laplace_cdf(double x, double loc, double scale) {
  double z = (x - loc) / scale;
  return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

// Inverse CDF; p in (0, 1).
inline double laplace_quantile(double p, double loc, double scale) {
  return p < 0.5 ? loc + scale * std::log(2.0 * p)
                 : loc - scale * std::log(2.0 * (1.0 - p));
}

// d/dp of the Laplace quantile: scale / min(p, 1-p).
inline double laplace_quantile_dp(double p, double scale) {
  return scale / (p < 0.5 ? p : 1.0 - p);
}

// Empirical quantile with linear interpolation; takes the column by value
// because it sorts. q in [0, 1].
inline double quantile(Eigen::VectorXd col, double q) {
  std::sort(col.data(), col.data() + col.size());
  const double pos = q * static_cast<double>(col.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = static_cast<Eigen::Index>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return col(lo) * (1.0 - frac) + col(hi) * frac;
}

}  // namespace cnflow
