#include "cnflow/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "cnflow/errors.hpp"
#include "cnflow/math.hpp"

namespace cnflow {

int transformer_params_per_dim(TransformerKind kind) {
  return kind == TransformerKind::Affine ? 2 : kSplineParamCount;
}

double affine_clamp(double s) {
  return kScaleClamp * std::tanh(s / kScaleClamp);
}

double affine_clamp_grad(double s) {
  double t = std::tanh(s / kScaleClamp);
  return 1.0 - t * t;
}

double affine_forward(double z, double s, double t, double* logd) {
  double sc = affine_clamp(s);
  if (logd) *logd = sc;
  return z * std::exp(sc) + t;
}

double affine_inverse(double y, double s, double t, double* logd) {
  double sc = affine_clamp(s);
  if (logd) *logd = sc;
  return (y - t) * std::exp(-sc);
}

// --- Spline ---------------------------------------------------------------

namespace {

constexpr int K = kSplineBins;
constexpr int NG = kSplineParamCount + 1;  // partials w.r.t. [z, theta...]
constexpr double B = kSplineBound;
// softplus(kDerivShift) == 1, so zero raw parameters give unit derivatives.
const double kDerivShift = std::log(std::expm1(1.0));

// Forward-mode dual scalar carrying partials w.r.t. z and all raw
// parameters. Only the operations the spline needs are defined.
struct Dual {
  double v;
  Eigen::Matrix<double, NG, 1> g;
  Dual() : v(0.0) { g.setZero(); }
  Dual(double value) : v(value) { g.setZero(); }  // NOLINT: implicit wanted
  static Dual seeded(double value, int index) {
    Dual d(value);
    d.g(index) = 1.0;
    return d;
  }
};

inline Dual operator+(const Dual& a, const Dual& b) {
  Dual r(a.v + b.v);
  r.g = a.g + b.g;
  return r;
}
inline Dual operator-(const Dual& a, const Dual& b) {
  Dual r(a.v - b.v);
  r.g = a.g - b.g;
  return r;
}
inline Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  r.g = a.g * b.v + b.g * a.v;
  return r;
}
inline Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  r.g = (a.g - r.v * b.g) / b.v;
  return r;
}
inline Dual dexp(const Dual& a) {
  Dual r(std::exp(a.v));
  r.g = a.g * r.v;
  return r;
}
inline Dual dlog(const Dual& a) {
  Dual r(std::log(a.v));
  r.g = a.g / a.v;
  return r;
}
inline Dual dsoftplus(const Dual& a) {
  Dual r(softplus(a.v));
  r.g = a.g * logistic(a.v);
  return r;
}
inline double value(double x) { return x; }
inline double value(const Dual& x) { return x.v; }
inline double dexp(double x) { return std::exp(x); }
inline double dlog(double x) { return std::log(x); }
inline double dsoftplus(double x) { return softplus(x); }

// Computes knots and derivatives from raw parameters. S is double or Dual.
template <class S>
void spline_knots(const S* theta, S* xk, S* yk, S* delta) {
  // Softmax over widths/heights; the max is subtracted as a plain constant
  // (softmax is shift-invariant, so this does not change derivatives).
  for (int block = 0; block < 2; ++block) {
    const S* raw = theta + block * K;
    double m = value(raw[0]);
    for (int k = 1; k < K; ++k) m = std::max(m, value(raw[k]));
    S e[K];
    S sum = 0.0;
    for (int k = 0; k < K; ++k) {
      e[k] = dexp(raw[k] - S(m));
      sum = sum + e[k];
    }
    S* knots = block == 0 ? xk : yk;
    knots[0] = -B;
    for (int k = 0; k < K; ++k) {
      S width = S(kSplineMinBin * 2.0 * B) +
                S((1.0 - kSplineMinBin * K) * 2.0 * B) * (e[k] / sum);
      knots[k + 1] = knots[k] + width;
    }
    // Pin the upper end exactly so tails join without rounding slack.
    knots[K] = B;
  }
  delta[0] = 1.0;
  delta[K] = 1.0;
  for (int k = 1; k < K; ++k)
    delta[k] = dsoftplus(theta[2 * K + (k - 1)] + S(kDerivShift));
}

template <class S>
void spline_eval(S z, const S* theta, S* y, S* logd) {
  if (value(z) <= -B || value(z) >= B) {
    *y = z;
    *logd = 0.0;
    return;
  }
  S xk[K + 1], yk[K + 1], delta[K + 1];
  spline_knots(theta, xk, yk, delta);
  int bin = K - 1;
  for (int k = 0; k < K; ++k) {
    if (value(z) < value(xk[k + 1])) {
      bin = k;
      break;
    }
  }
  S w = xk[bin + 1] - xk[bin];
  S h = yk[bin + 1] - yk[bin];
  S slope = h / w;
  S xi = (z - xk[bin]) / w;
  S omx = S(1.0) - xi;
  S d0 = delta[bin], d1 = delta[bin + 1];
  S den = slope + (d1 + d0 - slope - slope) * xi * omx;
  S num = h * (slope * xi * xi + d0 * xi * omx);
  *y = yk[bin] + num / den;
  S deriv =
      slope * slope * (d1 * xi * xi + S(2.0) * slope * xi * omx + d0 * omx * omx) /
      (den * den);
  *logd = dlog(deriv);
}

// All-zero parameters must give the identity map bit-exactly (the flow
// starts there); the generic evaluation only reaches it to round-off.
bool all_zero(const double* theta) {
  for (int k = 0; k < kSplineParamCount; ++k)
    if (theta[k] != 0.0) return false;
  return true;
}

}  // namespace

void spline_forward(double z, const double* theta, double* y, double* logd) {
  if (all_zero(theta)) {
    *y = z;
    *logd = 0.0;
    return;
  }
  spline_eval<double>(z, theta, y, logd);
}

void spline_forward_grad(double z, const double* theta, double* y,
                         double* logd, double* dy, double* dlogd) {
  Dual zd = Dual::seeded(z, 0);
  Dual th[kSplineParamCount];
  for (int k = 0; k < kSplineParamCount; ++k)
    th[k] = Dual::seeded(theta[k], k + 1);
  Dual yd, ld;
  spline_eval<Dual>(zd, th, &yd, &ld);
  *y = yd.v;
  *logd = ld.v;
  for (int k = 0; k < NG; ++k) {
    dy[k] = yd.g(k);
    dlogd[k] = ld.g(k);
  }
  if (all_zero(theta)) {
    // Values snap to the identity; parameter partials stay as computed.
    *y = z;
    *logd = 0.0;
    dy[0] = 1.0;
    dlogd[0] = 0.0;
  }
}

double spline_inverse(double y, const double* theta, double* logd) {
  if ((y <= -B || y >= B) || all_zero(theta)) {
    if (logd) *logd = 0.0;
    return y;
  }
  double xk[K + 1], yk[K + 1], delta[K + 1];
  spline_knots<double>(theta, xk, yk, delta);
  int bin = K - 1;
  for (int k = 0; k < K; ++k) {
    if (y < yk[k + 1]) {
      bin = k;
      break;
    }
  }
  double w = xk[bin + 1] - xk[bin];
  double h = yk[bin + 1] - yk[bin];
  double slope = h / w;
  double r = y - yk[bin];
  double dsum = delta[bin + 1] + delta[bin] - 2.0 * slope;
  double a = h * (slope - delta[bin]) + r * dsum;
  double b = h * delta[bin] - r * dsum;
  double c = -slope * r;
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) {
    if (disc < -1e-9)
      throw NonFiniteError("spline_inverse: negative discriminant " +
                           std::to_string(disc));
    disc = 0.0;
  }
  double xi = 2.0 * c / (-b - std::sqrt(disc));
  xi = std::clamp(xi, 0.0, 1.0);
  double z = xk[bin] + xi * w;
  if (logd) {
    double omx = 1.0 - xi;
    double den = slope + dsum * xi * omx;
    double deriv = slope * slope *
                   (delta[bin + 1] * xi * xi + 2.0 * slope * xi * omx +
                    delta[bin] * omx * omx) /
                   (den * den);
    *logd = std::log(deriv);
  }
  return z;
}

}  // namespace cnflow
