#pragma once

#include <Eigen/Dense>

namespace cnflow {

enum class TransformerKind { Affine, Spline };

// Affine transformer: y = z * exp(sc) + t with the log-scale smoothly
// clamped, sc = 5 tanh(s / 5), so |log-scale| <= 5. Parameters per
// dimension: (s, t).
inline constexpr double kScaleClamp = 5.0;

// Monotonic rational-quadratic spline on [-10, 10] with 8 bins and identity
// tails; boundary derivatives are fixed to 1 so the map is C^1 at the
// boundary. Parameters per dimension: 8 unnormalized widths, 8 unnormalized
// heights, 7 unconstrained interior derivatives. Zero parameters give the
// identity map exactly.
inline constexpr int kSplineBins = 8;
inline constexpr double kSplineBound = 10.0;
inline constexpr int kSplineParamCount = 3 * kSplineBins - 1;  // 23
inline constexpr double kSplineMinBin = 1e-3;

int transformer_params_per_dim(TransformerKind kind);

// --- Affine ---------------------------------------------------------------

double affine_clamp(double s);        // 5 tanh(s/5)
double affine_clamp_grad(double s);   // d/ds of the clamp

// Returns y; *logd = log dy/dz = clamped log-scale.
double affine_forward(double z, double s, double t, double* logd);
// Returns z such that affine_forward(z) = y; *logd is the forward log
// derivative at that z.
double affine_inverse(double y, double s, double t, double* logd);

// --- Rational-quadratic spline ---------------------------------------------

// theta points at kSplineParamCount raw parameters, grouped
// [widths | heights | derivatives].
void spline_forward(double z, const double* theta, double* y, double* logd);
double spline_inverse(double y, const double* theta, double* logd);

// Forward pass plus exact partial derivatives of y and logd with respect to
// [z, theta_0, ..., theta_22] (kSplineParamCount + 1 entries each).
void spline_forward_grad(double z, const double* theta, double* y,
                         double* logd, double* dy, double* dlogd);

}  // namespace cnflow
