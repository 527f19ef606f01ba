#pragma once

namespace fours::numerics {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double normal_cdf(double x);
double normal_pdf(double x);

// Inverse of normal_cdf on (0, 1); returns -inf / +inf at 0 / 1.
double normal_quantile(double p);

// Phi(upper) - Phi(lower) for lower <= upper, evaluated on whichever tail keeps
// the subtraction well conditioned. Infinite bounds are allowed.
double normal_interval_probability(double lower, double upper);

// P(X <= h, Y <= k) for a standard bivariate normal with correlation rho
// (Genz's BVND algorithm, about 1e-15 absolute accuracy).
double bivariate_normal_cdf(double h, double k, double rho);

}  // namespace fours::numerics
