#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

namespace fours::numerics {

enum class SplineKind { NaturalCubic, CubicBSpline, QuadraticISpline };

// Spline basis over [boundary.first, boundary.second] with sorted interior
// knots.
//
//  - NaturalCubic: interior + 1 functions, no intercept, every function is 0
//    at the left boundary; cubic between knots and linear outside the
//    boundary knots.
//  - CubicBSpline: interior + 4 functions, nonnegative, partition of unity on
//    the support, zero outside it.
//  - QuadraticISpline: interior + 3 functions, integrals of normalized
//    quadratic M-splines; nondecreasing from 0 at the left boundary to 1 at
//    the right boundary, clamped outside.
class SplineBasis {
public:
    SplineBasis(SplineKind kind, std::vector<double> interior, std::pair<double, double> boundary);

    SplineKind kind() const noexcept { return kind_; }
    const std::vector<double>& interior() const noexcept { return interior_; }
    std::pair<double, double> boundary() const noexcept { return boundary_; }
    int size() const noexcept;

    Eigen::VectorXd evaluate(double t) const;
    // First derivative in t. For I-splines these are the M-spline values.
    Eigen::VectorXd derivative(double t) const;
    // Second derivative in t (natural cubic and B-spline kinds).
    Eigen::VectorXd second_derivative(double t) const;

private:
    Eigen::VectorXd natural_cubic(double t, int order) const;
    Eigen::VectorXd bspline(double t, int degree, int deriv) const;
    Eigen::VectorXd mspline(double t) const;
    Eigen::VectorXd ispline(double t) const;

    SplineKind kind_;
    std::vector<double> interior_;
    std::pair<double, double> boundary_;
    std::vector<double> knots_;  // full knot vector for B/M/I kinds
};

Eigen::VectorXd spline_eval(const SplineBasis& basis, double t);
Eigen::VectorXd ispline_eval(const SplineBasis& basis, double t);

// Knots at the given probabilities of `values` (linear interpolation between
// order statistics).
std::vector<double> quantile_knots(std::vector<double> values, const std::vector<double>& probs);

}  // namespace fours::numerics
