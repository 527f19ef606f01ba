#include "fours/numerics/splines.hpp"

#include "fours/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fours::numerics {

namespace {

// All B-splines of `degree` on `knots` at t, or their `deriv`-th derivative
// (deriv <= 2). t is clamped into [knots.front(), knots.back()] by callers.
std::vector<double> bspline_values(const std::vector<double>& knots, double t, int degree, int deriv) {
    const int m = static_cast<int>(knots.size());
    const int order0 = degree - deriv;
    // degree-0 indicators; the right end of the support belongs to the last
    // non-degenerate interval.
    std::vector<double> b(m - 1, 0.0);
    int last = -1;
    for (int i = 0; i + 1 < m; ++i)
        if (knots[i] < knots[i + 1]) last = i;
    for (int i = 0; i + 1 < m; ++i) {
        if (knots[i] < knots[i + 1] && ((t >= knots[i] && t < knots[i + 1]) || (i == last && t == knots[i + 1]))) {
            b[i] = 1.0;
            break;
        }
    }
    for (int p = 1; p <= order0; ++p) {
        std::vector<double> next(m - 1 - p, 0.0);
        for (int i = 0; i < m - 1 - p; ++i) {
            double v = 0.0;
            const double d1 = knots[i + p] - knots[i];
            const double d2 = knots[i + p + 1] - knots[i + 1];
            if (d1 > 0.0) v += (t - knots[i]) / d1 * b[i];
            if (d2 > 0.0) v += (knots[i + p + 1] - t) / d2 * b[i + 1];
            next[i] = v;
        }
        b = std::move(next);
    }
    for (int p = order0 + 1; p <= degree; ++p) {
        std::vector<double> next(m - 1 - p, 0.0);
        for (int i = 0; i < m - 1 - p; ++i) {
            double v = 0.0;
            const double d1 = knots[i + p] - knots[i];
            const double d2 = knots[i + p + 1] - knots[i + 1];
            if (d1 > 0.0) v += p / d1 * b[i];
            if (d2 > 0.0) v -= p / d2 * b[i + 1];
            next[i] = v;
        }
        b = std::move(next);
    }
    return b;
}

std::vector<double> clamped_knots(const std::vector<double>& interior, std::pair<double, double> boundary,
                                  int multiplicity) {
    std::vector<double> k(multiplicity, boundary.first);
    k.insert(k.end(), interior.begin(), interior.end());
    k.insert(k.end(), multiplicity, boundary.second);
    return k;
}

}  // namespace

SplineBasis::SplineBasis(SplineKind kind, std::vector<double> interior, std::pair<double, double> boundary)
    : kind_(kind), interior_(std::move(interior)), boundary_(boundary) {
    if (!(std::isfinite(boundary_.first) && std::isfinite(boundary_.second) && boundary_.first < boundary_.second))
        throw DomainError("spline: boundary knots must be finite and increasing");
    for (std::size_t i = 0; i < interior_.size(); ++i) {
        const double k = interior_[i];
        if (!(k > boundary_.first && k < boundary_.second))
            throw DomainError("spline: interior knots must lie strictly inside the boundary knots");
        if (i > 0 && !(k > interior_[i - 1])) throw DomainError("spline: interior knots must be strictly increasing");
    }
    switch (kind_) {
        case SplineKind::NaturalCubic:
            break;
        case SplineKind::CubicBSpline:
            knots_ = clamped_knots(interior_, boundary_, 4);
            break;
        case SplineKind::QuadraticISpline:
            // Cubic B-splines on this vector telescope into the I-splines.
            knots_ = clamped_knots(interior_, boundary_, 4);
            break;
    }
}

int SplineBasis::size() const noexcept {
    const int k = static_cast<int>(interior_.size());
    switch (kind_) {
        case SplineKind::NaturalCubic:
            return k + 1;
        case SplineKind::CubicBSpline:
            return k + 4;
        case SplineKind::QuadraticISpline:
            return k + 3;
    }
    return 0;
}

Eigen::VectorXd SplineBasis::natural_cubic(double t, int order) const {
    // Truncated-power natural spline basis (x, d_k - d_{K-1}) in the
    // coordinate x = (t - lo) / (hi - lo).
    const double lo = boundary_.first;
    const double range = boundary_.second - lo;
    std::vector<double> xi{0.0};
    for (double k : interior_) xi.push_back((k - lo) / range);
    xi.push_back(1.0);
    const int big_k = static_cast<int>(xi.size());
    const double x = (t - lo) / range;

    auto trunc = [order](double v) {
        if (v <= 0.0) return 0.0;
        switch (order) {
            case 0:
                return v * v * v;
            case 1:
                return 3.0 * v * v;
            default:
                return 6.0 * v;
        }
    };
    auto d = [&](int k) { return (trunc(x - xi[k]) - trunc(x - xi[big_k - 1])) / (xi[big_k - 1] - xi[k]); };

    Eigen::VectorXd out(size());
    out[0] = order == 0 ? x : (order == 1 ? 1.0 : 0.0);
    const double d_last = d(big_k - 2);
    for (int k = 0; k < big_k - 2; ++k) out[k + 1] = d(k) - d_last;
    return out / std::pow(range, order);
}

Eigen::VectorXd SplineBasis::bspline(double t, int degree, int deriv) const {
    const auto v = bspline_values(knots_, t, degree, deriv);
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd SplineBasis::ispline(double t) const {
    const double tc = std::clamp(t, boundary_.first, boundary_.second);
    const auto b = bspline_values(knots_, tc, 3, 0);
    const int n = size();
    Eigen::VectorXd out(n);
    double suffix = 0.0;
    for (int i = n - 1; i >= 0; --i) {
        suffix += b[i + 1];
        out[i] = std::min(suffix, 1.0);
    }
    return out;
}

Eigen::VectorXd SplineBasis::mspline(double t) const {
    const int n = size();
    if (t < boundary_.first || t > boundary_.second) return Eigen::VectorXd::Zero(n);
    const auto db = bspline_values(knots_, t, 3, 1);
    Eigen::VectorXd out(n);
    double suffix = 0.0;
    for (int i = n - 1; i >= 0; --i) {
        suffix += db[i + 1];
        out[i] = std::max(suffix, 0.0);
    }
    return out;
}

Eigen::VectorXd SplineBasis::evaluate(double t) const {
    switch (kind_) {
        case SplineKind::NaturalCubic:
            return natural_cubic(t, 0);
        case SplineKind::CubicBSpline:
            if (t < boundary_.first || t > boundary_.second) return Eigen::VectorXd::Zero(size());
            return bspline(t, 3, 0);
        case SplineKind::QuadraticISpline:
            return ispline(t);
    }
    return {};
}

Eigen::VectorXd SplineBasis::derivative(double t) const {
    switch (kind_) {
        case SplineKind::NaturalCubic:
            return natural_cubic(t, 1);
        case SplineKind::CubicBSpline:
            if (t < boundary_.first || t > boundary_.second) return Eigen::VectorXd::Zero(size());
            return bspline(t, 3, 1);
        case SplineKind::QuadraticISpline:
            return mspline(t);
    }
    return {};
}

Eigen::VectorXd SplineBasis::second_derivative(double t) const {
    switch (kind_) {
        case SplineKind::NaturalCubic:
            return natural_cubic(t, 2);
        case SplineKind::CubicBSpline:
            if (t < boundary_.first || t > boundary_.second) return Eigen::VectorXd::Zero(size());
            return bspline(t, 3, 2);
        case SplineKind::QuadraticISpline:
            break;
    }
    throw DomainError("spline: second derivative not available for I-splines");
}

Eigen::VectorXd spline_eval(const SplineBasis& basis, double t) { return basis.evaluate(t); }

Eigen::VectorXd ispline_eval(const SplineBasis& basis, double t) {
    if (basis.kind() != SplineKind::QuadraticISpline) throw DomainError("ispline_eval: basis is not an I-spline");
    return basis.evaluate(t);
}

std::vector<double> quantile_knots(std::vector<double> values, const std::vector<double>& probs) {
    if (values.empty()) throw DomainError("quantile_knots: no values");
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    out.reserve(probs.size());
    const double n = static_cast<double>(values.size());
    for (double p : probs) {
        const double h = (n - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, values.size() - 1);
        out.push_back(values[lo] + (h - std::floor(h)) * (values[hi] - values[lo]));
    }
    return out;
}

}  // namespace fours::numerics
