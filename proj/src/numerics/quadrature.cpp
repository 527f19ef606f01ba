#include "fours/numerics/quadrature.hpp"

#include "fours/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fours::numerics {

QuadratureRule gauss_legendre(int n, double a, double b) {
    if (n <= 0) throw DomainError("gauss_legendre: n must be positive");
    if (!(a < b)) throw DomainError("gauss_legendre: require a < b");

    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double mid = 0.5 * (b + a);
    const double half = 0.5 * (b - a);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0;
            double p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            dp = n * (z * p1 - p2) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        if (n == 1) {
            z = 0.0;
            dp = 1.0;
        }
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        rule.nodes[i] = mid - half * z;
        rule.nodes[n - 1 - i] = mid + half * z;
        rule.weights[i] = half * w;
        rule.weights[n - 1 - i] = half * w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = mid;
    return rule;
}

namespace {

double panel(const std::function<double(double)>& f, double a, double b, int n) {
    const auto rule = gauss_legendre(n, a, b);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += rule.weights[i] * f(rule.nodes[i]);
    return s;
}

double adapt(const std::function<double(double)>& f, double a, double b, double whole, int n,
             double abs_tol, double rel_tol, int depth) {
    const double mid = 0.5 * (a + b);
    const double left = panel(f, a, mid, n);
    const double right = panel(f, mid, b, n);
    const double both = left + right;
    if (depth <= 0 || std::abs(both - whole) <= abs_tol + rel_tol * std::abs(both)) return both;
    return adapt(f, a, mid, left, n, 0.5 * abs_tol, rel_tol, depth - 1) +
           adapt(f, mid, b, right, n, 0.5 * abs_tol, rel_tol, depth - 1);
}

}  // namespace

double integrate_panels(const std::function<double(double)>& f, double a, double b,
                        const std::vector<double>& breakpoints, int nodes_per_panel, double abs_tol,
                        double rel_tol, int max_depth) {
    if (!(a < b)) return 0.0;
    std::vector<double> edges{a};
    std::vector<double> inner;
    for (double x : breakpoints)
        if (x > a && x < b) inner.push_back(x);
    std::sort(inner.begin(), inner.end());
    for (double x : inner)
        if (x > edges.back()) edges.push_back(x);
    edges.push_back(b);

    const double per_panel_tol = abs_tol / static_cast<double>(edges.size() - 1);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
        const double whole = panel(f, edges[i], edges[i + 1], nodes_per_panel);
        total += adapt(f, edges[i], edges[i + 1], whole, nodes_per_panel, per_panel_tol, rel_tol, max_depth);
    }
    return total;
}

}  // namespace fours::numerics
