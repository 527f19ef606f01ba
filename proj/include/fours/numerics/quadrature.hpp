#pragma once

#include <functional>
#include <vector>

namespace fours::numerics {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// n-point Gauss-Legendre rule mapped to [a, b]; exact for polynomials of
// degree <= 2n - 1.
QuadratureRule gauss_legendre(int n, double a, double b);

// Adaptive panel integration: each panel uses `nodes_per_panel` Gauss-Legendre
// nodes and is bisected until the two halves agree with the whole to within
// abs_tol + rel_tol * |I|. `breakpoints` inside (a, b) always start a panel.
double integrate_panels(const std::function<double(double)>& f, double a, double b,
                        const std::vector<double>& breakpoints, int nodes_per_panel = 30,
                        double abs_tol = 1e-14, double rel_tol = 1e-13, int max_depth = 30);

}  // namespace fours::numerics
