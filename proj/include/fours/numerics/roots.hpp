#pragma once

#include <functional>

namespace fours::numerics {

// Brent's root finder. Requires f(lo) and f(hi) of opposite sign (or one of
// them zero); throws BracketError otherwise.
double brent_root(const std::function<double(double)>& f, double lo, double hi,
                  double tol = 1e-12, int max_iter = 200);

struct MinimizeResult {
    double x;
    double value;
};

// Brent's parabolic/golden-section minimizer on [lo, hi].
MinimizeResult brent_minimize(const std::function<double(double)>& f, double lo, double hi,
                              double tol = 1e-10, int max_iter = 200);

}  // namespace fours::numerics
