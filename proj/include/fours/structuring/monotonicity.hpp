#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace fours::structuring {

struct MonotonicityCurve {
    std::size_t item = 0;                     // column in the response matrix
    std::vector<double> bin_upper;            // largest rest-score in each bin
    std::vector<std::size_t> counts;
    std::vector<double> mean_level;
    std::vector<std::vector<double>> at_least;  // [bin][m-1] = P(Y >= m), m = 1..M
    double max_drop = 0.0;
    bool pass = true;
};

struct MonotonicityResult {
    std::vector<MonotonicityCurve> curves;
    int bins = 0;
    std::vector<std::string> warnings;
};

// Curves of each item of `items` over deciles of its rest-score (sum of the
// other listed items), using rows where all listed items are observed. A
// score equal to a decile cut point falls in the lower bin. An item passes
// when no adjacent decrease of the mean-level curve exceeds `tolerance`.
MonotonicityResult monotonicity_curves(const Eigen::MatrixXi& responses, const std::vector<std::size_t>& items,
                                       const std::vector<int>& max_levels, double tolerance = 0.05,
                                       int n_bins = 10);

}  // namespace fours::structuring
