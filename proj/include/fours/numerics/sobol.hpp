#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace fours::numerics {

inline constexpr int kSobolMaxDim = 16;

// Gray-code Sobol generator over the first 16 Joe-Kuo dimensions.
class SobolSequence {
public:
    explicit SobolSequence(int dim);

    int dim() const noexcept { return dim_; }
    // Next point in [0, 1)^dim; the first call returns the origin.
    std::vector<double> next();
    void skip(std::uint64_t n);

private:
    int dim_;
    std::uint64_t index_ = 0;
    std::vector<std::uint32_t> state_;
    std::vector<std::vector<std::uint32_t>> directions_;
};

// The first `count` Sobol points, shifted by half a cell of the enclosing
// power-of-two net and pushed through the normal quantile.
// Row i is point i. Deterministic for fixed (dim, count).
Eigen::MatrixXd sobol_normal(int dim, int count);

}  // namespace fours::numerics
