#include "fours/numerics/sobol.hpp"

#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"

#include <array>
#include <bit>

namespace fours::numerics {

namespace {

constexpr int kBits = 32;

struct DirectionEntry {
    int degree;
    std::uint32_t poly;
    std::array<std::uint32_t, 8> m;
};

// Joe & Kuo (new-joe-kuo-6.21201), dimensions 2..16. Dimension 1 is the
// van der Corput sequence in base 2.
constexpr std::array<DirectionEntry, kSobolMaxDim - 1> kDirections{{
    {1, 0, {1}},
    {2, 1, {1, 3}},
    {3, 1, {1, 3, 1}},
    {3, 2, {1, 1, 1}},
    {4, 1, {1, 1, 3, 3}},
    {4, 4, {1, 3, 5, 13}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
    {5, 11, {1, 1, 5, 1, 1}},
    {5, 13, {1, 1, 1, 3, 11}},
    {5, 14, {1, 3, 5, 5, 31}},
    {6, 1, {1, 3, 3, 9, 7, 49}},
    {6, 13, {1, 1, 1, 15, 21, 21}},
    {6, 16, {1, 3, 1, 13, 27, 49}},
}};

std::vector<std::uint32_t> direction_numbers(int d) {
    std::vector<std::uint32_t> v(kBits);
    if (d == 0) {
        for (int i = 0; i < kBits; ++i) v[i] = 1u << (kBits - 1 - i);
        return v;
    }
    const auto& e = kDirections[d - 1];
    const int s = e.degree;
    for (int i = 0; i < s && i < kBits; ++i) v[i] = e.m[i] << (kBits - 1 - i);
    for (int i = s; i < kBits; ++i) {
        std::uint32_t value = v[i - s] ^ (v[i - s] >> s);
        for (int k = 1; k < s; ++k) {
            if ((e.poly >> (s - 1 - k)) & 1u) value ^= v[i - k];
        }
        v[i] = value;
    }
    return v;
}

}  // namespace

SobolSequence::SobolSequence(int dim) : dim_(dim) {
    if (dim < 1 || dim > kSobolMaxDim)
        throw DomainError("sobol: dimension must lie in [1, " + std::to_string(kSobolMaxDim) + "]");
    state_.assign(dim, 0u);
    directions_.reserve(dim);
    for (int d = 0; d < dim; ++d) directions_.push_back(direction_numbers(d));
}

std::vector<double> SobolSequence::next() {
    std::vector<double> point(dim_);
    constexpr double scale = 1.0 / 4294967296.0;
    for (int d = 0; d < dim_; ++d) point[d] = state_[d] * scale;
    const int c = std::countr_one(index_);
    if (c >= kBits) throw DomainError("sobol: sequence exhausted");
    for (int d = 0; d < dim_; ++d) state_[d] ^= directions_[d][c];
    ++index_;
    return point;
}

void SobolSequence::skip(std::uint64_t n) {
    for (std::uint64_t i = 0; i < n; ++i) next();
}

Eigen::MatrixXd sobol_normal(int dim, int count) {
    if (count < 1) throw DomainError("sobol_normal: count must be positive");
    SobolSequence seq(dim);
    // The first 2^m points have m-bit coordinates; half a cell moves them
    // off the boundary without breaking the net.
    const double shift = 0.5 / static_cast<double>(std::bit_ceil(static_cast<unsigned>(count)));
    Eigen::MatrixXd out(count, dim);
    for (int i = 0; i < count; ++i) {
        const auto u = seq.next();
        for (int d = 0; d < dim; ++d) out(i, d) = normal_quantile(u[d] + shift);
    }
    return out;
}

}  // namespace fours::numerics
