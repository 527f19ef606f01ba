#include "fours/structuring/monotonicity.hpp"

#include "fours/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fours::structuring {

namespace {

// Linear-interpolation quantile of sorted values.
double quantile_sorted(const std::vector<double>& v, double prob) {
    const double pos = prob * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

MonotonicityResult monotonicity_curves(const Eigen::MatrixXi& responses, const std::vector<std::size_t>& items,
                                       const std::vector<int>& max_levels, double tolerance, int n_bins) {
    if (items.size() < 2) throw DomainError("monotonicity_curves: at least two items are required");
    if (max_levels.size() != items.size()) throw DomainError("monotonicity_curves: one max level per item");
    if (n_bins < 2) throw DomainError("monotonicity_curves: at least two bins");

    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < responses.rows(); ++i) {
        bool complete = true;
        for (auto k : items) complete = complete && responses(i, static_cast<Eigen::Index>(k)) >= 0;
        if (complete) rows.push_back(i);
    }
    MonotonicityResult out;
    if (rows.empty()) throw DomainError("monotonicity_curves: no rows with all items observed");

    for (std::size_t a = 0; a < items.size(); ++a) {
        const auto col = static_cast<Eigen::Index>(items[a]);
        std::vector<double> rest(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            int s = 0;
            for (auto k : items)
                if (static_cast<Eigen::Index>(k) != col) s += responses(rows[r], static_cast<Eigen::Index>(k));
            rest[r] = s;
        }
        std::vector<double> sorted = rest;
        std::sort(sorted.begin(), sorted.end());
        std::set<double> cuts;
        for (int b = 1; b < n_bins; ++b) cuts.insert(quantile_sorted(sorted, static_cast<double>(b) / n_bins));
        const std::vector<double> cut(cuts.begin(), cuts.end());

        const auto raw_bins = cut.size() + 1;
        const int m = max_levels[a];
        std::vector<std::size_t> counts(raw_bins, 0);
        std::vector<double> sum(raw_bins, 0.0), upper(raw_bins, -1e300);
        std::vector<std::vector<double>> ge(raw_bins, std::vector<double>(static_cast<std::size_t>(m), 0.0));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            // ties with a cut point stay in the lower bin
            const auto b = static_cast<std::size_t>(std::lower_bound(cut.begin(), cut.end(), rest[r]) - cut.begin());
            const int y = responses(rows[r], col);
            ++counts[b];
            sum[b] += y;
            upper[b] = std::max(upper[b], rest[r]);
            for (int l = 1; l <= m; ++l)
                if (y >= l) ge[b][static_cast<std::size_t>(l - 1)] += 1.0;
        }

        MonotonicityCurve c;
        c.item = items[a];
        for (std::size_t b = 0; b < raw_bins; ++b) {
            if (counts[b] == 0) continue;
            const double n = static_cast<double>(counts[b]);
            c.counts.push_back(counts[b]);
            c.bin_upper.push_back(upper[b]);
            c.mean_level.push_back(sum[b] / n);
            std::vector<double> g = ge[b];
            for (auto& x : g) x /= n;
            c.at_least.push_back(std::move(g));
        }
        for (std::size_t b = 1; b < c.mean_level.size(); ++b)
            c.max_drop = std::max(c.max_drop, c.mean_level[b - 1] - c.mean_level[b]);
        c.pass = c.max_drop <= tolerance;
        if (static_cast<int>(c.counts.size()) < n_bins)
            out.warnings.push_back("item column " + std::to_string(c.item) + ": only " + std::to_string(c.counts.size()) +
                                   " rest-score bins available");
        out.bins = std::max(out.bins, static_cast<int>(c.counts.size()));
        out.curves.push_back(std::move(c));
    }
    return out;
}

}  // namespace fours::structuring
