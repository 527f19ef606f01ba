#include "fours/structuring/polychoric.hpp"

#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/random.hpp"
#include "fours/numerics/roots.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fours::structuring {

using numerics::bivariate_normal_cdf;

std::vector<ReplicateSample> resample_replicates(const core::CohortDataset& data, int r, std::uint64_t seed) {
    if (r < 1) throw ValidationError("number of replicates must be at least 1");
    for (const auto& p : data.patients)
        if (p.visits.empty()) throw ValidationError("patient '" + p.id + "' has no visits to sample");
    const auto n = data.patients.size();
    const auto k = data.scale.items.size();
    std::vector<ReplicateSample> out;
    out.reserve(static_cast<std::size_t>(r));
    for (int j = 0; j < r; ++j) {
        numerics::Rng rng(numerics::derive_seed(seed, static_cast<std::uint64_t>(j)));
        ReplicateSample s;
        s.index = j;
        s.visit_of_patient.resize(n);
        s.responses.setConstant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k), -1);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& visits = data.patients[i].visits;
            const auto v = visits.size() == 1 ? 0 : rng.index(visits.size());
            s.visit_of_patient[i] = v;
            for (std::size_t c = 0; c < k; ++c)
                if (const auto& y = visits[v].responses[c]) s.responses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = *y;
        }
        out.push_back(std::move(s));
    }
    return out;
}

Eigen::MatrixXd contingency_table(const Eigen::VectorXi& a, const Eigen::VectorXi& b, int max_a, int max_b) {
    if (a.size() != b.size()) throw DomainError("contingency_table: columns differ in length");
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(max_a + 1, max_b + 1);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a(i) < 0 || b(i) < 0) continue;
        if (a(i) > max_a || b(i) > max_b) throw DomainError("contingency_table: level above the declared maximum");
        t(a(i), b(i)) += 1.0;
    }
    return t;
}

namespace {

Eigen::MatrixXd collapse_empty(const Eigen::MatrixXd& table) {
    std::vector<Eigen::Index> rows, cols;
    for (Eigen::Index i = 0; i < table.rows(); ++i)
        if (table.row(i).sum() > 0.0) rows.push_back(i);
    for (Eigen::Index j = 0; j < table.cols(); ++j)
        if (table.col(j).sum() > 0.0) cols.push_back(j);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = table(rows[i], cols[j]);
    return out;
}

std::vector<double> marginal_thresholds(const Eigen::VectorXd& margin) {
    const double n = margin.sum();
    std::vector<double> t;
    double cum = 0.0;
    for (Eigen::Index i = 0; i + 1 < margin.size(); ++i) {
        cum += margin(i);
        t.push_back(numerics::normal_quantile(cum / n));
    }
    return t;
}

std::vector<double> with_infinities(const std::vector<double>& t) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> out{-inf};
    out.insert(out.end(), t.begin(), t.end());
    out.push_back(inf);
    return out;
}

}  // namespace

double polychoric_log_likelihood(const Eigen::MatrixXd& table, const std::vector<double>& ta,
                                 const std::vector<double>& tb, double rho) {
    const auto a = with_infinities(ta);
    const auto b = with_infinities(tb);
    if (static_cast<Eigen::Index>(a.size()) != table.rows() + 1 || static_cast<Eigen::Index>(b.size()) != table.cols() + 1)
        throw DomainError("polychoric_log_likelihood: thresholds do not match the table");
    Eigen::MatrixXd cdf(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            cdf(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = bivariate_normal_cdf(a[i], b[j], rho);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < table.rows(); ++i)
        for (Eigen::Index j = 0; j < table.cols(); ++j) {
            if (table(i, j) == 0.0) continue;
            const double p = cdf(i + 1, j + 1) - cdf(i, j + 1) - cdf(i + 1, j) + cdf(i, j);
            ll += table(i, j) * std::log(std::max(p, 1e-300));
        }
    return ll;
}

PairEstimate polychoric_pair(const Eigen::MatrixXd& raw) {
    const Eigen::MatrixXd table = collapse_empty(raw);
    if (table.rows() < 2 || table.cols() < 2)
        throw DomainError("polychoric_pair: each item needs at least two observed levels");
    PairEstimate est;
    est.thresholds_a = marginal_thresholds(table.rowwise().sum());
    est.thresholds_b = marginal_thresholds(table.colwise().sum().transpose());
    const auto nll = [&](double rho) {
        return -polychoric_log_likelihood(table, est.thresholds_a, est.thresholds_b, rho);
    };

    constexpr double limit = 0.9995;
    double best = 0.0;
    double best_value = nll(0.0);
    for (int g = -99; g <= 99; ++g) {
        const double rho = 0.01 * g;
        const double v = nll(rho);
        if (v < best_value) {
            best_value = v;
            best = rho;
        }
    }
    const auto m = numerics::brent_minimize(nll, std::max(best - 0.01, -limit), std::min(best + 0.01, limit), 1e-9);
    est.rho = m.value <= best_value ? m.x : best;
    est.log_likelihood = -std::min(m.value, best_value);
    return est;
}

bool smooth_correlation(Eigen::MatrixXd& r) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
    if (es.eigenvalues().minCoeff() >= 0.0) return false;
    const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd s = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd d = s.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    r = d.asDiagonal() * s * d.asDiagonal();
    r.diagonal().setOnes();
    r = 0.5 * (r + r.transpose()).eval();
    return true;
}

PolychoricMatrix polychoric_matrix(const ReplicateSample& sample, const core::ScaleDefinition& scale,
                                   const std::vector<std::size_t>& items) {
    std::vector<std::size_t> candidates = items;
    if (candidates.empty())
        for (std::size_t k = 0; k < scale.items.size(); ++k) candidates.push_back(k);

    PolychoricMatrix out;
    for (auto k : candidates) {
        if (k >= scale.items.size() || static_cast<Eigen::Index>(k) >= sample.responses.cols())
            throw DomainError("polychoric_matrix: item index out of range");
        std::vector<bool> seen(static_cast<std::size_t>(scale.items[k].max_level) + 1, false);
        const auto col = sample.responses.col(static_cast<Eigen::Index>(k));
        for (Eigen::Index i = 0; i < col.size(); ++i)
            if (col(i) >= 0) seen[static_cast<std::size_t>(col(i))] = true;
        if (std::count(seen.begin(), seen.end(), true) >= 2) {
            out.items.push_back(k);
        } else {
            out.excluded.push_back(k);
            out.warnings.push_back("item '" + scale.items[k].id + "' shows a single level and was excluded");
        }
    }

    const auto p = static_cast<Eigen::Index>(out.items.size());
    out.matrix = Eigen::MatrixXd::Identity(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            const auto ki = out.items[static_cast<std::size_t>(i)];
            const auto kj = out.items[static_cast<std::size_t>(j)];
            const auto table = contingency_table(sample.responses.col(static_cast<Eigen::Index>(ki)),
                                                 sample.responses.col(static_cast<Eigen::Index>(kj)),
                                                 scale.items[ki].max_level, scale.items[kj].max_level);
            double rho = 0.0;
            try {
                rho = polychoric_pair(table).rho;
            } catch (const DomainError&) {
                out.warnings.push_back("pair ('" + scale.items[ki].id + "', '" + scale.items[kj].id +
                                       "') has too few joint levels; correlation set to 0");
            }
            out.matrix(i, j) = out.matrix(j, i) = rho;
        }
    }
    if (p > 0 && smooth_correlation(out.matrix)) {
        out.smoothed = true;
        out.warnings.push_back("polychoric matrix was not positive semidefinite; negative eigenvalues clipped");
    }
    return out;
}

}  // namespace fours::structuring
