#include "fours/structuring/factor.hpp"

#include "fours/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace fours::structuring {

Eigen::MatrixXd varimax(const Eigen::MatrixXd& loadings, bool normalize, int max_iter, double tol) {
    const auto p = loadings.rows();
    const auto k = loadings.cols();
    if (k < 2) return loadings;
    Eigen::VectorXd h = Eigen::VectorXd::Ones(p);
    Eigen::MatrixXd x = loadings;
    if (normalize) {
        h = loadings.rowwise().norm().cwiseMax(1e-12);
        x = h.cwiseInverse().asDiagonal() * loadings;
    }
    Eigen::MatrixXd t = Eigen::MatrixXd::Identity(k, k);
    double d = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::MatrixXd z = x * t;
        const Eigen::RowVectorXd col_ss = z.cwiseAbs2().colwise().sum() / static_cast<double>(p);
        const Eigen::MatrixXd target = z.array().cube().matrix() - z * col_ss.asDiagonal();
        const Eigen::MatrixXd b = x.transpose() * target;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
        t = svd.matrixU() * svd.matrixV().transpose();
        const double d_prev = d;
        d = svd.singularValues().sum();
        if (d < d_prev * (1.0 + tol)) break;
    }
    return h.asDiagonal() * (x * t);
}

EfaResult efa(const Eigen::MatrixXd& correlation, const EfaOptions& options) {
    const auto p = correlation.rows();
    if (p == 0 || correlation.cols() != p) throw DomainError("efa: correlation matrix must be square and nonempty");
    if (!correlation.isApprox(correlation.transpose(), 1e-10))
        throw DomainError("efa: correlation matrix is not symmetric");
    if ((correlation.diagonal().array() - 1.0).abs().maxCoeff() > 1e-8)
        throw DomainError("efa: correlation matrix needs a unit diagonal");

    EfaResult out;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(correlation);
    out.eigenvalues = es.eigenvalues().reverse();
    const Eigen::MatrixXd vectors = es.eigenvectors().rowwise().reverse();
    if (out.eigenvalues(p - 1) < -1e-10)
        out.warnings.push_back("correlation matrix has negative eigenvalues; they were clipped at 0");

    int k = 0;
    if (options.n_factors) {
        k = *options.n_factors;
        if (k < 1 || k > p) throw DomainError("efa: n_factors must lie in [1, number of items]");
    } else if (options.rule == FactorRule::Kaiser) {
        k = static_cast<int>((out.eigenvalues.array() > 1.0).count());
        if (k == 0) {
            k = 1;
            out.warnings.push_back("no eigenvalue exceeds 1; extracting a single factor");
        }
    } else {
        k = 1;
        double gap = -1.0;
        for (Eigen::Index i = 0; i + 1 < p; ++i) {
            const double g = out.eigenvalues(i) - out.eigenvalues(i + 1);
            if (g > gap + 1e-12) {
                gap = g;
                k = static_cast<int>(i) + 1;
            }
        }
    }
    out.n_factors = k;

    Eigen::MatrixXd l = vectors.leftCols(k) * out.eigenvalues.head(k).cwiseMax(0.0).cwiseSqrt().asDiagonal();
    l = varimax(l);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    const Eigen::RowVectorXd ss = l.cwiseAbs2().colwise().sum();
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ss(a) > ss(b); });
    out.loadings.resize(p, k);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd c = l.col(order[static_cast<std::size_t>(j)]);
        if (c.sum() < 0.0) c = -c;
        out.loadings.col(j) = c;
    }

    out.assignment.assign(static_cast<std::size_t>(p), -1);
    for (Eigen::Index i = 0; i < p; ++i) {
        Eigen::Index best = 0;
        const double m = out.loadings.row(i).cwiseAbs().maxCoeff(&best);
        if (m >= options.loading_threshold) out.assignment[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

namespace {

struct CfaModel {
    const std::vector<int>& factor_of;
    int n_factors;
    std::vector<std::pair<int, int>> phi_pairs;

    Eigen::MatrixXd phi(const Eigen::VectorXd& theta, std::size_t p) const {
        Eigen::MatrixXd f = Eigen::MatrixXd::Identity(n_factors, n_factors);
        for (std::size_t c = 0; c < phi_pairs.size(); ++c) {
            const auto [g, h] = phi_pairs[c];
            f(g, h) = f(h, g) = std::tanh(theta(static_cast<Eigen::Index>(p + c)));
        }
        return f;
    }
    int phi_index(int g, int h) const {
        if (g == h) return -1;
        if (g > h) std::swap(g, h);
        for (std::size_t c = 0; c < phi_pairs.size(); ++c)
            if (phi_pairs[c].first == g && phi_pairs[c].second == h) return static_cast<int>(c);
        return -1;
    }
};

}  // namespace

CfaFit cfa_fit(const Eigen::MatrixXd& r, const std::vector<int>& factor_of, std::size_t n_obs,
               const CfaThresholds& thresholds) {
    const auto p = static_cast<std::size_t>(r.rows());
    if (r.cols() != r.rows() || factor_of.size() != p) throw DomainError("cfa_fit: dimensions do not match");
    if (p < 2) throw DomainError("cfa_fit: at least two items are required");
    if (n_obs < 2) throw DomainError("cfa_fit: at least two observations are required");
    int n_factors = 0;
    for (int f : factor_of) {
        if (f < 0) throw DomainError("cfa_fit: every item needs a factor");
        n_factors = std::max(n_factors, f + 1);
    }
    CfaModel model{factor_of, n_factors, {}};
    for (int g = 0; g < n_factors; ++g)
        for (int h = g + 1; h < n_factors; ++h) model.phi_pairs.emplace_back(g, h);

    const std::size_t m = p * (p - 1) / 2;
    const std::size_t q = p + model.phi_pairs.size();
    Eigen::VectorXd obs(static_cast<Eigen::Index>(m));
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            obs(static_cast<Eigen::Index>(cells.size())) = r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            cells.emplace_back(i, j);
        }

    Eigen::VectorXd theta(static_cast<Eigen::Index>(q));
    theta.head(static_cast<Eigen::Index>(p)).setConstant(0.7);
    theta.tail(static_cast<Eigen::Index>(model.phi_pairs.size())).setConstant(0.3);

    const auto residuals = [&](const Eigen::VectorXd& th, Eigen::MatrixXd* jac) {
        const Eigen::MatrixXd f = model.phi(th, p);
        Eigen::VectorXd e(static_cast<Eigen::Index>(m));
        if (jac) jac->setZero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(q));
        for (std::size_t c = 0; c < m; ++c) {
            const auto [i, j] = cells[c];
            const int g = factor_of[i], h = factor_of[j];
            const double li = th(static_cast<Eigen::Index>(i)), lj = th(static_cast<Eigen::Index>(j));
            const double fij = f(g, h);
            const auto row = static_cast<Eigen::Index>(c);
            e(row) = obs(row) - li * lj * fij;
            if (jac) {
                (*jac)(row, static_cast<Eigen::Index>(i)) = lj * fij;
                (*jac)(row, static_cast<Eigen::Index>(j)) = li * fij;
                const int pi = model.phi_index(g, h);
                if (pi >= 0) (*jac)(row, static_cast<Eigen::Index>(p) + pi) = li * lj * (1.0 - fij * fij);
            }
        }
        return e;
    };

    CfaFit fit;
    Eigen::MatrixXd jac;
    Eigen::VectorXd e = residuals(theta, &jac);
    double f_val = e.squaredNorm();
    double mu = 1e-3;
    const int max_iter = 1000;
    int it = 0;
    for (; it < max_iter; ++it) {
        const Eigen::VectorXd grad = jac.transpose() * e;
        if (grad.cwiseAbs().maxCoeff() < 1e-10 || f_val < 1e-24) {
            fit.converged = true;
            break;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        bool accepted = false;
        while (mu < 1e12) {
            Eigen::MatrixXd a = jtj;
            a.diagonal().array() += mu * (1.0 + jtj.diagonal().array());
            const Eigen::VectorXd step = a.ldlt().solve(grad);
            const Eigen::VectorXd trial = theta + step;
            Eigen::MatrixXd trial_jac;
            const Eigen::VectorXd trial_e = residuals(trial, &trial_jac);
            const double trial_f = trial_e.squaredNorm();
            if (std::isfinite(trial_f) && trial_f <= f_val) {
                const double change = f_val - trial_f;
                theta = trial;
                e = trial_e;
                jac = trial_jac;
                f_val = trial_f;
                mu = std::max(mu / 10.0, 1e-12);
                accepted = true;
                if (change <= 1e-15 * (1.0 + f_val) && step.cwiseAbs().maxCoeff() < 1e-9) fit.converged = true;
                break;
            }
            mu *= 10.0;
        }
        if (!accepted) {
            // no decrease possible: stationary up to rounding
            fit.converged = (jac.transpose() * e).cwiseAbs().maxCoeff() < 1e-6;
            break;
        }
        if (fit.converged) break;
    }
    fit.iterations = it;

    const Eigen::MatrixXd f = model.phi(theta, p);
    fit.loadings = theta.head(static_cast<Eigen::Index>(p));
    fit.factor_correlations = f;
    fit.residual = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t c = 0; c < m; ++c) {
        const auto [i, j] = cells[c];
        fit.residual(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            fit.residual(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = e(static_cast<Eigen::Index>(c));
    }

    const double n1 = static_cast<double>(n_obs - 1);
    fit.f_min = f_val;
    fit.chi2 = n1 * f_val;
    fit.df = static_cast<int>(m) - static_cast<int>(q);
    fit.chi2_null = n1 * obs.squaredNorm();
    fit.df_null = static_cast<int>(m);

    const double excess = std::max(fit.chi2 - fit.df, 0.0);
    const double excess_null = std::max({fit.chi2_null - fit.df_null, fit.chi2 - fit.df, 0.0});
    fit.cfi = excess_null > 0.0 ? 1.0 - excess / excess_null : 1.0;
    if (fit.df > 0) {
        const double ratio_null = fit.chi2_null / fit.df_null;
        const double denom = ratio_null - 1.0;
        fit.tli = denom > 0.0 ? (ratio_null - fit.chi2 / fit.df) / denom : 1.0;
        fit.tli = std::min(fit.tli, 1.0);
        fit.rmsea = std::sqrt(std::max((fit.chi2 - fit.df) / (fit.df * n1), 0.0));
    } else {
        fit.tli = 1.0;
        fit.rmsea = 0.0;
    }
    fit.srmr = std::sqrt(f_val / static_cast<double>(p * (p + 1) / 2));

    fit.cfi_pass = fit.cfi > thresholds.cfi;
    fit.tli_pass = fit.tli > thresholds.tli;
    fit.rmsea_pass = fit.rmsea < thresholds.rmsea;
    fit.srmr_pass = fit.srmr < thresholds.srmr;
    return fit;
}

std::vector<std::pair<std::size_t, std::size_t>> flag_residual_pairs(const Eigen::MatrixXd& residual,
                                                                      double threshold) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (Eigen::Index i = 0; i < residual.rows(); ++i)
        for (Eigen::Index j = i + 1; j < residual.cols(); ++j)
            if (std::abs(residual(i, j)) > threshold) out.emplace_back(i, j);
    return out;
}

}  // namespace fours::structuring
