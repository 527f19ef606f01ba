#include "fours/numerics/optimizer.hpp"

#include "fours/errors.hpp"
#include "fours/numerics/parallel.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fours::numerics {

void OptimizerSettings::validate() const {
    if (max_iterations < 1) throw DomainError("optimizer: max_iterations must be positive");
    if (!(param_tol > 0.0 && objective_tol > 0.0 && rdm_tol > 0.0 && fd_step_scale > 0.0))
        throw DomainError("optimizer: tolerances and step scale must be positive");
}

ObjectiveDerivatives finite_difference_derivatives(const std::function<double(const Eigen::VectorXd&)>& f,
                                                   const Eigen::VectorXd& x, double step_scale, int threads) {
    const auto p = static_cast<std::size_t>(x.size());
    Eigen::VectorXd h(p);
    for (std::size_t j = 0; j < p; ++j) h[j] = step_scale * std::max(std::abs(x[j]), 1.0) * 1e-4;

    ObjectiveDerivatives out;
    out.value = f(x);
    out.gradient.resize(p);
    out.hessian.resize(p, p);

    // f(x + h_j e_j) and f(x - h_j e_j)
    std::vector<double> plus(p);
    std::vector<double> minus(p);
    parallel_for(p, threads, [&](std::size_t j) {
        Eigen::VectorXd y = x;
        y[j] = x[j] + h[j];
        plus[j] = f(y);
        y[j] = x[j] - h[j];
        minus[j] = f(y);
    });
    for (std::size_t j = 0; j < p; ++j) {
        out.gradient[j] = (plus[j] - minus[j]) / (2.0 * h[j]);
        out.hessian(j, j) = (plus[j] - 2.0 * out.value + minus[j]) / (h[j] * h[j]);
    }

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = 0; k < j; ++k) pairs.emplace_back(j, k);
    std::vector<double> cross(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t idx) {
        const auto [j, k] = pairs[idx];
        Eigen::VectorXd y = x;
        y[j] = x[j] + h[j];
        y[k] = x[k] + h[k];
        const double fpp = f(y);
        y[k] = x[k] - h[k];
        const double fpm = f(y);
        y[j] = x[j] - h[j];
        const double fmm = f(y);
        y[k] = x[k] + h[k];
        const double fmp = f(y);
        cross[idx] = (fpp - fpm - fmp + fmm) / (4.0 * h[j] * h[k]);
    });
    for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
        const auto [j, k] = pairs[idx];
        out.hessian(j, k) = cross[idx];
        out.hessian(k, j) = cross[idx];
    }
    return out;
}

namespace {

// g' (-H)^{-1} g / p, or +inf when -H is not positive definite.
double relative_distance(const ObjectiveDerivatives& d) {
    const auto p = d.gradient.size();
    if (p == 0) return 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt(-d.hessian);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const Eigen::VectorXd s = llt.solve(d.gradient);
    const double rdm = d.gradient.dot(s) / static_cast<double>(p);
    return std::isfinite(rdm) && rdm >= 0.0 ? rdm : std::numeric_limits<double>::infinity();
}

bool all_finite(const ObjectiveDerivatives& d) {
    return std::isfinite(d.value) && d.gradient.allFinite() && d.hessian.allFinite();
}

}  // namespace

OptimizerResult marquardt_levenberg(const SmoothObjective& objective, const Eigen::VectorXd& start,
                                    const OptimizerSettings& settings) {
    settings.validate();
    const auto p = start.size();
    OptimizerResult result;
    result.argmax = start;

    ObjectiveDerivatives current = objective.derivatives(start);
    if (!all_finite(current)) {
        result.value = current.value;
        result.status = "objective or derivatives not finite at start";
        return result;
    }

    double lambda = 1e-3;
    Eigen::VectorXd theta = start;
    for (int iter = 1; iter <= settings.max_iterations; ++iter) {
        result.iterations = iter;
        const Eigen::MatrixXd info = -current.hessian;
        // Levenberg-Marquardt damping on the diagonal, scaled by the trace so
        // that lambda is dimensionless.
        const double trace_scale = std::max(info.diagonal().cwiseAbs().mean(), 1e-8);

        bool accepted = false;
        Eigen::VectorXd next_theta;
        for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
            Eigen::MatrixXd damped = info;
            for (Eigen::Index j = 0; j < p; ++j)
                damped(j, j) += lambda * (std::abs(info(j, j)) + trace_scale);
            Eigen::LLT<Eigen::MatrixXd> llt(damped);
            if (llt.info() != Eigen::Success) {
                lambda = std::max(lambda * 10.0, 1e-4);
                continue;
            }
            const Eigen::VectorXd step = llt.solve(current.gradient);
            if (!step.allFinite()) {
                lambda = std::max(lambda * 10.0, 1e-4);
                continue;
            }
            // Backtracking on the damped direction before raising lambda.
            double alpha = 1.0;
            for (int halving = 0; halving < 4; ++halving, alpha *= 0.5) {
                const Eigen::VectorXd candidate = theta + alpha * step;
                const double value = objective.value(candidate);
                if (std::isfinite(value) && value >= current.value) {
                    next_theta = candidate;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) lambda = std::max(lambda * 10.0, 1e-4);
        }

        if (!accepted) {
            result.status = "no ascent step found";
            break;
        }

        const Eigen::VectorXd delta = next_theta - theta;
        theta = next_theta;
        ObjectiveDerivatives updated = objective.derivatives(theta);
        if (!all_finite(updated)) {
            result.status = "derivatives not finite";
            break;
        }
        result.param_change = delta.squaredNorm();
        result.objective_change = std::abs(updated.value - current.value);
        current = std::move(updated);
        lambda = std::max(lambda / 10.0, 1e-12);

        result.rdm = relative_distance(current);
        result.param_converged = result.param_change < settings.param_tol;
        result.objective_converged = result.objective_change < settings.objective_tol;
        result.rdm_converged = result.rdm < settings.rdm_tol;
        if (result.param_converged && result.objective_converged && result.rdm_converged) {
            result.converged = true;
            result.status = "converged";
            break;
        }
    }
    if (!result.converged && result.status.empty()) result.status = "maximum number of iterations reached";

    result.argmax = theta;
    result.value = current.value;
    result.gradient = current.gradient;
    result.hessian = current.hessian;
    if (!result.converged) result.rdm = relative_distance(current);
    return result;
}

OptimizerResult marquardt_levenberg(const std::function<double(const Eigen::VectorXd&)>& objective,
                                    const Eigen::VectorXd& start, const OptimizerSettings& settings) {
    SmoothObjective smooth;
    smooth.value = objective;
    smooth.derivatives = [&](const Eigen::VectorXd& x) {
        return finite_difference_derivatives(objective, x, settings.fd_step_scale, settings.threads);
    };
    return marquardt_levenberg(smooth, start, settings);
}

}  // namespace fours::numerics
