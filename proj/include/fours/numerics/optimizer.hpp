#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

namespace fours::numerics {

struct OptimizerSettings {
    int max_iterations = 200;
    // Sum of squared parameter changes over the last accepted step.
    double param_tol = 1e-5;
    // Absolute objective change over the last accepted step.
    double objective_tol = 1e-5;
    // Relative distance to maximum g' (-H)^{-1} g / p.
    double rdm_tol = 1e-4;
    // Finite-difference step is fd_step_scale * max(|theta_j|, 1) * 1e-4.
    double fd_step_scale = 1.0;
    // Workers used for finite-difference perturbations. The objective must be
    // re-entrant when this exceeds 1.
    int threads = 1;

    void validate() const;
};

struct ObjectiveDerivatives {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

// Objective to maximize. `value` may return a non-finite number to signal an
// infeasible point. `derivatives` returns value, gradient and Hessian at once.
struct SmoothObjective {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<ObjectiveDerivatives(const Eigen::VectorXd&)> derivatives;
};

struct OptimizerResult {
    Eigen::VectorXd argmax;
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
    int iterations = 0;
    double param_change = 0.0;
    double objective_change = 0.0;
    double rdm = 0.0;
    bool param_converged = false;
    bool objective_converged = false;
    bool rdm_converged = false;
    bool converged = false;
    std::string status;
};

// Central finite differences of `f` at `x` using the step rule above.
ObjectiveDerivatives finite_difference_derivatives(const std::function<double(const Eigen::VectorXd&)>& f,
                                                   const Eigen::VectorXd& x, double step_scale = 1.0,
                                                   int threads = 1);

// Marquardt-Levenberg maximization with finite-difference gradient and Hessian.
OptimizerResult marquardt_levenberg(const std::function<double(const Eigen::VectorXd&)>& objective,
                                    const Eigen::VectorXd& start, const OptimizerSettings& settings = {});

// Same algorithm driven by caller-supplied derivatives.
OptimizerResult marquardt_levenberg(const SmoothObjective& objective, const Eigen::VectorXd& start,
                                    const OptimizerSettings& settings = {});

}  // namespace fours::numerics
