#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fours::structuring {

enum class FactorRule {
    Kaiser,  // number of eigenvalues above 1
    Scree,   // position of the largest gap between successive eigenvalues
};

struct EfaOptions {
    std::optional<int> n_factors;
    FactorRule rule = FactorRule::Kaiser;
    double loading_threshold = 0.3;
};

struct EfaResult {
    Eigen::VectorXd eigenvalues;  // descending
    Eigen::MatrixXd loadings;     // items x factors, varimax rotated
    std::vector<int> assignment;  // factor index or -1
    int n_factors = 0;
    std::vector<std::string> warnings;
};

// Principal-component extraction with varimax rotation (Kaiser normalized).
// Factors are ordered by explained variance and signed so their loading sum
// is positive.
EfaResult efa(const Eigen::MatrixXd& correlation, const EfaOptions& options = {});

// Orthogonal varimax rotation of a loading matrix.
Eigen::MatrixXd varimax(const Eigen::MatrixXd& loadings, bool normalize = true, int max_iter = 500,
                        double tol = 1e-10);

struct CfaThresholds {
    double cfi = 0.95;
    double tli = 0.95;
    double rmsea = 0.06;
    double srmr = 0.08;
};

struct CfaFit {
    double f_min = 0.0;
    double chi2 = 0.0;
    int df = 0;
    double chi2_null = 0.0;
    int df_null = 0;
    double cfi = 1.0;
    double tli = 1.0;
    double rmsea = 0.0;
    double srmr = 0.0;
    bool cfi_pass = false;
    bool tli_pass = false;
    bool rmsea_pass = false;
    bool srmr_pass = false;
    bool converged = false;
    int iterations = 0;
    Eigen::VectorXd loadings;             // one per item, on its own factor
    Eigen::MatrixXd factor_correlations;  // factors x factors
    Eigen::MatrixXd residual;             // observed - implied

    bool all_pass() const { return cfi_pass && tli_pass && rmsea_pass && srmr_pass; }
};

// Correlated-factor congeneric model fitted to a correlation matrix by
// unweighted least squares. `factor_of[i]` gives the factor of row i; unique
// variances absorb the diagonal, so only off-diagonal residuals enter F.
CfaFit cfa_fit(const Eigen::MatrixXd& correlation, const std::vector<int>& factor_of, std::size_t n_obs,
               const CfaThresholds& thresholds = {});

// Index pairs (i < j) whose residual magnitude exceeds the threshold.
std::vector<std::pair<std::size_t, std::size_t>> flag_residual_pairs(const Eigen::MatrixXd& residual,
                                                                      double threshold = 0.2);

}  // namespace fours::structuring
