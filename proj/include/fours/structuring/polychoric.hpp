#pragma once

#include "fours/core/cohort.hpp"

#include <Eigen/Core>
#include <string>
#include <vector>

namespace fours::structuring {

// One visit per patient. `responses` is n x K with -1 marking a missing level.
struct ReplicateSample {
    int index = 0;
    std::vector<std::size_t> visit_of_patient;
    Eigen::MatrixXi responses;
};

// r samples, each drawing one visit per patient uniformly. Replicate j uses
// its own stream derived from `seed`, so samples do not depend on r.
std::vector<ReplicateSample> resample_replicates(const core::CohortDataset& data, int r, std::uint64_t seed);

struct PairEstimate {
    double rho = 0.0;
    double log_likelihood = 0.0;
    std::vector<double> thresholds_a;  // finite cut points of the first item
    std::vector<double> thresholds_b;
};

// Two-step polychoric estimate from a contingency table (rows: levels of the
// first item, columns: levels of the second). Empty margins are collapsed.
// Throws DomainError when either item shows fewer than two levels.
PairEstimate polychoric_pair(const Eigen::MatrixXd& table);

// Log-likelihood of a table at correlation rho given finite cut points.
double polychoric_log_likelihood(const Eigen::MatrixXd& table, const std::vector<double>& ta,
                                 const std::vector<double>& tb, double rho);

// Cross tabulation of two response columns over rows where both are observed.
Eigen::MatrixXd contingency_table(const Eigen::VectorXi& a, const Eigen::VectorXi& b, int max_a, int max_b);

struct PolychoricMatrix {
    Eigen::MatrixXd matrix;             // over `items`
    std::vector<std::size_t> items;     // scale indices kept
    std::vector<std::size_t> excluded;  // items with a single observed level
    bool smoothed = false;
    std::vector<std::string> warnings;
};

// Pairwise polychoric matrix over `items` (all scale items when empty).
// Negative eigenvalues are clipped and the result rescaled to unit diagonal.
PolychoricMatrix polychoric_matrix(const ReplicateSample& sample, const core::ScaleDefinition& scale,
                                   const std::vector<std::size_t>& items = {});

// Clips eigenvalues below zero and restores a unit diagonal. Returns true when
// anything was clipped.
bool smooth_correlation(Eigen::MatrixXd& r);

}  // namespace fours::structuring
