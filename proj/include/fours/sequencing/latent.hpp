#pragma once

#include "fours/core/cohort.hpp"
#include "fours/numerics/optimizer.hpp"
#include "fours/sequencing/model.hpp"

#include "json.hpp"

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

namespace fours::sequencing {

// Fixed and random design of the latent process.
//
// X(t) = [N(t), w, w * N(t) for each time interaction] where N is a natural
// cubic spline basis in time that vanishes at t = 0 (no intercept column).
// Z(t) = [1, N_c(t) for each selected time column c].
struct LatentDesign {
    std::vector<double> time_knots;            // interior knots of N
    double time_horizon = 1.0;                 // right boundary of N
    std::vector<std::string> covariates;       // main effects
    std::vector<std::string> time_interactions;  // covariates crossed with N
    std::vector<int> random_time_columns;      // columns of N with a random slope
    bool diagonal_random = false;

    int n_time() const { return static_cast<int>(time_knots.size()) + 1; }
    int n_fixed() const;
    int n_random() const { return 1 + static_cast<int>(random_time_columns.size()); }
    std::vector<std::string> fixed_names() const;
    std::vector<std::string> random_names() const;
    Eigen::VectorXd time_basis(double t) const;
    Eigen::RowVectorXd x(double t, const std::map<std::string, double>& covariates) const;
    Eigen::RowVectorXd z(double t) const;
    void validate() const;
};

// Cause-specific hazard specification by covariate name.
struct HazardSpec {
    BaselineKind baseline = BaselineKind::Weibull;
    std::vector<double> knots;
    std::vector<std::string> covariates;
    AssociationKind association = AssociationKind::CurrentValue;
};

std::string to_string(BaselineKind kind);
std::string to_string(AssociationKind kind);
BaselineKind parse_baseline(const std::string& name);
AssociationKind parse_association(const std::string& name);

CauseModel cause_model(const HazardSpec& spec, double horizon);
std::vector<std::string> cause_param_names(const HazardSpec& spec, int cause, int n_random);

// Interior knots of the time basis at the given quantiles of visit times.
std::vector<double> visit_time_knots(const core::CohortDataset& data, int n_knots);

// Design rows, event rows and hazard nodes of one patient (no observations).
PreparedPatient prepare_patient(const core::PatientRecord& record, const LatentDesign& design,
                                const ModelStructure& structure, const std::vector<HazardSpec>& causes);

// Crude per-cause event rates (events / total follow-up).
std::vector<double> crude_event_rates(const core::CohortDataset& data, int n_causes);

// Start values of one cause's parameters given its crude rate.
Eigen::VectorXd cause_start(const HazardSpec& spec, const CauseModel& model, int n_random, double rate);

struct Estimates {
    Eigen::VectorXd theta;
    double log_likelihood = 0.0;
    Eigen::MatrixXd covariance;  // (-H)^{-1}; empty when unavailable
    Eigen::VectorXd se;          // NaN when unavailable
    bool se_available = false;
    bool converged = false;
    bool param_converged = false;
    bool objective_converged = false;
    bool rdm_converged = false;
    int iterations = 0;
    double rdm = 0.0;
    std::string status;
};

Estimates maximize(const JointModel& model, const Eigen::VectorXd& start, const numerics::OptimizerSettings& settings);
// Maximization with Laplace node proposals: refreshed at every iterate on the
// way in, then held fixed while converging and refreshed at the result until
// it settles.
Estimates maximize_adaptive(JointModel& model, const Eigen::VectorXd& start,
                            const numerics::OptimizerSettings& settings);

// Maximum likelihood for a prepared model on `qmc_points` nodes, adaptive or
// over the prior.
Estimates estimate(const ModelStructure& structure, const std::vector<PreparedPatient>& patients,
                   const Eigen::VectorXd& start, int qmc_points, bool adaptive,
                   const numerics::OptimizerSettings& settings, int threads);

// Number of QMC nodes: unless overridden, 500 per random effect rounded up to
// a power of two, where Sobol point sets are balanced.
int qmc_count(int requested, int n_random);

// parameter, estimate, se, z, p_value rows.
std::string estimates_table(const std::vector<std::string>& names, const Estimates& estimates);

// Two-sided Wald p-value.
double wald_p_value(double estimate, double se);

// "0.613 (se 0.050)"
std::string format_estimate(double estimate, double se, int digits = 3);

// JSON helpers; NaN is stored as null.
nlohmann::json vector_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const LatentDesign& d);
void from_json(const nlohmann::json& j, LatentDesign& d);

}  // namespace fours::sequencing

namespace fours::numerics {
void to_json(nlohmann::json& j, const OptimizerSettings& s);
void from_json(const nlohmann::json& j, OptimizerSettings& s);
}  // namespace fours::numerics
