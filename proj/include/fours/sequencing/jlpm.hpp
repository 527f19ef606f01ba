#pragma once

#include "fours/core/cohort.hpp"
#include "fours/numerics/optimizer.hpp"
#include "fours/sequencing/latent.hpp"
#include "fours/sequencing/model.hpp"

#include "json.hpp"

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fours::sequencing {

// Joint latent process model of one subdimension: ordinal items measuring a
// latent process driven by a mixed model, with cause-specific hazards.
struct JlpmSpec {
    core::Subdimension subdimension;
    int n_time_knots = 1;                            // used when time_knots is empty
    std::optional<std::vector<double>> time_knots;   // overrides the quantile rule
    std::optional<double> time_horizon;              // defaults to the longest follow-up
    std::vector<std::string> covariates;
    std::vector<std::string> time_interactions;
    std::vector<int> random_time_columns{0};
    bool diagonal_random = false;
    std::vector<HazardSpec> causes{HazardSpec{}};
    int qmc_points = 0;  // 0 means 500 per random effect, rounded up to a power of two
    bool adaptive = true;  // nodes follow each patient's posterior; false uses prior nodes
    numerics::OptimizerSettings optimizer;
    int threads = 1;

    void validate() const;
};

// Measurement model of one item over its observed levels. `levels` lists the
// observed original levels in increasing order; unobserved levels have
// probability 0 and their thresholds are merged.
struct ItemMeasurement {
    std::string item;
    int max_level = 1;
    std::vector<int> levels;
    Eigen::VectorXd thresholds;  // one per transition between consecutive observed levels
    double sd = 1.0;

    double discrimination() const { return 1.0 / sd; }
};

struct MeasurementParams {
    std::vector<ItemMeasurement> items;

    std::size_t index_of(const std::string& item) const;
};

// P(Y^k = level | delta); 0 for unobserved levels.
double item_level_probability(const MeasurementParams& meas, std::size_t item, int level, double delta);
// E[Y^k | delta] in original level units.
double item_expected_level(const ItemMeasurement& item, double delta);

// Model ready to evaluate: resolved design, engine structure and patients.
struct JlpmProblem {
    JlpmSpec spec;
    LatentDesign design;
    ModelStructure structure;
    std::vector<std::vector<int>> levels;  // observed levels per item
    std::vector<int> max_levels;           // scale maximum per item
    std::vector<std::string> names;        // parameter names
    std::vector<std::string> warnings;
    std::vector<PreparedPatient> patients;
    std::vector<double> event_rates;
};

// Engine structure and parameter names of a model with the given observed
// levels per item. `hazard_horizon` bounds B-spline baselines.
ModelStructure build_structure(const LatentDesign& design, const std::vector<std::string>& items,
                               const std::vector<std::vector<int>>& levels, const std::vector<HazardSpec>& causes,
                               double hazard_horizon);
std::vector<std::string> parameter_names(const LatentDesign& design, const ModelStructure& structure,
                                         const std::vector<std::string>& items, const std::vector<HazardSpec>& causes);
// Resolved design of a spec whose knots and horizon are given explicitly.
LatentDesign explicit_design(const JlpmSpec& spec);

JlpmProblem make_problem(const JlpmSpec& spec, const core::CohortDataset& data);
Eigen::VectorXd start_values(const JlpmProblem& problem, const core::CohortDataset& data);
JointModel joint_model(const JlpmProblem& problem);

struct JlpmFit {
    JlpmSpec spec;
    LatentDesign design;
    ModelStructure structure;
    std::vector<std::string> names;
    Estimates estimates;
    MeasurementParams measurement;
    int n_patients = 0;
    int n_visits = 0;
    std::vector<int> n_events;  // per cause
    int qmc_points = 0;
    std::vector<std::string> warnings;

    Eigen::MatrixXd random_covariance() const;
    std::size_t index_of(const std::string& name) const;
};

// Total log-likelihood; throws DomainError naming the first patient whose
// contribution is not finite.
double log_likelihood(const JlpmSpec& spec, const core::CohortDataset& data, const Eigen::VectorXd& theta);

JlpmFit fit(const JlpmSpec& spec, const core::CohortDataset& data,
            const std::optional<Eigen::VectorXd>& start = std::nullopt);

// Fit skeleton at parameter vector theta (no optimization, no covariance).
JlpmFit fit_at(const JlpmProblem& problem, const Eigen::VectorXd& theta);

MeasurementParams measurement_from_theta(const ModelStructure& structure, const std::vector<std::string>& items,
                                         const std::vector<int>& max_levels,
                                         const std::vector<std::vector<int>>& levels, const Eigen::VectorXd& theta);

struct Trajectory {
    std::vector<double> times;
    std::vector<std::string> items;
    Eigen::MatrixXd expected;  // times x items
};

// E[Y^k(t)] for a covariate profile, averaging over `mc_draws` QMC random
// effects. Times must lie within [0, horizon] of the fitted time basis.
Trajectory predict_item_trajectory(const JlpmFit& fit, const std::map<std::string, double>& profile,
                                   const std::vector<double>& times, int mc_draws = 2000);

struct Transition {
    std::string item;
    int from_level = 0;
    int to_level = 1;
    double location = 0.0;
    double se = 0.0;
};

// Item level transitions ordered by their location on the latent scale
// (ties keep item order); delta-method standard errors.
std::vector<Transition> impairment_sequence(const JlpmFit& fit);

std::string sequence_csv(const std::vector<Transition>& sequence);
std::string trajectory_csv(const Trajectory& trajectory);
// name, estimate, se, z, p
std::string estimates_csv(const JlpmFit& fit);

void to_json(nlohmann::json& j, const JlpmSpec& spec);
void from_json(const nlohmann::json& j, JlpmSpec& spec);
void to_json(nlohmann::json& j, const HazardSpec& spec);
void from_json(const nlohmann::json& j, HazardSpec& spec);
void to_json(nlohmann::json& j, const Estimates& e);
void from_json(const nlohmann::json& j, Estimates& e);
nlohmann::json fit_to_json(const JlpmFit& fit);
JlpmFit fit_from_json(const nlohmann::json& j);

}  // namespace fours::sequencing
