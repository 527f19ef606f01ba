#pragma once

#include "fours/core/cohort.hpp"
#include "fours/sequencing/jlpm.hpp"

#include "json.hpp"

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fours::simulation {

struct CovariateSpec {
    std::string name;
    std::string distribution = "bernoulli";  // or "normal"
    double p = 0.5;
    double mean = 0.0;
    double sd = 1.0;
};

// Stage = 1 + #{s : thresholds_s < latent + sd * e}.
struct StageGenerator {
    Eigen::VectorXd thresholds;
    double sd = 1.0;

    int n_stages() const { return static_cast<int>(thresholds.size()) + 1; }
};

struct VisitSchedule {
    double interval = 1.0;
    double jitter = 0.1;          // uniform +- around each scheduled visit after baseline
    double censor_time = 10.0;    // administrative censoring
    double event_cap = 30.0;      // no event beyond this time
    double missing_rate = 0.0;    // per response
};

// Cohort generated from a joint latent process model with known parameters.
struct SimScenario {
    core::ScaleDefinition scale;
    sequencing::JlpmSpec spec;  // time knots and horizon must be explicit
    Eigen::VectorXd theta;      // true parameters in the model's layout
    std::vector<CovariateSpec> covariates;
    int n_patients = 300;
    VisitSchedule schedule;
    std::optional<StageGenerator> stages;
    std::uint64_t seed = 1;

    void validate() const;
};

// Link-transformed score: H(y) = eta0 + sum_l eta_l^2 I_l(y) on [0, max_score]
// with quadratic I-splines; the generated score is H^{-1}(latent + sd * e)
// rounded to an integer level.
struct ScoreGenerator {
    int max_score = 20;
    std::vector<double> knots;
    double eta0 = -3.0;
    Eigen::VectorXd eta;
    double sd = 0.5;

    double link(double y) const;
    double inverse(double h) const;  // clamped to [0, max_score]
};

// Stage and score cohort generated from a separate latent process.
struct StagingScenario {
    sequencing::LatentDesign design;
    Eigen::VectorXd mu;
    Eigen::MatrixXd chol;  // lower-triangular, (0, 0) = 1
    StageGenerator stage;
    ScoreGenerator score;
    std::string score_item = "score";
    std::vector<sequencing::HazardSpec> causes;
    std::vector<Eigen::VectorXd> cause_params;  // (xi, gamma, alpha) per cause
    std::vector<CovariateSpec> covariates;
    int n_patients = 300;
    VisitSchedule schedule;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SimulatedCohort {
    core::CohortDataset data;
    nlohmann::json truth;
    // |Lambda_p(T) + log U| at every accepted event-time draw
    std::vector<double> inversion_residuals;
};

SimulatedCohort simulate_cohort(const SimScenario& scenario);
SimulatedCohort simulate_staging_cohort(const StagingScenario& scenario);

// Parameter groups summarised by the recovery harness.
enum class ParameterGroup { Beta, Alpha, Sigma, Other };

struct ParameterRecovery {
    std::string name;
    ParameterGroup group = ParameterGroup::Other;
    double truth = 0.0;                 // natural scale (sigma for log-SD parameters)
    double mean_estimate = 0.0;
    double median_relative_bias = 0.0;  // NaN when the truth is 0
    double empirical_se = 0.0;
    double mean_model_se = 0.0;
    double coverage = 0.0;              // 95% Wald, log scale for sigma
    int n = 0;
};

struct SeedFit {
    std::uint64_t seed = 0;
    bool converged = false;
    std::string status;
    Eigen::VectorXd theta;
    Eigen::VectorXd se;
};

struct RecoveryReport {
    int seeds = 0;
    int converged = 0;
    std::vector<std::uint64_t> failed_seeds;
    std::vector<ParameterRecovery> parameters;
    std::vector<SeedFit> fits;
    std::vector<sequencing::JlpmFit> full_fits;  // kept when requested

    // Median over parameters of a group of |median relative bias|.
    double median_abs_relative_bias(ParameterGroup group) const;
    // Coverage pooled over parameters of the listed groups.
    double pooled_coverage(const std::vector<ParameterGroup>& groups) const;
};

struct RecoveryOptions {
    int seeds = 20;
    int threads = 1;  // across seeds
    bool keep_fits = false;
};

RecoveryReport recovery_harness(const SimScenario& scenario, const RecoveryOptions& options = {});

std::string to_string(ParameterGroup group);
nlohmann::json to_json(const RecoveryReport& report);
std::string recovery_csv(const RecoveryReport& report);

void to_json(nlohmann::json& j, const CovariateSpec& c);
void from_json(const nlohmann::json& j, CovariateSpec& c);
void to_json(nlohmann::json& j, const VisitSchedule& s);
void from_json(const nlohmann::json& j, VisitSchedule& s);
void to_json(nlohmann::json& j, const SimScenario& s);
void from_json(const nlohmann::json& j, SimScenario& s);

}  // namespace fours::simulation
