#pragma once

#include "fours/core/cohort.hpp"
#include "fours/numerics/optimizer.hpp"
#include "fours/sequencing/jlpm.hpp"
#include "fours/sequencing/latent.hpp"
#include "fours/sequencing/model.hpp"

#include "json.hpp"

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

namespace fours::staging {

enum class LinkKind { ISpline, Linear };

std::string to_string(LinkKind kind);
LinkKind parse_link(const std::string& name);

// Joint model of the clinical stage and the prorated sum-score of one
// subdimension through a common latent process, with cause-specific hazards.
// No covariates enter the latent process.
struct StagingSpec {
    core::Subdimension subdimension;
    int n_time_knots = 3;  // at quantiles of visit times when time_knots is empty
    std::optional<std::vector<double>> time_knots;
    std::optional<double> time_horizon;
    std::vector<int> random_time_columns{0};
    bool diagonal_random = false;
    LinkKind link = LinkKind::ISpline;
    int n_link_knots = 5;  // equally spaced over the observed score range
    std::optional<std::vector<double>> link_knots;
    double max_missing_frac = 0.25;  // item proration
    std::vector<sequencing::HazardSpec> causes{sequencing::HazardSpec{}};
    int qmc_points = 0;
    bool adaptive = true;  // nodes follow each patient's posterior; false uses prior nodes
    numerics::OptimizerSettings optimizer;
    int threads = 1;

    void validate() const;
};

// Monotone link of the sum-score: H(y) = eta0 + sum_l eta_l^2 I_l(y) on
// [lower, upper], with quadratic I-splines or a single linear function.
struct ScoreLink {
    LinkKind kind = LinkKind::ISpline;
    double lower = 0.0;
    double upper = 1.0;
    std::vector<double> knots;

    int size() const;
    Eigen::VectorXd basis(double y) const;
    Eigen::VectorXd slope(double y) const;
};

// Model ready to evaluate.
struct StagingProblem {
    StagingSpec spec;
    sequencing::LatentDesign design;
    ScoreLink link;
    sequencing::ModelStructure structure;
    std::vector<int> stages;  // observed stage labels, increasing
    int n_stages = 2;         // declared in the data
    std::vector<std::string> names;
    std::vector<std::string> warnings;
    std::vector<sequencing::PreparedPatient> patients;
    std::vector<double> event_rates;
};

StagingProblem make_staging_problem(const StagingSpec& spec, const core::CohortDataset& data);
Eigen::VectorXd staging_start_values(const StagingProblem& problem, const core::CohortDataset& data);

struct StagingFit {
    StagingSpec spec;
    sequencing::LatentDesign design;
    ScoreLink link;
    sequencing::ModelStructure structure;
    std::vector<int> stages;
    int n_stages = 2;
    std::vector<std::string> names;
    sequencing::Estimates estimates;
    int n_patients = 0;
    int n_visits = 0;
    std::vector<int> n_events;
    int qmc_points = 0;
    std::vector<std::string> warnings;

    // Thresholds between consecutive observed stages.
    Eigen::VectorXd stage_thresholds() const;
    double stage_sd() const;
    double score_sd() const;
    // Threshold of the transition into stage s; throws DomainError when the
    // transition is not identified by the observed stages.
    double omega(int stage) const;
    double link_value(double y) const;
    // H^{-1}(h) by bisection, clamped to the score range.
    double link_inverse(double h) const;
    Eigen::MatrixXd random_covariance() const;
    std::size_t index_of(const std::string& name) const;
};

// Total log-likelihood; throws DomainError naming the first patient whose
// contribution is not finite.
double staging_log_likelihood(const StagingSpec& spec, const core::CohortDataset& data, const Eigen::VectorXd& theta);

StagingFit fit_staging(const StagingSpec& spec, const core::CohortDataset& data,
                       const std::optional<Eigen::VectorXd>& start = std::nullopt);
StagingFit staging_fit_at(const StagingProblem& problem, const Eigen::VectorXd& theta);

struct SumScoreEquivalent {
    double value = 0.0;
    double clamp_rate = 0.0;  // share of draws outside the link's range
};

// E[H^{-1}(omega_s + e)], e ~ N(0, sd^2), over `mc_draws` fixed QMC normals.
SumScoreEquivalent stage_sum_score_equivalent(const StagingFit& fit, int stage, int mc_draws = 2000);

// E[sum_k Y^k | delta] over the items of a sequencing fit.
double expected_sum_score(const sequencing::JlpmFit& fit, double delta);

struct StageTransition {
    int stage = 2;  // transition stage - 1 -> stage
    double omega = 0.0;
    double equivalent = 0.0;
    double delta = 0.0;
    double clamp_rate = 0.0;
};

struct StageProjection {
    std::string subdimension;
    int n_stages = 2;
    std::vector<StageTransition> transitions;
    std::vector<std::string> warnings;
};

// Solves E[sum_k Y^k | delta] = equivalent for each transition; equivalents[i]
// belongs to stage i + 2. Omega is left NaN.
StageProjection project_stage_thresholds(const sequencing::JlpmFit& fit, const std::vector<double>& equivalents);

// Equivalents of every identified transition of `staging`, projected on the
// continuum of `sequence`.
StageProjection project_stages(const sequencing::JlpmFit& sequence, const StagingFit& staging, int mc_draws = 2000);

// Item transitions and stage transitions on one axis, ordered by location.
std::string stage_bands_csv(const std::vector<sequencing::Transition>& sequence, const StageProjection& projection);
std::string projection_csv(const StageProjection& projection);
std::string staging_estimates_csv(const StagingFit& fit);

void to_json(nlohmann::json& j, const StagingSpec& spec);
void from_json(const nlohmann::json& j, StagingSpec& spec);
void to_json(nlohmann::json& j, const ScoreLink& link);
void from_json(const nlohmann::json& j, ScoreLink& link);
void to_json(nlohmann::json& j, const StageProjection& projection);
void from_json(const nlohmann::json& j, StageProjection& projection);
nlohmann::json staging_fit_to_json(const StagingFit& fit);
StagingFit staging_fit_from_json(const nlohmann::json& j);

}  // namespace fours::staging
