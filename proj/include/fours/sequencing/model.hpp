#pragma once

#include "fours/numerics/optimizer.hpp"

#include <Eigen/Core>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace fours::sequencing {

enum class BaselineKind { Weibull, PiecewiseConstant, CubicBSpline };
enum class AssociationKind { None, RandomEffects, CurrentValue };

// Outcome linked to the latent process at each visit.
//
// Ordinal: cumulative probit with thresholds d_1 = e_1, d_m = d_{m-1} + e_m^2
// and error SD exp(s); local parameters (e_1..e_M, s).
// Curvilinear: H(y) = e_0 + sum_l e_l^2 I_l(y) with Gaussian error SD exp(s);
// local parameters (e_0, e_1..e_L, s).
struct OutcomeModel {
    enum class Kind { Ordinal, Curvilinear };
    Kind kind = Kind::Ordinal;
    std::string name;
    int max_level = 1;
    int link_size = 0;

    int n_params() const { return kind == Kind::Ordinal ? max_level + 1 : link_size + 2; }
};

// Cause-specific proportional hazard. Weibull baseline
// l0(t) = z1 z2 (z1 t)^(z2-1) with z = xi^2; piecewise-constant and B-spline
// baselines are sum_l xi_l^2 B_l(t).
struct CauseModel {
    BaselineKind baseline = BaselineKind::Weibull;
    std::vector<double> knots;  // piecewise cut points or B-spline interior knots
    double horizon = 1.0;       // right boundary of the B-spline basis
    int n_covariates = 0;
    AssociationKind association = AssociationKind::CurrentValue;

    int n_baseline() const;
    int n_association(int n_random) const;
    int n_params(int n_random) const;
    // Piecewise indicator or B-spline row at t; empty for Weibull.
    Eigen::VectorXd basis(double t) const;
    void validate() const;
};

struct ModelStructure {
    int n_fixed = 0;
    int n_random = 1;
    bool diagonal_random = false;
    std::vector<OutcomeModel> outcomes;
    std::vector<CauseModel> causes;
    int hazard_nodes = 15;
    int hazard_nodes_fine = 30;
    double fine_threshold = 2.0;  // |alpha| above which the fine rule is used

    // Free Cholesky entries (row, col); the (0, 0) entry is fixed at 1.
    std::vector<std::pair<int, int>> chol_entries() const;
    int n_chol() const { return static_cast<int>(chol_entries().size()); }
    int n_latent() const { return n_fixed + n_chol(); }
    int outcome_offset(std::size_t k) const;
    int cause_offset(std::size_t p) const;
    int n_params() const;
    Eigen::MatrixXd cholesky(const Eigen::VectorXd& theta) const;
    void validate() const;
};

struct PreparedObservation {
    int visit = 0;
    int outcome = 0;
    int level = 0;                // ordinal level
    Eigen::VectorXd link_value;   // curvilinear: I_l(y)
    Eigen::VectorXd link_slope;   // curvilinear: I_l'(y)
};

struct HazardNodes {
    Eigen::VectorXd t;
    Eigen::VectorXd w;
    Eigen::MatrixXd x;
    Eigen::MatrixXd z;
    Eigen::MatrixXd basis;            // nodes x n_baseline
};

struct PreparedPatient {
    std::string id;
    Eigen::MatrixXd x;  // visits x n_fixed
    Eigen::MatrixXd z;  // visits x n_random
    std::vector<PreparedObservation> obs;
    double event_time = 1.0;
    int cause = 0;  // 0 censored, else 1..P
    Eigen::RowVectorXd x_event;
    Eigen::RowVectorXd z_event;
    std::vector<Eigen::VectorXd> covariates;       // per cause
    std::vector<Eigen::VectorXd> basis_event;      // per cause
    std::vector<Eigen::VectorXd> cumulative_basis; // per cause, integral over [0, T]
    std::vector<HazardNodes> nodes;                // per cause
    std::vector<HazardNodes> nodes_fine;           // per cause
};

// X(t) and Z(t) rows of one patient.
struct DesignRows {
    std::function<Eigen::RowVectorXd(double)> x;
    std::function<Eigen::RowVectorXd(double)> z;
};

// Fills the event-time rows, hazard covariates and cumulative-hazard nodes.
void prepare_survival(PreparedPatient& p, const ModelStructure& s, const DesignRows& rows,
                      const std::vector<Eigen::VectorXd>& covariates);

// d_1 = e_1, d_m = d_{m-1} + e_m^2 and its inverse (increments floored at 0).
Eigen::VectorXd thresholds_from_eta(const Eigen::VectorXd& eta);
Eigen::VectorXd eta_from_thresholds(const Eigen::VectorXd& delta);

// Log-likelihood of a joint latent process model integrated over the random
// effects by quasi-Monte Carlo, with exact derivatives of that approximation.
// Importance proposal for one patient's standardized random effects:
// u = mean + scale * v with independent Student-t coordinates v.
struct NodeProposal {
    Eigen::VectorXd mean;
    Eigen::MatrixXd scale;
};

class JointModel {
public:
    // `nodes` holds one standard-normal point per row (n_random columns).
    JointModel(ModelStructure structure, std::vector<PreparedPatient> patients, Eigen::MatrixXd nodes,
               int threads = 1);

    const ModelStructure& structure() const { return structure_; }
    const std::vector<PreparedPatient>& patients() const { return patients_; }
    const Eigen::MatrixXd& nodes() const { return nodes_; }
    int n_params() const { return structure_.n_params(); }

    Eigen::VectorXd patient_log_likelihoods(const Eigen::VectorXd& theta) const;
    // Sum of patient contributions; non-finite when any contribution is.
    double log_likelihood(const Eigen::VectorXd& theta) const;
    numerics::ObjectiveDerivatives derivatives(const Eigen::VectorXd& theta) const;
    numerics::SmoothObjective objective() const;
    // Same objective, refreshing the node proposals at every point where
    // derivatives are taken.
    numerics::SmoothObjective adaptive_objective();

    // Posterior mode of each patient's standardized random effects at theta,
    // with the inverse curvature there as proposal covariance.
    std::vector<NodeProposal> laplace_proposals(const Eigen::VectorXd& theta) const;
    // Centre and scale Student-t transforms of the nodes per patient,
    // weighting them against the standard normal prior. An empty vector
    // restores the prior nodes.
    void set_proposals(std::vector<NodeProposal> proposals);
    bool adaptive() const { return !proposals_.empty(); }

private:
    ModelStructure structure_;
    std::vector<PreparedPatient> patients_;
    Eigen::MatrixXd nodes_;
    std::vector<NodeProposal> proposals_;
    Eigen::MatrixXd t_nodes_;
    Eigen::VectorXd t_log_density_;
    int threads_;
};

}  // namespace fours::sequencing
