#include "fours/sequencing/latent.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/sobol.hpp"
#include "fours/numerics/splines.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace fours::sequencing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kMinFollowUp = 1e-6;
}

int LatentDesign::n_fixed() const {
    return n_time() * (1 + static_cast<int>(time_interactions.size())) + static_cast<int>(covariates.size());
}

std::vector<std::string> LatentDesign::fixed_names() const {
    std::vector<std::string> names;
    for (int c = 0; c < n_time(); ++c) names.push_back("time" + std::to_string(c + 1));
    for (const auto& w : covariates) names.push_back(w);
    for (const auto& w : time_interactions)
        for (int c = 0; c < n_time(); ++c) names.push_back(w + ":time" + std::to_string(c + 1));
    return names;
}

std::vector<std::string> LatentDesign::random_names() const {
    std::vector<std::string> names{"intercept"};
    for (int c : random_time_columns) names.push_back("time" + std::to_string(c + 1));
    return names;
}

VectorXd LatentDesign::time_basis(double t) const {
    numerics::SplineBasis basis(numerics::SplineKind::NaturalCubic, time_knots, {0.0, time_horizon});
    return basis.evaluate(t);
}

Eigen::RowVectorXd LatentDesign::x(double t, const std::map<std::string, double>& values) const {
    const VectorXd n = time_basis(t);
    Eigen::RowVectorXd row(n_fixed());
    int j = 0;
    for (Eigen::Index c = 0; c < n.size(); ++c) row(j++) = n(c);
    auto value = [&](const std::string& name) {
        const auto it = values.find(name);
        if (it == values.end() || std::isnan(it->second))
            throw ValidationError("covariate '" + name + "' is missing from the profile");
        return it->second;
    };
    for (const auto& w : covariates) row(j++) = value(w);
    for (const auto& w : time_interactions) {
        const double v = value(w);
        for (Eigen::Index c = 0; c < n.size(); ++c) row(j++) = v * n(c);
    }
    return row;
}

Eigen::RowVectorXd LatentDesign::z(double t) const {
    Eigen::RowVectorXd row(n_random());
    row(0) = 1.0;
    if (!random_time_columns.empty()) {
        const VectorXd n = time_basis(t);
        for (std::size_t c = 0; c < random_time_columns.size(); ++c) row(static_cast<Eigen::Index>(c) + 1) = n(random_time_columns[c]);
    }
    return row;
}

void LatentDesign::validate() const {
    if (!(time_horizon > 0.0)) throw ValidationError("time basis needs a positive horizon");
    if (!std::is_sorted(time_knots.begin(), time_knots.end())) throw ValidationError("time knots must be sorted");
    for (double k : time_knots)
        if (!(k > 0.0 && k < time_horizon)) throw ValidationError("time knots must lie inside the follow-up range");
    for (int c : random_time_columns)
        if (c < 0 || c >= n_time()) throw ValidationError("random time column outside the time basis");
    std::vector<int> cols = random_time_columns;
    std::sort(cols.begin(), cols.end());
    if (std::adjacent_find(cols.begin(), cols.end()) != cols.end())
        throw ValidationError("random time columns must be distinct");
    if (n_random() > 10) throw ValidationError("at most 10 random effects are supported");
    for (const auto& w : time_interactions)
        if (std::find(covariates.begin(), covariates.end(), w) == covariates.end())
            throw ValidationError("time interaction '" + w + "' needs the covariate as a main effect");
}

std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::Weibull: return "weibull";
        case BaselineKind::PiecewiseConstant: return "piecewise";
        case BaselineKind::CubicBSpline: return "bspline";
    }
    return "";
}

std::string to_string(AssociationKind kind) {
    switch (kind) {
        case AssociationKind::None: return "none";
        case AssociationKind::RandomEffects: return "random_effects";
        case AssociationKind::CurrentValue: return "current_value";
    }
    return "";
}

BaselineKind parse_baseline(const std::string& name) {
    if (name == "weibull") return BaselineKind::Weibull;
    if (name == "piecewise") return BaselineKind::PiecewiseConstant;
    if (name == "bspline") return BaselineKind::CubicBSpline;
    throw ValidationError("unknown baseline hazard '" + name + "'");
}

AssociationKind parse_association(const std::string& name) {
    if (name == "none") return AssociationKind::None;
    if (name == "random_effects") return AssociationKind::RandomEffects;
    if (name == "current_value") return AssociationKind::CurrentValue;
    throw ValidationError("unknown association '" + name + "'");
}

CauseModel cause_model(const HazardSpec& spec, double horizon) {
    CauseModel m;
    m.baseline = spec.baseline;
    m.knots = spec.knots;
    m.horizon = horizon;
    m.n_covariates = static_cast<int>(spec.covariates.size());
    m.association = spec.association;
    m.validate();
    return m;
}

std::vector<std::string> cause_param_names(const HazardSpec& spec, int cause, int n_random) {
    const std::string p = "cause" + std::to_string(cause) + ":";
    std::vector<std::string> names;
    const int nb = cause_model(spec, std::numeric_limits<double>::max()).n_baseline();
    for (int l = 0; l < nb; ++l) names.push_back(p + "xi" + std::to_string(l + 1));
    for (const auto& w : spec.covariates) names.push_back(p + "gamma:" + w);
    switch (spec.association) {
        case AssociationKind::None: break;
        case AssociationKind::RandomEffects:
            for (int a = 0; a < n_random; ++a) names.push_back(p + "alpha" + std::to_string(a + 1));
            break;
        case AssociationKind::CurrentValue: names.push_back(p + "alpha"); break;
    }
    return names;
}

std::vector<double> visit_time_knots(const core::CohortDataset& data, int n_knots) {
    if (n_knots <= 0) return {};
    std::vector<double> times;
    for (const auto& p : data.patients)
        for (const auto& v : p.visits) times.push_back(v.time);
    if (times.empty()) throw EmptySampleError("no visit times to place time knots");
    std::vector<double> probs;
    for (int k = 1; k <= n_knots; ++k) probs.push_back(static_cast<double>(k) / (n_knots + 1));
    auto knots = numerics::quantile_knots(times, probs);
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    return knots;
}

PreparedPatient prepare_patient(const core::PatientRecord& record, const LatentDesign& design,
                                const ModelStructure& structure, const std::vector<HazardSpec>& causes) {
    PreparedPatient p;
    p.id = record.id;
    const auto n = static_cast<Eigen::Index>(record.visits.size());
    p.x.resize(n, design.n_fixed());
    p.z.resize(n, design.n_random());
    for (Eigen::Index j = 0; j < n; ++j) {
        p.x.row(j) = design.x(record.visits[j].time, record.covariates);
        p.z.row(j) = design.z(record.visits[j].time);
    }
    p.event_time = std::max(record.event_time, kMinFollowUp);
    if (record.event_cause < 0 || record.event_cause > static_cast<int>(causes.size()))
        throw ValidationError("patient '" + record.id + "' has event cause " + std::to_string(record.event_cause) +
                              " but the model has " + std::to_string(causes.size()));
    p.cause = record.event_cause;
    std::vector<VectorXd> w;
    for (const auto& c : causes) {
        VectorXd v(static_cast<Eigen::Index>(c.covariates.size()));
        for (std::size_t i = 0; i < c.covariates.size(); ++i) v(static_cast<Eigen::Index>(i)) = record.covariate(c.covariates[i]);
        w.push_back(std::move(v));
    }
    DesignRows rows{[&](double t) { return design.x(t, record.covariates); }, [&](double t) { return design.z(t); }};
    prepare_survival(p, structure, rows, w);
    return p;
}

std::vector<double> crude_event_rates(const core::CohortDataset& data, int n_causes) {
    std::vector<double> events(n_causes, 0.0);
    double time = 0.0;
    for (const auto& p : data.patients) {
        time += p.event_time;
        if (p.event_cause >= 1 && p.event_cause <= n_causes) events[p.event_cause - 1] += 1.0;
    }
    std::vector<double> rates;
    for (double e : events) rates.push_back(std::max(e, 0.5) / std::max(time, kMinFollowUp));
    return rates;
}

VectorXd cause_start(const HazardSpec& spec, const CauseModel& model, int n_random, double rate) {
    VectorXd s = VectorXd::Zero(model.n_params(n_random));
    if (spec.baseline == BaselineKind::Weibull) {
        s(0) = std::sqrt(rate);
        s(1) = 1.0;
    } else {
        s.head(model.n_baseline()).setConstant(std::sqrt(rate));
    }
    return s;
}

namespace {

Estimates estimates_from(const numerics::OptimizerResult& r, Eigen::Index P) {
    Estimates e;
    e.theta = r.argmax;
    e.log_likelihood = r.value;
    e.converged = r.converged;
    e.param_converged = r.param_converged;
    e.objective_converged = r.objective_converged;
    e.rdm_converged = r.rdm_converged;
    e.iterations = r.iterations;
    e.rdm = r.rdm;
    e.status = r.converged ? "converged" : "not converged: " + r.status;
    e.se = VectorXd::Constant(P, std::numeric_limits<double>::quiet_NaN());
    if (r.hessian.rows() == P && r.hessian.allFinite()) {
        const MatrixXd info = -r.hessian;
        Eigen::LLT<MatrixXd> llt(info);
        if (llt.info() == Eigen::Success) {
            e.covariance = llt.solve(MatrixXd::Identity(P, P));
            e.covariance = 0.5 * (e.covariance + e.covariance.transpose()).eval();
            e.se = e.covariance.diagonal().cwiseSqrt();
            e.se_available = e.se.allFinite();
        }
    }
    return e;
}

}  // namespace

Estimates maximize(const JointModel& model, const VectorXd& start, const numerics::OptimizerSettings& settings) {
    return estimates_from(numerics::marquardt_levenberg(model.objective(), start, settings), start.size());
}

Estimates maximize_adaptive(JointModel& model, const VectorXd& start, const numerics::OptimizerSettings& settings) {
    constexpr int kRefits = 3;
    constexpr double kSettled = 1e-3;
    // Approach with proposals following every iterate; the objective shifts a
    // little at each refresh, so only loose convergence is asked for.
    auto loose = settings;
    loose.param_tol = std::max(settings.param_tol, 1e-3);
    loose.objective_tol = std::max(settings.objective_tol, 1e-2);
    loose.rdm_tol = std::max(settings.rdm_tol, 1e-2);
    loose.max_iterations = std::min(settings.max_iterations, 50);
    const auto approach = numerics::marquardt_levenberg(model.adaptive_objective(), start, loose);
    int iterations = approach.iterations;
    VectorXd theta = approach.argmax;
    // Then converge on fixed proposals, refreshed until the estimate settles.
    Estimates e;
    for (int r = 0; r < kRefits; ++r) {
        model.set_proposals(model.laplace_proposals(theta));
        e = maximize(model, theta, settings);
        iterations += e.iterations;
        const double moved = (e.theta - theta).lpNorm<Eigen::Infinity>();
        theta = e.theta;
        if (!e.converged || moved < kSettled) break;
    }
    e.iterations = iterations;
    return e;
}

Estimates estimate(const ModelStructure& structure, const std::vector<PreparedPatient>& patients, const VectorXd& start,
                   int qmc_points, bool adaptive, const numerics::OptimizerSettings& settings, int threads) {
    if (start.size() != structure.n_params()) throw ValidationError("start vector has the wrong length");
    JointModel model(structure, patients, numerics::sobol_normal(structure.n_random, qmc_points), threads);
    return adaptive ? maximize_adaptive(model, start, settings) : maximize(model, start, settings);
}

int qmc_count(int requested, int n_random) {
    if (requested < 0) throw ValidationError("QMC point count must be nonnegative");
    if (requested > 0) return requested;
    int count = 1;
    while (count < 500 * n_random) count *= 2;
    return count;
}

std::string estimates_table(const std::vector<std::string>& names, const Estimates& e) {
    std::string out = core::format_csv_row({"parameter", "estimate", "se", "z", "p_value"});
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double se = e.se(ii);
        out += core::format_csv_row({names[i], core::format_number(e.theta(ii)), core::format_number(se),
                                     core::format_number(std::isfinite(se) && se > 0 ? e.theta(ii) / se
                                                                                     : std::numeric_limits<double>::quiet_NaN()),
                                     core::format_number(wald_p_value(e.theta(ii), se))});
    }
    return out;
}

double wald_p_value(double estimate, double se) {
    if (!(se > 0.0) || !std::isfinite(se)) return std::numeric_limits<double>::quiet_NaN();
    return 2.0 * numerics::normal_cdf(-std::abs(estimate / se));
}

std::string format_estimate(double estimate, double se, int digits) {
    char buf[96];
    if (std::isfinite(se))
        std::snprintf(buf, sizeof buf, "%.*f (se %.*f)", digits, estimate, digits, se);
    else
        std::snprintf(buf, sizeof buf, "%.*f (se NA)", digits, estimate);
    return buf;
}

nlohmann::json vector_json(const VectorXd& v) {
    auto j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isfinite(v(i)))
            j.push_back(v(i));
        else
            j.push_back(nullptr);
    }
    return j;
}

VectorXd vector_from_json(const nlohmann::json& j) {
    VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = j[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : j[i].get<double>();
    return v;
}

nlohmann::json matrix_json(const MatrixXd& m) {
    auto j = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vector_json(m.row(r).transpose()));
    return j;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
    if (j.empty()) return {};
    MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != static_cast<std::size_t>(m.cols())) throw ValidationError("ragged matrix in JSON");
        m.row(static_cast<Eigen::Index>(r)) = vector_from_json(j[r]).transpose();
    }
    return m;
}

void to_json(nlohmann::json& j, const LatentDesign& d) {
    j = {{"time_knots", d.time_knots},
         {"time_horizon", d.time_horizon},
         {"covariates", d.covariates},
         {"time_interactions", d.time_interactions},
         {"random_time_columns", d.random_time_columns},
         {"diagonal_random", d.diagonal_random}};
}

void from_json(const nlohmann::json& j, LatentDesign& d) {
    j.at("time_knots").get_to(d.time_knots);
    j.at("time_horizon").get_to(d.time_horizon);
    j.at("covariates").get_to(d.covariates);
    j.at("time_interactions").get_to(d.time_interactions);
    j.at("random_time_columns").get_to(d.random_time_columns);
    j.at("diagonal_random").get_to(d.diagonal_random);
    d.validate();
}

}  // namespace fours::sequencing

namespace fours::numerics {

void to_json(nlohmann::json& j, const OptimizerSettings& s) {
    j = {{"max_iterations", s.max_iterations},
         {"param_tol", s.param_tol},
         {"objective_tol", s.objective_tol},
         {"rdm_tol", s.rdm_tol}};
}

void from_json(const nlohmann::json& j, OptimizerSettings& s) {
    s.max_iterations = j.value("max_iterations", s.max_iterations);
    s.param_tol = j.value("param_tol", s.param_tol);
    s.objective_tol = j.value("objective_tol", s.objective_tol);
    s.rdm_tol = j.value("rdm_tol", s.rdm_tol);
    s.validate();
}

}  // namespace fours::numerics
