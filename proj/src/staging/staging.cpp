#include "fours/staging/staging.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/core/json_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/roots.hpp"
#include "fours/numerics/sobol.hpp"
#include "fours/numerics/splines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <set>

namespace fours::staging {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using sequencing::ModelStructure;
using sequencing::OutcomeModel;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMinIncrement = 0.1;
constexpr double kRandomSlopeStart = 0.3;
constexpr double kBracket = 20.0;

// H and its inverse with the spline basis built once.
class LinkEvaluator {
public:
    LinkEvaluator(const ScoreLink& link, const VectorXd& eta) : link_(link), eta0_(eta(0)) {
        coef_ = eta.tail(eta.size() - 1).array().square();
        if (link.kind == LinkKind::ISpline)
            basis_ = std::make_unique<numerics::SplineBasis>(numerics::SplineKind::QuadraticISpline, link.knots,
                                                             std::make_pair(link.lower, link.upper));
        h_lower_ = (*this)(link.lower);
        h_upper_ = (*this)(link.upper);
    }

    double operator()(double y) const {
        if (basis_) return eta0_ + basis_->evaluate(y).dot(coef_);
        return eta0_ + coef_(0) * (y - link_.lower) / (link_.upper - link_.lower);
    }

    bool inside(double h) const { return h >= h_lower_ && h <= h_upper_; }

    double inverse(double h) const {
        if (h <= h_lower_) return link_.lower;
        if (h >= h_upper_) return link_.upper;
        double lo = link_.lower, hi = link_.upper;
        for (int it = 0; it < 200 && hi - lo > 1e-13 * (link_.upper - link_.lower); ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((*this)(mid) < h)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    }

private:
    const ScoreLink& link_;
    double eta0_;
    VectorXd coef_;
    std::unique_ptr<numerics::SplineBasis> basis_;
    double h_lower_ = 0.0, h_upper_ = 0.0;
};

double max_follow_up(const core::CohortDataset& data) {
    double hi = 0.0;
    for (const auto& p : data.patients) {
        hi = std::max(hi, p.event_time);
        for (const auto& v : p.visits) hi = std::max(hi, v.time);
    }
    return hi;
}

double max_event_time(const core::CohortDataset& data) {
    double hi = 0.0;
    for (const auto& p : data.patients) hi = std::max(hi, p.event_time);
    return hi;
}

ModelStructure staging_structure(const sequencing::LatentDesign& design, int n_observed_stages, const ScoreLink& link,
                                 const std::vector<sequencing::HazardSpec>& causes, double hazard_horizon) {
    ModelStructure s;
    s.n_fixed = design.n_fixed();
    s.n_random = design.n_random();
    s.diagonal_random = design.diagonal_random;
    s.outcomes.push_back({OutcomeModel::Kind::Ordinal, "stage", n_observed_stages - 1, 0});
    s.outcomes.push_back({OutcomeModel::Kind::Curvilinear, "score", 0, link.size()});
    for (const auto& c : causes) s.causes.push_back(sequencing::cause_model(c, hazard_horizon));
    s.validate();
    return s;
}

std::vector<std::string> staging_names(const sequencing::LatentDesign& design, const ModelStructure& s,
                                       const std::vector<sequencing::HazardSpec>& causes) {
    std::vector<std::string> names;
    for (const auto& n : design.fixed_names()) names.push_back("mu:" + n);
    const auto rn = design.random_names();
    for (const auto& [a, b] : s.chol_entries()) names.push_back("chol:" + rn[a] + ":" + rn[b]);
    for (int m = 1; m <= s.outcomes[0].max_level; ++m) names.push_back("stage:eta" + std::to_string(m));
    names.push_back("stage:log_sd");
    for (int l = 0; l <= s.outcomes[1].link_size; ++l) names.push_back("score:eta" + std::to_string(l));
    names.push_back("score:log_sd");
    for (std::size_t c = 0; c < causes.size(); ++c)
        for (const auto& n : sequencing::cause_param_names(causes[c], static_cast<int>(c) + 1, s.n_random))
            names.push_back(n);
    return names;
}

std::optional<double> visit_score(const core::CohortDataset& data, const core::Visit& v, const StagingSpec& spec) {
    return core::prorated_sum_score(data.scale, v, spec.subdimension, spec.max_missing_frac);
}

// Root of E[sum Y | delta] = target, bracketed by doubling from [-20, 20].
double project_one(const sequencing::JlpmFit& fit, double target, int stage) {
    double low = 0.0, high = 0.0;
    for (const auto& it : fit.measurement.items) {
        low += it.levels.front();
        high += it.levels.back();
    }
    if (!(target > low && target < high))
        throw OutOfRangeError("sum-score equivalent " + core::format_number(target) + " of stage " +
                              std::to_string(stage) + " is outside the attainable range (" + core::format_number(low) +
                              ", " + core::format_number(high) + ")");
    const auto f = [&](double d) { return expected_sum_score(fit, d) - target; };
    double lo = -kBracket, hi = kBracket;
    for (int k = 0; k < 60 && f(lo) > 0.0; ++k) lo *= 2.0;
    for (int k = 0; k < 60 && f(hi) < 0.0; ++k) hi *= 2.0;
    if (f(lo) > 0.0 || f(hi) < 0.0)
        throw OutOfRangeError("no latent location reproduces the equivalent of stage " + std::to_string(stage));
    return numerics::brent_root(f, lo, hi, 1e-14);
}

}  // namespace

std::string to_string(LinkKind kind) { return kind == LinkKind::ISpline ? "ispline" : "linear"; }

LinkKind parse_link(const std::string& name) {
    if (name == "ispline") return LinkKind::ISpline;
    if (name == "linear") return LinkKind::Linear;
    throw ValidationError("unknown link '" + name + "'");
}

void StagingSpec::validate() const {
    if (subdimension.items.empty()) throw ValidationError("subdimension '" + subdimension.name + "' has no items");
    if (n_time_knots < 0 || n_link_knots < 0) throw ValidationError("negative number of knots");
    if (link_knots && !std::is_sorted(link_knots->begin(), link_knots->end()))
        throw ValidationError("link knots must be sorted");
    if (!(max_missing_frac >= 0.0 && max_missing_frac < 1.0))
        throw ValidationError("missing item fraction must lie in [0, 1)");
    if (causes.empty()) throw ValidationError("at least one event cause is required");
    if (qmc_points < 0) throw ValidationError("QMC point count must be nonnegative");
    if (threads < 1) throw ValidationError("threads must be positive");
    if (time_horizon && !(*time_horizon > 0.0)) throw ValidationError("time horizon must be positive");
    if (random_time_columns.size() + 1 > 10) throw ValidationError("at most 10 random effects are supported");
    optimizer.validate();
}

int ScoreLink::size() const { return kind == LinkKind::ISpline ? static_cast<int>(knots.size()) + 3 : 1; }

VectorXd ScoreLink::basis(double y) const {
    if (kind == LinkKind::Linear) return VectorXd::Constant(1, (y - lower) / (upper - lower));
    return numerics::SplineBasis(numerics::SplineKind::QuadraticISpline, knots, {lower, upper}).evaluate(y);
}

VectorXd ScoreLink::slope(double y) const {
    if (kind == LinkKind::Linear) return VectorXd::Constant(1, 1.0 / (upper - lower));
    return numerics::SplineBasis(numerics::SplineKind::QuadraticISpline, knots, {lower, upper}).derivative(y);
}

StagingProblem make_staging_problem(const StagingSpec& spec, const core::CohortDataset& data) {
    spec.validate();
    if (data.patients.empty()) throw EmptySampleError("no patients to fit");
    for (const auto& id : spec.subdimension.items) data.scale.index_of(id);
    StagingProblem pr;
    pr.spec = spec;
    pr.n_stages = data.n_stages;

    std::set<int> seen;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : data.patients)
        for (const auto& v : p.visits) {
            if (v.stage) {
                if (*v.stage < 1 || *v.stage > data.n_stages)
                    throw ValidationError("patient '" + p.id + "' has stage " + std::to_string(*v.stage) +
                                          " outside 1.." + std::to_string(data.n_stages));
                seen.insert(*v.stage);
            }
            if (const auto y = visit_score(data, v, spec)) {
                lo = std::min(lo, *y);
                hi = std::max(hi, *y);
            }
        }
    if (seen.size() < 2) throw ValidationError("fewer than two stages are observed");
    if (!(hi > lo)) throw ValidationError("the sum-score takes fewer than two values");
    for (int s = 1; s <= data.n_stages; ++s)
        if (!seen.count(s))
            pr.warnings.push_back("stage " + std::to_string(s) + " is never observed; its thresholds are merged");
    pr.stages.assign(seen.begin(), seen.end());

    pr.link.kind = spec.link;
    pr.link.lower = lo;
    pr.link.upper = hi;
    if (spec.link == LinkKind::ISpline) {
        if (spec.link_knots) {
            for (double k : *spec.link_knots)
                if (!(k > lo && k < hi)) throw ValidationError("link knots must lie inside the observed score range");
            pr.link.knots = *spec.link_knots;
        } else {
            for (int k = 1; k <= spec.n_link_knots; ++k) pr.link.knots.push_back(lo + (hi - lo) * k / (spec.n_link_knots + 1));
        }
    }

    auto& d = pr.design;
    d.time_horizon = spec.time_horizon ? *spec.time_horizon : max_follow_up(data);
    if (!(d.time_horizon > 0.0)) throw ValidationError("follow-up range is empty");
    const auto knots = spec.time_knots ? *spec.time_knots : sequencing::visit_time_knots(data, spec.n_time_knots);
    for (double k : knots)
        if (k > 0.0 && k < d.time_horizon) d.time_knots.push_back(k);
    d.random_time_columns = spec.random_time_columns;
    d.diagonal_random = spec.diagonal_random;
    d.validate();

    pr.structure = staging_structure(d, static_cast<int>(pr.stages.size()), pr.link, spec.causes, max_event_time(data));
    pr.names = staging_names(d, pr.structure, spec.causes);
    for (const auto& record : data.patients) {
        auto p = sequencing::prepare_patient(record, d, pr.structure, spec.causes);
        for (std::size_t j = 0; j < record.visits.size(); ++j) {
            const auto& v = record.visits[j];
            if (v.stage) {
                sequencing::PreparedObservation ob;
                ob.visit = static_cast<int>(j);
                ob.outcome = 0;
                ob.level = static_cast<int>(std::lower_bound(pr.stages.begin(), pr.stages.end(), *v.stage) - pr.stages.begin());
                p.obs.push_back(std::move(ob));
            }
            if (const auto y = visit_score(data, v, spec)) {
                sequencing::PreparedObservation ob;
                ob.visit = static_cast<int>(j);
                ob.outcome = 1;
                ob.link_value = pr.link.basis(*y);
                ob.link_slope = pr.link.slope(*y);
                p.obs.push_back(std::move(ob));
            }
        }
        pr.patients.push_back(std::move(p));
    }
    pr.event_rates = sequencing::crude_event_rates(data, static_cast<int>(spec.causes.size()));
    return pr;
}

VectorXd staging_start_values(const StagingProblem& pr, const core::CohortDataset& data) {
    const auto& s = pr.structure;
    VectorXd theta = VectorXd::Zero(s.n_params());
    const auto entries = s.chol_entries();
    for (std::size_t e = 0; e < entries.size(); ++e)
        if (entries[e].first == entries[e].second) theta(s.n_fixed + static_cast<int>(e)) = kRandomSlopeStart;

    std::vector<double> counts(pr.stages.size(), 0.0);
    std::vector<double> scores;
    for (const auto& p : data.patients)
        for (const auto& v : p.visits) {
            if (v.stage) counts[std::lower_bound(pr.stages.begin(), pr.stages.end(), *v.stage) - pr.stages.begin()] += 1.0;
            if (const auto y = visit_score(data, v, pr.spec)) scores.push_back(*y);
        }
    // Marginal latent variance is about 2 (random intercept plus error).
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    VectorXd omega(static_cast<Eigen::Index>(counts.size()) - 1);
    double cum = 0.0;
    for (Eigen::Index j = 0; j < omega.size(); ++j) {
        cum += counts[j];
        omega(j) = std::sqrt(2.0) * numerics::normal_quantile(std::clamp(cum / total, 1e-3, 1.0 - 1e-3));
        if (j > 0) omega(j) = std::max(omega(j), omega(j - 1) + kMinIncrement * kMinIncrement);
    }
    const int off0 = s.outcome_offset(0);
    theta.segment(off0, omega.size()) = sequencing::eta_from_thresholds(omega);

    // Link close to the standardized score on the latent scale.
    double mean = 0.0, var = 0.0;
    for (double y : scores) mean += y;
    mean /= static_cast<double>(scores.size());
    for (double y : scores) var += (y - mean) * (y - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(scores.size())), 1e-3);
    const int off1 = s.outcome_offset(1);
    const int n = pr.link.size();
    theta(off1) = std::sqrt(2.0) * (pr.link.lower - mean) / sd;
    const double rise = std::sqrt(2.0) * (pr.link.upper - pr.link.lower) / sd;
    theta.segment(off1 + 1, n).setConstant(std::sqrt(rise / n));
    theta(off1 + n + 1) = std::log(0.5);

    for (std::size_t c = 0; c < s.causes.size(); ++c)
        theta.segment(s.cause_offset(c), s.causes[c].n_params(s.n_random)) =
            sequencing::cause_start(pr.spec.causes[c], s.causes[c], s.n_random, pr.event_rates[c]);
    return theta;
}

// ---------------------------------------------------------------------------
// Fit

VectorXd StagingFit::stage_thresholds() const {
    return sequencing::thresholds_from_eta(estimates.theta.segment(structure.outcome_offset(0), structure.outcomes[0].max_level));
}

double StagingFit::stage_sd() const {
    return std::exp(estimates.theta(structure.outcome_offset(0) + structure.outcomes[0].max_level));
}

double StagingFit::score_sd() const {
    return std::exp(estimates.theta(structure.outcome_offset(1) + structure.outcomes[1].link_size + 1));
}

double StagingFit::omega(int stage) const {
    if (stage < 2 || stage > n_stages)
        throw DomainError("stage " + std::to_string(stage) + " has no transition (stages 2.." + std::to_string(n_stages) + ")");
    const auto below = std::lower_bound(stages.begin(), stages.end(), stage) - stages.begin();
    if (below == 0 || below == static_cast<long>(stages.size()))
        throw DomainError("the transition into stage " + std::to_string(stage) + " is not identified by the observed stages");
    return stage_thresholds()(below - 1);
}

double StagingFit::link_value(double y) const {
    const VectorXd eta = estimates.theta.segment(structure.outcome_offset(1), link.size() + 1);
    return LinkEvaluator(link, eta)(y);
}

double StagingFit::link_inverse(double h) const {
    const VectorXd eta = estimates.theta.segment(structure.outcome_offset(1), link.size() + 1);
    return LinkEvaluator(link, eta).inverse(h);
}

MatrixXd StagingFit::random_covariance() const {
    const MatrixXd L = structure.cholesky(estimates.theta);
    return L * L.transpose();
}

std::size_t StagingFit::index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("unknown parameter '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

double staging_log_likelihood(const StagingSpec& spec, const core::CohortDataset& data, const VectorXd& theta) {
    const auto pr = make_staging_problem(spec, data);
    if (theta.size() != pr.structure.n_params())
        throw ValidationError("parameter vector has " + std::to_string(theta.size()) + " entries, model needs " +
                              std::to_string(pr.structure.n_params()));
    sequencing::JointModel model(pr.structure, pr.patients,
                                 numerics::sobol_normal(pr.structure.n_random,
                                                        sequencing::qmc_count(spec.qmc_points, pr.structure.n_random)),
                                 spec.threads);
    if (spec.adaptive) model.set_proposals(model.laplace_proposals(theta));
    const VectorXd ll = model.patient_log_likelihoods(theta);
    for (Eigen::Index i = 0; i < ll.size(); ++i)
        if (!std::isfinite(ll(i)))
            throw DomainError("non-finite log-likelihood contribution for patient '" + pr.patients[i].id + "'");
    return ll.sum();
}

StagingFit staging_fit_at(const StagingProblem& pr, const VectorXd& theta) {
    StagingFit f;
    f.spec = pr.spec;
    f.design = pr.design;
    f.link = pr.link;
    f.structure = pr.structure;
    f.stages = pr.stages;
    f.n_stages = pr.n_stages;
    f.names = pr.names;
    f.estimates.theta = theta;
    f.estimates.se = VectorXd::Constant(theta.size(), kNaN);
    f.n_patients = static_cast<int>(pr.patients.size());
    f.n_events.assign(pr.structure.causes.size(), 0);
    for (const auto& p : pr.patients) {
        f.n_visits += static_cast<int>(p.x.rows());
        if (p.cause > 0) ++f.n_events[p.cause - 1];
    }
    f.qmc_points = sequencing::qmc_count(pr.spec.qmc_points, pr.structure.n_random);
    f.warnings = pr.warnings;
    return f;
}

StagingFit fit_staging(const StagingSpec& spec, const core::CohortDataset& data, const std::optional<VectorXd>& start) {
    const auto pr = make_staging_problem(spec, data);
    const VectorXd theta0 = start ? *start : staging_start_values(pr, data);
    auto est = sequencing::estimate(pr.structure, pr.patients, theta0,
                                    sequencing::qmc_count(spec.qmc_points, pr.structure.n_random), spec.adaptive,
                                    spec.optimizer, spec.threads);
    auto f = staging_fit_at(pr, est.theta);
    f.estimates = std::move(est);
    if (!f.estimates.se_available) f.warnings.push_back("Hessian is not negative definite; standard errors unavailable");
    return f;
}

// ---------------------------------------------------------------------------
// Equivalents and projection

SumScoreEquivalent stage_sum_score_equivalent(const StagingFit& fit, int stage, int mc_draws) {
    if (mc_draws < 1) throw ValidationError("mc_draws must be positive");
    const double omega = fit.omega(stage);
    const double sd = fit.score_sd();
    const VectorXd eta = fit.estimates.theta.segment(fit.structure.outcome_offset(1), fit.link.size() + 1);
    const LinkEvaluator link(fit.link, eta);
    const MatrixXd e = numerics::sobol_normal(1, mc_draws);
    double sum = 0.0;
    int clamped = 0;
    for (int q = 0; q < mc_draws; ++q) {
        const double h = omega + sd * e(q, 0);
        if (!link.inside(h)) ++clamped;
        sum += link.inverse(h);
    }
    return {sum / mc_draws, static_cast<double>(clamped) / mc_draws};
}

double expected_sum_score(const sequencing::JlpmFit& fit, double delta) {
    double total = 0.0;
    for (const auto& it : fit.measurement.items) total += sequencing::item_expected_level(it, delta);
    return total;
}

StageProjection project_stage_thresholds(const sequencing::JlpmFit& fit, const std::vector<double>& equivalents) {
    StageProjection out;
    out.subdimension = fit.spec.subdimension.name;
    out.n_stages = static_cast<int>(equivalents.size()) + 1;
    for (std::size_t i = 0; i < equivalents.size(); ++i) {
        StageTransition t;
        t.stage = static_cast<int>(i) + 2;
        t.omega = kNaN;
        t.equivalent = equivalents[i];
        t.delta = project_one(fit, equivalents[i], t.stage);
        out.transitions.push_back(t);
    }
    return out;
}

StageProjection project_stages(const sequencing::JlpmFit& sequence, const StagingFit& staging, int mc_draws) {
    auto a = sequence.spec.subdimension.items, b = staging.spec.subdimension.items;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw ValidationError("staging and sequencing fits use different items");
    StageProjection out;
    out.subdimension = sequence.spec.subdimension.name;
    out.n_stages = staging.n_stages;
    for (int s = 2; s <= staging.n_stages; ++s) {
        StageTransition t;
        t.stage = s;
        try {
            t.omega = staging.omega(s);
        } catch (const DomainError& e) {
            out.warnings.push_back(std::string(e.what()) + "; skipped");
            continue;
        }
        const auto eq = stage_sum_score_equivalent(staging, s, mc_draws);
        t.equivalent = eq.value;
        t.clamp_rate = eq.clamp_rate;
        if (eq.clamp_rate > 0.0)
            out.warnings.push_back("stage " + std::to_string(s) + ": " + core::format_number(100.0 * eq.clamp_rate) +
                                   "% of draws clamped to the score range");
        t.delta = project_one(sequence, t.equivalent, s);
        out.transitions.push_back(t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tables

std::string stage_bands_csv(const std::vector<sequencing::Transition>& sequence, const StageProjection& projection) {
    struct Row {
        double location;
        std::vector<std::string> fields;
    };
    std::vector<Row> rows;
    for (const auto& t : sequence)
        rows.push_back({t.location,
                        {"item", t.item, std::to_string(t.from_level), std::to_string(t.to_level),
                         core::format_number(t.location), core::format_number(t.se)}});
    for (const auto& t : projection.transitions)
        rows.push_back({t.delta,
                        {"stage", "stage", std::to_string(t.stage - 1), std::to_string(t.stage),
                         core::format_number(t.delta), core::format_number(kNaN)}});
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.location < b.location; });
    std::string out = core::format_csv_row({"kind", "label", "from_level", "to_level", "location", "se"});
    for (const auto& r : rows) out += core::format_csv_row(r.fields);
    return out;
}

std::string projection_csv(const StageProjection& p) {
    std::string out = core::format_csv_row({"subdimension", "stage", "omega", "equivalent", "delta", "clamp_rate"});
    for (const auto& t : p.transitions)
        out += core::format_csv_row({p.subdimension, std::to_string(t.stage), core::format_number(t.omega),
                                     core::format_number(t.equivalent), core::format_number(t.delta),
                                     core::format_number(t.clamp_rate)});
    return out;
}

std::string staging_estimates_csv(const StagingFit& fit) { return sequencing::estimates_table(fit.names, fit.estimates); }

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const StagingSpec& s) {
    j = {{"subdimension", s.subdimension},
         {"n_time_knots", s.n_time_knots},
         {"random_time_columns", s.random_time_columns},
         {"diagonal_random", s.diagonal_random},
         {"link", to_string(s.link)},
         {"n_link_knots", s.n_link_knots},
         {"max_missing_frac", s.max_missing_frac},
         {"causes", s.causes},
         {"qmc_points", s.qmc_points},
         {"adaptive", s.adaptive},
         {"optimizer", s.optimizer}};
    if (s.time_knots) j["time_knots"] = *s.time_knots;
    if (s.time_horizon) j["time_horizon"] = *s.time_horizon;
    if (s.link_knots) j["link_knots"] = *s.link_knots;
}

void from_json(const nlohmann::json& j, StagingSpec& s) {
    j.at("subdimension").get_to(s.subdimension);
    s.n_time_knots = j.value("n_time_knots", s.n_time_knots);
    if (j.contains("time_knots")) s.time_knots = j.at("time_knots").get<std::vector<double>>();
    if (j.contains("time_horizon")) s.time_horizon = j.at("time_horizon").get<double>();
    s.random_time_columns = j.value("random_time_columns", s.random_time_columns);
    s.diagonal_random = j.value("diagonal_random", s.diagonal_random);
    s.link = parse_link(j.value("link", std::string("ispline")));
    s.n_link_knots = j.value("n_link_knots", s.n_link_knots);
    if (j.contains("link_knots")) s.link_knots = j.at("link_knots").get<std::vector<double>>();
    s.max_missing_frac = j.value("max_missing_frac", s.max_missing_frac);
    if (j.contains("causes")) j.at("causes").get_to(s.causes);
    s.qmc_points = j.value("qmc_points", s.qmc_points);
    s.adaptive = j.value("adaptive", s.adaptive);
    if (j.contains("optimizer")) j.at("optimizer").get_to(s.optimizer);
    s.validate();
}

void to_json(nlohmann::json& j, const ScoreLink& l) {
    j = {{"kind", to_string(l.kind)}, {"lower", l.lower}, {"upper", l.upper}, {"knots", l.knots}};
}

void from_json(const nlohmann::json& j, ScoreLink& l) {
    l.kind = parse_link(j.at("kind").get<std::string>());
    l.lower = j.at("lower").get<double>();
    l.upper = j.at("upper").get<double>();
    l.knots = j.at("knots").get<std::vector<double>>();
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double number_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

void to_json(nlohmann::json& j, const StageProjection& p) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : p.transitions)
        rows.push_back({{"stage", t.stage},
                        {"omega", number_or_null(t.omega)},
                        {"equivalent", t.equivalent},
                        {"delta", t.delta},
                        {"clamp_rate", t.clamp_rate}});
    j = {{"kind", "stage_projection"}, {"subdimension", p.subdimension}, {"n_stages", p.n_stages}, {"transitions", rows}, {"warnings", p.warnings}};
}

void from_json(const nlohmann::json& j, StageProjection& p) {
    p.subdimension = j.at("subdimension").get<std::string>();
    p.n_stages = j.at("n_stages").get<int>();
    p.transitions.clear();
    for (const auto& r : j.at("transitions")) {
        StageTransition t;
        t.stage = r.at("stage").get<int>();
        t.omega = number_from(r.at("omega"));
        t.equivalent = r.at("equivalent").get<double>();
        t.delta = r.at("delta").get<double>();
        t.clamp_rate = r.at("clamp_rate").get<double>();
        p.transitions.push_back(t);
    }
    j.at("warnings").get_to(p.warnings);
}

nlohmann::json staging_fit_to_json(const StagingFit& f) {
    return {{"kind", "staging"},
            {"spec", f.spec},
            {"design", f.design},
            {"link", f.link},
            {"hazard_horizon", f.structure.causes.empty() ? 0.0 : f.structure.causes.front().horizon},
            {"stages", f.stages},
            {"n_stages", f.n_stages},
            {"names", f.names},
            {"estimates", f.estimates},
            {"stage_thresholds", sequencing::vector_json(f.stage_thresholds())},
            {"stage_sd", f.stage_sd()},
            {"score_sd", f.score_sd()},
            {"random_covariance", sequencing::matrix_json(f.random_covariance())},
            {"n_patients", f.n_patients},
            {"n_visits", f.n_visits},
            {"n_events", f.n_events},
            {"qmc_points", f.qmc_points},
            {"warnings", f.warnings}};
}

StagingFit staging_fit_from_json(const nlohmann::json& j) {
    if (j.value("kind", std::string()) != "staging") throw ValidationError("not a staging fit");
    StagingFit f;
    j.at("spec").get_to(f.spec);
    j.at("design").get_to(f.design);
    j.at("link").get_to(f.link);
    j.at("stages").get_to(f.stages);
    f.n_stages = j.at("n_stages").get<int>();
    j.at("names").get_to(f.names);
    j.at("estimates").get_to(f.estimates);
    f.structure = staging_structure(f.design, static_cast<int>(f.stages.size()), f.link, f.spec.causes,
                                    j.at("hazard_horizon").get<double>());
    if (f.estimates.theta.size() != f.structure.n_params() || f.names.size() != static_cast<std::size_t>(f.estimates.theta.size()))
        throw ValidationError("fit parameters do not match its specification");
    f.n_patients = j.at("n_patients").get<int>();
    f.n_visits = j.at("n_visits").get<int>();
    j.at("n_events").get_to(f.n_events);
    f.qmc_points = j.at("qmc_points").get<int>();
    j.at("warnings").get_to(f.warnings);
    return f;
}

}  // namespace fours::staging
