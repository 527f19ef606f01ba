#include "fours/simulation/simulation.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/core/json_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/parallel.hpp"
#include "fours/numerics/quadrature.hpp"
#include "fours/numerics/random.hpp"
#include "fours/numerics/roots.hpp"
#include "fours/numerics/splines.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>

namespace fours::simulation {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using sequencing::AssociationKind;
using sequencing::BaselineKind;
using sequencing::CauseModel;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Truth of one cause with everything needed to evaluate its hazard.
struct CauseTruth {
    CauseModel model;
    VectorXd xi, gamma, alpha;
};

CauseTruth cause_truth(const sequencing::HazardSpec& spec, double horizon, const VectorXd& params, int n_random) {
    CauseTruth c;
    c.model = sequencing::cause_model(spec, horizon);
    if (params.size() != c.model.n_params(n_random)) throw ValidationError("cause parameters have the wrong length");
    int off = 0;
    c.xi = params.segment(off, c.model.n_baseline());
    off += c.model.n_baseline();
    c.gamma = params.segment(off, c.model.n_covariates);
    off += c.model.n_covariates;
    c.alpha = params.segment(off, c.model.n_association(n_random));
    return c;
}

double baseline_hazard(const CauseTruth& c, double t) {
    if (c.model.baseline == BaselineKind::Weibull) {
        const double z1 = c.xi(0) * c.xi(0), z2 = c.xi(1) * c.xi(1);
        if (z1 == 0.0 || z2 == 0.0) return 0.0;
        return z1 * z2 * std::pow(z1 * t, z2 - 1.0);
    }
    return c.xi.array().square().matrix().dot(c.model.basis(t));
}

// Latent value along a patient's follow-up, reduced to a constant plus a
// combination of the time basis.
class LatentPath {
public:
    LatentPath(const sequencing::LatentDesign& design, const numerics::SplineBasis& basis,
               const std::map<std::string, double>& covariates, const VectorXd& beta, VectorXd b)
        : basis_(&basis), b_(std::move(b)) {
        const int nt = design.n_time();
        coef_ = beta.head(nt);
        int j = nt;
        for (const auto& w : design.covariates) constant_ += beta(j++) * covariates.at(w);
        for (const auto& w : design.time_interactions) {
            coef_ += covariates.at(w) * beta.segment(j, nt);
            j += nt;
        }
        constant_ += b_(0);
        for (std::size_t c = 0; c < design.random_time_columns.size(); ++c)
            coef_(design.random_time_columns[c]) += b_(static_cast<Eigen::Index>(c) + 1);

        // The path is cubic between knots (linear beyond the horizon), so it
        // is stored as one cubic per piece, fitted through four points.
        starts_.push_back(0.0);
        for (double k : design.time_knots) starts_.push_back(k);
        starts_.push_back(design.time_horizon);
        for (std::size_t i = 0; i < starts_.size(); ++i) {
            const double lo = starts_[i];
            const double width = i + 1 < starts_.size() ? starts_[i + 1] - lo : design.time_horizon;
            Eigen::Matrix4d vander;
            Eigen::Vector4d values;
            for (int r = 0; r < 4; ++r) {
                const double h = width * r / 3.0;
                vander.row(r) << 1.0, h, h * h, h * h * h;
                values(r) = direct(lo + h);
            }
            pieces_.push_back(vander.partialPivLu().solve(values));
        }
    }

    double operator()(double t) const {
        const auto it = std::upper_bound(starts_.begin() + 1, starts_.end(), t);
        const auto i = static_cast<std::size_t>(it - starts_.begin()) - 1;
        const double h = t - starts_[i];
        const auto& c = pieces_[i];
        return c(0) + h * (c(1) + h * (c(2) + h * c(3)));
    }
    const VectorXd& b() const { return b_; }

private:
    double direct(double t) const { return constant_ + basis_->evaluate(t).dot(coef_); }

    const numerics::SplineBasis* basis_;
    VectorXd b_;
    VectorXd coef_;
    double constant_ = 0.0;
    std::vector<double> starts_;
    std::vector<Eigen::Vector4d> pieces_;
};

numerics::SplineBasis time_basis(const sequencing::LatentDesign& d) {
    return numerics::SplineBasis(numerics::SplineKind::NaturalCubic, d.time_knots, {0.0, d.time_horizon});
}

// Cumulative hazard of one cause on [0, t].
double cumulative_hazard(const CauseTruth& c, const LatentPath& path, double wg, double t) {
    if (t <= 0.0) return 0.0;
    std::vector<double> cuts;
    if (c.model.baseline != BaselineKind::Weibull)
        for (double k : c.model.knots)
            if (k < t) cuts.push_back(k);
    switch (c.model.association) {
        case AssociationKind::CurrentValue: {
            const double alpha = c.alpha(0);
            return numerics::integrate_panels(
                [&](double s) { return baseline_hazard(c, s) * std::exp(wg + alpha * path(s)); }, 0.0, t, cuts, 30,
                1e-13, 1e-12);
        }
        case AssociationKind::RandomEffects:
        case AssociationKind::None: {
            const double shift =
                wg + (c.model.association == AssociationKind::RandomEffects ? c.alpha.dot(path.b()) : 0.0);
            if (c.model.baseline == BaselineKind::Weibull) {
                const double z1 = c.xi(0) * c.xi(0), z2 = c.xi(1) * c.xi(1);
                if (z1 == 0.0 || z2 == 0.0) return 0.0;
                return std::pow(z1 * t, z2) * std::exp(shift);
            }
            return std::exp(shift) *
                   numerics::integrate_panels([&](double s) { return baseline_hazard(c, s); }, 0.0, t, cuts, 30,
                                              1e-13, 1e-12);
        }
    }
    return 0.0;
}

std::map<std::string, double> draw_covariates(const std::vector<CovariateSpec>& specs, numerics::Rng& rng) {
    std::map<std::string, double> out;
    for (const auto& c : specs) {
        if (c.distribution == "bernoulli")
            out[c.name] = rng.uniform() < c.p ? 1.0 : 0.0;
        else
            out[c.name] = c.mean + c.sd * rng.normal();
    }
    return out;
}

struct EventDraw {
    double time = 0.0;
    int cause = 0;
};

// First event over the causes by inversion of each cumulative hazard; cause 0
// when nothing happens before min(censor, cap).
EventDraw draw_event(const std::vector<CauseTruth>& causes, const std::vector<double>& wg, const LatentPath& path,
                     const VisitSchedule& schedule, numerics::Rng& rng, std::vector<double>& residuals) {
    EventDraw best{std::min(schedule.censor_time, schedule.event_cap), 0};
    const double cap = schedule.event_cap;
    for (std::size_t p = 0; p < causes.size(); ++p) {
        const double target = -std::log(rng.uniform());
        const auto lambda = [&](double t) { return cumulative_hazard(causes[p], path, wg[p], t); };
        if (lambda(cap) < target) continue;
        const double t = numerics::brent_root([&](double s) { return lambda(s) - target; }, 0.0, cap, 1e-13);
        residuals.push_back(std::abs(lambda(t) - target));
        if (t < best.time) best = {t, static_cast<int>(p) + 1};
    }
    return best;
}

std::vector<double> visit_times(const VisitSchedule& s, double end, numerics::Rng& rng) {
    std::vector<double> t{0.0};
    for (int k = 1;; ++k) {
        const double v = k * s.interval + rng.uniform(-s.jitter, s.jitter);
        if (v >= end) break;
        t.push_back(v);
    }
    return t;
}

int draw_stage(const StageGenerator& g, double latent, numerics::Rng& rng) {
    const double y = latent + g.sd * rng.normal();
    int s = 1;
    for (Eigen::Index m = 0; m < g.thresholds.size(); ++m)
        if (y > g.thresholds(m)) ++s;
    return s;
}

void validate_schedule(const VisitSchedule& s) {
    if (!(s.interval > 0.0)) throw ValidationError("visit interval must be positive");
    if (!(s.jitter >= 0.0 && s.jitter < 0.5 * s.interval)) throw ValidationError("visit jitter must be below half the interval");
    if (!(s.censor_time > 0.0) || !(s.event_cap > 0.0)) throw ValidationError("censoring and event cap must be positive");
    if (!(s.missing_rate >= 0.0 && s.missing_rate < 1.0)) throw ValidationError("missing rate must lie in [0, 1)");
}

void validate_stages(const StageGenerator& g) {
    if (g.thresholds.size() < 1) throw ValidationError("stage generator needs at least one threshold");
    for (Eigen::Index m = 1; m < g.thresholds.size(); ++m)
        if (g.thresholds(m) < g.thresholds(m - 1)) throw ValidationError("stage thresholds must be nondecreasing");
    if (!(g.sd > 0.0)) throw ValidationError("stage error SD must be positive");
}

struct TruthLayout {
    sequencing::LatentDesign design;
    sequencing::ModelStructure structure;
    std::vector<std::string> names;
};

TruthLayout truth_layout(const SimScenario& s) {
    TruthLayout t;
    t.design = sequencing::explicit_design(s.spec);
    std::vector<std::vector<int>> levels;
    for (const auto& id : s.spec.subdimension.items) {
        std::vector<int> l(s.scale.items[s.scale.index_of(id)].max_level + 1);
        for (std::size_t m = 0; m < l.size(); ++m) l[m] = static_cast<int>(m);
        levels.push_back(l);
    }
    t.structure = sequencing::build_structure(t.design, s.spec.subdimension.items, levels, s.spec.causes,
                                              s.schedule.event_cap);
    t.names = sequencing::parameter_names(t.design, t.structure, s.spec.subdimension.items, s.spec.causes);
    return t;
}

}  // namespace

void SimScenario::validate() const {
    spec.validate();
    scale.validate();
    for (const auto& id : spec.subdimension.items) scale.index_of(id);
    const auto layout = truth_layout(*this);
    if (theta.size() != layout.structure.n_params())
        throw ValidationError("true parameter vector has " + std::to_string(theta.size()) + " entries, model needs " +
                              std::to_string(layout.structure.n_params()));
    if (n_patients < 1) throw ValidationError("scenario needs at least one patient");
    validate_schedule(schedule);
    if (stages) validate_stages(*stages);
    for (const auto& c : covariates)
        if (c.distribution != "bernoulli" && c.distribution != "normal")
            throw ValidationError("unknown covariate distribution '" + c.distribution + "'");
}

SimulatedCohort simulate_cohort(const SimScenario& s) {
    s.validate();
    const auto layout = truth_layout(s);
    const auto& st = layout.structure;
    const VectorXd beta = s.theta.head(st.n_fixed);
    const MatrixXd L = st.cholesky(s.theta);
    std::vector<CauseTruth> causes;
    for (std::size_t c = 0; c < st.causes.size(); ++c)
        causes.push_back(cause_truth(s.spec.causes[c], s.schedule.event_cap,
                                     s.theta.segment(st.cause_offset(c), st.causes[c].n_params(st.n_random)),
                                     st.n_random));
    std::vector<std::size_t> columns;
    std::vector<VectorXd> thresholds;
    std::vector<double> sds;
    for (std::size_t k = 0; k < s.spec.subdimension.items.size(); ++k) {
        columns.push_back(s.scale.index_of(s.spec.subdimension.items[k]));
        const int off = st.outcome_offset(k);
        const int M = st.outcomes[k].max_level;
        thresholds.push_back(sequencing::thresholds_from_eta(s.theta.segment(off, M)));
        sds.push_back(std::exp(s.theta(off + M)));
    }

    const auto basis = time_basis(layout.design);
    SimulatedCohort out;
    auto& data = out.data;
    data.scale = s.scale;
    for (const auto& c : s.covariates) data.covariate_names.push_back(c.name);
    data.n_stages = s.stages ? s.stages->n_stages() : 2;
    data.n_causes = static_cast<int>(s.spec.causes.size());
    const int width = static_cast<int>(std::to_string(s.n_patients).size());
    for (int i = 0; i < s.n_patients; ++i) {
        numerics::Rng rng(numerics::derive_seed(s.seed, static_cast<std::uint64_t>(i)));
        core::PatientRecord p;
        std::string num = std::to_string(i + 1);
        p.id = "P" + std::string(width - num.size(), '0') + num;
        p.covariates = draw_covariates(s.covariates, rng);
        VectorXd u(st.n_random);
        for (int a = 0; a < st.n_random; ++a) u(a) = rng.normal();
        const LatentPath path(layout.design, basis, p.covariates, beta, L * u);
        std::vector<double> wg;
        for (std::size_t c = 0; c < causes.size(); ++c) {
            double v = 0.0;
            for (std::size_t j = 0; j < s.spec.causes[c].covariates.size(); ++j)
                v += causes[c].gamma(static_cast<Eigen::Index>(j)) * p.covariates.at(s.spec.causes[c].covariates[j]);
            wg.push_back(v);
        }
        const auto ev = draw_event(causes, wg, path, s.schedule, rng, out.inversion_residuals);
        p.event_time = ev.time;
        p.event_cause = ev.cause;
        for (double t : visit_times(s.schedule, ev.time, rng)) {
            core::Visit v;
            v.time = t;
            v.responses.assign(s.scale.items.size(), std::nullopt);
            const double delta = path(t);
            for (std::size_t k = 0; k < columns.size(); ++k) {
                const bool missing = rng.uniform() < s.schedule.missing_rate;
                const double y = delta + sds[k] * rng.normal();
                int level = 0;
                for (Eigen::Index m = 0; m < thresholds[k].size(); ++m)
                    if (y > thresholds[k](m)) ++level;
                if (!missing) v.responses[columns[k]] = level;
            }
            if (s.stages) v.stage = draw_stage(*s.stages, delta, rng);
            p.visits.push_back(std::move(v));
        }
        data.patients.push_back(std::move(p));
    }
    data.validate();

    nlohmann::json truth = nlohmann::json::object();
    for (std::size_t i = 0; i < layout.names.size(); ++i) truth[layout.names[i]] = s.theta(static_cast<Eigen::Index>(i));
    out.truth = {{"kind", "truth"}, {"scenario", s}, {"design", layout.design}, {"names", layout.names}, {"theta", truth}};
    return out;
}

// ---------------------------------------------------------------------------
// Staging cohorts

double ScoreGenerator::link(double y) const {
    numerics::SplineBasis basis(numerics::SplineKind::QuadraticISpline, knots, {0.0, static_cast<double>(max_score)});
    return eta0 + eta.array().square().matrix().dot(basis.evaluate(y));
}

double ScoreGenerator::inverse(double h) const {
    const double hi = static_cast<double>(max_score);
    if (h <= link(0.0)) return 0.0;
    if (h >= link(hi)) return hi;
    return numerics::brent_root([&](double y) { return link(y) - h; }, 0.0, hi, 1e-12);
}

void StagingScenario::validate() const {
    design.validate();
    if (mu.size() != design.n_fixed()) throw ValidationError("mu has the wrong length");
    if (chol.rows() != design.n_random() || chol.cols() != design.n_random() || chol(0, 0) != 1.0)
        throw ValidationError("Cholesky factor must be square with a unit first entry");
    validate_stages(stage);
    if (score.max_score < 2) throw ValidationError("score range is too small");
    if (score.eta.size() != static_cast<Eigen::Index>(score.knots.size()) + 3)
        throw ValidationError("score link needs one coefficient per I-spline");
    if (!(score.sd > 0.0)) throw ValidationError("score error SD must be positive");
    if (cause_params.size() != causes.size()) throw ValidationError("one parameter vector per cause is required");
    if (n_patients < 1) throw ValidationError("scenario needs at least one patient");
    validate_schedule(schedule);
}

SimulatedCohort simulate_staging_cohort(const StagingScenario& s) {
    s.validate();
    std::vector<CauseTruth> causes;
    for (std::size_t c = 0; c < s.causes.size(); ++c)
        causes.push_back(cause_truth(s.causes[c], s.schedule.event_cap, s.cause_params[c], s.design.n_random()));
    const auto basis = time_basis(s.design);
    SimulatedCohort out;
    auto& data = out.data;
    data.scale.items = {{s.score_item, s.score.max_score}};
    for (const auto& c : s.covariates) data.covariate_names.push_back(c.name);
    data.n_stages = s.stage.n_stages();
    data.n_causes = static_cast<int>(s.causes.size());
    const int width = static_cast<int>(std::to_string(s.n_patients).size());
    for (int i = 0; i < s.n_patients; ++i) {
        numerics::Rng rng(numerics::derive_seed(s.seed, static_cast<std::uint64_t>(i)));
        core::PatientRecord p;
        std::string num = std::to_string(i + 1);
        p.id = "S" + std::string(width - num.size(), '0') + num;
        p.covariates = draw_covariates(s.covariates, rng);
        VectorXd u(s.design.n_random());
        for (Eigen::Index a = 0; a < u.size(); ++a) u(a) = rng.normal();
        const LatentPath path(s.design, basis, p.covariates, s.mu, s.chol * u);
        std::vector<double> wg;
        for (std::size_t c = 0; c < causes.size(); ++c) {
            double v = 0.0;
            for (std::size_t j = 0; j < s.causes[c].covariates.size(); ++j)
                v += causes[c].gamma(static_cast<Eigen::Index>(j)) * p.covariates.at(s.causes[c].covariates[j]);
            wg.push_back(v);
        }
        const auto ev = draw_event(causes, wg, path, s.schedule, rng, out.inversion_residuals);
        p.event_time = ev.time;
        p.event_cause = ev.cause;
        for (double t : visit_times(s.schedule, ev.time, rng)) {
            core::Visit v;
            v.time = t;
            const double omega = path(t);
            v.stage = draw_stage(s.stage, omega, rng);
            const double y = s.score.inverse(omega + s.score.sd * rng.normal());
            v.responses = {static_cast<int>(std::lround(y))};
            p.visits.push_back(std::move(v));
        }
        data.patients.push_back(std::move(p));
    }
    data.validate();
    out.truth = {{"kind", "staging_truth"},
                 {"design", s.design},
                 {"mu", sequencing::vector_json(s.mu)},
                 {"chol", sequencing::matrix_json(s.chol)},
                 {"stage_thresholds", sequencing::vector_json(s.stage.thresholds)},
                 {"stage_sd", s.stage.sd},
                 {"score_knots", s.score.knots},
                 {"score_eta0", s.score.eta0},
                 {"score_eta", sequencing::vector_json(s.score.eta)},
                 {"score_sd", s.score.sd},
                 {"seed", s.seed}};
    return out;
}

// ---------------------------------------------------------------------------
// Recovery

namespace {

ParameterGroup group_of(const std::string& name) {
    if (name.rfind("beta:", 0) == 0) return ParameterGroup::Beta;
    if (name.find(":alpha") != std::string::npos) return ParameterGroup::Alpha;
    if (name.size() > 7 && name.compare(name.size() - 7, 7, ":log_sd") == 0) return ParameterGroup::Sigma;
    return ParameterGroup::Other;
}

double median(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string to_string(ParameterGroup g) {
    switch (g) {
        case ParameterGroup::Beta: return "beta";
        case ParameterGroup::Alpha: return "alpha";
        case ParameterGroup::Sigma: return "sigma";
        case ParameterGroup::Other: return "other";
    }
    return "";
}

double RecoveryReport::median_abs_relative_bias(ParameterGroup group) const {
    std::vector<double> v;
    for (const auto& p : parameters)
        if (p.group == group && std::isfinite(p.median_relative_bias)) v.push_back(std::abs(p.median_relative_bias));
    return median(v);
}

double RecoveryReport::pooled_coverage(const std::vector<ParameterGroup>& groups) const {
    double hit = 0.0, total = 0.0;
    for (const auto& p : parameters)
        if (std::find(groups.begin(), groups.end(), p.group) != groups.end()) {
            hit += p.coverage * p.n;
            total += p.n;
        }
    return total > 0 ? hit / total : kNaN;
}

RecoveryReport recovery_harness(const SimScenario& scenario, const RecoveryOptions& options) {
    scenario.validate();
    if (options.seeds < 1) throw ValidationError("recovery needs at least one seed");
    const auto layout = truth_layout(scenario);
    std::vector<SeedFit> fits(static_cast<std::size_t>(options.seeds));
    std::vector<std::optional<sequencing::JlpmFit>> full(fits.size());
    numerics::parallel_for(fits.size(), options.threads, [&](std::size_t s) {
        auto scn = scenario;
        scn.seed = numerics::derive_seed(scenario.seed, s);
        fits[s].seed = scn.seed;
        try {
            const auto sim = simulate_cohort(scn);
            auto f = sequencing::fit(scn.spec, sim.data);
            fits[s].converged = f.estimates.converged && f.names == layout.names;
            fits[s].status = f.names == layout.names ? f.estimates.status : "unobserved item level";
            fits[s].theta = f.estimates.theta;
            fits[s].se = f.estimates.se;
            if (options.keep_fits) full[s] = std::move(f);
        } catch (const Error& e) {
            fits[s].status = std::string("failed: ") + e.what();
        }
    });

    RecoveryReport r;
    r.seeds = options.seeds;
    for (std::size_t s = 0; s < fits.size(); ++s) {
        if (fits[s].converged) {
            ++r.converged;
            if (full[s]) r.full_fits.push_back(std::move(*full[s]));
        } else {
            r.failed_seeds.push_back(fits[s].seed);
        }
    }
    for (std::size_t i = 0; i < layout.names.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        ParameterRecovery pr;
        pr.name = layout.names[i];
        pr.group = group_of(pr.name);
        const bool log_scale = pr.group == ParameterGroup::Sigma;
        const double raw_truth = scenario.theta(ii);
        pr.truth = log_scale ? std::exp(raw_truth) : raw_truth;
        std::vector<double> est, rel, se;
        int covered = 0;
        for (const auto& f : fits) {
            if (!f.converged) continue;
            const double raw = f.theta(ii);
            const double e = log_scale ? std::exp(raw) : raw;
            est.push_back(e);
            rel.push_back(pr.truth != 0.0 ? (e - pr.truth) / std::abs(pr.truth) : kNaN);
            se.push_back(log_scale ? e * f.se(ii) : f.se(ii));
            if (std::isfinite(f.se(ii)) && std::abs(raw - raw_truth) <= 1.959963984540054 * f.se(ii)) ++covered;
        }
        pr.n = static_cast<int>(est.size());
        if (pr.n > 0) {
            const VectorXd e = Eigen::Map<VectorXd>(est.data(), pr.n);
            pr.mean_estimate = e.mean();
            pr.empirical_se = pr.n > 1 ? std::sqrt((e.array() - pr.mean_estimate).square().sum() / (pr.n - 1)) : kNaN;
            double sum = 0.0;
            for (double v : se) sum += v;
            pr.mean_model_se = sum / pr.n;
            pr.median_relative_bias = median(rel);
            pr.coverage = static_cast<double>(covered) / pr.n;
        } else {
            pr.mean_estimate = pr.empirical_se = pr.mean_model_se = pr.median_relative_bias = pr.coverage = kNaN;
        }
        r.parameters.push_back(pr);
    }
    r.fits = std::move(fits);
    return r;
}

nlohmann::json to_json(const RecoveryReport& r) {
    nlohmann::json params = nlohmann::json::array();
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (const auto& p : r.parameters)
        params.push_back({{"name", p.name},
                          {"group", to_string(p.group)},
                          {"truth", num(p.truth)},
                          {"mean_estimate", num(p.mean_estimate)},
                          {"median_relative_bias", num(p.median_relative_bias)},
                          {"empirical_se", num(p.empirical_se)},
                          {"mean_model_se", num(p.mean_model_se)},
                          {"coverage", num(p.coverage)},
                          {"n", p.n}});
    nlohmann::json fits = nlohmann::json::array();
    for (const auto& f : r.fits)
        fits.push_back({{"seed", f.seed},
                        {"converged", f.converged},
                        {"status", f.status},
                        {"theta", sequencing::vector_json(f.theta)},
                        {"se", sequencing::vector_json(f.se)}});
    return {{"seeds", r.seeds},
            {"converged", r.converged},
            {"failed_seeds", r.failed_seeds},
            {"parameters", params},
            {"summary",
             {{"median_abs_relative_bias_beta", num(r.median_abs_relative_bias(ParameterGroup::Beta))},
              {"median_abs_relative_bias_alpha", num(r.median_abs_relative_bias(ParameterGroup::Alpha))},
              {"median_abs_relative_bias_sigma", num(r.median_abs_relative_bias(ParameterGroup::Sigma))},
              {"coverage_beta_alpha_sigma",
               num(r.pooled_coverage({ParameterGroup::Beta, ParameterGroup::Alpha, ParameterGroup::Sigma}))}}},
            {"fits", fits}};
}

std::string recovery_csv(const RecoveryReport& r) {
    using core::format_number;
    std::string out = core::format_csv_row({"parameter", "group", "truth", "mean_estimate", "median_relative_bias",
                                            "empirical_se", "mean_model_se", "coverage", "n"});
    for (const auto& p : r.parameters)
        out += core::format_csv_row({p.name, to_string(p.group), format_number(p.truth), format_number(p.mean_estimate),
                                     format_number(p.median_relative_bias), format_number(p.empirical_se),
                                     format_number(p.mean_model_se), format_number(p.coverage), std::to_string(p.n)});
    return out;
}

// ---------------------------------------------------------------------------
// Scenario JSON

void to_json(nlohmann::json& j, const CovariateSpec& c) {
    j = {{"name", c.name}, {"distribution", c.distribution}};
    if (c.distribution == "bernoulli")
        j["p"] = c.p;
    else {
        j["mean"] = c.mean;
        j["sd"] = c.sd;
    }
}

void from_json(const nlohmann::json& j, CovariateSpec& c) {
    j.at("name").get_to(c.name);
    c.distribution = j.value("distribution", std::string("bernoulli"));
    c.p = j.value("p", c.p);
    c.mean = j.value("mean", c.mean);
    c.sd = j.value("sd", c.sd);
}

void to_json(nlohmann::json& j, const VisitSchedule& s) {
    j = {{"interval", s.interval},
         {"jitter", s.jitter},
         {"censor_time", s.censor_time},
         {"event_cap", s.event_cap},
         {"missing_rate", s.missing_rate}};
}

void from_json(const nlohmann::json& j, VisitSchedule& s) {
    s.interval = j.value("interval", s.interval);
    s.jitter = j.value("jitter", s.jitter);
    s.censor_time = j.value("censor_time", s.censor_time);
    s.event_cap = j.value("event_cap", s.event_cap);
    s.missing_rate = j.value("missing_rate", s.missing_rate);
}

void to_json(nlohmann::json& j, const SimScenario& s) {
    const auto layout = truth_layout(s);
    nlohmann::json truth = nlohmann::json::object();
    for (std::size_t i = 0; i < layout.names.size(); ++i) truth[layout.names[i]] = s.theta(static_cast<Eigen::Index>(i));
    j = {{"scale", s.scale.items},
         {"spec", s.spec},
         {"truth", truth},
         {"covariates", s.covariates},
         {"n_patients", s.n_patients},
         {"schedule", s.schedule},
         {"seed", s.seed}};
    if (s.stages)
        j["stages"] = {{"thresholds", sequencing::vector_json(s.stages->thresholds)}, {"sd", s.stages->sd}};
}

void from_json(const nlohmann::json& j, SimScenario& s) {
    j.at("scale").get_to(s.scale.items);
    j.at("spec").get_to(s.spec);
    s.covariates = j.value("covariates", std::vector<CovariateSpec>{});
    s.n_patients = j.value("n_patients", s.n_patients);
    if (j.contains("schedule")) j.at("schedule").get_to(s.schedule);
    s.seed = j.value("seed", s.seed);
    if (j.contains("stages")) {
        StageGenerator g;
        g.thresholds = sequencing::vector_from_json(j.at("stages").at("thresholds"));
        g.sd = j.at("stages").value("sd", 1.0);
        s.stages = g;
    }
    const auto layout = truth_layout(s);
    const auto& truth = j.at("truth");
    s.theta.resize(static_cast<Eigen::Index>(layout.names.size()));
    for (std::size_t i = 0; i < layout.names.size(); ++i) {
        if (!truth.contains(layout.names[i]))
            throw ValidationError("scenario truth is missing parameter '" + layout.names[i] + "'");
        s.theta(static_cast<Eigen::Index>(i)) = truth.at(layout.names[i]).get<double>();
    }
    s.validate();
}

}  // namespace fours::simulation
