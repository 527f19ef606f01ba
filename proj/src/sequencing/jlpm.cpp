#include "fours/sequencing/jlpm.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/core/json_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/sobol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace fours::sequencing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kMinIncrement = 0.1;
constexpr double kRandomSlopeStart = 0.3;

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

LatentDesign resolve_design(const JlpmSpec& spec, const core::CohortDataset& data) {
    LatentDesign d;
    d.time_horizon = spec.time_horizon ? *spec.time_horizon : max_follow_up(data);
    if (!(d.time_horizon > 0.0)) throw ValidationError("follow-up range is empty");
    std::vector<double> knots = spec.time_knots ? *spec.time_knots : visit_time_knots(data, spec.n_time_knots);
    for (double k : knots)
        if (k > 0.0 && k < d.time_horizon) d.time_knots.push_back(k);
    d.covariates = spec.covariates;
    d.time_interactions = spec.time_interactions;
    d.random_time_columns = spec.random_time_columns;
    d.diagonal_random = spec.diagonal_random;
    d.validate();
    return d;
}

}  // namespace

ModelStructure build_structure(const LatentDesign& design, const std::vector<std::string>& items,
                               const std::vector<std::vector<int>>& levels, const std::vector<HazardSpec>& causes,
                               double hazard_horizon) {
    ModelStructure s;
    s.n_fixed = design.n_fixed();
    s.n_random = design.n_random();
    s.diagonal_random = design.diagonal_random;
    for (std::size_t k = 0; k < items.size(); ++k) {
        OutcomeModel o;
        o.kind = OutcomeModel::Kind::Ordinal;
        o.name = items[k];
        o.max_level = static_cast<int>(levels[k].size()) - 1;
        s.outcomes.push_back(o);
    }
    for (const auto& c : causes) s.causes.push_back(cause_model(c, hazard_horizon));
    s.validate();
    return s;
}

std::vector<std::string> parameter_names(const LatentDesign& design, const ModelStructure& s,
                                         const std::vector<std::string>& items, const std::vector<HazardSpec>& causes) {
    std::vector<std::string> names;
    for (const auto& n : design.fixed_names()) names.push_back("beta:" + n);
    const auto rn = design.random_names();
    for (const auto& [a, b] : s.chol_entries()) names.push_back("chol:" + rn[a] + ":" + rn[b]);
    for (std::size_t k = 0; k < items.size(); ++k) {
        for (int m = 1; m <= s.outcomes[k].max_level; ++m) names.push_back("item:" + items[k] + ":eta" + std::to_string(m));
        names.push_back("item:" + items[k] + ":log_sd");
    }
    for (std::size_t c = 0; c < causes.size(); ++c)
        for (const auto& n : cause_param_names(causes[c], static_cast<int>(c) + 1, s.n_random)) names.push_back(n);
    return names;
}

LatentDesign explicit_design(const JlpmSpec& spec) {
    if (!spec.time_horizon) throw ValidationError("the time horizon must be given explicitly");
    if (!spec.time_knots && spec.n_time_knots > 0) throw ValidationError("time knots must be given explicitly");
    LatentDesign d;
    d.time_horizon = *spec.time_horizon;
    if (spec.time_knots) d.time_knots = *spec.time_knots;
    d.covariates = spec.covariates;
    d.time_interactions = spec.time_interactions;
    d.random_time_columns = spec.random_time_columns;
    d.diagonal_random = spec.diagonal_random;
    d.validate();
    return d;
}

namespace {

std::vector<std::string> dimension_items(const JlpmSpec& spec) { return spec.subdimension.items; }

}  // namespace

void JlpmSpec::validate() const {
    if (subdimension.items.empty()) throw ValidationError("subdimension '" + subdimension.name + "' has no items");
    if (n_time_knots < 0) throw ValidationError("negative number of time knots");
    if (causes.empty()) throw ValidationError("at least one event cause is required");
    if (qmc_points < 0) throw ValidationError("QMC point count must be nonnegative");
    if (threads < 1) throw ValidationError("threads must be positive");
    if (time_horizon && !(*time_horizon > 0.0)) throw ValidationError("time horizon must be positive");
    if (random_time_columns.size() + 1 > 10) throw ValidationError("at most 10 random effects are supported");
    optimizer.validate();
}

std::size_t MeasurementParams::index_of(const std::string& item) const {
    for (std::size_t k = 0; k < items.size(); ++k)
        if (items[k].item == item) return k;
    throw ValidationError("unknown item '" + item + "'");
}

double item_level_probability(const MeasurementParams& meas, std::size_t item, int level, double delta) {
    const auto& it = meas.items.at(item);
    if (level < 0 || level > it.max_level)
        throw DomainError("level " + std::to_string(level) + " outside item '" + it.item + "'");
    const auto pos = std::find(it.levels.begin(), it.levels.end(), level);
    if (pos == it.levels.end()) return 0.0;
    const auto j = pos - it.levels.begin();
    const double a = it.discrimination();
    const double lo = j == 0 ? -std::numeric_limits<double>::infinity() : a * (it.thresholds(j - 1) - delta);
    const double hi = j + 1 == static_cast<long>(it.levels.size()) ? std::numeric_limits<double>::infinity()
                                                                   : a * (it.thresholds(j) - delta);
    return numerics::normal_interval_probability(lo, hi);
}

double item_expected_level(const ItemMeasurement& item, double delta) {
    const double a = item.discrimination();
    double e = item.levels.front();
    for (std::size_t j = 1; j < item.levels.size(); ++j)
        e += (item.levels[j] - item.levels[j - 1]) * numerics::normal_cdf(a * (delta - item.thresholds(j - 1)));
    return e;
}

JlpmProblem make_problem(const JlpmSpec& spec, const core::CohortDataset& data) {
    spec.validate();
    if (data.patients.empty()) throw EmptySampleError("no patients to fit");
    JlpmProblem pr;
    pr.spec = spec;
    pr.design = resolve_design(spec, data);
    const auto items = dimension_items(spec);
    std::vector<std::size_t> columns;
    for (const auto& id : items) columns.push_back(data.scale.index_of(id));

    for (std::size_t k = 0; k < items.size(); ++k) {
        std::set<int> seen;
        for (const auto& p : data.patients)
            for (const auto& v : p.visits)
                if (v.responses[columns[k]]) seen.insert(*v.responses[columns[k]]);
        if (seen.size() < 2)
            throw ValidationError("item '" + items[k] + "' has fewer than two observed levels");
        const int max_level = data.scale.items[columns[k]].max_level;
        pr.max_levels.push_back(max_level);
        for (int m = 0; m <= max_level; ++m)
            if (!seen.count(m))
                pr.warnings.push_back("item '" + items[k] + "': level " + std::to_string(m) +
                                      " is never observed; its thresholds are merged");
        pr.levels.emplace_back(seen.begin(), seen.end());
    }

    pr.structure = build_structure(pr.design, items, pr.levels, spec.causes, max_event_time(data));
    pr.names = parameter_names(pr.design, pr.structure, items, spec.causes);
    for (const auto& record : data.patients) {
        auto p = prepare_patient(record, pr.design, pr.structure, spec.causes);
        for (std::size_t j = 0; j < record.visits.size(); ++j)
            for (std::size_t k = 0; k < items.size(); ++k) {
                const auto& r = record.visits[j].responses[columns[k]];
                if (!r) continue;
                PreparedObservation ob;
                ob.visit = static_cast<int>(j);
                ob.outcome = static_cast<int>(k);
                ob.level = static_cast<int>(std::lower_bound(pr.levels[k].begin(), pr.levels[k].end(), *r) -
                                            pr.levels[k].begin());
                p.obs.push_back(std::move(ob));
            }
        pr.patients.push_back(std::move(p));
    }
    pr.event_rates = crude_event_rates(data, static_cast<int>(spec.causes.size()));
    return pr;
}

VectorXd start_values(const JlpmProblem& pr, const core::CohortDataset& data) {
    const auto& s = pr.structure;
    VectorXd theta = VectorXd::Zero(s.n_params());
    const auto entries = s.chol_entries();
    for (std::size_t e = 0; e < entries.size(); ++e)
        if (entries[e].first == entries[e].second) theta(s.n_fixed + static_cast<int>(e)) = kRandomSlopeStart;

    const auto items = pr.spec.subdimension.items;
    for (std::size_t k = 0; k < items.size(); ++k) {
        const auto col = data.scale.index_of(items[k]);
        const auto& lv = pr.levels[k];
        std::vector<double> counts(lv.size(), 0.0);
        double total = 0.0;
        for (const auto& p : data.patients)
            for (const auto& v : p.visits)
                if (const auto& r = v.responses[col]) {
                    counts[std::lower_bound(lv.begin(), lv.end(), *r) - lv.begin()] += 1.0;
                    total += 1.0;
                }
        // Marginal latent variance is about 2 (random intercept plus error).
        VectorXd delta(static_cast<Eigen::Index>(lv.size()) - 1);
        double cum = 0.0;
        for (Eigen::Index j = 0; j < delta.size(); ++j) {
            cum += counts[j];
            const double prob = std::clamp(cum / total, 1e-3, 1.0 - 1e-3);
            delta(j) = std::sqrt(2.0) * numerics::normal_quantile(prob);
            if (j > 0) delta(j) = std::max(delta(j), delta(j - 1) + kMinIncrement * kMinIncrement);
        }
        const int off = s.outcome_offset(k);
        theta.segment(off, delta.size()) = eta_from_thresholds(delta);
        theta(off + delta.size()) = 0.0;
    }
    for (std::size_t c = 0; c < s.causes.size(); ++c)
        theta.segment(s.cause_offset(c), s.causes[c].n_params(s.n_random)) =
            cause_start(pr.spec.causes[c], s.causes[c], s.n_random, pr.event_rates[c]);
    return theta;
}

JointModel joint_model(const JlpmProblem& pr) {
    const int q = qmc_count(pr.spec.qmc_points, pr.structure.n_random);
    return JointModel(pr.structure, pr.patients, numerics::sobol_normal(pr.structure.n_random, q), pr.spec.threads);
}

MeasurementParams measurement_from_theta(const ModelStructure& s, const std::vector<std::string>& items,
                                         const std::vector<int>& max_levels,
                                         const std::vector<std::vector<int>>& levels, const VectorXd& theta) {
    MeasurementParams m;
    for (std::size_t k = 0; k < items.size(); ++k) {
        ItemMeasurement it;
        it.item = items[k];
        it.max_level = max_levels[k];
        it.levels = levels[k];
        const int off = s.outcome_offset(k);
        const int M = s.outcomes[k].max_level;
        it.thresholds = thresholds_from_eta(theta.segment(off, M));
        it.sd = std::exp(theta(off + M));
        m.items.push_back(std::move(it));
    }
    return m;
}

MatrixXd JlpmFit::random_covariance() const {
    const MatrixXd L = structure.cholesky(estimates.theta);
    return L * L.transpose();
}

std::size_t JlpmFit::index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError("unknown parameter '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
}

double log_likelihood(const JlpmSpec& spec, const core::CohortDataset& data, const VectorXd& theta) {
    const auto pr = make_problem(spec, data);
    if (theta.size() != pr.structure.n_params())
        throw ValidationError("parameter vector has " + std::to_string(theta.size()) + " entries, model needs " +
                              std::to_string(pr.structure.n_params()));
    auto model = joint_model(pr);
    if (spec.adaptive) model.set_proposals(model.laplace_proposals(theta));
    const VectorXd ll = model.patient_log_likelihoods(theta);
    for (Eigen::Index i = 0; i < ll.size(); ++i)
        if (!std::isfinite(ll(i)))
            throw DomainError("non-finite log-likelihood contribution for patient '" + pr.patients[i].id + "'");
    return ll.sum();
}

JlpmFit fit_at(const JlpmProblem& pr, const VectorXd& theta) {
    JlpmFit f;
    f.spec = pr.spec;
    f.design = pr.design;
    f.structure = pr.structure;
    f.names = pr.names;
    f.estimates.theta = theta;
    f.estimates.se = VectorXd::Constant(theta.size(), std::numeric_limits<double>::quiet_NaN());
    f.n_patients = static_cast<int>(pr.patients.size());
    f.n_events.assign(pr.structure.causes.size(), 0);
    for (const auto& p : pr.patients) {
        f.n_visits += static_cast<int>(p.x.rows());
        if (p.cause > 0) ++f.n_events[p.cause - 1];
    }
    f.measurement = measurement_from_theta(pr.structure, pr.spec.subdimension.items, pr.max_levels, pr.levels, theta);
    f.qmc_points = qmc_count(pr.spec.qmc_points, pr.structure.n_random);
    f.warnings = pr.warnings;
    return f;
}

JlpmFit fit(const JlpmSpec& spec, const core::CohortDataset& data, const std::optional<VectorXd>& start) {
    const auto pr = make_problem(spec, data);
    const VectorXd theta0 = start ? *start : start_values(pr, data);
    auto est = estimate(pr.structure, pr.patients, theta0, qmc_count(spec.qmc_points, pr.structure.n_random),
                        spec.adaptive, spec.optimizer, spec.threads);
    auto f = fit_at(pr, est.theta);
    f.estimates = std::move(est);
    if (!f.estimates.se_available) f.warnings.push_back("Hessian is not negative definite; standard errors unavailable");
    return f;
}

Trajectory predict_item_trajectory(const JlpmFit& fit, const std::map<std::string, double>& profile,
                                   const std::vector<double>& times, int mc_draws) {
    if (mc_draws < 1) throw ValidationError("mc_draws must be positive");
    for (double t : times)
        if (!(t >= 0.0 && t <= fit.design.time_horizon))
            throw OutOfRangeError("time " + core::format_number(t) + " is outside the fitted range [0, " +
                                  core::format_number(fit.design.time_horizon) + "]");
    const auto& s = fit.structure;
    const VectorXd beta = fit.estimates.theta.head(s.n_fixed);
    const MatrixXd B = numerics::sobol_normal(s.n_random, mc_draws) * s.cholesky(fit.estimates.theta).transpose();
    Trajectory tr;
    tr.times = times;
    for (const auto& it : fit.measurement.items) tr.items.push_back(it.item);
    tr.expected = MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(tr.items.size()));
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double fixed = fit.design.x(times[i], profile).dot(beta);
        const VectorXd delta = (B * fit.design.z(times[i]).transpose()).array() + fixed;
        for (std::size_t k = 0; k < tr.items.size(); ++k) {
            double sum = 0.0;
            for (Eigen::Index q = 0; q < delta.size(); ++q) sum += item_expected_level(fit.measurement.items[k], delta(q));
            tr.expected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = sum / static_cast<double>(delta.size());
        }
    }
    return tr;
}

std::vector<Transition> impairment_sequence(const JlpmFit& fit) {
    const auto& s = fit.structure;
    const auto& th = fit.estimates.theta;
    const bool have_cov = fit.estimates.covariance.rows() == th.size();
    std::vector<Transition> out;
    for (std::size_t k = 0; k < fit.measurement.items.size(); ++k) {
        const auto& it = fit.measurement.items[k];
        const int off = s.outcome_offset(k);
        for (Eigen::Index j = 0; j < it.thresholds.size(); ++j) {
            Transition t;
            t.item = it.item;
            t.from_level = it.levels[j];
            t.to_level = it.levels[j + 1];
            t.location = it.thresholds(j);
            t.se = std::numeric_limits<double>::quiet_NaN();
            if (have_cov) {
                VectorXd g = VectorXd::Zero(j + 1);
                g(0) = 1.0;
                for (Eigen::Index l = 1; l <= j; ++l) g(l) = 2.0 * th(off + l);
                const MatrixXd V = fit.estimates.covariance.block(off, off, j + 1, j + 1);
                t.se = std::sqrt(std::max(g.dot(V * g), 0.0));
            }
            out.push_back(t);
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Transition& a, const Transition& b) { return a.location < b.location; });
    return out;
}

std::string sequence_csv(const std::vector<Transition>& sequence) {
    std::string out = core::format_csv_row({"order", "item", "from_level", "to_level", "location", "se"});
    int order = 1;
    for (const auto& t : sequence)
        out += core::format_csv_row({std::to_string(order++), t.item, std::to_string(t.from_level),
                                     std::to_string(t.to_level), core::format_number(t.location),
                                     core::format_number(t.se)});
    return out;
}

std::string trajectory_csv(const Trajectory& tr) {
    std::string out = core::format_csv_row({"time", "item", "expected_level"});
    for (std::size_t i = 0; i < tr.times.size(); ++i)
        for (std::size_t k = 0; k < tr.items.size(); ++k)
            out += core::format_csv_row({core::format_number(tr.times[i]), tr.items[k],
                                         core::format_number(tr.expected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)))});
    return out;
}

std::string estimates_csv(const JlpmFit& fit) { return estimates_table(fit.names, fit.estimates); }

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const HazardSpec& s) {
    j = {{"baseline", to_string(s.baseline)},
         {"knots", s.knots},
         {"covariates", s.covariates},
         {"association", to_string(s.association)}};
}

void from_json(const nlohmann::json& j, HazardSpec& s) {
    s.baseline = parse_baseline(j.value("baseline", std::string("weibull")));
    s.knots = j.value("knots", std::vector<double>{});
    s.covariates = j.value("covariates", std::vector<std::string>{});
    s.association = parse_association(j.value("association", std::string("current_value")));
}

void to_json(nlohmann::json& j, const JlpmSpec& s) {
    j = {{"subdimension", s.subdimension},
         {"n_time_knots", s.n_time_knots},
         {"covariates", s.covariates},
         {"time_interactions", s.time_interactions},
         {"random_time_columns", s.random_time_columns},
         {"diagonal_random", s.diagonal_random},
         {"causes", s.causes},
         {"qmc_points", s.qmc_points},
         {"adaptive", s.adaptive},
         {"optimizer", s.optimizer}};
    if (s.time_knots) j["time_knots"] = *s.time_knots;
    if (s.time_horizon) j["time_horizon"] = *s.time_horizon;
}

void from_json(const nlohmann::json& j, JlpmSpec& s) {
    j.at("subdimension").get_to(s.subdimension);
    s.n_time_knots = j.value("n_time_knots", s.n_time_knots);
    if (j.contains("time_knots")) s.time_knots = j.at("time_knots").get<std::vector<double>>();
    if (j.contains("time_horizon")) s.time_horizon = j.at("time_horizon").get<double>();
    s.covariates = j.value("covariates", std::vector<std::string>{});
    s.time_interactions = j.value("time_interactions", std::vector<std::string>{});
    s.random_time_columns = j.value("random_time_columns", s.random_time_columns);
    s.diagonal_random = j.value("diagonal_random", s.diagonal_random);
    if (j.contains("causes")) j.at("causes").get_to(s.causes);
    s.qmc_points = j.value("qmc_points", s.qmc_points);
    s.adaptive = j.value("adaptive", s.adaptive);
    if (j.contains("optimizer")) j.at("optimizer").get_to(s.optimizer);
    s.validate();
}

void to_json(nlohmann::json& j, const Estimates& e) {
    j = {{"theta", vector_json(e.theta)},
         {"se", vector_json(e.se)},
         {"covariance", matrix_json(e.covariance)},
         {"log_likelihood", e.log_likelihood},
         {"se_available", e.se_available},
         {"converged", e.converged},
         {"param_converged", e.param_converged},
         {"objective_converged", e.objective_converged},
         {"rdm_converged", e.rdm_converged},
         {"iterations", e.iterations},
         {"rdm", std::isfinite(e.rdm) ? nlohmann::json(e.rdm) : nlohmann::json(nullptr)},
         {"status", e.status}};
}

void from_json(const nlohmann::json& j, Estimates& e) {
    e.theta = vector_from_json(j.at("theta"));
    e.se = vector_from_json(j.at("se"));
    e.covariance = matrix_from_json(j.at("covariance"));
    e.log_likelihood = j.at("log_likelihood").is_null() ? -std::numeric_limits<double>::infinity()
                                                          : j.at("log_likelihood").get<double>();
    e.se_available = j.at("se_available").get<bool>();
    e.converged = j.at("converged").get<bool>();
    e.param_converged = j.at("param_converged").get<bool>();
    e.objective_converged = j.at("objective_converged").get<bool>();
    e.rdm_converged = j.at("rdm_converged").get<bool>();
    e.iterations = j.at("iterations").get<int>();
    e.rdm = j.at("rdm").is_null() ? std::numeric_limits<double>::infinity() : j.at("rdm").get<double>();
    e.status = j.at("status").get<std::string>();
}

nlohmann::json fit_to_json(const JlpmFit& f) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : f.measurement.items)
        items.push_back({{"item", it.item},
                         {"max_level", it.max_level},
                         {"levels", it.levels},
                         {"thresholds", vector_json(it.thresholds)},
                         {"sd", it.sd}});
    nlohmann::json causes = nlohmann::json::array();
    for (const auto& c : f.structure.causes) causes.push_back({{"horizon", c.horizon}});
    return {{"kind", "jlpm"},
            {"spec", f.spec},
            {"design", f.design},
            {"hazard_horizon", f.structure.causes.empty() ? 0.0 : f.structure.causes.front().horizon},
            {"names", f.names},
            {"estimates", f.estimates},
            {"measurement", items},
            {"random_covariance", matrix_json(f.random_covariance())},
            {"n_patients", f.n_patients},
            {"n_visits", f.n_visits},
            {"n_events", f.n_events},
            {"qmc_points", f.qmc_points},
            {"warnings", f.warnings}};
}

JlpmFit fit_from_json(const nlohmann::json& j) {
    if (j.value("kind", std::string()) != "jlpm") throw ValidationError("not a sequencing fit");
    JlpmFit f;
    j.at("spec").get_to(f.spec);
    j.at("design").get_to(f.design);
    j.at("names").get_to(f.names);
    j.at("estimates").get_to(f.estimates);
    std::vector<std::vector<int>> levels;
    std::vector<int> max_levels;
    for (const auto& it : j.at("measurement")) {
        levels.push_back(it.at("levels").get<std::vector<int>>());
        max_levels.push_back(it.at("max_level").get<int>());
    }
    f.structure = build_structure(f.design, f.spec.subdimension.items, levels, f.spec.causes,
                                  j.at("hazard_horizon").get<double>());
    if (f.estimates.theta.size() != f.structure.n_params() || f.names.size() != static_cast<std::size_t>(f.estimates.theta.size()))
        throw ValidationError("fit parameters do not match its specification");
    f.measurement = measurement_from_theta(f.structure, f.spec.subdimension.items, max_levels, levels, f.estimates.theta);
    f.n_patients = j.at("n_patients").get<int>();
    f.n_visits = j.at("n_visits").get<int>();
    j.at("n_events").get_to(f.n_events);
    f.qmc_points = j.at("qmc_points").get<int>();
    j.at("warnings").get_to(f.warnings);
    return f;
}

}  // namespace fours::sequencing
