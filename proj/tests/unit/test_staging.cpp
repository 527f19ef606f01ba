#include "doctest.h"
#include "oracles.hpp"

#include "fours/errors.hpp"
#include "fours/numerics/sobol.hpp"
#include "fours/staging/staging.hpp"
#include "scenarios.hpp"

#include <algorithm>
#include <cmath>

using namespace fours::staging;
using Eigen::VectorXd;

namespace {

StagingSpec spec_for(const fours::simulation::StagingScenario& s, LinkKind link) {
    StagingSpec spec;
    spec.subdimension = {"total", {s.score_item}};
    spec.time_knots = s.design.time_knots;
    spec.time_horizon = s.design.time_horizon;
    spec.random_time_columns = s.design.random_time_columns;
    spec.link = link;
    spec.causes = s.causes;
    return spec;
}

// Two stages, linear link, random intercept only.
fours::simulation::StagingScenario two_stage(std::uint64_t seed, int n) {
    auto s = scenario::staging(seed, n);
    s.stage.thresholds = VectorXd::Constant(1, 1.5);
    return s;
}

// mu(2), stage eta1 and log sd, score eta0, eta1 and log sd, Weibull xi1, xi2.
VectorXd linear_theta() {
    VectorXd t(9);
    t << 2.0, 1.0, 1.5, std::log(0.7), -2.0, 2.5, std::log(0.6), 0.3, 1.2;
    return t;
}

// Per-patient log-likelihood by adaptive Gauss-Hermite over the intercept.
std::vector<double> linear_oracle(const StagingProblem& pr, const fours::core::CohortDataset& data, const VectorXd& t) {
    const double omega = t(2), stage_sd = std::exp(t(3));
    const double eta0 = t(4), c = t(5) * t(5), score_sd = std::exp(t(6));
    const double lo = pr.link.lower, width = pr.link.upper - pr.link.lower;
    const double z1 = t(7) * t(7), z2 = t(8) * t(8);
    std::vector<double> out;
    for (const auto& rec : data.patients) {
        const auto log_g = [&](double b) {
            double s = 0.0;
            for (const auto& v : rec.visits) {
                const double lambda = pr.design.x(v.time, rec.covariates).dot(t.head(2)) + b;
                if (v.stage) {
                    const double p = oracle::phi_cdf((omega - lambda) / stage_sd);
                    s += std::log(*v.stage == 1 ? p : 1.0 - p);
                }
                if (v.responses[0]) {
                    const double h = eta0 + c * (*v.responses[0] - lo) / width;
                    s += std::log(oracle::phi_pdf((h - lambda) / score_sd) / score_sd * c / width);
                }
            }
            return s;
        };
        const double T = rec.event_time;
        double surv = -std::pow(z1 * T, z2);
        if (rec.event_cause == 1) surv += std::log(z1 * z2) + (z2 - 1.0) * std::log(z1 * T);
        out.push_back(oracle::log_expect_normal(log_g, 40) + surv);
    }
    return out;
}

fours::sequencing::JlpmFit items_fit(const std::vector<std::pair<VectorXd, double>>& items) {
    fours::sequencing::JlpmFit f;
    f.spec.subdimension.name = "dim";
    for (std::size_t k = 0; k < items.size(); ++k) {
        fours::sequencing::ItemMeasurement m;
        m.item = "i" + std::to_string(k + 1);
        m.max_level = static_cast<int>(items[k].first.size());
        for (int l = 0; l <= m.max_level; ++l) m.levels.push_back(l);
        m.thresholds = items[k].first;
        m.sd = items[k].second;
        f.spec.subdimension.items.push_back(m.item);
        f.measurement.items.push_back(m);
    }
    return f;
}

// Five 0..4 items, the range of the simulated score.
fours::sequencing::JlpmFit twenty_point_fit() {
    std::vector<std::pair<VectorXd, double>> items;
    for (int k = 0; k < 5; ++k) items.push_back({Eigen::Vector4d(-2.0, 0.0, 2.0, 4.0).array() + 0.5 * k, 1.0});
    return items_fit(items);
}

// Closed form of E[clamp(X, a, b)] for X ~ N(m, s^2).
double clamped_normal_mean(double m, double s, double a, double b) {
    const double al = (a - m) / s, be = (b - m) / s;
    return a * oracle::phi_cdf(al) + b * (1.0 - oracle::phi_cdf(be)) +
           m * (oracle::phi_cdf(be) - oracle::phi_cdf(al)) + s * (oracle::phi_pdf(al) - oracle::phi_pdf(be));
}

}  // namespace

TEST_CASE("reduced staging model matches Gauss-Hermite quadrature per patient") {
    const auto scn = two_stage(3, 60);
    auto data = fours::simulation::simulate_staging_cohort(scn).data;
    const auto spec = spec_for(scn, LinkKind::Linear);

    SUBCASE("all terms present") {}
    SUBCASE("missing stage and score observations drop their terms") {
        for (auto& p : data.patients)
            for (std::size_t j = 0; j < p.visits.size(); ++j) {
                if (j % 2 == 1) p.visits[j].stage.reset();
                if (j % 3 == 2) p.visits[j].responses[0].reset();
            }
    }

    const auto pr = make_staging_problem(spec, data);
    REQUIRE(pr.structure.n_params() == 9);
    const VectorXd theta = linear_theta();
    fours::sequencing::JointModel model(pr.structure, pr.patients,
                                        fours::numerics::sobol_normal(1, fours::sequencing::qmc_count(0, 1)));
    model.set_proposals(model.laplace_proposals(theta));
    const VectorXd ll = model.patient_log_likelihoods(theta);
    const auto expected = linear_oracle(pr, data, theta);
    double total = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        INFO("patient " << data.patients[i].id);
        CHECK(std::abs(ll(static_cast<Eigen::Index>(i)) - expected[i]) <= 1e-3);
        total += expected[i];
    }
    CHECK(staging_log_likelihood(spec, data, theta) == doctest::Approx(total).epsilon(1e-6));
}

TEST_CASE("score link is monotone and inverts on its range") {
    const auto scn = scenario::staging(5, 80);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    const auto pr = make_staging_problem(spec_for(scn, LinkKind::ISpline), data);
    CHECK(pr.link.size() == 8);
    const auto fit = staging_fit_at(pr, staging_start_values(pr, data));
    double prev = -std::numeric_limits<double>::infinity();
    for (int g = 0; g <= 1000; ++g) {
        const double y = pr.link.lower + (pr.link.upper - pr.link.lower) * g / 1000.0;
        const double h = fit.link_value(y);
        CHECK(h >= prev);
        prev = h;
        CHECK(fit.link_inverse(h) == doctest::Approx(y).epsilon(1e-9));
    }
    CHECK(fit.link_inverse(fit.link_value(pr.link.lower) - 5.0) == pr.link.lower);
    CHECK(fit.link_inverse(fit.link_value(pr.link.upper) + 5.0) == pr.link.upper);
}

TEST_CASE("sum-score equivalent without score error is the inverse link at the threshold") {
    const auto scn = scenario::staging(5, 80);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    const auto pr = make_staging_problem(spec_for(scn, LinkKind::ISpline), data);
    VectorXd theta = staging_start_values(pr, data);
    theta(pr.structure.outcome_offset(1) + pr.link.size() + 1) = -60.0;
    const auto fit = staging_fit_at(pr, theta);
    for (int s = 2; s <= 3; ++s) {
        const auto eq = stage_sum_score_equivalent(fit, s, 500);
        CHECK(eq.value == doctest::Approx(fit.link_inverse(fit.omega(s))).epsilon(1e-12));
        CHECK(eq.clamp_rate == 0.0);
    }
}

TEST_CASE("linear link equivalent equals the clamped normal mean") {
    const auto scn = two_stage(3, 60);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    const auto pr = make_staging_problem(spec_for(scn, LinkKind::Linear), data);
    VectorXd theta = linear_theta();
    theta(6) = std::log(1.5);
    const auto fit = staging_fit_at(pr, theta);
    const double lo = pr.link.lower, hi = pr.link.upper;
    const double slope = (hi - lo) / (theta(5) * theta(5));
    // score = lo + slope (omega + e - eta0), e ~ N(0, 1.5^2), clamped to [lo, hi]
    const double m = lo + slope * (fit.omega(2) - theta(4));
    const double sd = slope * 1.5;
    const auto eq = stage_sum_score_equivalent(fit, 2, 20000);
    CHECK(std::abs(eq.value - clamped_normal_mean(m, sd, lo, hi)) <= 1e-3 * (hi - lo));
    const double outside = oracle::phi_cdf((lo - m) / sd) + 1.0 - oracle::phi_cdf((hi - m) / sd);
    CHECK(eq.clamp_rate == doctest::Approx(outside).epsilon(1e-3));
}

TEST_CASE("doubling the equivalent draws barely moves it") {
    const auto scn = scenario::staging(5, 80);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    const auto pr = make_staging_problem(spec_for(scn, LinkKind::ISpline), data);
    const auto fit = staging_fit_at(pr, staging_start_values(pr, data));
    for (int s = 2; s <= 3; ++s)
        CHECK(std::abs(stage_sum_score_equivalent(fit, s, 2000).value - stage_sum_score_equivalent(fit, s, 4000).value) <=
              0.05);
}

TEST_CASE("projection inverts the expected sum-score") {
    SUBCASE("symmetric items project the midpoint to zero") {
        const auto f = items_fit({{Eigen::Vector2d(-1.0, 1.0), 0.8}, {Eigen::Vector3d(-2.0, 0.0, 2.0), 1.3}});
        const auto p = project_stage_thresholds(f, {2.5});
        REQUIRE(p.transitions.size() == 1);
        CHECK(p.transitions[0].stage == 2);
        CHECK(std::isnan(p.transitions[0].omega));
        CHECK(std::abs(p.transitions[0].delta) <= 1e-10);
    }
    SUBCASE("single binary item projects one half to its threshold") {
        const auto f = items_fit({{VectorXd::Constant(1, 0.5), 0.9}});
        CHECK(project_stage_thresholds(f, {0.5}).transitions[0].delta == doctest::Approx(0.5).epsilon(1e-10));
    }
    SUBCASE("shifting every threshold shifts the projection") {
        const auto f = items_fit({{Eigen::Vector3d(-1.0, 0.2, 1.4), 0.7}, {Eigen::Vector2d(0.3, 0.9), 1.1}});
        const double c = 1.75;
        auto g = f;
        for (auto& it : g.measurement.items) it.thresholds.array() += c;
        const std::vector<double> eq{0.7, 2.1, 3.9};
        const auto a = project_stage_thresholds(f, eq), b = project_stage_thresholds(g, eq);
        for (std::size_t i = 0; i < eq.size(); ++i)
            CHECK(b.transitions[i].delta - a.transitions[i].delta == doctest::Approx(c).epsilon(1e-9));
    }
    SUBCASE("roots reproduce the equivalents and increase with them") {
        const auto f = items_fit({{Eigen::Vector3d(-1.0, 0.2, 1.4), 0.7}, {Eigen::Vector2d(0.3, 0.9), 1.1}});
        const std::vector<double> eq{0.01, 0.5, 2.5, 4.99};
        const auto p = project_stage_thresholds(f, eq);
        for (std::size_t i = 0; i < eq.size(); ++i) {
            CHECK(std::abs(expected_sum_score(f, p.transitions[i].delta) - eq[i]) <= 1e-8);
            if (i > 0) CHECK(p.transitions[i].delta > p.transitions[i - 1].delta);
        }
    }
    SUBCASE("equivalents outside the attainable range name the stage") {
        const auto f = items_fit({{Eigen::Vector2d(-1.0, 1.0), 0.8}});
        CHECK_THROWS_WITH_AS(project_stage_thresholds(f, {1.0, 2.0}), doctest::Contains("stage 3"),
                             fours::OutOfRangeError);
        CHECK_THROWS_AS(project_stage_thresholds(f, {0.0}), fours::OutOfRangeError);
    }
}

TEST_CASE("absent stages are merged and their transitions are not identified") {
    auto scn = scenario::staging(5, 80);
    scn.stage.thresholds = Eigen::Vector3d(0.5, 2.5, 50.0);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    const auto pr = make_staging_problem(spec_for(scn, LinkKind::ISpline), data);
    CHECK(pr.stages == std::vector<int>{1, 2, 3});
    REQUIRE(pr.warnings.size() == 1);
    CHECK(pr.warnings[0].find("stage 4") != std::string::npos);
    const auto fit = staging_fit_at(pr, staging_start_values(pr, data));
    CHECK(fit.omega(3) > fit.omega(2));
    CHECK_THROWS_AS(fit.omega(4), fours::DomainError);
    CHECK_THROWS_AS(fit.omega(1), fours::DomainError);

    const auto seq = twenty_point_fit();
    auto staged = fit;
    staged.spec.subdimension.items = seq.spec.subdimension.items;
    const auto proj = project_stages(seq, staged, 500);
    CHECK(proj.transitions.size() == 2);
    CHECK(std::any_of(proj.warnings.begin(), proj.warnings.end(),
                      [](const std::string& w) { return w.find("stage 4") != std::string::npos; }));
    CHECK_THROWS_AS(project_stages(items_fit({{Eigen::Vector2d(0.0, 1.0), 1.0}}), fit, 500), fours::ValidationError);
}

TEST_CASE("staging fit recovers the stage thresholds and round-trips through JSON") {
    const auto scn = scenario::staging(21, 250);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    auto spec = spec_for(scn, LinkKind::ISpline);
    spec.qmc_points = 256;
    const auto fit = fit_staging(spec, data);
    REQUIRE(fit.estimates.converged);
    REQUIRE(fit.estimates.se_available);
    const VectorXd omega = fit.stage_thresholds();
    const auto i1 = static_cast<Eigen::Index>(fit.index_of("stage:eta1"));
    const auto i2 = static_cast<Eigen::Index>(fit.index_of("stage:eta2"));
    CHECK(std::abs(omega(0) - scn.stage.thresholds(0)) <= 3.0 * fit.estimates.se(i1));
    // omega2 = eta1 + eta2^2; delta method for its SE
    const Eigen::Vector2d grad(1.0, 2.0 * fit.estimates.theta(i2));
    Eigen::Matrix2d cov;
    cov << fit.estimates.covariance(i1, i1), fit.estimates.covariance(i1, i2), fit.estimates.covariance(i2, i1),
        fit.estimates.covariance(i2, i2);
    CHECK(std::abs(omega(1) - scn.stage.thresholds(1)) <= 3.0 * std::sqrt(grad.dot(cov * grad)));
    CHECK(fit.stage_sd() == doctest::Approx(scn.stage.sd).epsilon(0.35));

    const auto back = staging_fit_from_json(nlohmann::json::parse(staging_fit_to_json(fit).dump()));
    CHECK(back.names == fit.names);
    CHECK((back.estimates.theta - fit.estimates.theta).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(back.omega(3) == doctest::Approx(fit.omega(3)).epsilon(1e-12));
    CHECK(back.link_value(7.5) == doctest::Approx(fit.link_value(7.5)).epsilon(1e-12));
    CHECK(staging_estimates_csv(back) == staging_estimates_csv(fit));

    const auto seq = twenty_point_fit();
    auto staged = fit;
    staged.spec.subdimension.items = seq.spec.subdimension.items;
    const auto proj = project_stages(seq, staged);
    REQUIRE(proj.transitions.size() == 2);
    CHECK(proj.transitions[1].delta > proj.transitions[0].delta);
    const StageProjection round = nlohmann::json::parse(nlohmann::json(proj).dump()).get<StageProjection>();
    CHECK(projection_csv(round) == projection_csv(proj));
    const auto bands = stage_bands_csv({}, proj);
    CHECK(bands.rfind("kind,label,from_level,to_level,location,se\n", 0) == 0);
    CHECK(std::count(bands.begin(), bands.end(), '\n') == 3);
}

TEST_CASE("invalid staging specifications are rejected") {
    const auto scn = scenario::staging(5, 30);
    const auto data = fours::simulation::simulate_staging_cohort(scn).data;
    auto spec = spec_for(scn, LinkKind::ISpline);
    SUBCASE("empty subdimension") { spec.subdimension.items.clear(); }
    SUBCASE("unknown item") { spec.subdimension.items = {"nope"}; }
    SUBCASE("unsorted link knots") { spec.link_knots = std::vector<double>{8.0, 4.0}; }
    SUBCASE("link knot outside the score range") { spec.link_knots = std::vector<double>{-1.0}; }
    SUBCASE("bad missing fraction") { spec.max_missing_frac = 1.0; }
    SUBCASE("no causes") { spec.causes.clear(); }
    CHECK_THROWS_AS(make_staging_problem(spec, data), fours::Error);
    CHECK_THROWS_AS(parse_link("cubic"), fours::ValidationError);
}
