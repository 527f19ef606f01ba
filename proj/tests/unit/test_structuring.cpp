#include "doctest.h"
#include "battery.hpp"
#include "oracles.hpp"

#include "fours/errors.hpp"
#include "fours/structuring/structuring.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

using namespace fours;
using namespace fours::structuring;

namespace {

ReplicateSample sample_of(const Eigen::MatrixXi& levels) {
    ReplicateSample s;
    s.responses = levels;
    s.visit_of_patient.assign(static_cast<std::size_t>(levels.rows()), 0);
    return s;
}

core::ScaleDefinition scale_of(int p, int max_level) {
    core::ScaleDefinition s;
    for (int j = 0; j < p; ++j) s.items.push_back({"item" + std::to_string(j + 1), max_level});
    return s;
}

Eigen::MatrixXd pair_table(double rho, int n, int ra, int rb, std::mt19937_64& rng) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(-1.2, 1.2);
    std::vector<double> ca, cb;
    for (int i = 0; i + 1 < ra; ++i) ca.push_back(u(rng));
    for (int i = 0; i + 1 < rb; ++i) cb.push_back(u(rng));
    std::sort(ca.begin(), ca.end());
    std::sort(cb.begin(), cb.end());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(ra, rb);
    for (int i = 0; i < n; ++i) {
        const double x = z(rng);
        const double y = rho * x + std::sqrt(1.0 - rho * rho) * z(rng);
        const auto a = std::upper_bound(ca.begin(), ca.end(), x) - ca.begin();
        const auto b = std::upper_bound(cb.begin(), cb.end(), y) - cb.begin();
        t(a, b) += 1.0;
    }
    return t;
}

bool no_empty_margin(const Eigen::MatrixXd& t) {
    return (t.rowwise().sum().array() > 0).all() && (t.colwise().sum().array() > 0).all();
}

}  // namespace

TEST_CASE("resampling picks one visit per patient reproducibly") {
    const auto levels = battery::draw(battery::block_correlation({4}, 0.5, 0.0), 60, 2, 3);
    auto data = battery::as_cohort(levels, 2, 3);
    // first patient keeps a single visit
    data.patients[0].visits.resize(1);
    const auto a = resample_replicates(data, 20, 7);
    const auto b = resample_replicates(data, 20, 7);
    const auto c = resample_replicates(data, 5, 7);
    REQUIRE(a.size() == 20);
    bool varied = false;
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j].visit_of_patient == b[j].visit_of_patient);
        CHECK(a[j].responses == b[j].responses);
        CHECK(a[j].visit_of_patient[0] == 0);
        CHECK(a[j].responses.rows() == static_cast<Eigen::Index>(data.patients.size()));
        varied |= a[j].visit_of_patient != a[0].visit_of_patient;
        if (j < c.size()) CHECK(c[j].visit_of_patient == a[j].visit_of_patient);
    }
    CHECK(varied);
    CHECK_THROWS_AS(resample_replicates(data, 0, 7), ValidationError);
    data.patients[1].visits.clear();
    CHECK_THROWS_AS(resample_replicates(data, 2, 7), ValidationError);
}

TEST_CASE("polychoric recovers latent correlations") {
    const auto indep = battery::draw(Eigen::MatrixXd::Identity(2, 2), 500, 3, 11);
    const auto t0 = contingency_table(indep.col(0), indep.col(1), 3, 3);
    CHECK(std::abs(polychoric_pair(t0).rho) < 0.1);

    Eigen::MatrixXd r(2, 2);
    r << 1.0, 0.6, 0.6, 1.0;
    const auto corr = battery::draw(r, 1000, 3, 12);
    const auto t1 = contingency_table(corr.col(0), corr.col(1), 3, 3);
    CHECK(std::abs(polychoric_pair(t1).rho - 0.6) < 0.07);

    const auto self = contingency_table(corr.col(0), corr.col(0), 3, 3);
    CHECK(polychoric_pair(self).rho > 0.999);

    const auto pm = polychoric_matrix(sample_of(corr), scale_of(2, 3));
    CHECK(pm.matrix(0, 0) == 1.0);
    CHECK(pm.matrix(1, 1) == 1.0);
    CHECK(pm.matrix(0, 1) == pm.matrix(1, 0));
}

TEST_CASE("polychoric matches a brute-force grid") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-0.85, 0.85);
    std::uniform_int_distribution<int> levels(2, 5);
    int done = 0;
    while (done < 6) {
        const auto t = pair_table(u(rng), 300, levels(rng), levels(rng), rng);
        if (!no_empty_margin(t)) continue;
        const double ours = polychoric_pair(t).rho;
        const double grid = oracle::polychoric_grid(t, 1e-3);
        CHECK(std::abs(ours - grid) <= 2e-3);
        ++done;
    }
}

TEST_CASE("single-level items are excluded") {
    auto levels = battery::draw(battery::block_correlation({3}, 0.5, 0.0), 200, 2, 5);
    levels.col(1).setConstant(2);
    const auto pm = polychoric_matrix(sample_of(levels), scale_of(3, 2));
    CHECK(pm.items == std::vector<std::size_t>{0, 2});
    CHECK(pm.excluded == std::vector<std::size_t>{1});
    CHECK(pm.matrix.rows() == 2);
    CHECK(!pm.warnings.empty());
    CHECK_THROWS_AS(polychoric_pair(contingency_table(levels.col(1), levels.col(0), 2, 2)), DomainError);
}

TEST_CASE("eigenvalues preserve the trace") {
    const auto levels = battery::draw(battery::block_correlation({5, 4}, 0.55, 0.15), 400, 3, 21);
    const auto pm = polychoric_matrix(sample_of(levels), scale_of(9, 3));
    const auto e = efa(pm.matrix);
    CHECK(std::abs(e.eigenvalues.sum() - 9.0) < 1e-8);
    for (Eigen::Index i = 1; i < e.eigenvalues.size(); ++i) CHECK(e.eigenvalues(i) <= e.eigenvalues(i - 1));
}

TEST_CASE("smoothing repairs an indefinite matrix") {
    Eigen::MatrixXd r(3, 3);
    r << 1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0;
    CHECK(smooth_correlation(r));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
    CHECK((r.diagonal().array() - 1.0).abs().maxCoeff() < 1e-14);
    CHECK(r.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    CHECK(!smooth_correlation(r));
}

TEST_CASE("efa on degenerate and block structures") {
    const auto id = efa(Eigen::MatrixXd::Identity(5, 5));
    CHECK((id.eigenvalues.array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(id.n_factors == 1);
    CHECK(!id.warnings.empty());

    const auto r = battery::block_correlation({6, 6}, 0.6, 0.1);
    int correct = 0;
    const int reps = 20;
    for (int rep = 0; rep < reps; ++rep) {
        const auto levels = battery::draw(r, 400, 3, 100 + rep);
        const auto e = efa(polychoric_matrix(sample_of(levels), scale_of(12, 3)).matrix);
        bool ok = e.n_factors == 2;
        for (int i = 0; ok && i < 12; ++i) {
            ok = e.assignment[i] >= 0 && e.assignment[i] == e.assignment[i < 6 ? 0 : 6];
            CHECK(e.loadings.row(i).cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
        }
        ok = ok && e.assignment[0] != e.assignment[6];
        correct += ok ? 1 : 0;
    }
    CHECK(correct >= 19);

    // an isolated item loads on nothing
    Eigen::MatrixXd r2 = battery::block_correlation({4, 1}, 0.6, 0.0);
    r2(4, 0) = r2(0, 4) = 0.05;
    const auto e2 = efa(r2, {.n_factors = 1});
    CHECK(e2.assignment[4] == -1);
    for (int i = 0; i < 4; ++i) CHECK(e2.assignment[i] == 0);

    EfaOptions scree;
    scree.rule = FactorRule::Scree;
    CHECK(efa(battery::block_correlation({6, 6}, 0.6, 0.1), scree).n_factors == 2);
    CHECK_THROWS_AS(efa(Eigen::MatrixXd::Identity(3, 3), {.n_factors = 4}), DomainError);
}

TEST_CASE("varimax keeps communalities") {
    Eigen::MatrixXd l(4, 2);
    l << 0.7, 0.3, 0.6, 0.4, 0.3, 0.7, 0.2, 0.8;
    const auto v = varimax(l);
    CHECK((v.rowwise().squaredNorm() - l.rowwise().squaredNorm()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cfa indices and self-consistency") {
    // implied matrix of a two-factor model fits exactly
    Eigen::VectorXd lambda(6);
    lambda << 0.8, 0.7, 0.6, 0.75, 0.65, 0.55;
    const std::vector<int> f{0, 0, 0, 1, 1, 1};
    Eigen::MatrixXd implied(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) implied(i, j) = i == j ? 1.0 : lambda[i] * lambda[j] * (f[i] == f[j] ? 1.0 : 0.3);
    const auto fit = cfa_fit(implied, f, 500);
    CHECK(fit.converged);
    CHECK(fit.srmr <= 1e-6);
    CHECK(fit.cfi == doctest::Approx(1.0));
    CHECK(fit.rmsea == 0.0);
    CHECK(fit.df == 15 - 7);
    CHECK(std::abs(fit.factor_correlations(0, 1) - 0.3) < 1e-5);
    CHECK(fit.all_pass());

    // just-identified single factor on two items
    Eigen::MatrixXd two(2, 2);
    two << 1.0, 0.45, 0.45, 1.0;
    const auto sat = cfa_fit(two, {0, 0}, 300);
    CHECK(sat.srmr < 1e-8);
    CHECK(sat.rmsea == 0.0);
    CHECK(sat.tli == 1.0);

    // null-model statistic by hand
    const double t0 = 499.0 * (implied.squaredNorm() - 6.0) / 2.0;
    CHECK(fit.chi2_null == doctest::Approx(t0).epsilon(1e-12));

    // misspecified one-factor fit on two-block data fails
    const auto bad = cfa_fit(battery::block_correlation({4, 4}, 0.6, 0.0), std::vector<int>(8, 0), 500);
    CHECK(!bad.cfi_pass);
    CHECK(bad.cfi <= 1.0);
    CHECK(bad.tli <= 1.0);
    CHECK(bad.rmsea >= 0.0);
    CHECK(bad.srmr > 0.08);
}

TEST_CASE("cfa accepts data simulated from the fitted model class") {
    const auto r = battery::block_correlation({3, 3, 3}, 0.55, 0.2);
    const std::vector<int> f{0, 0, 0, 1, 1, 1, 2, 2, 2};
    int good = 0;
    const int reps = 10;
    for (int rep = 0; rep < reps; ++rep) {
        const auto levels = battery::draw(r, 500, 3, 300 + rep);
        const auto pm = polychoric_matrix(sample_of(levels), scale_of(9, 3));
        const auto fit = cfa_fit(pm.matrix, f, 500);
        good += fit.cfi_pass && fit.tli_pass && fit.srmr_pass ? 1 : 0;
    }
    CHECK(good >= 9);
}

TEST_CASE("residual flags") {
    Eigen::MatrixXd small = Eigen::MatrixXd::Constant(4, 4, 0.1);
    CHECK(flag_residual_pairs(small).empty());
    small(1, 3) = small(3, 1) = -0.25;
    const auto flagged = flag_residual_pairs(small);
    REQUIRE(flagged.size() == 1);
    CHECK(flagged[0] == std::pair<std::size_t, std::size_t>{1, 3});

    // doublet: items 0 and 1 share extra variance beyond their factor
    Eigen::MatrixXd r = battery::block_correlation({8}, 0.4, 0.0);
    r(0, 1) = r(1, 0) = 0.85;
    int hits = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const auto levels = battery::draw(r, 500, 3, 500 + rep);
        const auto pm = polychoric_matrix(sample_of(levels), scale_of(8, 3));
        const auto fit = cfa_fit(pm.matrix, std::vector<int>(8, 0), 500);
        for (const auto& p : flag_residual_pairs(fit.residual)) hits += p == std::pair<std::size_t, std::size_t>{0, 1};
    }
    CHECK(hits >= 8);
}

TEST_CASE("monotonicity curves") {
    const auto levels = battery::draw(battery::block_correlation({5}, 0.6, 0.0), 1000, 3, 41);
    const std::vector<std::size_t> items{0, 1, 2, 3, 4};
    const std::vector<int> max_levels(5, 3);
    const auto m = monotonicity_curves(levels, items, max_levels);
    REQUIRE(m.curves.size() == 5);
    for (const auto& c : m.curves) {
        CHECK(c.pass);
        CHECK(c.mean_level.back() > c.mean_level.front());
        for (std::size_t b = 0; b < c.at_least.size(); ++b)
            for (std::size_t l = 1; l < c.at_least[b].size(); ++l) CHECK(c.at_least[b][l] <= c.at_least[b][l - 1]);
    }

    auto constant = levels;
    constant.col(2).setConstant(1);
    const auto mc = monotonicity_curves(constant, items, max_levels);
    CHECK(mc.curves[2].pass);
    CHECK(mc.curves[2].max_drop == 0.0);

    auto reversed = levels;
    reversed.col(3) = (3 - levels.col(3).array()).matrix();
    CHECK(!monotonicity_curves(reversed, items, max_levels).curves[3].pass);

    // few distinct rest-scores: fewer bins, with a warning
    Eigen::MatrixXi binary = levels.leftCols(2).unaryExpr([](int y) { return y > 1 ? 1 : 0; });
    const auto mb = monotonicity_curves(binary, {0, 1}, {1, 1});
    CHECK(mb.bins == 2);
    CHECK(!mb.warnings.empty());
}

TEST_CASE("monotonicity is invariant to row order under ties") {
    const auto levels = battery::draw(battery::block_correlation({4}, 0.5, 0.0), 300, 2, 77);
    Eigen::MatrixXi shuffled = levels.colwise().reverse();
    const std::vector<std::size_t> items{0, 1, 2, 3};
    const std::vector<int> ml(4, 2);
    const auto a = monotonicity_curves(levels, items, ml);
    const auto b = monotonicity_curves(shuffled, items, ml);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.curves[i].mean_level == b.curves[i].mean_level);
        CHECK(a.curves[i].counts == b.curves[i].counts);
        CHECK(a.curves[i].pass == b.curves[i].pass);
    }
    // scores equal to a cut point fall in the lower bin
    Eigen::MatrixXi tie(10, 2);
    tie << 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 1, 2, 1, 2;
    const auto t = monotonicity_curves(tie, {0, 1}, {2, 2}, 0.05, 2);
    // rest-score of item 0 is column 1: median is 1, so the six ones join the zeros
    REQUIRE(t.curves[0].counts.size() == 2);
    CHECK(t.curves[0].counts[0] == 7);
    CHECK(t.curves[0].counts[1] == 3);
}

TEST_CASE("aggregation decisions") {
    const auto scale = scale_of(4, 2);
    std::vector<ReplicateResult> reps;
    for (int j = 0; j < 50; ++j) {
        ReplicateResult r;
        r.index = j;
        r.items = {0, 1, 2, 3};
        r.efa.n_factors = 2;
        // factor labels flip between replicates; alignment must undo it
        const bool flip = j % 2 == 1;
        const int a = flip ? 1 : 0, b = flip ? 0 : 1;
        const bool to_a = j < 30;
        r.efa.assignment = {a, a, -1, to_a ? a : b};
        r.efa.loadings = Eigen::MatrixXd::Zero(4, 2);
        r.efa.loadings(0, a) = 0.8;
        r.efa.loadings(1, a) = 0.7;
        r.efa.loadings(3, a) = to_a ? 0.5 : 0.2;
        r.efa.loadings(3, b) = to_a ? 0.2 : 0.6;
        reps.push_back(r);
    }
    // one more item set anchoring the second factor
    for (auto& r : reps) {
        r.items.push_back(3);
        r.items.pop_back();
    }
    const auto out = aggregate_structure(reps, scale, 0.8);
    REQUIRE(out.items.size() == 4);
    for (const auto& s : out.items) {
        int total = s.unassigned;
        for (int c : s.counts) total += c;
        CHECK(total == 50);
    }
    CHECK(out.items[0].decision == "assigned");
    CHECK(out.items[1].decision == "assigned");
    CHECK(out.items[0].subdimension == out.items[1].subdimension);
    CHECK(out.items[2].decision == "dropped");
    CHECK(out.items[3].decision == "needs review");
    CHECK(out.dropped == std::vector<std::string>{"item3"});
    CHECK(out.needs_review == std::vector<std::string>{"item4"});
    const auto& split = out.items[3];
    REQUIRE(split.counts.size() == 2);
    CHECK(std::max(split.counts[0], split.counts[1]) == 30);
    CHECK(std::min(split.counts[0], split.counts[1]) == 20);
    CHECK(split.mean_loadings.size() == 2);
    REQUIRE(out.structure.subdimensions.size() == 1);
    CHECK(out.structure.subdimensions[0].items == std::vector<std::string>{"item1", "item2"});
}

TEST_CASE("full run recovers a two-block battery") {
    const auto levels = battery::draw(battery::block_correlation({6, 6}, 0.6, 0.1), 400, 3, 9);
    const auto data = battery::as_cohort(levels, 3);
    StructuringOptions opt;
    opt.replicates = 5;
    opt.seed = 3;
    const auto rep = run_structuring(data, opt);
    REQUIRE(rep.structure.subdimensions.size() == 2);
    std::vector<std::string> first, second;
    for (int j = 0; j < 6; ++j) first.push_back("item" + std::to_string(j + 1));
    for (int j = 6; j < 12; ++j) second.push_back("item" + std::to_string(j + 1));
    const auto& d0 = rep.structure.subdimensions[0].items;
    const auto& d1 = rep.structure.subdimensions[1].items;
    CHECK(((d0 == first && d1 == second) || (d0 == second && d1 == first)));
    CHECK(rep.cfa_pass_rate >= 0.8);
    CHECK(rep.monotonicity_pass_rate.size() == 12);
    const auto j = to_json(rep, data.scale);
    CHECK(j.at("replicates").size() == 5);
    const auto csv = monotonicity_csv(data, rep, opt);
    CHECK(csv.rfind("subdimension,item,bin", 0) == 0);
    CHECK(run_structuring(data, opt).structure.subdimensions[0].items == d0);
}
