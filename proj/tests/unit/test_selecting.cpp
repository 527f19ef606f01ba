#include "doctest.h"
#include "oracles.hpp"

#include "fours/errors.hpp"
#include "fours/selecting/selecting.hpp"

#include <algorithm>
#include <cmath>

using namespace fours::selecting;
using fours::sequencing::ItemMeasurement;
using fours::sequencing::MeasurementParams;
using fours::staging::StageProjection;
using Eigen::VectorXd;

namespace {

ItemMeasurement make_item(const std::string& id, const VectorXd& thresholds, double sd) {
    ItemMeasurement m;
    m.item = id;
    m.max_level = static_cast<int>(thresholds.size());
    for (int l = 0; l <= m.max_level; ++l) m.levels.push_back(l);
    m.thresholds = thresholds;
    m.sd = sd;
    return m;
}

StageProjection projection(const std::vector<double>& deltas) {
    StageProjection p;
    p.subdimension = "dim";
    p.n_stages = static_cast<int>(deltas.size()) + 1;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        fours::staging::StageTransition t;
        t.stage = static_cast<int>(i) + 2;
        t.delta = deltas[i];
        p.transitions.push_back(t);
    }
    return p;
}

// Category probability with the subtraction taken in the far tail.
double oracle_probability(double lo, double hi) {
    if (lo > 0.0) return oracle::phi_cdf(-lo) - oracle::phi_cdf(-hi);
    return oracle::phi_cdf(hi) - oracle::phi_cdf(lo);
}

double oracle_information(const ItemMeasurement& it, double d) {
    const double a = 1.0 / it.sd;
    const Eigen::Index C = it.thresholds.size();
    double info = 0.0;
    for (Eigen::Index c = 0; c <= C; ++c) {
        const double lo = c > 0 ? a * (it.thresholds(c - 1) - d) : -INFINITY;
        const double hi = c < C ? a * (it.thresholds(c) - d) : INFINITY;
        const double p = oracle_probability(lo, hi);
        if (p <= 0.0) continue;
        const double dp = a * ((std::isinf(lo) ? 0.0 : oracle::phi_pdf(lo)) - (std::isinf(hi) ? 0.0 : oracle::phi_pdf(hi)));
        info += dp * dp / p;
    }
    return info;
}

double oracle_interval(const ItemMeasurement& it, double lo, double hi) {
    std::vector<double> cuts{lo};
    for (Eigen::Index m = 0; m < it.thresholds.size(); ++m)
        if (it.thresholds(m) > lo && it.thresholds(m) < hi) cuts.push_back(it.thresholds(m));
    cuts.push_back(hi);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        total += oracle::adaptive_simpson([&](double d) { return oracle_information(it, d); }, cuts[i], cuts[i + 1], 1e-13);
    return total;
}

const ItemMeasurement kFiveLevel = make_item("k", (VectorXd(4) << -1.5, -0.2, 0.6, 2.0).finished(), 0.8);

}  // namespace

TEST_CASE("binary probit item information at its threshold") {
    const auto it = make_item("b", VectorXd::Constant(1, 0.0), 1.0);
    const double phi0 = oracle::phi_pdf(0.0);
    const double expected = phi0 * phi0 / oracle::phi_cdf(0.0) + phi0 * phi0 / (1.0 - oracle::phi_cdf(0.0));
    CHECK(item_information(it, 0.0) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(item_information(it, 0.0) == doctest::Approx(0.63662).epsilon(1e-5));
}

TEST_CASE("item information vanishes in the tails and is never negative") {
    CHECK(item_information(kFiveLevel, 40.0) <= 1e-12);
    CHECK(item_information(kFiveLevel, -40.0) <= 1e-12);
    for (int g = -3000; g <= 3000; ++g) CHECK(item_information(kFiveLevel, g * 0.01) >= 0.0);
}

TEST_CASE("item information equals minus the expected curvature of the log-probability") {
    const double h = 1e-4;
    const double a = 1.0 / kFiveLevel.sd;
    const auto log_p = [&](Eigen::Index c, double d) {
        const Eigen::Index C = kFiveLevel.thresholds.size();
        const double lo = c > 0 ? a * (kFiveLevel.thresholds(c - 1) - d) : -INFINITY;
        const double hi = c < C ? a * (kFiveLevel.thresholds(c) - d) : INFINITY;
        return std::log(oracle_probability(lo, hi));
    };
    for (int g = -40; g <= 40; ++g) {
        const double d = g * 0.1;
        double expected = 0.0;
        for (Eigen::Index c = 0; c <= kFiveLevel.thresholds.size(); ++c) {
            const double curvature = (log_p(c, d + h) - 2.0 * log_p(c, d) + log_p(c, d - h)) / (h * h);
            expected -= std::exp(log_p(c, d)) * curvature;
        }
        CHECK(std::abs(item_information(kFiveLevel, d) - expected) <= 1e-6);
    }
}

TEST_CASE("category slopes sum to zero") {
    for (double d : {-3.0, -0.2, 0.0, 1.3, 5.0}) CHECK(std::abs(category_slopes(kFiveLevel, d).sum()) <= 1e-15);
}

TEST_CASE("two-term interval information equals direct quadrature") {
    for (const auto& [lo, hi] : std::vector<std::pair<double, double>>{{-12.0, -1.0}, {-1.0, 0.4}, {0.4, 2.5}, {2.5, 12.0}})
        CHECK(std::abs(interval_information(kFiveLevel, lo, hi) - oracle_interval(kFiveLevel, lo, hi)) <= 1e-10);
    CHECK(interval_information(kFiveLevel, 1.0, 1.0) == 0.0);
}

TEST_CASE("stage informations add up to the total information") {
    MeasurementParams meas;
    meas.items = {kFiveLevel};
    const auto p = projection({-1.0, 0.3, 1.1, 2.4});
    double sum = 0.0;
    for (int s = 1; s <= 5; ++s) sum += stage_information(meas, p, 0, s);
    CHECK(std::abs(sum - oracle_interval(kFiveLevel, -12.0, 12.0)) <= 1e-8);
    CHECK_THROWS_AS(stage_information(meas, p, 0, 6), fours::ValidationError);
}

TEST_CASE("stage intervals span the truncated latent axis") {
    const auto iv = stage_intervals(projection({-1.0, 0.3, 30.0}));
    REQUIRE(iv.size() == 4);
    CHECK(iv[0].lower == -kLatentBound);
    CHECK(iv[0].upper == -1.0);
    CHECK(iv[2].upper == kLatentBound);
    CHECK(iv[3].lower == iv[3].upper);

    auto p = projection({-1.0, 0.3, 1.1});
    p.transitions.erase(p.transitions.begin() + 1);
    const auto merged = stage_intervals(p);
    CHECK(merged[1].lower == -1.0);
    CHECK(merged[1].upper == 1.1);
    CHECK(merged[2].lower == merged[2].upper);
}

TEST_CASE("ranking shares and ties") {
    SUBCASE("single item carries everything") {
        MeasurementParams meas;
        meas.items = {kFiveLevel};
        const auto t = information_table(meas, "dim", projection({0.0}));
        for (const auto& st : t.stages) {
            CHECK(*st.items[0].share == doctest::Approx(100.0));
            CHECK(*st.items[0].cumulative == 100.0);
        }
    }
    SUBCASE("identical items split evenly and rank by id order") {
        MeasurementParams meas;
        auto b = kFiveLevel, a = kFiveLevel;
        b.item = "b";
        a.item = "a";
        meas.items = {b, a};
        const auto t = information_table(meas, "dim", projection({0.0, 1.0}));
        for (const auto& st : t.stages) {
            CHECK(*st.items[0].share == doctest::Approx(50.0).epsilon(1e-12));
            CHECK(st.items[0].item == "b");
            CHECK(st.items[1].item == "a");
            CHECK(st.items[1].rank == 2);
        }
    }
    SUBCASE("shares add to one hundred and cumulative shares rise") {
        MeasurementParams meas;
        meas.items = {kFiveLevel, make_item("x", Eigen::Vector2d(-0.5, 0.5), 0.5),
                      make_item("y", Eigen::Vector3d(0.0, 1.0, 3.0), 1.7)};
        const auto t = information_table(meas, "dim", projection({-1.0, 0.5, 2.0}), 3);
        for (const auto& st : t.stages) {
            double sum = 0.0, prev = 0.0;
            for (const auto& it : st.items) {
                sum += *it.share;
                CHECK(*it.cumulative >= prev);
                prev = *it.cumulative;
            }
            CHECK(std::abs(sum - 100.0) <= 1e-6);
            CHECK(prev == 100.0);
        }
    }
}

TEST_CASE("a sharp item centred in a stage outranks a flat one there") {
    MeasurementParams meas;
    meas.items = {make_item("flat", VectorXd::Constant(1, 0.0), 2.0), make_item("sharp", VectorXd::Constant(1, 0.0), 0.3)};
    const auto t = information_table(meas, "dim", projection({-1.0, 1.0}));
    const auto& st = t.stages[1];
    CHECK(oracle_interval(meas.items[1], -1.0, 1.0) > oracle_interval(meas.items[0], -1.0, 1.0));
    CHECK(st.items[0].item == "sharp");
    CHECK(st.items[0].information == doctest::Approx(oracle_interval(meas.items[1], -1.0, 1.0)).epsilon(1e-9));
}

TEST_CASE("information is equivariant under item relabeling") {
    MeasurementParams meas;
    meas.items = {kFiveLevel, make_item("x", Eigen::Vector2d(-0.5, 0.5), 0.5),
                  make_item("y", Eigen::Vector3d(0.0, 1.0, 3.0), 1.7)};
    auto reversed = meas;
    std::reverse(reversed.items.begin(), reversed.items.end());
    const auto p = projection({-1.0, 0.5, 2.0});
    const auto a = information_table(meas, "dim", p), b = information_table(reversed, "dim", p);
    for (std::size_t s = 0; s < a.stages.size(); ++s)
        for (const auto& it : a.stages[s].items) {
            const auto other = std::find_if(b.stages[s].items.begin(), b.stages[s].items.end(),
                                            [&](const ItemShare& x) { return x.item == it.item; });
            REQUIRE(other != b.stages[s].items.end());
            CHECK(other->information == doctest::Approx(it.information).epsilon(1e-14));
        }
}

TEST_CASE("sharper discrimination raises total information") {
    for (double c : {1.1, 1.5, 3.0}) {
        auto sharp = kFiveLevel;
        sharp.sd = kFiveLevel.sd / c;
        CHECK(interval_information(sharp, -kLatentBound, kLatentBound) >
              interval_information(kFiveLevel, -kLatentBound, kLatentBound));
    }
}

TEST_CASE("uninformative stages have no shares") {
    Eigen::MatrixXd info(2, 2);
    info << 1.0, 0.0, 3.0, 0.0;
    const std::vector<StageInterval> iv{{1, -12.0, 0.0}, {2, 0.0, 12.0}};
    const auto t = rank_items("dim", {"a", "b"}, iv, info);
    CHECK(t.stages[0].informative);
    CHECK(t.stages[0].items[0].item == "b");
    CHECK(*t.stages[0].items[0].share == doctest::Approx(75.0));
    CHECK_FALSE(t.stages[1].informative);
    CHECK_FALSE(t.stages[1].items[0].share.has_value());
    CHECK(t.warnings.size() == 1);
    CHECK(information_csv(t).find("NA,NA") != std::string::npos);
    const nlohmann::json j = t;
    CHECK(j["stages"][1]["items"][0]["share"].is_null());
    CHECK_THROWS_AS(rank_items("dim", {"a"}, iv, info), fours::ValidationError);
}

TEST_CASE("formatted rows show rank, label, share and cumulative share") {
    Eigen::MatrixXd info(7, 1);
    info << 14.2, 14.8, 14.2, 14.2, 14.2, 14.2, 14.2;
    std::vector<std::string> ids{"I.4", "I.7", "I.5", "I.6", "I.9", "I.11", "II.14"};
    const auto t = rank_items("functional", ids, {{1, -12.0, -1.0}}, info);
    const auto text = format_information_table(t, {{"I.7", "I.7 Walking"}});
    CHECK(text.find("1 & I.7 Walking & 14.8 & 14.8\n") != std::string::npos);
    CHECK(text.find("2 & I.4 & 14.2 & 29.0\n") != std::string::npos);
}
