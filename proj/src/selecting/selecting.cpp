#include "fours/selecting/selecting.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/normal.hpp"
#include "fours/numerics/parallel.hpp"
#include "fours/numerics/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace fours::selecting {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTinyProbability = 1e-300;
constexpr int kPanelNodes = 30;

// Standardized bounds of category c at delta.
std::pair<double, double> category_bounds(const sequencing::ItemMeasurement& item, Eigen::Index c, double delta) {
    const double a = item.discrimination();
    const Eigen::Index C = item.thresholds.size();
    const double lo = c > 0 ? a * (item.thresholds(c - 1) - delta) : -kInf;
    const double hi = c < C ? a * (item.thresholds(c) - delta) : kInf;
    return {lo, hi};
}

double density(double x) { return std::isinf(x) ? 0.0 : numerics::normal_pdf(x); }

std::string one_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

}  // namespace

VectorXd category_slopes(const sequencing::ItemMeasurement& item, double delta) {
    const double a = item.discrimination();
    VectorXd d(item.thresholds.size() + 1);
    for (Eigen::Index c = 0; c < d.size(); ++c) {
        const auto [lo, hi] = category_bounds(item, c, delta);
        d(c) = a * (density(lo) - density(hi));
    }
    return d;
}

double item_information(const sequencing::ItemMeasurement& item, double delta) {
    const double a = item.discrimination();
    double info = 0.0;
    for (Eigen::Index c = 0; c <= item.thresholds.size(); ++c) {
        const auto [lo, hi] = category_bounds(item, c, delta);
        const double p = numerics::normal_interval_probability(lo, hi);
        if (p < kTinyProbability) continue;
        const double dp = a * (density(lo) - density(hi));
        info += dp * dp / p;
    }
    return info;
}

double item_information(const sequencing::MeasurementParams& meas, std::size_t item, double delta) {
    if (item >= meas.items.size()) throw ValidationError("item index out of range");
    return item_information(meas.items[item], delta);
}

std::vector<StageInterval> stage_intervals(const staging::StageProjection& projection) {
    const int S = projection.n_stages;
    if (S < 2) throw ValidationError("a projection needs at least two stages");
    // boundary[s] is the lower end of stage s
    std::vector<double> boundary(S + 2, kLatentBound);
    boundary[1] = -kLatentBound;
    std::vector<bool> known(S + 2, false);
    for (const auto& t : projection.transitions) {
        if (t.stage < 2 || t.stage > S)
            throw ValidationError("projection has a transition into stage " + std::to_string(t.stage) + " outside 2.." +
                                  std::to_string(S));
        if (!std::isfinite(t.delta))
            throw DomainError("projected location of stage " + std::to_string(t.stage) + " is not finite");
        boundary[t.stage] = std::clamp(t.delta, -kLatentBound, kLatentBound);
        known[t.stage] = true;
    }
    for (int s = S; s >= 2; --s)
        if (!known[s]) boundary[s] = boundary[s + 1];
    std::vector<StageInterval> out;
    for (int s = 1; s <= S; ++s) out.push_back({s, boundary[s], std::max(boundary[s], boundary[s + 1])});
    return out;
}

double interval_information(const sequencing::ItemMeasurement& item, double lower, double upper) {
    if (!(upper > lower)) return 0.0;
    std::vector<double> breaks(item.thresholds.data(), item.thresholds.data() + item.thresholds.size());
    const double integral =
        numerics::integrate_panels([&](double d) { return item_information(item, d); }, lower, upper, breaks, kPanelNodes);
    const double boundary = (category_slopes(item, upper) - category_slopes(item, lower)).sum();
    return integral - boundary;
}

double stage_information(const sequencing::MeasurementParams& meas, const staging::StageProjection& projection,
                         std::size_t item, int stage) {
    if (item >= meas.items.size()) throw ValidationError("item index out of range");
    const auto intervals = stage_intervals(projection);
    if (stage < 1 || stage > static_cast<int>(intervals.size()))
        throw ValidationError("stage " + std::to_string(stage) + " is outside 1.." + std::to_string(intervals.size()));
    const auto& iv = intervals[stage - 1];
    return interval_information(meas.items[item], iv.lower, iv.upper);
}

InformationTable rank_items(const std::string& subdimension, const std::vector<std::string>& items,
                            const std::vector<StageInterval>& intervals, const MatrixXd& information) {
    if (information.rows() != static_cast<Eigen::Index>(items.size()) ||
        information.cols() != static_cast<Eigen::Index>(intervals.size()))
        throw ValidationError("information matrix must be items x stages");
    InformationTable table;
    table.subdimension = subdimension;
    for (std::size_t s = 0; s < intervals.size(); ++s) {
        StageInformation st;
        st.stage = intervals[s].stage;
        st.lower = intervals[s].lower;
        st.upper = intervals[s].upper;
        const auto col = information.col(static_cast<Eigen::Index>(s));
        st.total = col.sum();
        st.informative = st.total > 0.0;
        if (!(st.upper > st.lower))
            table.warnings.push_back("stage " + std::to_string(st.stage) + " has an empty latent interval");
        if (!st.informative)
            table.warnings.push_back("stage " + std::to_string(st.stage) + " carries no information; shares undefined");
        std::vector<std::size_t> order(items.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return col(static_cast<Eigen::Index>(a)) > col(static_cast<Eigen::Index>(b)); });
        double cum = 0.0;
        for (std::size_t r = 0; r < order.size(); ++r) {
            ItemShare sh;
            sh.item = items[order[r]];
            sh.information = col(static_cast<Eigen::Index>(order[r]));
            sh.rank = static_cast<int>(r) + 1;
            if (st.informative) {
                sh.share = 100.0 * sh.information / st.total;
                cum += *sh.share;
                sh.cumulative = r + 1 == order.size() ? 100.0 : std::min(cum, 100.0);
            }
            st.items.push_back(sh);
        }
        table.stages.push_back(std::move(st));
    }
    return table;
}

InformationTable information_table(const sequencing::MeasurementParams& meas, const std::string& subdimension,
                                   const staging::StageProjection& projection, int threads) {
    const auto intervals = stage_intervals(projection);
    const std::size_t K = meas.items.size(), S = intervals.size();
    if (K == 0) throw ValidationError("no items to rank");
    MatrixXd info(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(S));
    numerics::parallel_for(K * S, threads, [&](std::size_t i) {
        const std::size_t k = i / S, s = i % S;
        info(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) =
            interval_information(meas.items[k], intervals[s].lower, intervals[s].upper);
    });
    std::vector<std::string> ids;
    for (const auto& it : meas.items) ids.push_back(it.item);
    auto table = rank_items(subdimension, ids, intervals, info);
    table.warnings.insert(table.warnings.begin(), projection.warnings.begin(), projection.warnings.end());
    return table;
}

std::string information_csv(const InformationTable& table) {
    std::string out = core::format_csv_row({"subdimension", "stage", "lower", "upper", "stage_information", "rank", "item",
                                            "information", "share", "cumulative"});
    const auto opt = [](const std::optional<double>& v) { return v ? core::format_number(*v) : std::string("NA"); };
    for (const auto& st : table.stages)
        for (const auto& it : st.items)
            out += core::format_csv_row({table.subdimension, std::to_string(st.stage), core::format_number(st.lower),
                                         core::format_number(st.upper), core::format_number(st.total),
                                         std::to_string(it.rank), it.item, core::format_number(it.information),
                                         opt(it.share), opt(it.cumulative)});
    return out;
}

std::string format_information_table(const InformationTable& table, const std::map<std::string, std::string>& labels) {
    std::string out = table.subdimension + "\n";
    for (const auto& st : table.stages) {
        out += "Stage " + std::to_string(st.stage) + " (information " + one_decimal(st.total) + ")\n";
        for (const auto& it : st.items) {
            const auto label = labels.count(it.item) ? labels.at(it.item) : it.item;
            out += std::to_string(it.rank) + " & " + label + " & " + (it.share ? one_decimal(*it.share) : "NA") + " & " +
                   (it.cumulative ? one_decimal(*it.cumulative) : "NA") + "\n";
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const InformationTable& t) {
    nlohmann::json stages = nlohmann::json::array();
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    for (const auto& st : t.stages) {
        nlohmann::json items = nlohmann::json::array();
        for (const auto& it : st.items)
            items.push_back({{"rank", it.rank},
                             {"item", it.item},
                             {"information", it.information},
                             {"share", opt(it.share)},
                             {"cumulative", opt(it.cumulative)}});
        stages.push_back({{"stage", st.stage},
                          {"lower", st.lower},
                          {"upper", st.upper},
                          {"information", st.total},
                          {"informative", st.informative},
                          {"items", items}});
    }
    j = {{"kind", "information_table"}, {"subdimension", t.subdimension}, {"stages", stages}, {"warnings", t.warnings}};
}

}  // namespace fours::selecting
