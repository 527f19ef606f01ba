#pragma once

#include "fours/sequencing/jlpm.hpp"
#include "fours/staging/staging.hpp"

#include "json.hpp"

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fours::selecting {

// Outer stages are cut at this many latent SDs.
inline constexpr double kLatentBound = 12.0;

// Fisher information sum_m P'_m^2 / P_m of one item at latent level delta,
// over the item's observed categories.
double item_information(const sequencing::ItemMeasurement& item, double delta);
double item_information(const sequencing::MeasurementParams& meas, std::size_t item, double delta);

// Derivative of each category probability with respect to delta.
Eigen::VectorXd category_slopes(const sequencing::ItemMeasurement& item, double delta);

struct StageInterval {
    int stage = 1;
    double lower = -kLatentBound;
    double upper = kLatentBound;
};

// Latent interval of every stage. A stage whose entry transition is missing
// from the projection gets an empty interval at the next boundary above.
std::vector<StageInterval> stage_intervals(const staging::StageProjection& projection);

// Information over [lower, upper] as the integral of sum_m P'^2/P minus the
// boundary terms of sum_m P''. Empty intervals give 0.
double interval_information(const sequencing::ItemMeasurement& item, double lower, double upper);
double stage_information(const sequencing::MeasurementParams& meas, const staging::StageProjection& projection,
                         std::size_t item, int stage);

struct ItemShare {
    std::string item;
    double information = 0.0;
    std::optional<double> share;       // percent of the stage total
    std::optional<double> cumulative;  // percent, in rank order
    int rank = 0;
};

struct StageInformation {
    int stage = 1;
    double lower = 0.0;
    double upper = 0.0;
    double total = 0.0;
    bool informative = true;
    std::vector<ItemShare> items;  // rank order
};

struct InformationTable {
    std::string subdimension;
    std::vector<StageInformation> stages;
    std::vector<std::string> warnings;
};

// Ranks items within each stage by information; `information` is items x
// stages. Ties keep the order of `items`.
InformationTable rank_items(const std::string& subdimension, const std::vector<std::string>& items,
                            const std::vector<StageInterval>& intervals, const Eigen::MatrixXd& information);

// Stage information of every item of a sequencing fit, ranked.
InformationTable information_table(const sequencing::MeasurementParams& meas, const std::string& subdimension,
                                   const staging::StageProjection& projection, int threads = 1);

std::string information_csv(const InformationTable& table);
// Rank, label, Info % and Cum Info % per stage with one decimal; `labels`
// maps item ids to display names.
std::string format_information_table(const InformationTable& table,
                                     const std::map<std::string, std::string>& labels = {});

void to_json(nlohmann::json& j, const InformationTable& table);

}  // namespace fours::selecting
