#pragma once

#include "fours/core/cohort.hpp"
#include "fours/structuring/factor.hpp"
#include "fours/structuring/monotonicity.hpp"
#include "fours/structuring/polychoric.hpp"

#include "json.hpp"

#include <map>
#include <optional>

namespace fours::structuring {

struct StructuringOptions {
    int replicates = 50;
    std::uint64_t seed = 1;
    EfaOptions efa;
    CfaThresholds cfa;
    double residual_threshold = 0.2;
    double consistency = 0.8;
    double monotonicity_tolerance = 0.05;
    int threads = 1;

    void validate() const;
};

struct ReplicateResult {
    int index = 0;
    std::vector<std::size_t> items;   // scale indices entering the EFA
    std::vector<std::size_t> excluded;
    EfaResult efa;
    std::optional<CfaFit> cfa;        // absent when fewer than two items were assigned
    std::vector<std::pair<std::size_t, std::size_t>> flagged_pairs;  // scale indices
    std::vector<std::string> warnings;
    bool usable = true;               // false when the CFA did not converge
};

// Replicate pipeline: polychoric matrix, EFA, CFA of the EFA assignment and
// residual flags.
ReplicateResult analyze_replicate(const ReplicateSample& sample, const core::ScaleDefinition& scale,
                                  const StructuringOptions& options);

struct ItemSummary {
    std::string item;
    std::vector<int> counts;            // per aggregated subdimension
    int unassigned = 0;
    std::vector<double> mean_loadings;  // per aggregated subdimension
    std::string decision;               // "assigned", "dropped" or "needs review"
    int subdimension = -1;
};

struct PairSummary {
    std::string item_a;
    std::string item_b;
    int flagged = 0;
    int replicates = 0;
    double mean_residual = 0.0;
};

struct StructuringReport {
    std::vector<ReplicateResult> replicates;
    std::vector<std::string> subdimension_labels;
    std::vector<ItemSummary> items;
    std::vector<PairSummary> residual_pairs;
    core::ScaleStructure structure;
    std::vector<std::string> needs_review;
    std::vector<std::string> dropped;
    int usable_replicates = 0;
    double cfa_pass_rate = 0.0;  // share of usable replicates meeting CFI, TLI and SRMR
    std::map<std::string, double> monotonicity_pass_rate;  // per assigned item
    std::vector<std::string> warnings;
};

// Aligns factor labels across replicates and tallies item assignments.
StructuringReport aggregate_structure(const std::vector<ReplicateResult>& replicates,
                                      const core::ScaleDefinition& scale, double consistency = 0.8);

// Full structuring run: resampling, per-replicate analysis, aggregation and
// monotonicity checks of the proposed structure.
StructuringReport run_structuring(const core::CohortDataset& data, const StructuringOptions& options);

nlohmann::json to_json(const StructuringReport& report, const core::ScaleDefinition& scale);

// Long table of monotonicity curves for the proposed structure on replicate 0.
std::string monotonicity_csv(const core::CohortDataset& data, const StructuringReport& report,
                             const StructuringOptions& options);

}  // namespace fours::structuring
