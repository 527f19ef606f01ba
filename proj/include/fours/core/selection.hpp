#pragma once

#include "fours/core/cohort.hpp"

#include <string>

namespace fours::core {

enum class AnalysisStep { Sequencing, Staging };

struct SelectionReport {
    AnalysisStep step = AnalysisStep::Sequencing;
    std::size_t patients_in = 0;
    std::size_t visits_in = 0;
    std::size_t patients_out = 0;
    std::size_t visits_out = 0;
    std::size_t patients_missing_covariates = 0;
    std::size_t visits_of_patients_missing_covariates = 0;
    std::size_t visits_without_item_per_subdimension = 0;
    std::size_t visits_missing_stage = 0;
    std::size_t visits_below_item_coverage = 0;
    std::size_t patients_without_visits = 0;
};

struct StepSample {
    CohortDataset data;
    SelectionReport report;
};

// Minimum observed-item fraction per subdimension for the staging sample.
inline constexpr double kStagingItemCoverage = 0.75;

// Step-specific filtering. Sequencing keeps visits with at least one observed
// item in every subdimension and patients with complete covariates; Staging
// additionally requires an observed stage and at least 75% observed items per
// subdimension. Patients left without visits are dropped.
StepSample select_step_sample(const CohortDataset& data, AnalysisStep step, const std::vector<Subdimension>& dims);

std::string to_string(AnalysisStep step);

}  // namespace fours::core
