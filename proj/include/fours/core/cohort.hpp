#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fours::core {

struct ItemDef {
    std::string id;
    int max_level = 1;  // levels are 0..max_level
};

struct ScaleDefinition {
    std::vector<ItemDef> items;

    // Index of `id` in items; throws ValidationError when unknown.
    std::size_t index_of(const std::string& id) const;
    std::optional<std::size_t> find(const std::string& id) const;
    void validate() const;
};

struct Visit {
    double time = 0.0;                            // years since entry
    std::vector<std::optional<int>> responses;    // aligned with ScaleDefinition::items
    std::optional<int> stage;                     // 1..S
};

struct PatientRecord {
    std::string id;
    std::map<std::string, double> covariates;     // NaN or absent means missing
    std::vector<Visit> visits;                    // strictly increasing in time
    double event_time = 0.0;                      // T_i, >= last visit time
    int event_cause = 0;                          // 0 = censored, else 1..P

    bool has_complete_covariates(const std::vector<std::string>& names) const;
    // Throws ValidationError when the covariate is missing.
    double covariate(const std::string& name) const;
};

struct CohortDataset {
    ScaleDefinition scale;
    std::vector<std::string> covariate_names;
    std::vector<PatientRecord> patients;
    int n_stages = 2;
    int n_causes = 1;

    std::size_t visit_count() const;
    void validate() const;
};

struct Subdimension {
    std::string name;
    std::vector<std::string> items;
};

// Partition of (a subset of) the scale items into disjoint subdimensions.
struct ScaleStructure {
    std::vector<Subdimension> subdimensions;

    void validate(const ScaleDefinition& scale) const;
    const Subdimension& at(const std::string& name) const;
};

// Sum of observed levels rescaled by total/observed maximum levels, or empty
// when the missing fraction among the subdimension items exceeds
// `max_missing_frac`.
std::optional<double> prorated_sum_score(const ScaleDefinition& scale, const Visit& visit, const Subdimension& dim,
                                         double max_missing_frac = 0.25);

// Sum of max levels of the subdimension items.
int max_sum_score(const ScaleDefinition& scale, const Subdimension& dim);

}  // namespace fours::core
