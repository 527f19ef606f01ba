#include "fours/core/selection.hpp"

#include "fours/errors.hpp"

namespace fours::core {

std::string to_string(AnalysisStep step) {
    return step == AnalysisStep::Sequencing ? "sequencing" : "staging";
}

StepSample select_step_sample(const CohortDataset& data, AnalysisStep step, const std::vector<Subdimension>& dims) {
    if (dims.empty()) throw ValidationError("select_step_sample needs at least one subdimension");

    std::vector<std::vector<std::size_t>> dim_index;
    for (const auto& d : dims) {
        if (d.items.empty()) throw ValidationError("subdimension '" + d.name + "' has no items");
        std::vector<std::size_t> idx;
        for (const auto& id : d.items) idx.push_back(data.scale.index_of(id));
        dim_index.push_back(std::move(idx));
    }

    StepSample out;
    auto& rep = out.report;
    rep.step = step;
    rep.patients_in = data.patients.size();
    rep.visits_in = data.visit_count();
    out.data.scale = data.scale;
    out.data.covariate_names = data.covariate_names;
    out.data.n_stages = data.n_stages;
    out.data.n_causes = data.n_causes;

    for (const auto& p : data.patients) {
        if (!p.has_complete_covariates(data.covariate_names)) {
            ++rep.patients_missing_covariates;
            rep.visits_of_patients_missing_covariates += p.visits.size();
            continue;
        }
        PatientRecord kept = p;
        kept.visits.clear();
        for (const auto& v : p.visits) {
            bool any_empty = false;
            bool low_coverage = false;
            for (const auto& idx : dim_index) {
                std::size_t observed = 0;
                for (auto k : idx)
                    if (v.responses[k]) ++observed;
                if (observed == 0) any_empty = true;
                if (static_cast<double>(observed) < kStagingItemCoverage * static_cast<double>(idx.size()))
                    low_coverage = true;
            }
            if (any_empty) {
                ++rep.visits_without_item_per_subdimension;
                continue;
            }
            if (step == AnalysisStep::Staging) {
                if (!v.stage) {
                    ++rep.visits_missing_stage;
                    continue;
                }
                if (low_coverage) {
                    ++rep.visits_below_item_coverage;
                    continue;
                }
            }
            kept.visits.push_back(v);
        }
        if (kept.visits.empty()) {
            ++rep.patients_without_visits;
            continue;
        }
        out.data.patients.push_back(std::move(kept));
    }

    rep.patients_out = out.data.patients.size();
    rep.visits_out = out.data.visit_count();
    if (rep.patients_out == 0) throw EmptySampleError("no patients left after " + to_string(step) + " selection");
    return out;
}

}  // namespace fours::core
