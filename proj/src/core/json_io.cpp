#include "fours/core/json_io.hpp"

namespace fours::core {

void to_json(nlohmann::json& j, const ItemDef& item) { j = {{"id", item.id}, {"max_level", item.max_level}}; }

void from_json(const nlohmann::json& j, ItemDef& item) {
    j.at("id").get_to(item.id);
    j.at("max_level").get_to(item.max_level);
}

void to_json(nlohmann::json& j, const Subdimension& dim) { j = {{"name", dim.name}, {"items", dim.items}}; }

void from_json(const nlohmann::json& j, Subdimension& dim) {
    j.at("name").get_to(dim.name);
    j.at("items").get_to(dim.items);
}

void to_json(nlohmann::json& j, const ScaleStructure& s) { j = {{"subdimensions", s.subdimensions}}; }

void from_json(const nlohmann::json& j, ScaleStructure& s) { j.at("subdimensions").get_to(s.subdimensions); }

void to_json(nlohmann::json& j, const CohortSchema& s) {
    j = {{"patient_column", s.patient_column},
         {"time_column", s.time_column},
         {"stage_column", s.stage_column},
         {"event_time_column", s.event_time_column},
         {"event_cause_column", s.event_cause_column},
         {"items", s.items},
         {"covariates", s.covariates},
         {"n_stages", s.n_stages},
         {"n_causes", s.n_causes}};
}

void from_json(const nlohmann::json& j, CohortSchema& s) {
    s = CohortSchema{};
    s.patient_column = j.value("patient_column", s.patient_column);
    s.time_column = j.value("time_column", s.time_column);
    s.stage_column = j.value("stage_column", s.stage_column);
    s.event_time_column = j.value("event_time_column", s.event_time_column);
    s.event_cause_column = j.value("event_cause_column", s.event_cause_column);
    j.at("items").get_to(s.items);
    if (j.contains("covariates")) j.at("covariates").get_to(s.covariates);
    s.n_stages = j.value("n_stages", s.n_stages);
    s.n_causes = j.value("n_causes", s.n_causes);
}

void to_json(nlohmann::json& j, const SelectionReport& r) {
    j = {{"step", to_string(r.step)},
         {"patients_in", r.patients_in},
         {"visits_in", r.visits_in},
         {"patients_out", r.patients_out},
         {"visits_out", r.visits_out},
         {"removed",
          {{"patients_missing_covariates", r.patients_missing_covariates},
           {"visits_of_patients_missing_covariates", r.visits_of_patients_missing_covariates},
           {"visits_without_item_per_subdimension", r.visits_without_item_per_subdimension},
           {"visits_missing_stage", r.visits_missing_stage},
           {"visits_below_item_coverage", r.visits_below_item_coverage},
           {"patients_without_visits", r.patients_without_visits}}}};
}

}  // namespace fours::core
