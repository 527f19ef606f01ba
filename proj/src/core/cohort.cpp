#include "fours/core/cohort.hpp"

#include "fours/errors.hpp"

#include <cmath>
#include <set>

namespace fours::core {

std::optional<std::size_t> ScaleDefinition::find(const std::string& id) const {
    for (std::size_t i = 0; i < items.size(); ++i)
        if (items[i].id == id) return i;
    return std::nullopt;
}

std::size_t ScaleDefinition::index_of(const std::string& id) const {
    if (auto i = find(id)) return *i;
    throw ValidationError("unknown item '" + id + "'");
}

void ScaleDefinition::validate() const {
    if (items.empty()) throw ValidationError("scale has no items");
    std::set<std::string> seen;
    for (const auto& item : items) {
        if (item.id.empty()) throw ValidationError("item with empty id");
        if (!seen.insert(item.id).second) throw ValidationError("duplicate item id '" + item.id + "'");
        if (item.max_level < 1) throw ValidationError("item '" + item.id + "' must have max_level >= 1");
    }
}

bool PatientRecord::has_complete_covariates(const std::vector<std::string>& names) const {
    for (const auto& name : names) {
        auto it = covariates.find(name);
        if (it == covariates.end() || !std::isfinite(it->second)) return false;
    }
    return true;
}

double PatientRecord::covariate(const std::string& name) const {
    auto it = covariates.find(name);
    if (it == covariates.end() || !std::isfinite(it->second))
        throw ValidationError("patient '" + id + "' is missing covariate '" + name + "'");
    return it->second;
}

std::size_t CohortDataset::visit_count() const {
    std::size_t n = 0;
    for (const auto& p : patients) n += p.visits.size();
    return n;
}

void CohortDataset::validate() const {
    scale.validate();
    if (n_stages < 2) throw ValidationError("cohort must declare at least 2 stages");
    if (n_causes < 1) throw ValidationError("cohort must declare at least 1 event cause");
    std::set<std::string> ids;
    bool any_response = false;
    for (const auto& p : patients) {
        if (!ids.insert(p.id).second) throw ValidationError("duplicate patient id '" + p.id + "'");
        if (!(std::isfinite(p.event_time) && p.event_time > 0.0))
            throw ValidationError("patient '" + p.id + "': event time must be positive");
        if (p.event_cause < 0 || p.event_cause > n_causes)
            throw ValidationError("patient '" + p.id + "': event cause out of [0, " + std::to_string(n_causes) + "]");
        for (const auto& [name, value] : p.covariates)
            if (std::isinf(value)) throw ValidationError("patient '" + p.id + "': infinite covariate '" + name + "'");
        double last = -1.0;
        for (const auto& v : p.visits) {
            if (!(std::isfinite(v.time) && v.time >= 0.0))
                throw ValidationError("patient '" + p.id + "': visit time must be nonnegative");
            if (!(v.time > last)) throw ValidationError("patient '" + p.id + "': visit times must be strictly increasing");
            last = v.time;
            if (v.responses.size() != scale.items.size())
                throw ValidationError("patient '" + p.id + "': response vector does not match the scale");
            for (std::size_t k = 0; k < v.responses.size(); ++k) {
                if (!v.responses[k]) continue;
                any_response = true;
                const int level = *v.responses[k];
                if (level < 0 || level > scale.items[k].max_level)
                    throw ValidationError("patient '" + p.id + "': level " + std::to_string(level) + " of item '" +
                                          scale.items[k].id + "' outside [0, " +
                                          std::to_string(scale.items[k].max_level) + "]");
            }
            if (v.stage && (*v.stage < 1 || *v.stage > n_stages))
                throw ValidationError("patient '" + p.id + "': stage " + std::to_string(*v.stage) + " outside [1, " +
                                      std::to_string(n_stages) + "]");
        }
        if (!p.visits.empty() && p.event_time < p.visits.back().time)
            throw ValidationError("patient '" + p.id + "': event time precedes the last visit");
    }
    if (!any_response) throw ValidationError("cohort has no observed item response");
}

void ScaleStructure::validate(const ScaleDefinition& scale) const {
    std::set<std::string> names;
    std::set<std::string> used;
    for (const auto& d : subdimensions) {
        if (!names.insert(d.name).second) throw ValidationError("duplicate subdimension '" + d.name + "'");
        if (d.items.empty()) throw ValidationError("subdimension '" + d.name + "' has no items");
        for (const auto& id : d.items) {
            scale.index_of(id);
            if (!used.insert(id).second)
                throw ValidationError("item '" + id + "' is assigned to more than one subdimension");
        }
    }
}

const Subdimension& ScaleStructure::at(const std::string& name) const {
    for (const auto& d : subdimensions)
        if (d.name == name) return d;
    throw ValidationError("unknown subdimension '" + name + "'");
}

std::optional<double> prorated_sum_score(const ScaleDefinition& scale, const Visit& visit, const Subdimension& dim,
                                         double max_missing_frac) {
    if (dim.items.empty()) throw DomainError("prorated_sum_score: subdimension has no items");
    if (!(max_missing_frac >= 0.0 && max_missing_frac < 1.0))
        throw DomainError("prorated_sum_score: max_missing_frac must lie in [0, 1)");
    double sum = 0.0;
    double total_max = 0.0;
    double observed_max = 0.0;
    std::size_t missing = 0;
    for (const auto& id : dim.items) {
        const auto k = scale.index_of(id);
        const int m = scale.items[k].max_level;
        total_max += m;
        if (visit.responses[k]) {
            sum += *visit.responses[k];
            observed_max += m;
        } else {
            ++missing;
        }
    }
    const double frac = static_cast<double>(missing) / static_cast<double>(dim.items.size());
    if (frac > max_missing_frac || observed_max == 0.0) return std::nullopt;
    if (missing == 0) return sum;
    return sum * total_max / observed_max;
}

int max_sum_score(const ScaleDefinition& scale, const Subdimension& dim) {
    int total = 0;
    for (const auto& id : dim.items) total += scale.items[scale.index_of(id)].max_level;
    return total;
}

}  // namespace fours::core
