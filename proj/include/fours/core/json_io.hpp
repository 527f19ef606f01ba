#pragma once

#include "fours/core/csv_io.hpp"
#include "fours/core/selection.hpp"

#include "json.hpp"

namespace fours::core {

void to_json(nlohmann::json& j, const ItemDef& item);
void from_json(const nlohmann::json& j, ItemDef& item);
void to_json(nlohmann::json& j, const Subdimension& dim);
void from_json(const nlohmann::json& j, Subdimension& dim);
void to_json(nlohmann::json& j, const ScaleStructure& s);
void from_json(const nlohmann::json& j, ScaleStructure& s);
void to_json(nlohmann::json& j, const CohortSchema& s);
void from_json(const nlohmann::json& j, CohortSchema& s);
void to_json(nlohmann::json& j, const SelectionReport& r);

}  // namespace fours::core
