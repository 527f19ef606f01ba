#pragma once

#include "fours/core/cohort.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fours::core {

// Column mapping for the long visit file and the per-patient events file.
// Item columns are named after the item ids; covariate columns live in the
// events file and must already be numeric.
struct CohortSchema {
    std::string patient_column = "patient_id";
    std::string time_column = "time";
    std::string stage_column = "stage";  // empty when no stage column exists
    std::string event_time_column = "event_time";
    std::string event_cause_column = "event_cause";
    std::vector<ItemDef> items;
    std::vector<std::string> covariates;
    int n_stages = 2;
    int n_causes = 1;
};

struct CohortFiles {
    std::filesystem::path visits;
    std::filesystem::path events;
};

// Minimal RFC 4180 reader: header row, comma separated, double-quoted fields.
// Lines starting with '#' before the header are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based file line of each row

    std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);
std::string format_csv_row(const std::vector<std::string>& fields);

// Shortest round-trip decimal representation.
std::string format_number(double value);

CohortDataset load_cohort(const CohortFiles& files, const CohortSchema& schema);
void save_cohort(const CohortDataset& data, const CohortFiles& files);
// The canonical CSV text written by save_cohort.
std::string cohort_visits_csv(const CohortDataset& data);
std::string cohort_events_csv(const CohortDataset& data);
CohortSchema schema_of(const CohortDataset& data);

// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace fours::core
