#include "fours/core/csv_io.hpp"

#include "fours/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <system_error>

namespace fours::core {

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw ValidationError("missing CSV column '" + name + "'");
}

CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_quoted = false;
    std::size_t line = 1;
    std::size_t record_line = 1;

    auto finish_record = [&] {
        record.push_back(field);
        field.clear();
        field_quoted = false;
        const bool blank = record.size() == 1 && record[0].empty();
        if (!blank) {
            if (table.header.empty()) {
                table.header = std::move(record);
            } else {
                if (record.size() != table.header.size())
                    throw ParseError("expected " + std::to_string(table.header.size()) + " fields, found " +
                                         std::to_string(record.size()),
                                     record_line);
                table.rows.push_back(std::move(record));
                table.line_numbers.push_back(record_line);
            }
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        // '#' lines before the header are comments
        if (c == '#' && table.header.empty() && record.empty() && field.empty() && !field_quoted) {
            while (i + 1 < text.size() && text[i + 1] != '\n') ++i;
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty() || field_quoted) throw ParseError("unexpected quote inside field", line);
                in_quotes = true;
                field_quoted = true;
                break;
            case ',':
                record.push_back(field);
                field.clear();
                field_quoted = false;
                break;
            case '\r':
                break;
            case '\n':
                finish_record();
                ++line;
                record_line = line;
                break;
            default:
                if (field_quoted) throw ParseError("characters after closing quote", line);
                field += c;
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted field", record_line);
    if (!field.empty() || !record.empty()) finish_record();
    if (table.header.empty()) throw ParseError("empty CSV file", 1);
    return table;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string format_csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        const auto& f = fields[i];
        if (f.find_first_of(",\"\n\r") != std::string::npos) {
            out += '"';
            for (char c : f) {
                if (c == '"') out += '"';
                out += c;
            }
            out += '"';
        } else {
            out += f;
        }
    }
    out += '\n';
    return out;
}

std::string format_number(double value) {
    if (std::isnan(value)) return "NA";
    if (value == 0.0) return "0";  // folds -0
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
        out << contents;
        out.flush();
        if (!out) throw ValidationError("failed writing '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

namespace {

bool is_missing(const std::string& s) { return s.empty() || s == "NA"; }

double parse_real(const std::string& s, std::size_t line, const std::string& what) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw ParseError("malformed number '" + s + "' in " + what, line);
    return v;
}

int parse_int(const std::string& s, std::size_t line, const std::string& what) {
    const double v = parse_real(s, line, what);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw ParseError("expected an integer for " + what + ", got '" + s + "'", line);
    return static_cast<int>(v);
}

}  // namespace

CohortDataset load_cohort(const CohortFiles& files, const CohortSchema& schema) {
    CohortDataset data;
    data.scale.items = schema.items;
    data.scale.validate();
    data.covariate_names = schema.covariates;
    data.n_stages = schema.n_stages;
    data.n_causes = schema.n_causes;

    const auto events = read_csv(files.events);
    const auto ev_id = events.column(schema.patient_column);
    const auto ev_time = events.column(schema.event_time_column);
    const auto ev_cause = events.column(schema.event_cause_column);
    std::vector<std::size_t> cov_cols;
    for (const auto& c : schema.covariates) cov_cols.push_back(events.column(c));

    std::map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < events.rows.size(); ++r) {
        const auto& row = events.rows[r];
        const auto line = events.line_numbers[r];
        PatientRecord p;
        p.id = row[ev_id];
        if (p.id.empty()) throw ParseError("empty patient id", line);
        if (!index.emplace(p.id, data.patients.size()).second)
            throw ValidationError("duplicate patient id '" + p.id + "' in events file");
        p.event_time = parse_real(row[ev_time], line, schema.event_time_column);
        p.event_cause = parse_int(row[ev_cause], line, schema.event_cause_column);
        for (std::size_t c = 0; c < cov_cols.size(); ++c) {
            const auto& cell = row[cov_cols[c]];
            p.covariates[schema.covariates[c]] =
                is_missing(cell) ? std::numeric_limits<double>::quiet_NaN() : parse_real(cell, line, schema.covariates[c]);
        }
        data.patients.push_back(std::move(p));
    }

    const auto visits = read_csv(files.visits);
    const auto v_id = visits.column(schema.patient_column);
    const auto v_time = visits.column(schema.time_column);
    std::optional<std::size_t> v_stage;
    if (!schema.stage_column.empty()) v_stage = visits.column(schema.stage_column);
    std::vector<std::size_t> item_cols;
    for (const auto& item : schema.items) item_cols.push_back(visits.column(item.id));

    for (std::size_t r = 0; r < visits.rows.size(); ++r) {
        const auto& row = visits.rows[r];
        const auto line = visits.line_numbers[r];
        auto it = index.find(row[v_id]);
        if (it == index.end()) throw ValidationError("visit for unknown patient '" + row[v_id] + "' (row " + std::to_string(line) + ")");
        Visit v;
        v.time = parse_real(row[v_time], line, schema.time_column);
        v.responses.resize(schema.items.size());
        for (std::size_t k = 0; k < item_cols.size(); ++k) {
            const auto& cell = row[item_cols[k]];
            if (is_missing(cell)) continue;
            const int level = parse_int(cell, line, schema.items[k].id);
            if (level < 0 || level > schema.items[k].max_level)
                throw ValidationError("patient '" + row[v_id] + "': level " + std::to_string(level) + " of item '" +
                                      schema.items[k].id + "' outside [0, " + std::to_string(schema.items[k].max_level) +
                                      "] (row " + std::to_string(line) + ")");
            v.responses[k] = level;
        }
        if (v_stage && !is_missing(row[*v_stage])) v.stage = parse_int(row[*v_stage], line, schema.stage_column);
        data.patients[it->second].visits.push_back(std::move(v));
    }
    for (auto& p : data.patients)
        std::stable_sort(p.visits.begin(), p.visits.end(), [](const Visit& a, const Visit& b) { return a.time < b.time; });

    data.validate();
    return data;
}

CohortSchema schema_of(const CohortDataset& data) {
    CohortSchema s;
    s.items = data.scale.items;
    s.covariates = data.covariate_names;
    s.n_stages = data.n_stages;
    s.n_causes = data.n_causes;
    return s;
}

std::string cohort_visits_csv(const CohortDataset& data) {
    const CohortSchema s = schema_of(data);
    std::vector<std::string> header{s.patient_column, s.time_column, s.stage_column};
    for (const auto& item : data.scale.items) header.push_back(item.id);
    std::string out = format_csv_row(header);
    for (const auto& p : data.patients) {
        for (const auto& v : p.visits) {
            std::vector<std::string> row{p.id, format_number(v.time), v.stage ? std::to_string(*v.stage) : "NA"};
            for (const auto& r : v.responses) row.push_back(r ? std::to_string(*r) : "NA");
            out += format_csv_row(row);
        }
    }
    return out;
}

std::string cohort_events_csv(const CohortDataset& data) {
    const CohortSchema s = schema_of(data);
    std::vector<std::string> header{s.patient_column, s.event_time_column, s.event_cause_column};
    for (const auto& c : data.covariate_names) header.push_back(c);
    std::string out = format_csv_row(header);
    for (const auto& p : data.patients) {
        std::vector<std::string> row{p.id, format_number(p.event_time), std::to_string(p.event_cause)};
        for (const auto& c : data.covariate_names) {
            auto it = p.covariates.find(c);
            row.push_back(it == p.covariates.end() ? "NA" : format_number(it->second));
        }
        out += format_csv_row(row);
    }
    return out;
}

void save_cohort(const CohortDataset& data, const CohortFiles& files) {
    write_file_atomic(files.visits, cohort_visits_csv(data));
    write_file_atomic(files.events, cohort_events_csv(data));
}

}  // namespace fours::core
