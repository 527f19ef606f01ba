#include "fours/cli/pipeline.hpp"

#include "fours/core/csv_io.hpp"
#include "fours/core/json_io.hpp"
#include "fours/errors.hpp"
#include "fours/numerics/random.hpp"
#include "fours/selecting/selecting.hpp"
#include "fours/sequencing/jlpm.hpp"
#include "fours/simulation/simulation.hpp"
#include "fours/staging/staging.hpp"
#include "fours/structuring/structuring.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <iostream>
#include <map>

#ifndef FOURS_VERSION
#define FOURS_VERSION "0.0.0"
#endif

namespace fours::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void note(const std::string& message) { std::cerr << "fours: " << message << "\n"; }

void warn_all(const std::string& context, const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) note("warning: " + context + ": " + w);
}

json provenance(const RunConfig& c) {
    return {{"tool", "fours"}, {"version", tool_version()}, {"config_hash", c.hash}};
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    core::write_file_atomic(path, text);
    note("wrote " + path.string());
}

void write_csv(const RunConfig& c, const fs::path& path, const std::string& csv) {
    write_text(path, "# fours " + tool_version() + " config " + c.hash + "\n" + csv);
}

void write_json(const RunConfig& c, const fs::path& path, json j) {
    j["provenance"] = provenance(c);
    write_text(path, j.dump(2) + "\n");
}

void require_file(const fs::path& path, const std::string& hint) {
    if (!fs::is_regular_file(path))
        throw ValidationError("missing upstream artifact '" + path.string() + "'; " + hint);
}

json read_json(const fs::path& path, const std::string& hint) {
    require_file(path, hint);
    return json::parse(core::read_file(path));
}

core::CohortDataset load_run_cohort(const RunConfig& c) {
    const auto sec = c.section("cohort");
    core::CohortFiles files;
    core::CohortSchema schema;
    if (!sec.empty()) {
        files.visits = c.input_path(sec.at("visits").get<std::string>());
        files.events = c.input_path(sec.at("events").get<std::string>());
        const auto& s = sec.at("schema");
        if (s.is_string()) {
            const auto path = c.input_path(s.get<std::string>());
            if (!fs::is_regular_file(path)) throw ValidationError("cohort schema '" + path.string() + "' does not exist");
            schema = json::parse(core::read_file(path)).get<core::CohortSchema>();
        } else {
            schema = s.get<core::CohortSchema>();
        }
        for (const auto& f : {files.visits, files.events})
            if (!fs::is_regular_file(f)) throw ValidationError("cohort file '" + f.string() + "' does not exist");
    } else {
        const auto dir = c.out_dir / "cohort";
        const std::string hint = "configure 'cohort' or run 'fours simulate' first";
        files.visits = dir / "visits.csv";
        files.events = dir / "events.csv";
        require_file(files.visits, hint);
        require_file(files.events, hint);
        schema = read_json(dir / "schema.json", hint).get<core::CohortSchema>();
    }
    return core::load_cohort(files, schema);
}

core::ScaleStructure load_structure(const RunConfig& c, const core::ScaleDefinition* scale) {
    const auto sec = c.section("structure");
    fs::path path;
    if (sec.contains("file")) {
        path = c.input_path(sec.at("file").get<std::string>());
        if (!fs::is_regular_file(path)) throw ValidationError("structure file '" + path.string() + "' does not exist");
    } else {
        path = c.out_dir / "structure" / "structure.json";
        require_file(path, "run 'fours structure' first or set structure.file");
    }
    auto structure = json::parse(core::read_file(path)).get<core::ScaleStructure>();
    if (scale) structure.validate(*scale);
    if (structure.subdimensions.empty()) throw ValidationError("structure '" + path.string() + "' has no subdimensions");
    return structure;
}

// Subdimensions of the structure, restricted to the section's list when given.
std::vector<core::Subdimension> chosen(const core::ScaleStructure& structure, const json& section) {
    if (!section.contains("subdimensions")) return structure.subdimensions;
    std::vector<core::Subdimension> out;
    for (const auto& name : section.at("subdimensions").get<std::vector<std::string>>()) out.push_back(structure.at(name));
    return out;
}

// Section options without the CLI-level keys, with the subdimension added.
json spec_document(json section, const core::Subdimension& dim) {
    if (!section.is_object()) throw ValidationError("config section must be an object");
    section.erase("subdimensions");
    section["subdimension"] = dim;
    return section;
}

fs::path fit_dir(const RunConfig& c, const std::string& step, const std::string& subdimension) {
    return c.out_dir / step / artifact_name(subdimension);
}

std::string sha256_hex(const std::string& text) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

std::vector<double> grid(double lo, double hi, int n) {
    if (n < 2) throw ValidationError("a time grid needs at least two points");
    std::vector<double> out;
    for (int i = 0; i < n; ++i) out.push_back(i + 1 == n ? hi : lo + (hi - lo) * i / (n - 1));
    return out;
}

// Rows of a CSV text, prefixed with extra fields.
std::string prefixed_rows(const std::string& csv, const std::vector<std::string>& prefix, std::string* header) {
    const auto table = core::parse_csv(csv);
    auto head = prefix.empty() ? std::vector<std::string>{} : std::vector<std::string>{"subdimension"};
    head.insert(head.end(), table.header.begin(), table.header.end());
    if (header) *header = core::format_csv_row(head);
    std::string out;
    for (auto row : table.rows) {
        row.insert(row.begin(), prefix.begin(), prefix.end());
        out += core::format_csv_row(row);
    }
    return out;
}

}  // namespace

std::string tool_version() { return FOURS_VERSION; }

json RunConfig::section(const std::string& name) const {
    if (!document.contains(name)) return json::object();
    const auto& s = document.at(name);
    if (!s.is_object()) throw ValidationError("config section '" + name + "' must be an object");
    return s;
}

fs::path RunConfig::input_path(const std::string& value) const {
    const fs::path p(value);
    return p.is_absolute() ? p : base_dir / p;
}

std::string config_hash(const json& document) {
    auto canonical = document;
    canonical.erase("out");
    canonical.erase("threads");
    return sha256_hex(canonical.dump());
}

RunConfig make_config(json document, const fs::path& base_dir, const Overrides& overrides) {
    if (!document.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& entry : overrides.set) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + entry + "'");
        std::string pointer = "/" + entry.substr(0, eq);
        std::replace(pointer.begin(), pointer.end(), '.', '/');
        const auto text = entry.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        document[json::json_pointer(pointer)] = value;
    }
    if (overrides.seed) document["seed"] = *overrides.seed;
    if (overrides.threads) document["threads"] = *overrides.threads;

    RunConfig c;
    c.base_dir = base_dir;
    if (document.contains("seed")) {
        const auto& s = document.at("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
            throw ValidationError("seed must be a non-negative integer");
    }
    c.seed = document.value("seed", std::uint64_t{1});
    document["seed"] = c.seed;
    c.threads = document.value("threads", 1);
    if (c.threads < 1) throw ValidationError("threads must be at least 1");
    if (overrides.out) {
        c.out_dir = fs::absolute(*overrides.out);
        document["out"] = overrides.out->string();
    } else {
        c.out_dir = c.input_path(document.value("out", std::string("fours-run")));
    }
    c.hash = config_hash(document);
    c.document = std::move(document);
    return c;
}

RunConfig load_config(const fs::path& path, const Overrides& overrides) {
    if (!fs::is_regular_file(path)) throw ValidationError("config file '" + path.string() + "' does not exist");
    json document;
    try {
        document = json::parse(core::read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return make_config(std::move(document), fs::absolute(path).parent_path(), overrides);
}

std::uint64_t stream_seed(const RunConfig& config, SeedStream stream) {
    return numerics::derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

std::string artifact_name(const std::string& subdimension) {
    std::string out;
    for (char ch : subdimension) {
        const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
        out += keep ? ch : '_';
    }
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

int cmd_simulate(const RunConfig& c) {
    const auto sec = c.section("simulate");
    if (!sec.contains("scenario")) throw ValidationError("simulate needs a 'simulate.scenario' section");
    auto scenario = sec.at("scenario").get<simulation::SimScenario>();
    scenario.seed = stream_seed(c, SeedStream::Simulate);
    const auto sim = simulation::simulate_cohort(scenario);
    const auto dir = c.out_dir / "cohort";
    write_csv(c, dir / "visits.csv", core::cohort_visits_csv(sim.data));
    write_csv(c, dir / "events.csv", core::cohort_events_csv(sim.data));
    write_json(c, dir / "schema.json", core::schema_of(sim.data));
    write_json(c, c.out_dir / "simulate" / "truth.json", sim.truth);
    note("simulated " + std::to_string(sim.data.patients.size()) + " patients with " +
         std::to_string(sim.data.visit_count()) + " visits");
    if (!c.section("cohort").empty()) note("warning: 'cohort' is configured, so later steps ignore the simulated cohort");

    const int replicates = sec.value("replicates", 0);
    if (replicates > 0) {
        simulation::RecoveryOptions opt;
        opt.seeds = replicates;
        opt.threads = c.threads;
        const auto report = simulation::recovery_harness(scenario, opt);
        write_json(c, c.out_dir / "simulate" / "recovery.json", simulation::to_json(report));
        write_csv(c, c.out_dir / "simulate" / "recovery.csv", simulation::recovery_csv(report));
        note("recovery: " + std::to_string(report.converged) + " of " + std::to_string(report.seeds) +
             " replicate fits converged");
    }
    return kSuccess;
}

int cmd_structure(const RunConfig& c) {
    const auto data = load_run_cohort(c);
    const auto sec = c.section("structure");
    structuring::StructuringOptions opt;
    opt.replicates = sec.value("replicates", opt.replicates);
    opt.seed = stream_seed(c, SeedStream::Structure);
    if (sec.contains("n_factors")) opt.efa.n_factors = sec.at("n_factors").get<int>();
    const auto rule = sec.value("factor_rule", std::string("kaiser"));
    if (rule == "kaiser")
        opt.efa.rule = structuring::FactorRule::Kaiser;
    else if (rule == "scree")
        opt.efa.rule = structuring::FactorRule::Scree;
    else
        throw ValidationError("unknown factor_rule '" + rule + "' (kaiser or scree)");
    opt.efa.loading_threshold = sec.value("loading_threshold", opt.efa.loading_threshold);
    if (sec.contains("cfa")) {
        const auto& t = sec.at("cfa");
        opt.cfa.cfi = t.value("cfi", opt.cfa.cfi);
        opt.cfa.tli = t.value("tli", opt.cfa.tli);
        opt.cfa.rmsea = t.value("rmsea", opt.cfa.rmsea);
        opt.cfa.srmr = t.value("srmr", opt.cfa.srmr);
    }
    opt.residual_threshold = sec.value("residual_threshold", opt.residual_threshold);
    opt.consistency = sec.value("consistency", opt.consistency);
    opt.monotonicity_tolerance = sec.value("monotonicity_tolerance", opt.monotonicity_tolerance);
    opt.threads = c.threads;
    opt.validate();

    const auto report = structuring::run_structuring(data, opt);
    warn_all("structure", report.warnings);
    const auto dir = c.out_dir / "structure";
    write_json(c, dir / "report.json", structuring::to_json(report, data.scale));
    write_json(c, dir / "structure.json", report.structure);
    write_csv(c, dir / "monotonicity.csv", structuring::monotonicity_csv(data, report, opt));
    note(std::to_string(report.structure.subdimensions.size()) + " subdimensions from " +
         std::to_string(report.usable_replicates) + " usable replicates");
    return kSuccess;
}

int cmd_sequence(const RunConfig& c) {
    const auto data = load_run_cohort(c);
    const auto structure = load_structure(c, &data.scale);
    const auto sec = c.section("sequence");
    bool converged = true;
    for (const auto& dim : chosen(structure, sec)) {
        auto spec = spec_document(sec, dim).get<sequencing::JlpmSpec>();
        spec.threads = c.threads;
        note("fitting the sequencing model of '" + dim.name + "'");
        const auto fit = sequencing::fit(spec, data);
        warn_all(dim.name, fit.warnings);
        const auto dir = fit_dir(c, "sequence", dim.name);
        write_json(c, dir / "fit.json", sequencing::fit_to_json(fit));
        write_csv(c, dir / "estimates.csv", sequencing::estimates_csv(fit));
        write_csv(c, dir / "sequence.csv", sequencing::sequence_csv(sequencing::impairment_sequence(fit)));
        if (!fit.estimates.converged) {
            note("sequencing fit of '" + dim.name + "': " + fit.estimates.status);
            converged = false;
        }
    }
    return converged ? kSuccess : kNotConverged;
}

int cmd_stage(const RunConfig& c) {
    const auto data = load_run_cohort(c);
    const auto structure = load_structure(c, &data.scale);
    const auto sec = c.section("stage");
    bool converged = true;
    for (const auto& dim : chosen(structure, sec)) {
        auto spec = spec_document(sec, dim).get<staging::StagingSpec>();
        spec.threads = c.threads;
        note("fitting the staging model of '" + dim.name + "'");
        const auto fit = staging::fit_staging(spec, data);
        warn_all(dim.name, fit.warnings);
        const auto dir = fit_dir(c, "stage", dim.name);
        write_json(c, dir / "fit.json", staging::staging_fit_to_json(fit));
        write_csv(c, dir / "estimates.csv", staging::staging_estimates_csv(fit));
        if (!fit.estimates.converged) {
            note("staging fit of '" + dim.name + "': " + fit.estimates.status);
            converged = false;
        }
    }
    return converged ? kSuccess : kNotConverged;
}

int cmd_select(const RunConfig& c) {
    const auto structure = load_structure(c, nullptr);
    const auto sec = c.section("select");
    const int mc_draws = sec.value("mc_draws", 2000);
    const auto labels = sec.value("labels", std::map<std::string, std::string>{});
    for (const auto& dim : chosen(structure, sec)) {
        const auto seq = sequencing::fit_from_json(
            read_json(fit_dir(c, "sequence", dim.name) / "fit.json", "select needs the sequencing fit of '" + dim.name +
                                                                         "'; run 'fours sequence' first"));
        const auto stg = staging::staging_fit_from_json(
            read_json(fit_dir(c, "stage", dim.name) / "fit.json",
                      "select needs the staging fit of '" + dim.name + "'; run 'fours stage' first"));
        const auto projection = staging::project_stages(seq, stg, mc_draws);
        const auto table = selecting::information_table(seq.measurement, dim.name, projection, c.threads);
        warn_all(dim.name, table.warnings);
        const auto dir = fit_dir(c, "select", dim.name);
        write_json(c, dir / "projection.json", projection);
        write_csv(c, dir / "projection.csv", staging::projection_csv(projection));
        write_json(c, dir / "information.json", table);
        write_csv(c, dir / "information.csv", selecting::information_csv(table));
        write_text(dir / "information.txt", selecting::format_information_table(table, labels));
    }
    return kSuccess;
}

int cmd_report(const RunConfig& c) {
    const auto structure = load_structure(c, nullptr);
    const auto sec = c.section("report");
    const int mc_draws = sec.value("mc_draws", 2000);
    const int n_times = sec.value("n_times", 21);
    json profiles = sec.value("profiles", json::array({{{"name", "reference"}, {"covariates", json::object()}}}));

    std::string traj = core::format_csv_row({"subdimension", "profile", "time", "item", "expected"});
    std::string spider =
        core::format_csv_row({"subdimension", "profile", "time", "item", "expected", "max_level", "relative"});
    std::string bands_header, bands, info_header, info;
    for (const auto& dim : chosen(structure, sec)) {
        const auto fit = sequencing::fit_from_json(read_json(
            fit_dir(c, "sequence", dim.name) / "fit.json", "report needs the sequencing fit of '" + dim.name + "'"));
        const auto select_dir = fit_dir(c, "select", dim.name);
        const auto projection = read_json(select_dir / "projection.json",
                                          "report needs the stage projection of '" + dim.name + "'; run 'fours select' first")
                                    .get<staging::StageProjection>();
        require_file(select_dir / "information.csv", "run 'fours select' first");

        const double horizon = fit.design.time_horizon;
        const auto times = sec.contains("times") ? sec.at("times").get<std::vector<double>>() : grid(0.0, horizon, n_times);
        const auto spider_times = sec.contains("spider_times") ? sec.at("spider_times").get<std::vector<double>>()
                                                               : grid(0.0, horizon, 5);
        for (const auto& p : profiles) {
            const auto name = p.at("name").get<std::string>();
            // covariates left out of a profile sit at 0
            std::map<std::string, double> profile;
            for (const auto& cov : fit.design.covariates) profile[cov] = 0.0;
            const auto given = p.value("covariates", json::object());
            for (const auto& [k, v] : given.items()) {
                if (!profile.count(k)) throw ValidationError("profile '" + name + "' sets unknown covariate '" + k + "'");
                profile[k] = v.get<double>();
            }
            const auto t = sequencing::predict_item_trajectory(fit, profile, times, mc_draws);
            for (std::size_t i = 0; i < t.times.size(); ++i)
                for (std::size_t k = 0; k < t.items.size(); ++k)
                    traj += core::format_csv_row({dim.name, name, core::format_number(t.times[i]), t.items[k],
                                                  core::format_number(t.expected(i, k))});
            const auto s = sequencing::predict_item_trajectory(fit, profile, spider_times, mc_draws);
            for (std::size_t i = 0; i < s.times.size(); ++i)
                for (std::size_t k = 0; k < s.items.size(); ++k) {
                    const int max_level = fit.measurement.items[k].max_level;
                    spider += core::format_csv_row({dim.name, name, core::format_number(s.times[i]), s.items[k],
                                                    core::format_number(s.expected(i, k)), std::to_string(max_level),
                                                    core::format_number(s.expected(i, k) / max_level)});
                }
        }
        bands += prefixed_rows(staging::stage_bands_csv(sequencing::impairment_sequence(fit), projection), {dim.name},
                               &bands_header);
        info += prefixed_rows(core::read_file(select_dir / "information.csv"), {}, &info_header);
    }
    const auto dir = c.out_dir / "report";
    write_csv(c, dir / "trajectories.csv", traj);
    write_csv(c, dir / "spider.csv", spider);
    write_csv(c, dir / "stage_bands.csv", bands_header + bands);
    write_csv(c, dir / "information.csv", info_header + info);
    return kSuccess;
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"structure", "sequence", "stage", "select", "simulate", "report"};
    return names;
}

int run(const std::string& command, const RunConfig& config) {
    try {
        if (command == "simulate") return cmd_simulate(config);
        if (command == "structure") return cmd_structure(config);
        if (command == "sequence") return cmd_sequence(config);
        if (command == "stage") return cmd_stage(config);
        if (command == "select") return cmd_select(config);
        if (command == "report") return cmd_report(config);
        note("unknown command '" + command + "'");
        return kValidation;
    } catch (const ValidationError& e) {
        note("error: " + std::string(e.what()));
        return kValidation;
    } catch (const ParseError& e) {
        note("error: " + std::string(e.what()));
        return kValidation;
    } catch (const json::exception& e) {
        note("error: invalid config or artifact: " + std::string(e.what()));
        return kValidation;
    } catch (const std::exception& e) {
        note("error: " + std::string(e.what()));
        return kFailure;
    }
}

}  // namespace fours::cli
