#include "doctest.h"

#include "fours/cli/pipeline.hpp"
#include "fours/core/csv_io.hpp"
#include "fours/errors.hpp"
#include "fours/simulation/simulation.hpp"
#include "scenarios.hpp"

#include <filesystem>
#include <unistd.h>

using namespace fours::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Two items on one latent process with three stages.
json small_scenario() {
    auto s = scenario::single_item(5, 120);
    s.scale.items.push_back({"stand", 2});
    s.spec.subdimension.items.push_back("stand");
    Eigen::VectorXd t(12);
    t << 2.0, 1.0, -1.0, 1.0, 1.0, 1.0, std::log(0.7), -0.5, 1.2, std::log(0.8), 0.3, 1.2;
    s.theta = t;
    fours::simulation::StageGenerator g;
    g.thresholds = Eigen::Vector2d(1.0, 2.5);
    g.sd = 0.7;
    s.stages = g;
    return s;
}

json small_config(const fs::path& structure_file) {
    const json causes = json::array({{{"baseline", "weibull"}, {"association", "none"}}});
    return {{"seed", 11},
            {"simulate", {{"scenario", small_scenario()}}},
            {"structure", {{"file", structure_file.string()}}},
            {"sequence", {{"time_knots", {3.0}}, {"time_horizon", 8.0}, {"random_time_columns", json::array()},
                          {"causes", causes}, {"qmc_points", 256}}},
            {"stage", {{"time_knots", {3.0}}, {"time_horizon", 8.0}, {"random_time_columns", json::array()},
                       {"n_link_knots", 3}, {"causes", causes}, {"qmc_points", 256}}},
            {"select", {{"mc_draws", 500}}},
            {"report", {{"n_times", 5}, {"mc_draws", 200}}}};
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("fours_cli_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string first_line(const fs::path& p) {
    const auto text = fours::core::read_file(p);
    return text.substr(0, text.find('\n'));
}

}  // namespace

TEST_CASE("config hash tracks results but not output location or threads") {
    const json doc = {{"seed", 3}, {"sequence", {{"qmc_points", 256}}}};
    const auto a = make_config(doc, "/tmp");
    Overrides o;
    o.out = "/tmp/elsewhere";
    o.threads = 4;
    const auto b = make_config(doc, "/tmp", o);
    CHECK(a.hash == b.hash);
    CHECK(a.hash.size() == 64);
    CHECK(b.threads == 4);
    CHECK(b.out_dir == fs::path("/tmp/elsewhere"));

    Overrides s;
    s.seed = 4;
    CHECK(make_config(doc, "/tmp", s).hash != a.hash);
    CHECK(make_config(doc, "/tmp", s).seed == 4);
    CHECK(stream_seed(a, SeedStream::Simulate) != stream_seed(a, SeedStream::Structure));
}

TEST_CASE("set overrides reach nested keys") {
    Overrides o;
    o.set = {"sequence.qmc_points=512", "select.labels.walk=Walking", "sequence.adaptive=false"};
    const auto c = make_config({{"sequence", {{"qmc_points", 256}}}}, "/tmp", o);
    CHECK(c.document["sequence"]["qmc_points"] == 512);
    CHECK(c.document["sequence"]["adaptive"] == false);
    CHECK(c.document["select"]["labels"]["walk"] == "Walking");
    CHECK(c.section("missing").empty());

    Overrides bad;
    bad.set = {"no_equals_sign"};
    CHECK_THROWS_AS(make_config(json::object(), "/tmp", bad), fours::ValidationError);
    Overrides negative;
    negative.threads = 0;
    CHECK_THROWS_AS(make_config(json::object(), "/tmp", negative), fours::ValidationError);
    CHECK_THROWS_AS(make_config(json::array(), "/tmp"), fours::ValidationError);
}

TEST_CASE("artifact names are safe directory names") {
    CHECK(artifact_name("Motor") == "Motor");
    CHECK(artifact_name("bulbar/axial signs") == "bulbar_axial_signs");
    CHECK(artifact_name("..") == "_..");
}

TEST_CASE("pipeline runs from a hand-written structure and checks its preconditions") {
    TempDir tmp;
    const auto structure_file = tmp.path / "structure.json";
    fours::core::write_file_atomic(structure_file,
                                   json{{"subdimensions", {{{"name", "gait"}, {"items", {"walk", "stand"}}}}}}.dump());
    Overrides o;
    o.out = tmp.path / "run";
    const auto config = make_config(small_config(structure_file), tmp.path, o);

    // no cohort yet
    CHECK(run("sequence", config) == kValidation);
    CHECK(run("nonsense", config) == kValidation);

    REQUIRE(run("simulate", config) == kSuccess);
    REQUIRE(run("sequence", config) == kSuccess);
    CHECK_FALSE(fs::exists(o.out.value() / "structure"));

    // staging fit still missing
    CHECK(run("select", config) == kValidation);
    CHECK(run("report", config) == kValidation);

    REQUIRE(run("stage", config) == kSuccess);
    REQUIRE(run("select", config) == kSuccess);
    REQUIRE(run("report", config) == kSuccess);

    const auto report = o.out.value() / "report";
    for (const auto* name : {"trajectories.csv", "spider.csv", "stage_bands.csv", "information.csv"}) {
        INFO(name);
        REQUIRE(fs::exists(report / name));
        CHECK(first_line(report / name) == "# fours " + tool_version() + " config " + config.hash);
        CHECK(fours::core::read_csv(report / name).rows.size() > 0);
    }
    const auto fit = json::parse(fours::core::read_file(o.out.value() / "sequence" / "gait" / "fit.json"));
    CHECK(fit["provenance"]["config_hash"] == config.hash);
    CHECK(fit["provenance"]["version"] == tool_version());

    const auto bands = fours::core::read_csv(report / "stage_bands.csv");
    CHECK(bands.header.front() == "subdimension");
    const auto traj = fours::core::read_csv(report / "trajectories.csv");
    CHECK(traj.rows.size() == 5 * 2);

    const auto before = fours::core::read_file(report / "information.csv");
    REQUIRE(run("select", config) == kSuccess);
    REQUIRE(run("report", config) == kSuccess);
    CHECK(fours::core::read_file(report / "information.csv") == before);

    Overrides threaded;
    threaded.out = tmp.path / "threaded";
    threaded.threads = 2;
    const auto other = make_config(small_config(structure_file), tmp.path, threaded);
    REQUIRE(run("simulate", other) == kSuccess);
    REQUIRE(run("sequence", other) == kSuccess);
    CHECK(fours::core::read_file(threaded.out.value() / "sequence" / "gait" / "fit.json") ==
          fours::core::read_file(o.out.value() / "sequence" / "gait" / "fit.json"));
}
