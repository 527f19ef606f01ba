#include "fours/cli/pipeline.hpp"
#include "fours/errors.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    using namespace fours::cli;

    CLI::App app{"Item-level progression pipeline: structure, sequence, stage, select, report and simulate"};
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    int threads = 1;
    std::vector<std::string> sets;
    for (const auto& name : command_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "top-level seed; overrides the config");
        sub->add_option("--out", out, "output directory; overrides the config");
        sub->add_option("--threads", threads, "worker threads; overrides the config")->check(CLI::PositiveNumber);
        sub->add_option("--set", sets, "override a config value, e.g. sequence.qmc_points=512");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    const auto* sub = app.get_subcommands().front();
    Overrides overrides;
    overrides.set = sets;
    if (sub->count("--seed")) overrides.seed = seed;
    if (sub->count("--out")) overrides.out = out;
    if (sub->count("--threads")) overrides.threads = threads;

    RunConfig config;
    try {
        config = load_config(config_path, overrides);
    } catch (const std::exception& e) {
        std::cerr << "fours: error: " << e.what() << "\n";
        return kValidation;
    }
    return run(sub->get_name(), config);
}
