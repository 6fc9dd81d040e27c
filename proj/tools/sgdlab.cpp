#include "sgdlab/cli/app.hpp"

#include <CLI11.hpp>

int main(int argc, char** argv)
{
    CLI::App app{"Stochastic approximation and gradient-flow experiment runner"};
    app.require_subcommand(1);
    app.set_version_flag("--version", sgdlab::cli::kToolVersion);

    sgdlab::cli::Overrides ov;
    std::string config;
    auto* run = app.add_subcommand("run", "Run the experiment described by a YAML config");
    run->add_option("config", config, "Config file")->required();
    run->add_option("--seed", ov.seed, "Override the master seed");
    run->add_option("--out-dir", ov.out_dir, "Override the output directory");
    run->add_option("--threads", ov.threads, "Worker threads for independent runs")->check(CLI::PositiveNumber);

    std::vector<std::string> manifests;
    std::optional<std::string> json_out;
    auto* report = app.add_subcommand("report", "Summarize one or more run manifests");
    report->add_option("manifests", manifests, "manifest.json files");
    report->add_option("--json", json_out, "Also write the report as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : sgdlab::cli::kValidation;
    }
    if (*run) return sgdlab::cli::run_command(config, ov);
    return sgdlab::cli::report_command(manifests, json_out);
}
