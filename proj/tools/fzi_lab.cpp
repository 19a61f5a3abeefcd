#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "fzilab/experiments.hpp"
#include "fzilab/svg.hpp"

namespace {

constexpr int kExitChecksFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

int run_command(const std::string& config_path, std::string out_dir, int workers) {
    const auto config = fzilab::load_run_config(config_path, fzilab::seed_offset_from_env());
    if (out_dir.empty()) out_dir = "runs/" + config.experiment + "-" + fzilab::config_hash(config.config);
    const auto outcome = fzilab::run_experiment(config, out_dir, workers);
    for (const auto& c : outcome.checks) {
        std::printf("%s %s: %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    }
    std::printf("wrote %zu files to %s\n", outcome.files.size() + 1, out_dir.c_str());
    return outcome.all_pass() ? 0 : kExitChecksFailed;
}

int plot_command(const std::string& csv_path, const std::string& kind, const std::string& out) {
    const auto table = fzilab::read_csv(csv_path);
    const std::string svg = fzilab::plot_csv(table, fzilab::plot_kind_from_string(kind));
    std::ofstream file(out, std::ios::binary);
    if (!file) throw fzilab::ConfigError("cannot write '" + out + "'");
    file << svg;
    return 0;
}

int validate_command(const std::string& config_path) {
    const auto config = fzilab::load_run_config(config_path, fzilab::seed_offset_from_env());
    fzilab::validate_run_config(config);
    std::printf("%s: valid %s config (hash %s)\n", config_path.c_str(), config.experiment.c_str(),
                fzilab::config_hash(config.config).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Categorical fitted-iteration experiments", "fzi-lab"};
    app.set_version_flag("--version", std::string(fzilab::kLibraryVersion));
    app.require_subcommand(1);

    std::string config_path, out_dir, csv_path, kind, svg_out;
    int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    auto* run = app.add_subcommand("run", "Run an experiment config (or re-run a manifest)");
    run->add_option("config", config_path, "Config or manifest JSON")->required();
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

    auto* plot = app.add_subcommand("plot", "Render a CSV written by run as SVG");
    plot->add_option("csv", csv_path, "Input CSV")->required();
    plot->add_option("--kind", kind, "grad-norms, complexity or contraction")
        ->required()
        ->check(CLI::IsMember({"grad-norms", "complexity", "contraction"}));
    plot->add_option("--out", svg_out, "Output SVG")->required();

    auto* validate = app.add_subcommand("validate", "Check a config without running it");
    validate->add_option("config", config_path, "Config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (run->parsed()) return run_command(config_path, out_dir, workers);
        if (plot->parsed()) return plot_command(csv_path, kind, svg_out);
        return validate_command(config_path);
    } catch (const fzilab::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const fzilab::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
}
