// Command-line front end: simulate time-tag streams from a parameterized
// run configuration, analyze streams into histograms/correlations/SNRs,
// fit conversion curves, evaluate link budgets, and reproduce the shipped
// experiment scenarios.

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

#include "ionlink/cli.hpp"
#include "ionlink/report.hpp"

int main(int argc, char** argv) {
    CLI::App app{"trapped-ion telecom photon link: simulator and time-tag analysis"};
    app.set_version_flag("--version", std::string("ionlink ") + ionlink::kToolVersion);
    app.require_subcommand(1);

    std::string config;
    std::optional<uint64_t> seed;
    std::optional<double> duration_s;
    std::string output;
    std::vector<std::string> inputs;
    std::optional<int> n_max;
    std::optional<double> block_s;
    std::string scenario;

    auto* sim = app.add_subcommand("simulate", "generate a .qtt stream from a run config");
    sim->add_option("--config", config, "config file or preset name")->required();
    sim->add_option("--seed", seed, "override the RNG seed");
    sim->add_option("--duration-s", duration_s, "override the run duration");
    sim->add_option("--output,-o", output, "output .qtt path")->required();

    auto* ana = app.add_subcommand("analyze", "histogram, gate and correlate .qtt streams");
    ana->add_option("--input,-i", inputs, "input .qtt file(s)")->required();
    std::string ana_config;
    ana->add_option("--config", ana_config, "config file or preset for analysis settings");
    ana->add_option("--n-max", n_max, "correlation range in cycles");
    ana->add_option("--block-s", block_s, "gate-tracking block length in seconds");
    ana->add_option("--output,-o", output, "output directory")->required();

    auto* fit = app.add_subcommand("fit", "fit the conversion-efficiency law to a power sweep");
    fit->add_option("--input,-i", config, "CSV of pump_mw,efficiency[,sigma]")->required();
    std::optional<std::string> report_path;
    fit->add_option("--output,-o", report_path, "write the report here as well");

    auto* bud = app.add_subcommand("budget", "evaluate per-shot efficiency chains");
    bud->add_option("--config", config, "budget file or preset name")->required();
    bud->add_option("--output,-o", report_path, "write the report here as well");

    auto* rep = app.add_subcommand("reproduce", "run a shipped scenario and check its numbers");
    rep->add_option("scenario", scenario, "fig2, fig3, fig4a, fig4b, fig4c, or budget")
        ->required();
    rep->add_option("--duration-s", duration_s, "override the scenario duration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ionlink::cli::kExitUsage;
    }

    using namespace ionlink::cli;
    if (sim->parsed())
        return run_command([&] { return cmd_simulate(config, seed, duration_s, output); });
    if (ana->parsed())
        return run_command([&] {
            return cmd_analyze(inputs,
                               ana_config.empty() ? std::nullopt
                                                  : std::optional<std::string>(ana_config),
                               n_max, block_s, output);
        });
    if (fit->parsed()) return run_command([&] { return cmd_fit(config, report_path); });
    if (bud->parsed()) return run_command([&] { return cmd_budget(config, report_path); });
    if (rep->parsed())
        return run_command([&] { return cmd_reproduce(scenario, duration_s); });
    return kExitUsage;
}
