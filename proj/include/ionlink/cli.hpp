#pragma once

// Subcommand implementations behind the command-line front end. Exit code
// contract: 0 success, 1 failed acceptance/reproduction checks, 2 usage or
// config errors.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ionlink/analysis.hpp"
#include "ionlink/config.hpp"
#include "ionlink/digest.hpp"
#include "ionlink/report.hpp"
#include "ionlink/reproduce.hpp"
#include "ionlink/simulate.hpp"
#include "ionlink/timetag.hpp"

namespace ionlink::cli {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

namespace detail {

inline std::string executable_dir() {
    char buf[4096];
    const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) return {};
    buf[n] = '\0';
    return std::filesystem::path(buf).parent_path().string();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path, "cannot open file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace detail

// A --config value is either a path or a preset name searched in
// $IONLINK_PRESETS, ./presets, and <exe>/../../presets (the build tree).
inline std::string resolve_config_path(const std::string& name_or_path) {
    namespace fs = std::filesystem;
    if (fs::exists(name_or_path)) return name_or_path;
    std::vector<std::string> roots;
    if (const char* env = std::getenv("IONLINK_PRESETS")) roots.push_back(env);
    roots.push_back("presets");
    const std::string exe_dir = detail::executable_dir();
    if (!exe_dir.empty()) {
        roots.push_back(exe_dir + "/../presets");
        roots.push_back(exe_dir + "/../../presets");
    }
    for (const auto& root : roots) {
        const std::string candidate = root + "/" + name_or_path + ".cfg";
        if (fs::exists(candidate)) return candidate;
    }
    throw ConfigError(name_or_path, "config not found (no such file or preset)");
}

inline std::string default_preset_dir() {
    namespace fs = std::filesystem;
    if (const char* env = std::getenv("IONLINK_PRESETS")) return env;
    if (fs::exists("presets")) return "presets";
    const std::string exe_dir = detail::executable_dir();
    if (!exe_dir.empty() && fs::exists(exe_dir + "/../../presets"))
        return exe_dir + "/../../presets";
    return "presets";
}

inline void write_manifest_file(const RunManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError(path, "cannot write manifest");
    write_manifest(manifest, out);
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const std::string& config_arg, std::optional<uint64_t> seed,
                        std::optional<double> duration_s, const std::string& output_path) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string config_path = resolve_config_path(config_arg);
    const ExperimentConfig config =
        load_experiment_config(parse_config_file(config_path), seed, duration_s);
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw ConfigError(output_path, "cannot open output for writing");
    const auto [summary, bytes] = simulate_to_stream(config, out);
    out.close();
    if (!out) throw ConfigError(output_path, "write failed");

    RunManifest manifest;
    manifest.subcommand = "simulate";
    manifest.config_path = config_path;
    manifest.config_digest_hex = hex_digest(config.digest());
    manifest.seed = config.seed;
    manifest.has_seed = true;
    manifest.outputs = {output_path};
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest_file(manifest, output_path + ".manifest.json");

    std::cout << "wrote " << bytes << " bytes, " << summary.records << " records over "
              << summary.cycles << " cycles to " << output_path << "\n";
    return kExitOk;
}

namespace detail {

// Feeds a sink with all records of a stream, shifted so multiple input
// files concatenate into one monotone timeline.
class OffsetSink : public qtt::RecordSink {
public:
    OffsetSink(qtt::RecordSink& inner, uint64_t offset_ps) : inner_(inner), offset_(offset_ps) {}

    void on_records(std::span<const qtt::TimeTagRecord> batch) override {
        buffer_.assign(batch.begin(), batch.end());
        for (auto& r : buffer_) r.timestamp_ps += offset_;
        if (!buffer_.empty()) last_ = buffer_.back().timestamp_ps;
        inner_.on_records(buffer_);
    }

    uint64_t last_timestamp() const { return last_; }

private:
    qtt::RecordSink& inner_;
    uint64_t offset_;
    uint64_t last_ = 0;
    std::vector<qtt::TimeTagRecord> buffer_;
};

}  // namespace detail

inline int cmd_analyze(const std::vector<std::string>& inputs,
                       std::optional<std::string> config_arg, std::optional<int> n_max,
                       std::optional<double> block_s, const std::string& output_dir) {
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    if (inputs.empty()) throw ConfigError("input", "at least one .qtt file required");

    // Analyzer geometry comes from the experiment config when given,
    // otherwise from the first stream's channel map with per-role defaults.
    std::optional<ExperimentConfig> config;
    std::string config_path;
    if (config_arg) {
        config_path = resolve_config_path(*config_arg);
        config = load_experiment_config(parse_config_file(config_path), uint64_t{0});
    }

    std::ifstream first(inputs.front(), std::ios::binary);
    if (!first) throw ConfigError(inputs.front(), "cannot open input");
    qtt::StreamReader first_reader(first);
    AnalyzerSetup setup;
    if (config) {
        setup = make_analyzer_setup(*config);
    } else {
        setup = analyzer_setup_from_header(first_reader.header(), AnalysisConfig{});
    }
    if (n_max) setup.n_max = *n_max;
    if (block_s) setup.block_s = *block_s;

    StreamAnalyzer analyzer(setup);
    uint64_t offset = 0;
    std::string digest_hex = hex_digest(first_reader.header().config_digest);
    {
        detail::OffsetSink sink(analyzer, 0);
        qtt::pump(first_reader, sink);
        offset = sink.last_timestamp() + 2'500'000;   // one safe cycle gap
    }
    for (size_t i = 1; i < inputs.size(); ++i) {
        std::ifstream in(inputs[i], std::ios::binary);
        if (!in) throw ConfigError(inputs[i], "cannot open input");
        qtt::StreamReader reader(in);
        if (reader.header().channels != first_reader.header().channels)
            throw ConfigError(inputs[i], "channel map differs from the first input");
        detail::OffsetSink sink(analyzer, offset);
        qtt::pump(reader, sink);
        // an empty file reports no last timestamp; keep the offset monotone
        offset = std::max(offset, sink.last_timestamp()) + 2'500'000;
    }
    const AnalysisResult result = analyzer.finish();

    fs::create_directories(output_dir);
    RunManifest manifest;
    manifest.subcommand = "analyze";
    manifest.config_path = config_path;
    manifest.config_digest_hex = digest_hex;
    {
        std::ofstream out(output_dir + "/histogram.csv");
        if (!out) throw ConfigError(output_dir, "cannot write outputs");
        write_histogram_csv(result, out);
        manifest.outputs.push_back(output_dir + "/histogram.csv");
    }
    for (const auto& pair : result.pairs) {
        const std::string name = "g2-" + result.channel(pair.channel_a).label + "-" +
                                 result.channel(pair.channel_b).label + ".csv";
        std::ofstream out(output_dir + "/" + name);
        write_g2_csv(pair, out);
        manifest.outputs.push_back(output_dir + "/" + name);
    }
    {
        std::ofstream out(output_dir + "/summary.txt");
        write_summary(result, out);
        manifest.outputs.push_back(output_dir + "/summary.txt");
    }
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest_file(manifest, output_dir + "/manifest.json");
    std::cout << "analyzed " << result.cycles << " cycles into " << output_dir << "\n";
    return kExitOk;
}

inline int cmd_fit(const std::string& input_csv, std::optional<std::string> output_path) {
    std::ifstream in(input_csv);
    if (!in) throw ConfigError(input_csv, "cannot open input");
    std::vector<EfficiencySample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        EfficiencySample s;
        if (!(row >> s.pump_mw >> s.efficiency)) {
            if (line_no == 1) continue;   // header row
            throw ConfigError(input_csv + ":" + std::to_string(line_no), "expected power,efficiency[,sigma]");
        }
        row >> s.sigma;
        samples.push_back(s);
    }
    ConversionFit fit;
    try {
        fit = fit_conversion_curve(samples);
    } catch (const FitError& e) {
        throw ConfigError(input_csv, e.what());
    }
    std::ostringstream report;
    write_fit_report(fit, samples.size(), report);
    if (output_path) {
        std::ofstream out(*output_path);
        if (!out) throw ConfigError(*output_path, "cannot write report");
        out << report.str();
        RunManifest manifest;
        manifest.subcommand = "fit";
        manifest.config_path = input_csv;
        manifest.config_digest_hex = hex_digest(sha256(detail::read_file(input_csv)));
        manifest.outputs = {*output_path};
        write_manifest_file(manifest, *output_path + ".manifest.json");
    }
    std::cout << report.str();
    return kExitOk;
}

inline int cmd_budget(const std::string& config_arg, std::optional<std::string> output_path) {
    const std::string config_path = resolve_config_path(config_arg);
    const BudgetFile budget = load_budget_file(parse_config_file(config_path));
    std::ostringstream report;
    try {
        write_budget_report(budget, report);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(config_path, e.what());
    }
    if (output_path) {
        std::ofstream out(*output_path);
        if (!out) throw ConfigError(*output_path, "cannot write report");
        out << report.str();
        RunManifest manifest;
        manifest.subcommand = "budget";
        manifest.config_path = config_path;
        manifest.config_digest_hex = hex_digest(sha256(detail::read_file(config_path)));
        manifest.outputs = {*output_path};
        write_manifest_file(manifest, *output_path + ".manifest.json");
    }
    std::cout << report.str();
    return kExitOk;
}

inline int cmd_reproduce(const std::string& scenario, std::optional<double> duration_s) {
    ScenarioReport report;
    try {
        report = run_scenario(scenario, default_preset_dir(), duration_s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(scenario, e.what());
    }
    print_scenario_report(report, std::cout);
    return report.pass() ? kExitOk : kExitCheckFailed;
}

// Shared exception-to-exit-code mapping.
template <typename Fn>
int run_command(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const qtt::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
}

}  // namespace ionlink::cli
