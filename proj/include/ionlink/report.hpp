#pragma once

// Output writers: analysis CSVs, config-style summary records, fit and
// budget reports, and the per-run manifest.

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ionlink/analysis.hpp"
#include "ionlink/config.hpp"
#include "ionlink/fit.hpp"
#include "ionlink/photonics.hpp"

namespace ionlink {

constexpr const char* kToolVersion = "0.1.0";

namespace detail {

inline std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(12) << v;
    return s.str();
}

}  // namespace detail

// One CSV row per histogram bin per channel, whole-run statistics.
inline void write_histogram_csv(const AnalysisResult& result, std::ostream& out) {
    out << "channel,label,bin_start_ns,bin_end_ns,count\n";
    for (const auto& c : result.channels) {
        const auto& h = c.histogram;
        for (size_t i = 0; i < h.bin_count(); ++i) {
            out << static_cast<int>(c.id) << ',' << c.label << ',' << h.bin_start(i) << ','
                << (h.bin_start(i) + h.bin_width_ns) << ',' << h.counts[i] << '\n';
        }
    }
}

// Correlation series with the expectation column: the n=0 row carries the
// background-coincidence value, every other row the flat level.
inline void write_g2_csv(const CorrelationResult& pair, std::ostream& out) {
    out << "n,counts,theory,symmetrized\n";
    for (int n = -pair.series.n_max; n <= pair.series.n_max; ++n) {
        out << n << ',' << pair.series.at(n) << ','
            << detail::num(n == 0 ? pair.theory_zero : pair.theory_nonzero) << ',';
        if (n >= 0) out << detail::num(pair.symmetrized[static_cast<size_t>(n)]);
        out << '\n';
    }
}

// Summary in the same sectioned key = value format the configs use, so it
// parses with the config reader.
inline void write_summary(const AnalysisResult& result, std::ostream& out) {
    out << "[run]\n";
    out << "cycles = " << result.cycles << "\n";
    out << "duration_s = " << detail::num(result.duration_s) << "\n";
    out << "pre_trigger_skipped = " << result.pre_trigger_skipped << "\n";
    out << "blocks = " << result.gates.blocks.size() << "\n";
    for (const auto& c : result.channels) {
        out << "[channel." << c.label << "]\n";
        out << "id = " << static_cast<int>(c.id) << "\n";
        out << "role = " << qtt::role_name(c.role) << "\n";
        out << "gate_width_ns = " << detail::num(c.gate_width_ns) << "\n";
        out << "signal_counts = " << c.tally.signal << "\n";
        out << "noise_counts = " << c.tally.noise << "\n";
        out << "ignored_counts = " << c.tally.ignored << "\n";
        out << "snr = " << (c.snr.defined ? detail::num(c.snr.value) : "undefined") << "\n";
        if (!result.gates.blocks.empty()) {
            const auto& g = result.gates.blocks.front().by_channel.at(c.id);
            out << "signal_gate_start_ns = " << detail::num(g.signal.start_ns) << "\n";
            out << "noise_gate_start_ns = " << detail::num(g.noise.start_ns) << "\n";
        }
    }
    for (const auto& p : result.pairs) {
        out << "[pair." << result.channel(p.channel_a).label << '.'
            << result.channel(p.channel_b).label << "]\n";
        out << "g2_zero = " << p.series.at(0) << "\n";
        out << "theory_zero = " << detail::num(p.theory_zero) << "\n";
        out << "theory_nonzero = " << detail::num(p.theory_nonzero) << "\n";
        out << "mean_offpeak = " << detail::num(p.mean_offpeak) << "\n";
        out << "z_score = " << (std::isnan(p.z) ? "undefined" : detail::num(p.z)) << "\n";
    }
}

// Fit report: parameters, uncertainties, covariance, residuals.
inline void write_fit_report(const ConversionFit& fit, size_t n_samples, std::ostream& out) {
    out << "[fit]\n";
    out << "eta_peak = " << detail::num(fit.curve.eta_peak) << "\n";
    out << "eta_peak_stderr = " << detail::num(std::sqrt(fit.covariance[0])) << "\n";
    out << "p_max_mw = " << detail::num(fit.curve.p_max_mw) << "\n";
    out << "p_max_mw_stderr = " << detail::num(std::sqrt(fit.covariance[3])) << "\n";
    out << "covariance_eta_pmax = " << detail::num(fit.covariance[1]) << "\n";
    out << "chi2 = " << detail::num(fit.chi2) << "\n";
    out << "residual_norm = " << detail::num(fit.residual_norm) << "\n";
    out << "iterations = " << fit.iterations << "\n";
    out << "samples = " << n_samples << "\n";
}

// Budget report: per-factor rows with running product per chain, then the
// detector-corrected stage ratios.
inline void write_budget_report(const BudgetFile& budget, std::ostream& out) {
    for (const auto& [name, chain] : budget.chains) {
        out << "[chain." << name << "]\n";
        for (const auto& row : budget_breakdown(chain)) {
            out << row.label << " = " << detail::num(row.factor) << "\n";
            out << row.label << ".cumulative = " << detail::num(row.cumulative) << "\n";
        }
        out << "product = " << detail::num(budget_product(chain)) << "\n";
    }
    for (const auto& r : budget.ratios) {
        out << "[ratio." << r.name << "]\n";
        out << "value = "
            << detail::num(stage_conversion_ratio(r.p_a, r.det_a, r.p_b, r.det_b,
                                                  r.polarization_factor))
            << "\n";
    }
}

// Run manifest: everything needed to reproduce the run byte for byte.
struct RunManifest {
    std::string subcommand;
    std::string config_path;
    std::string config_digest_hex;
    uint64_t seed = 0;
    bool has_seed = false;
    std::vector<std::string> outputs;
    double wall_seconds = 0.0;
};

inline void write_manifest(const RunManifest& manifest, std::ostream& out) {
    nlohmann::json j;
    j["subcommand"] = manifest.subcommand;
    j["config_path"] = manifest.config_path;
    j["config_digest"] = manifest.config_digest_hex;
    if (manifest.has_seed) j["seed"] = manifest.seed;
    j["outputs"] = manifest.outputs;
    j["tool_version"] = kToolVersion;
    j["wall_seconds"] = manifest.wall_seconds;
    out << j.dump(2) << "\n";
}

}  // namespace ionlink
