#pragma once

// Experiment configuration: pulse sequence, emission profile, channel
// models, drift model, run parameters, and analysis settings. Configs are
// plain sectioned key = value text with unit-suffixed keys; parsing is
// strict (unknown keys and sections are errors) and canonical serialization
// feeds the config digest embedded in output streams.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionlink/digest.hpp"
#include "ionlink/emission.hpp"
#include "ionlink/photonics.hpp"
#include "ionlink/timetag.hpp"

namespace ionlink {

// Seconds to picoseconds with saturation; very long spans (block lengths,
// walk slices) must not overflow into a zero divisor.
inline uint64_t seconds_to_ps_saturating(double seconds) {
    const double ps = seconds * 1e12;
    if (ps >= 9.0e18) return UINT64_MAX;
    if (ps <= 0.0) return 0;
    return static_cast<uint64_t>(ps);
}

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& reason)
        : std::runtime_error("config: " + field + ": " + reason), field_(field) {}

    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// ---------------------------------------------------------------------------
// key = value text with [section] headers, '#' comments, insertion order kept

struct ConfigDocument {
    struct Entry {
        std::string key;
        std::string value;
        int line = 0;
        mutable bool consumed = false;
    };
    struct Section {
        std::string name;
        std::vector<Entry> entries;
    };
    std::vector<Section> sections;

    const Section* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
};

inline ConfigDocument parse_config_text(const std::string& text) {
    ConfigDocument doc;
    ConfigDocument::Section* current = nullptr;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no), "unterminated section header");
            doc.sections.push_back({trim(line.substr(1, line.size() - 2)), {}});
            current = &doc.sections.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no), "expected key = value");
        if (!current)
            throw ConfigError("line " + std::to_string(line_no), "key before any [section]");
        current->entries.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no});
    }
    return doc;
}

inline ConfigDocument parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

namespace detail {

class SectionReader {
public:
    SectionReader(const ConfigDocument::Section& section, std::string prefix)
        : section_(section), prefix_(std::move(prefix)) {}

    std::optional<std::string> raw(const std::string& key) const {
        const ConfigDocument::Entry* found = nullptr;
        for (const auto& e : section_.entries) {
            if (e.key == key) {
                if (found) throw ConfigError(prefix_ + key, "duplicate key");
                found = &e;
            }
        }
        if (!found) return std::nullopt;
        found->consumed = true;
        return found->value;
    }

    double number(const std::string& key, std::optional<double> fallback = {}) const {
        auto v = raw(key);
        if (!v) {
            if (fallback) return *fallback;
            throw ConfigError(prefix_ + key, "required key missing");
        }
        try {
            size_t used = 0;
            const double d = std::stod(*v, &used);
            if (used != v->size()) throw std::invalid_argument("");
            return d;
        } catch (const std::exception&) {
            throw ConfigError(prefix_ + key, "not a number: '" + *v + "'");
        }
    }

    uint64_t integer(const std::string& key, std::optional<uint64_t> fallback = {}) const {
        auto v = raw(key);
        if (!v) {
            if (fallback) return *fallback;
            throw ConfigError(prefix_ + key, "required key missing");
        }
        uint64_t out = 0;
        const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc{} || p != v->data() + v->size())
            throw ConfigError(prefix_ + key, "not a non-negative integer: '" + *v + "'");
        return out;
    }

    std::string text(const std::string& key) const {
        auto v = raw(key);
        if (!v) throw ConfigError(prefix_ + key, "required key missing");
        return *v;
    }

    void reject_unconsumed() const {
        for (const auto& e : section_.entries)
            if (!e.consumed) throw ConfigError(prefix_ + e.key, "unknown key");
    }

private:
    const ConfigDocument::Section& section_;
    std::string prefix_;
};

inline std::string format_number(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// experiment model

struct PulseSequence {
    double init_duration_ns = 781.0;
    double post_init_delay_ns = 200.0;
    double excitation_duration_ns = 200.0;
    double background_pulse_offset_ns = 380.0;   // after excitation start
    double background_pulse_width_ns = 200.0;
    double repetition_rate_khz = 420.0;

    double excitation_start_ns() const { return init_duration_ns + post_init_delay_ns; }
    double cycle_period_ns() const { return 1e6 / repetition_rate_khz; }
    uint64_t cycle_period_ps() const { return static_cast<uint64_t>(std::llround(1e9 / repetition_rate_khz)); }

    void validate() const {
        if (!(init_duration_ns > 0) || !(post_init_delay_ns > 0) || !(excitation_duration_ns > 0))
            throw ConfigError("pulse", "durations must be positive");
        if (!(repetition_rate_khz > 0))
            throw ConfigError("pulse.repetition_rate_khz", "must be positive");
        if (background_pulse_offset_ns < excitation_duration_ns)
            throw ConfigError("pulse.background_pulse_offset_ns",
                              "background pulse overlaps the excitation pulse");
        const double active = excitation_start_ns() + background_pulse_offset_ns +
                              background_pulse_width_ns;
        if (active > cycle_period_ns())
            throw ConfigError("pulse", "active phases exceed the cycle period");
    }
};

struct ChannelModel {
    std::string label;
    qtt::ChannelRole role = qtt::ChannelRole::apd;
    double signal_probability = 0.0;    // per-shot detection probability
    double noise_cps = 0.0;             // flat background, counts per second
    double pulse_background_cps = 0.0;  // rate while a 650-nm pulse is on
    double dead_time_ns = 0.0;
    double jitter_sigma_ns = 0.0;
    double gate_width_ns = 60.0;        // analysis gate for this channel
    double channel_delay_ns = 0.0;      // arrival offset relative to the reference
    double filter_fwhm_mhz = 0.0;       // >0: narrowband filter, pump drift modulates signal
    double photon_fwhm_mhz = 14.8;

    void validate() const {
        const std::string p = "channel." + label + ".";
        if (!(signal_probability >= 0.0 && signal_probability <= 1.0))
            throw ConfigError(p + "signal_probability", "must be in [0,1]");
        if (noise_cps < 0 || pulse_background_cps < 0)
            throw ConfigError(p + "noise_cps", "rates must be >= 0");
        if (dead_time_ns < 0 || jitter_sigma_ns < 0)
            throw ConfigError(p + "dead_time_ns", "must be >= 0");
        if (!(gate_width_ns > 0))
            throw ConfigError(p + "gate_width_ns", "must be > 0");
        if (filter_fwhm_mhz < 0 || photon_fwhm_mhz < 0)
            throw ConfigError(p + "filter_fwhm_mhz", "must be >= 0");
    }
};

struct DriftModel {
    double arrival_walk_step_ns = 0.0;   // std dev of the per-slice offset step
    double walk_slice_s = 3600.0;
    double detuning_amplitude_mhz = 0.0;
    double detuning_period_s = 14400.0;

    void validate() const {
        if (arrival_walk_step_ns < 0 || detuning_amplitude_mhz < 0)
            throw ConfigError("drift", "amplitudes must be >= 0");
        if (!(walk_slice_s > 0) || !(detuning_period_s > 0))
            throw ConfigError("drift", "time scales must be > 0");
    }
};

struct AnalysisConfig {
    double bin_width_ns = 2.0;
    int n_max = 10;
    double block_s = 3600.0;
    double noise_offset_ns = 380.0;      // noise window = signal window shifted by the
                                         // pulse separation (same pulse phase)
    double histogram_window_ns = 0.0;    // 0: one cycle period

    void validate() const {
        if (!(bin_width_ns > 0)) throw ConfigError("analysis.bin_width_ns", "must be > 0");
        if (n_max < 1) throw ConfigError("analysis.n_max", "must be >= 1");
        if (!(block_s > 0)) throw ConfigError("analysis.block_s", "must be > 0");
        if (!(noise_offset_ns > 0)) throw ConfigError("analysis.noise_offset_ns", "must be > 0");
    }
};

struct ExperimentConfig {
    PulseSequence pulse;
    EmissionProfile emission;
    DriftModel drift;
    AnalysisConfig analysis;
    std::vector<ChannelModel> channels;
    double duration_s = 0.0;
    uint64_t seed = 0;

    // Photon production attempts: duration times repetition rate. Timestamps
    // use the ps-rounded period, so the attempt count is taken from the rate
    // directly rather than back-derived from rounded timestamps.
    uint64_t cycle_count() const {
        return static_cast<uint64_t>(std::llround(duration_s * pulse.repetition_rate_khz * 1e3));
    }

    // Trigger is channel 0; detection channels follow in file order.
    qtt::StreamHeader stream_header() const {
        qtt::StreamHeader h;
        h.channels.push_back({0, qtt::ChannelRole::trigger});
        for (size_t i = 0; i < channels.size(); ++i)
            h.channels.push_back({static_cast<uint8_t>(i + 1), channels[i].role});
        h.config_digest = digest();
        return h;
    }

    void validate() const {
        pulse.validate();
        emission.validate();
        drift.validate();
        analysis.validate();
        if (!(duration_s > 0)) throw ConfigError("run.duration_s", "must be set and positive");
        if (channels.empty()) throw ConfigError("channel", "at least one channel required");
        if (channels.size() > 255) throw ConfigError("channel", "too many channels");
        double p_total = 0.0;
        for (const auto& c : channels) {
            c.validate();
            p_total += c.signal_probability;
        }
        if (p_total > 1.0)
            throw ConfigError("channel", "summed signal probabilities exceed 1 "
                              "(one emitted photon per cycle)");
        if (emission.onset_ns >= pulse.excitation_duration_ns)
            throw ConfigError("emission.onset_ns", "at or past the excitation window end");
    }

    std::string canonical_text() const;
    std::array<uint8_t, 32> digest() const { return sha256(canonical_text()); }
};

inline std::string ExperimentConfig::canonical_text() const {
    using detail::format_number;
    std::ostringstream s;
    s << "[pulse]\n"
      << "init_duration_ns = " << format_number(pulse.init_duration_ns) << "\n"
      << "post_init_delay_ns = " << format_number(pulse.post_init_delay_ns) << "\n"
      << "excitation_duration_ns = " << format_number(pulse.excitation_duration_ns) << "\n"
      << "background_pulse_offset_ns = " << format_number(pulse.background_pulse_offset_ns) << "\n"
      << "background_pulse_width_ns = " << format_number(pulse.background_pulse_width_ns) << "\n"
      << "repetition_rate_khz = " << format_number(pulse.repetition_rate_khz) << "\n"
      << "[emission]\n"
      << "rise_ns = " << format_number(emission.rise_ns) << "\n"
      << "decay_ns = " << format_number(emission.decay_ns) << "\n"
      << "onset_ns = " << format_number(emission.onset_ns) << "\n"
      << "[drift]\n"
      << "arrival_walk_step_ns = " << format_number(drift.arrival_walk_step_ns) << "\n"
      << "walk_slice_s = " << format_number(drift.walk_slice_s) << "\n"
      << "detuning_amplitude_mhz = " << format_number(drift.detuning_amplitude_mhz) << "\n"
      << "detuning_period_s = " << format_number(drift.detuning_period_s) << "\n"
      << "[analysis]\n"
      << "bin_width_ns = " << format_number(analysis.bin_width_ns) << "\n"
      << "n_max = " << analysis.n_max << "\n"
      << "block_s = " << format_number(analysis.block_s) << "\n"
      << "noise_offset_ns = " << format_number(analysis.noise_offset_ns) << "\n"
      << "histogram_window_ns = " << format_number(analysis.histogram_window_ns) << "\n"
      << "[run]\n"
      << "duration_s = " << format_number(duration_s) << "\n"
      << "seed = " << seed << "\n";
    for (const auto& c : channels) {
        s << "[channel." << c.label << "]\n"
          << "role = " << qtt::role_name(c.role) << "\n"
          << "signal_probability = " << format_number(c.signal_probability) << "\n"
          << "noise_cps = " << format_number(c.noise_cps) << "\n"
          << "pulse_background_cps = " << format_number(c.pulse_background_cps) << "\n"
          << "dead_time_ns = " << format_number(c.dead_time_ns) << "\n"
          << "jitter_sigma_ns = " << format_number(c.jitter_sigma_ns) << "\n"
          << "gate_width_ns = " << format_number(c.gate_width_ns) << "\n"
          << "channel_delay_ns = " << format_number(c.channel_delay_ns) << "\n"
          << "filter_fwhm_mhz = " << format_number(c.filter_fwhm_mhz) << "\n"
          << "photon_fwhm_mhz = " << format_number(c.photon_fwhm_mhz) << "\n";
    }
    return s.str();
}

// Builds an ExperimentConfig from parsed text. Overrides for seed and
// duration come from the command line; seed is required in either place so
// every run is reproducible.
inline ExperimentConfig load_experiment_config(const ConfigDocument& doc,
                                               std::optional<uint64_t> seed_override = {},
                                               std::optional<double> duration_override = {}) {
    ExperimentConfig cfg;
    bool seed_seen = false;
    for (const auto& section : doc.sections) {
        detail::SectionReader r(section, section.name + ".");
        if (section.name == "pulse") {
            cfg.pulse.init_duration_ns = r.number("init_duration_ns", cfg.pulse.init_duration_ns);
            cfg.pulse.post_init_delay_ns = r.number("post_init_delay_ns", cfg.pulse.post_init_delay_ns);
            cfg.pulse.excitation_duration_ns =
                r.number("excitation_duration_ns", cfg.pulse.excitation_duration_ns);
            cfg.pulse.background_pulse_offset_ns =
                r.number("background_pulse_offset_ns", cfg.pulse.background_pulse_offset_ns);
            cfg.pulse.background_pulse_width_ns =
                r.number("background_pulse_width_ns", cfg.pulse.background_pulse_width_ns);
            cfg.pulse.repetition_rate_khz =
                r.number("repetition_rate_khz", cfg.pulse.repetition_rate_khz);
        } else if (section.name == "emission") {
            cfg.emission.rise_ns = r.number("rise_ns", cfg.emission.rise_ns);
            cfg.emission.decay_ns = r.number("decay_ns", cfg.emission.decay_ns);
            cfg.emission.onset_ns = r.number("onset_ns", cfg.emission.onset_ns);
        } else if (section.name == "drift") {
            cfg.drift.arrival_walk_step_ns =
                r.number("arrival_walk_step_ns", cfg.drift.arrival_walk_step_ns);
            cfg.drift.walk_slice_s = r.number("walk_slice_s", cfg.drift.walk_slice_s);
            cfg.drift.detuning_amplitude_mhz =
                r.number("detuning_amplitude_mhz", cfg.drift.detuning_amplitude_mhz);
            cfg.drift.detuning_period_s =
                r.number("detuning_period_s", cfg.drift.detuning_period_s);
        } else if (section.name == "analysis") {
            cfg.analysis.bin_width_ns = r.number("bin_width_ns", cfg.analysis.bin_width_ns);
            cfg.analysis.n_max = static_cast<int>(r.integer("n_max", cfg.analysis.n_max));
            cfg.analysis.block_s = r.number("block_s", cfg.analysis.block_s);
            cfg.analysis.noise_offset_ns =
                r.number("noise_offset_ns", cfg.analysis.noise_offset_ns);
            cfg.analysis.histogram_window_ns =
                r.number("histogram_window_ns", cfg.analysis.histogram_window_ns);
        } else if (section.name == "run") {
            cfg.duration_s = duration_override ? r.number("duration_s", *duration_override)
                                               : r.number("duration_s");
            if (auto v = r.raw("seed")) {
                seed_seen = true;
                try {
                    cfg.seed = std::stoull(*v);
                } catch (const std::exception&) {
                    throw ConfigError("run.seed", "not an integer: '" + *v + "'");
                }
            }
        } else if (section.name.starts_with("channel.")) {
            ChannelModel c;
            c.label = section.name.substr(8);
            if (c.label.empty()) throw ConfigError(section.name, "empty channel label");
            for (const auto& other : cfg.channels)
                if (other.label == c.label)
                    throw ConfigError(section.name, "duplicate channel label");
            try {
                c.role = qtt::role_from_name(r.text("role"));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(section.name + ".role", e.what());
            }
            c.signal_probability = r.number("signal_probability");
            c.noise_cps = r.number("noise_cps", c.noise_cps);
            c.pulse_background_cps = r.number("pulse_background_cps", c.pulse_background_cps);
            c.dead_time_ns = r.number("dead_time_ns", c.dead_time_ns);
            c.jitter_sigma_ns = r.number("jitter_sigma_ns", c.jitter_sigma_ns);
            c.gate_width_ns = r.number("gate_width_ns", c.gate_width_ns);
            c.channel_delay_ns = r.number("channel_delay_ns", c.channel_delay_ns);
            c.filter_fwhm_mhz = r.number("filter_fwhm_mhz", c.filter_fwhm_mhz);
            c.photon_fwhm_mhz = r.number("photon_fwhm_mhz", c.photon_fwhm_mhz);
            cfg.channels.push_back(std::move(c));
        } else {
            throw ConfigError(section.name, "unknown section");
        }
        r.reject_unconsumed();
    }
    if (duration_override) cfg.duration_s = *duration_override;
    if (seed_override) {
        cfg.seed = *seed_override;
        seed_seen = true;
    }
    if (!seed_seen) throw ConfigError("run.seed", "required key missing (or pass --seed)");
    if (!doc.find("run") && !duration_override)
        throw ConfigError("run.duration_s", "required key missing");
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// budget files: named factor chains plus detector-corrected stage ratios

struct StageRatioSpec {
    std::string name;
    double p_a = 0, det_a = 0, p_b = 0, det_b = 0, polarization_factor = 1;
};

struct BudgetFile {
    std::vector<std::pair<std::string, LinkBudget>> chains;
    std::vector<StageRatioSpec> ratios;

    const LinkBudget* chain(const std::string& name) const {
        for (const auto& [n, b] : chains)
            if (n == name) return &b;
        return nullptr;
    }
};

inline BudgetFile load_budget_file(const ConfigDocument& doc) {
    BudgetFile out;
    for (const auto& section : doc.sections) {
        if (section.name.starts_with("chain.")) {
            LinkBudget budget;
            for (const auto& e : section.entries) {
                try {
                    size_t used = 0;
                    const double f = std::stod(e.value, &used);
                    if (used != e.value.size()) throw std::invalid_argument("");
                    budget.entries.push_back({e.key, f});
                } catch (const std::exception&) {
                    throw ConfigError(section.name + "." + e.key, "not a number");
                }
                e.consumed = true;
            }
            if (budget.entries.empty()) throw ConfigError(section.name, "empty chain");
            out.chains.emplace_back(section.name.substr(6), std::move(budget));
        } else if (section.name.starts_with("ratio.")) {
            detail::SectionReader r(section, section.name + ".");
            StageRatioSpec spec;
            spec.name = section.name.substr(6);
            spec.p_a = r.number("p_a");
            spec.det_a = r.number("det_a");
            spec.p_b = r.number("p_b");
            spec.det_b = r.number("det_b");
            spec.polarization_factor = r.number("polarization_factor", 1.0);
            r.reject_unconsumed();
            out.ratios.push_back(spec);
        } else {
            throw ConfigError(section.name, "unknown section");
        }
    }
    if (out.chains.empty()) throw ConfigError("chain", "budget file has no chains");
    return out;
}

}  // namespace ionlink
