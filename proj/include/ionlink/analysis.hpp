#pragma once

// Streaming analysis of time-tag streams: trigger-relative arrival
// histograms, drift-tracked gate placement, signal/noise tallies, cycle-
// separated coincidences G2(n), the closed-form coincidence expectations,
// per-channel SNR, and the n=0 suppression significance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ionlink/config.hpp"
#include "ionlink/timetag.hpp"

namespace ionlink {

class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// arrival-time histograms

struct ArrivalHistogram {
    double bin_width_ns = 1.0;
    double window_start_ns = 0.0;
    double window_end_ns = 0.0;
    std::vector<uint64_t> counts;
    uint64_t total_cycles = 0;
    uint64_t in_window = 0;
    uint64_t out_of_window = 0;
    uint64_t pre_trigger_skipped = 0;

    size_t bin_count() const { return counts.size(); }
    double bin_start(size_t i) const { return window_start_ns + bin_width_ns * static_cast<double>(i); }
    double bin_center(size_t i) const { return bin_start(i) + 0.5 * bin_width_ns; }

    void init(double bin_ns, double win_start_ns, double win_end_ns) {
        if (!(bin_ns > 0)) throw AnalysisError("histogram: bin width must be > 0");
        if (!(win_end_ns > win_start_ns)) throw AnalysisError("histogram: empty window");
        bin_width_ns = bin_ns;
        window_start_ns = win_start_ns;
        window_end_ns = win_end_ns;
        counts.assign(static_cast<size_t>(std::ceil((win_end_ns - win_start_ns) / bin_ns)), 0);
    }

    bool add(double dt_ns) {
        if (dt_ns < window_start_ns || dt_ns >= window_end_ns) {
            ++out_of_window;
            return false;
        }
        const auto i = static_cast<size_t>((dt_ns - window_start_ns) / bin_width_ns);
        ++counts[std::min(i, counts.size() - 1)];
        ++in_window;
        return true;
    }

    // Position of the maximum of the 3-bin-smoothed histogram; nullopt when
    // there are no counts.
    std::optional<double> peak_position_ns() const {
        if (in_window == 0) return std::nullopt;
        uint64_t best = 0;
        size_t best_i = 0;
        for (size_t i = 0; i < counts.size(); ++i) {
            uint64_t s = counts[i];
            if (i > 0) s += counts[i - 1];
            if (i + 1 < counts.size()) s += counts[i + 1];
            if (s > best) {
                best = s;
                best_i = i;
            }
        }
        return bin_center(best_i);
    }
};

// Incremental histogram builder over a record stream; one channel against
// the most recent trigger.
class HistogramBuilder : public qtt::RecordSink {
public:
    HistogramBuilder(uint8_t channel, uint8_t trigger_channel, double bin_width_ns,
                     double window_start_ns, double window_end_ns)
        : channel_(channel), trigger_(trigger_channel) {
        hist_.init(bin_width_ns, window_start_ns, window_end_ns);
    }

    void on_records(std::span<const qtt::TimeTagRecord> batch) override {
        for (const auto& r : batch) {
            if (r.channel == trigger_) {
                last_trigger_ = r.timestamp_ps;
                ++hist_.total_cycles;
            } else if (r.channel == channel_) {
                if (last_trigger_ == kNoTrigger) {
                    ++hist_.pre_trigger_skipped;
                    continue;
                }
                hist_.add(static_cast<double>(r.timestamp_ps - last_trigger_) * 1e-3);
            }
        }
    }

    ArrivalHistogram finish() { return hist_; }

private:
    static constexpr uint64_t kNoTrigger = UINT64_MAX;
    uint8_t channel_;
    uint8_t trigger_;
    uint64_t last_trigger_ = kNoTrigger;
    ArrivalHistogram hist_;
};

inline ArrivalHistogram build_histogram(std::span<const qtt::TimeTagRecord> records,
                                        uint8_t channel, uint8_t trigger_channel,
                                        double bin_width_ns, double window_start_ns,
                                        double window_end_ns) {
    HistogramBuilder builder(channel, trigger_channel, bin_width_ns, window_start_ns,
                             window_end_ns);
    builder.on_records(records);
    return builder.finish();
}

inline ArrivalHistogram build_histogram(qtt::StreamReader& reader, uint8_t channel,
                                        uint8_t trigger_channel, double bin_width_ns,
                                        double window_start_ns, double window_end_ns) {
    HistogramBuilder builder(channel, trigger_channel, bin_width_ns, window_start_ns,
                             window_end_ns);
    qtt::pump(reader, builder);
    return builder.finish();
}

// ---------------------------------------------------------------------------
// gates

struct GateWindow {
    double start_ns = 0.0;
    double width_ns = 0.0;

    double end_ns() const { return start_ns + width_ns; }
    bool contains(double dt_ns) const { return dt_ns >= start_ns && dt_ns < end_ns(); }
};

struct ChannelGates {
    GateWindow signal;
    GateWindow noise;
};

struct BlockGates {
    double reference_peak_ns = 0.0;
    std::map<uint8_t, ChannelGates> by_channel;
};

struct GateSet {
    double block_s = 0.0;
    std::vector<BlockGates> blocks;

    const ChannelGates& lookup(size_t block, uint8_t channel) const {
        const auto& gates = blocks.at(block).by_channel;
        const auto it = gates.find(channel);
        if (it == gates.end())
            throw AnalysisError("gates: channel " + std::to_string(channel) + " not configured");
        return it->second;
    }
};

// Per-channel gate geometry; windows are centered on the per-block reference
// peak, shifted by the channel's fixed delay. The noise window is the signal
// window displaced by noise_offset_ns. With the offset equal to the
// background-pulse separation the noise gate samples the identical pulse
// phase as the signal gate, which keeps the coincidence expectations
// unbiased for scatter-dominated channels.
struct GateSpec {
    struct Channel {
        uint8_t id = 0;
        double width_ns = 60.0;
        double delay_ns = 0.0;
    };
    std::vector<Channel> channels;
    double noise_offset_ns = 380.0;

    void validate() const {
        if (channels.empty()) throw AnalysisError("gate spec: no channels");
        for (const auto& c : channels) {
            if (!(c.width_ns > 0)) throw AnalysisError("gate spec: width must be > 0");
            if (noise_offset_ns < c.width_ns)
                throw AnalysisError("gate spec: signal and noise windows overlap");
        }
    }
};

inline BlockGates locate_gates_for_block(const ArrivalHistogram& reference_histogram,
                                         const GateSpec& spec) {
    spec.validate();
    const auto peak = reference_histogram.peak_position_ns();
    if (!peak)
        throw AnalysisError("locate_gates: block has no reference events");
    BlockGates gates;
    gates.reference_peak_ns = *peak;
    for (const auto& c : spec.channels) {
        ChannelGates g;
        g.signal = {*peak + c.delay_ns - 0.5 * c.width_ns, c.width_ns};
        g.noise = {g.signal.start_ns + spec.noise_offset_ns, c.width_ns};
        gates.by_channel[c.id] = g;
    }
    return gates;
}

inline GateSet locate_gates(const std::vector<ArrivalHistogram>& reference_blocks,
                            const GateSpec& spec, double block_s) {
    GateSet set;
    set.block_s = block_s;
    set.blocks.reserve(reference_blocks.size());
    for (const auto& hist : reference_blocks)
        set.blocks.push_back(locate_gates_for_block(hist, spec));
    return set;
}

// ---------------------------------------------------------------------------
// gated tallies and the per-cycle presence table

struct ChannelTally {
    uint64_t signal = 0;    // raw multiplicity inside the signal window
    uint64_t noise = 0;
    uint64_t ignored = 0;
};

struct GatedCounts {
    std::map<uint8_t, ChannelTally> channels;
    uint64_t cycles = 0;   // R: trigger count

    const ChannelTally& at(uint8_t channel) const {
        const auto it = channels.find(channel);
        if (it == channels.end())
            throw AnalysisError("gated counts: unknown channel " + std::to_string(channel));
        return it->second;
    }
};

// Cycles (by index) holding at least one signal-window event per channel; a
// gate is a binary click for pairing purposes.
struct CycleTable {
    std::map<uint8_t, std::vector<uint64_t>> signal_cycles;
    uint64_t cycles = 0;

    const std::vector<uint64_t>& at(uint8_t channel) const {
        const auto it = signal_cycles.find(channel);
        if (it == signal_cycles.end())
            throw AnalysisError("cycle table: unknown channel " + std::to_string(channel));
        return it->second;
    }
};

// Offline gating pass with an externally supplied GateSet (block index by
// timestamp). All detection channels present in the gate spec are tallied.
inline std::pair<GatedCounts, CycleTable> gated_counts(
    std::span<const qtt::TimeTagRecord> records, const GateSet& gates, uint8_t trigger_channel) {
    if (gates.blocks.empty()) throw AnalysisError("gated_counts: empty gate set");
    const uint64_t block_ps = seconds_to_ps_saturating(gates.block_s);
    GatedCounts counts;
    CycleTable table;
    for (const auto& [id, g] : gates.blocks.front().by_channel) {
        counts.channels[id];
        table.signal_cycles[id];
    }
    uint64_t last_trigger = UINT64_MAX;
    uint64_t cycle = 0;
    for (const auto& r : records) {
        if (r.channel == trigger_channel) {
            cycle = counts.cycles++;
            last_trigger = r.timestamp_ps;
            continue;
        }
        const auto it = counts.channels.find(r.channel);
        if (it == counts.channels.end()) continue;
        if (last_trigger == UINT64_MAX) continue;
        const size_t block =
            std::min<size_t>(block_ps ? r.timestamp_ps / block_ps : 0, gates.blocks.size() - 1);
        const auto& g = gates.lookup(block, r.channel);
        const double dt = static_cast<double>(r.timestamp_ps - last_trigger) * 1e-3;
        if (g.signal.contains(dt)) {
            ++it->second.signal;
            auto& cycles_list = table.signal_cycles[r.channel];
            if (cycles_list.empty() || cycles_list.back() != cycle) cycles_list.push_back(cycle);
        } else if (g.noise.contains(dt)) {
            ++it->second.noise;
        } else {
            ++it->second.ignored;
        }
    }
    table.cycles = counts.cycles;
    return {counts, table};
}

// ---------------------------------------------------------------------------
// cycle-separated coincidences

// Raw G2 counts for n in [-n_max, n_max]; index n + n_max.
struct CorrelationSeries {
    int n_max = 0;
    std::vector<uint64_t> raw;

    uint64_t at(int n) const {
        if (n < -n_max || n > n_max) throw AnalysisError("g2: n out of range");
        return raw[static_cast<size_t>(n + n_max)];
    }
};

// Counts pairs (i, j) with a gated click on channel a in cycle i and on b in
// cycle j, j - i = n. Both inputs are strictly increasing cycle lists.
inline CorrelationSeries g2_series(const std::vector<uint64_t>& cycles_a,
                                   const std::vector<uint64_t>& cycles_b, int n_max) {
    if (n_max < 1) throw AnalysisError("g2: n_max must be >= 1");
    CorrelationSeries out;
    out.n_max = n_max;
    out.raw.assign(static_cast<size_t>(2 * n_max + 1), 0);
    size_t lo = 0, hi = 0;
    for (const uint64_t a : cycles_a) {
        const int64_t lo_cycle = static_cast<int64_t>(a) - n_max;
        const int64_t hi_cycle = static_cast<int64_t>(a) + n_max;
        while (lo < cycles_b.size() && static_cast<int64_t>(cycles_b[lo]) < lo_cycle) ++lo;
        if (hi < lo) hi = lo;
        while (hi < cycles_b.size() && static_cast<int64_t>(cycles_b[hi]) <= hi_cycle) ++hi;
        for (size_t k = lo; k < hi; ++k)
            ++out.raw[static_cast<size_t>(static_cast<int64_t>(cycles_b[k]) -
                                          static_cast<int64_t>(a) + n_max)];
    }
    return out;
}

inline CorrelationSeries g2_series(const CycleTable& table, uint8_t channel_a, uint8_t channel_b,
                                   int n_max) {
    return g2_series(table.at(channel_a), table.at(channel_b), n_max);
}

// Folds G2(-n) onto G2(n): output[0] = G(0), output[n] = (G(n) + G(-n)) / 2.
inline std::vector<double> symmetrize(const CorrelationSeries& series) {
    std::vector<double> out(static_cast<size_t>(series.n_max) + 1);
    out[0] = static_cast<double>(series.at(0));
    for (int n = 1; n <= series.n_max; ++n)
        out[static_cast<size_t>(n)] = 0.5 * (static_cast<double>(series.at(n)) +
                                             static_cast<double>(series.at(-n)));
    return out;
}

// ---------------------------------------------------------------------------
// coincidence expectations, SNR, significance

// Expected n=0 coincidences from background alone:
// (C1S C2N + C1N C2S - C1N C2N) / R.
inline double theory_g2_zero(const GatedCounts& counts, uint8_t channel_1, uint8_t channel_2) {
    if (counts.cycles == 0) throw AnalysisError("theory_g2_zero: R = 0");
    const auto& c1 = counts.at(channel_1);
    const auto& c2 = counts.at(channel_2);
    const double c1s = static_cast<double>(c1.signal), c1n = static_cast<double>(c1.noise);
    const double c2s = static_cast<double>(c2.signal), c2n = static_cast<double>(c2.noise);
    return (c1s * c2n + c1n * c2s - c1n * c2n) / static_cast<double>(counts.cycles);
}

// Expected coincidences per n for n != 0 (no quantum correlation between
// distinct cycles): C1S C2S / R.
inline double theory_g2_nonzero(const GatedCounts& counts, uint8_t channel_1, uint8_t channel_2) {
    if (counts.cycles == 0) throw AnalysisError("theory_g2_nonzero: R = 0");
    const double c1s = static_cast<double>(counts.at(channel_1).signal);
    const double c2s = static_cast<double>(counts.at(channel_2).signal);
    return c1s * c2s / static_cast<double>(counts.cycles);
}

struct SnrResult {
    double value = std::numeric_limits<double>::quiet_NaN();
    bool defined = false;
};

// (C_signal - B) / B with B the noise-window counts rescaled to the signal
// window width. Undefined (not infinite) when the background estimate is 0.
inline SnrResult snr(const ChannelTally& tally, double signal_width_ns, double noise_width_ns) {
    if (!(noise_width_ns > 0)) throw AnalysisError("snr: noise window width must be > 0");
    const double background =
        static_cast<double>(tally.noise) * (signal_width_ns / noise_width_ns);
    if (background <= 0.0) return {};
    return {(static_cast<double>(tally.signal) - background) / background, true};
}

// z-score of the n=0 suppression: distance between the off-peak mean and
// G(0) in units of the combined Poisson error (var of a count = the count).
inline double significance(const CorrelationSeries& series) {
    if (series.n_max < 5) throw AnalysisError("significance: need n_max >= 5");
    uint64_t total = 0;
    for (const uint64_t v : series.raw) total += v;
    if (total == 0) throw AnalysisError("significance: all-zero series");
    const std::vector<double> sym = symmetrize(series);
    double mean = 0.0, var_mean = 0.0;
    const double n = static_cast<double>(series.n_max);
    for (int i = 1; i <= series.n_max; ++i) {
        mean += sym[static_cast<size_t>(i)];
        var_mean += 0.25 * (static_cast<double>(series.at(i)) + static_cast<double>(series.at(-i)));
    }
    mean /= n;
    var_mean /= n * n;
    const double g0 = static_cast<double>(series.at(0));
    const double sigma = std::sqrt(g0 + var_mean);
    if (sigma == 0.0) return 0.0;
    return (mean - g0) / sigma;
}

// ---------------------------------------------------------------------------
// pulse-shape overlap (background-subtracted, area-normalized L1 distances)

struct OverlapInput {
    const ArrivalHistogram* histogram = nullptr;
    double background_per_bin = 0.0;
};

// Pairwise L1 distances between normalized profiles over the comparison
// region [region_start_ns, region_end_ns). Histograms must share binning.
inline std::vector<std::vector<double>> pulse_shape_overlap(std::span<const OverlapInput> inputs,
                                                            double region_start_ns,
                                                            double region_end_ns) {
    if (inputs.empty()) throw AnalysisError("pulse_shape_overlap: no histograms");
    const auto& first = *inputs.front().histogram;
    for (const auto& in : inputs) {
        const auto& h = *in.histogram;
        if (h.bin_width_ns != first.bin_width_ns || h.window_start_ns != first.window_start_ns ||
            h.bin_count() != first.bin_count())
            throw AnalysisError("pulse_shape_overlap: histograms must share binning");
    }
    const size_t bin_lo = static_cast<size_t>(std::max(
        0.0, std::floor((region_start_ns - first.window_start_ns) / first.bin_width_ns)));
    const size_t bin_hi = std::min(
        first.bin_count(), static_cast<size_t>(std::max(
                               0.0, std::ceil((region_end_ns - first.window_start_ns) /
                                              first.bin_width_ns))));
    if (bin_hi <= bin_lo) throw AnalysisError("pulse_shape_overlap: empty comparison region");

    std::vector<std::vector<double>> profiles;
    for (const auto& in : inputs) {
        std::vector<double> p(bin_hi - bin_lo);
        double area = 0.0;
        for (size_t i = bin_lo; i < bin_hi; ++i) {
            p[i - bin_lo] =
                static_cast<double>(in.histogram->counts[i]) - in.background_per_bin;
            area += p[i - bin_lo];
        }
        if (!(area > 0.0))
            throw AnalysisError("pulse_shape_overlap: zero-area histogram after subtraction");
        for (double& v : p) v /= area;
        profiles.push_back(std::move(p));
    }
    std::vector<std::vector<double>> distance(inputs.size(),
                                              std::vector<double>(inputs.size(), 0.0));
    for (size_t i = 0; i < profiles.size(); ++i) {
        for (size_t j = i + 1; j < profiles.size(); ++j) {
            double l1 = 0.0;
            for (size_t k = 0; k < profiles[i].size(); ++k)
                l1 += std::abs(profiles[i][k] - profiles[j][k]);
            distance[i][j] = distance[j][i] = l1;
        }
    }
    return distance;
}

// ---------------------------------------------------------------------------
// streaming analyzer: single pass, drift-tracked gating per time block

struct CorrelationResult {
    uint8_t channel_a = 0;   // reference channel
    uint8_t channel_b = 0;
    CorrelationSeries series;
    std::vector<double> symmetrized;
    double theory_zero = 0.0;
    double theory_nonzero = 0.0;
    double mean_offpeak = 0.0;
    SnrResult snr_a;
    SnrResult snr_b;
    double z = std::numeric_limits<double>::quiet_NaN();
};

struct ChannelAnalysis {
    uint8_t id = 0;
    qtt::ChannelRole role = qtt::ChannelRole::apd;
    std::string label;
    double gate_width_ns = 0.0;
    ChannelTally tally;
    SnrResult snr;
    ArrivalHistogram histogram;   // whole run, uncorrected for drift
};

struct AnalysisResult {
    uint64_t cycles = 0;
    uint64_t pre_trigger_skipped = 0;
    double duration_s = 0.0;
    GateSet gates;
    std::vector<ChannelAnalysis> channels;
    std::vector<CorrelationResult> pairs;

    const ChannelAnalysis& channel(uint8_t id) const {
        for (const auto& c : channels)
            if (c.id == id) return c;
        throw AnalysisError("analysis result: unknown channel " + std::to_string(id));
    }

    GatedCounts gated() const {
        GatedCounts counts;
        counts.cycles = cycles;
        for (const auto& c : channels) counts.channels[c.id] = c.tally;
        return counts;
    }
};

struct AnalyzerSetup {
    uint8_t trigger_channel = 0;
    uint8_t reference_channel = 1;
    GateSpec gates;
    std::vector<std::pair<uint8_t, qtt::ChannelRole>> roles;
    std::map<uint8_t, std::string> labels;
    double bin_width_ns = 2.0;
    double block_s = 3600.0;
    int n_max = 10;
    double histogram_window_ns = 0.0;   // 0: derived from the first trigger gap
};

// Setup straight from an experiment config: trigger 0, detection channels in
// config order, reference = first PMT-role channel.
inline AnalyzerSetup make_analyzer_setup(const ExperimentConfig& config) {
    AnalyzerSetup setup;
    setup.bin_width_ns = config.analysis.bin_width_ns;
    setup.block_s = config.analysis.block_s;
    setup.n_max = config.analysis.n_max;
    setup.histogram_window_ns = config.analysis.histogram_window_ns;
    setup.gates.noise_offset_ns = config.analysis.noise_offset_ns;
    bool have_reference = false;
    for (size_t i = 0; i < config.channels.size(); ++i) {
        const auto& c = config.channels[i];
        const uint8_t id = static_cast<uint8_t>(i + 1);
        setup.gates.channels.push_back({id, c.gate_width_ns, c.channel_delay_ns});
        setup.roles.emplace_back(id, c.role);
        setup.labels[id] = c.label;
        if (!have_reference && c.role == qtt::ChannelRole::pmt) {
            setup.reference_channel = id;
            have_reference = true;
        }
    }
    if (!have_reference && !config.channels.empty()) setup.reference_channel = 1;
    return setup;
}

// Setup from a stream header alone (no generating config available): gate
// widths fall back to per-role defaults, overridable by the caller.
inline AnalyzerSetup analyzer_setup_from_header(const qtt::StreamHeader& header,
                                                const AnalysisConfig& analysis,
                                                double snspd_gate_width_ns = 36.0,
                                                double default_gate_width_ns = 60.0) {
    AnalyzerSetup setup;
    setup.bin_width_ns = analysis.bin_width_ns;
    setup.block_s = analysis.block_s;
    setup.n_max = analysis.n_max;
    setup.histogram_window_ns = analysis.histogram_window_ns;
    setup.gates.noise_offset_ns = analysis.noise_offset_ns;
    bool have_trigger = false, have_reference = false;
    for (const auto& c : header.channels) {
        if (c.role == qtt::ChannelRole::trigger) {
            if (!have_trigger) setup.trigger_channel = c.id;
            have_trigger = true;
            continue;
        }
        const double width = c.role == qtt::ChannelRole::snspd ? snspd_gate_width_ns
                                                               : default_gate_width_ns;
        setup.gates.channels.push_back({c.id, width, 0.0});
        setup.roles.emplace_back(c.id, c.role);
        setup.labels[c.id] = std::string(qtt::role_name(c.role)) + std::to_string(c.id);
        if (!have_reference && c.role == qtt::ChannelRole::pmt) {
            setup.reference_channel = c.id;
            have_reference = true;
        }
    }
    if (!have_trigger) throw AnalysisError("stream has no trigger channel");
    if (setup.roles.empty()) throw AnalysisError("stream has no detection channels");
    if (!have_reference) setup.reference_channel = setup.roles.front().first;
    return setup;
}

// Single-pass analyzer. Triggers are never buffered; detection events are
// buffered per time block so each block can be classified with gates located
// from its own reference histogram (drift tracking). Memory therefore scales
// with the event rate times the block length, not with the stream length.
class StreamAnalyzer : public qtt::RecordSink {
public:
    explicit StreamAnalyzer(AnalyzerSetup setup) : setup_(std::move(setup)) {
        setup_.gates.validate();
        if (setup_.n_max < 1) throw AnalysisError("analyzer: n_max must be >= 1");
        if (!(setup_.block_s > 0)) throw AnalysisError("analyzer: block_s must be > 0");
        block_ps_ = seconds_to_ps_saturating(setup_.block_s);
        for (const auto& [id, role] : setup_.roles) {
            ChannelState state;
            state.role = role;
            channels_[id] = state;
        }
        if (channels_.find(setup_.reference_channel) == channels_.end())
            throw AnalysisError("analyzer: reference channel not among detection channels");
        result_.gates.block_s = setup_.block_s;
        if (setup_.histogram_window_ns > 0.0) set_window(setup_.histogram_window_ns);
    }

    void on_records(std::span<const qtt::TimeTagRecord> batch) override {
        for (const auto& r : batch) process(r);
    }

    AnalysisResult finish() {
        finalize_block();
        result_.cycles = cycle_count_;
        result_.duration_s = static_cast<double>(last_timestamp_) * 1e-12;

        for (auto& [id, state] : channels_) {
            ChannelAnalysis c;
            c.id = id;
            c.role = state.role;
            const auto label_it = setup_.labels.find(id);
            c.label = label_it != setup_.labels.end() ? label_it->second : std::to_string(id);
            c.gate_width_ns = gate_width(id);
            c.tally = state.tally;
            c.snr = snr(state.tally, c.gate_width_ns, c.gate_width_ns);
            c.histogram = std::move(state.full_histogram);
            result_.channels.push_back(std::move(c));
        }

        const GatedCounts counts = result_.gated();
        const uint8_t ref = setup_.reference_channel;
        for (const auto& [id, state] : channels_) {
            if (id == ref) continue;
            CorrelationResult pair;
            pair.channel_a = ref;
            pair.channel_b = id;
            pair.series = g2_series(channels_.at(ref).signal_cycles, state.signal_cycles,
                                    setup_.n_max);
            pair.symmetrized = symmetrize(pair.series);
            if (cycle_count_ > 0) {
                pair.theory_zero = theory_g2_zero(counts, ref, id);
                pair.theory_nonzero = theory_g2_nonzero(counts, ref, id);
            }
            double mean = 0.0;
            for (int n = 1; n <= setup_.n_max; ++n)
                mean += pair.symmetrized[static_cast<size_t>(n)];
            pair.mean_offpeak = mean / setup_.n_max;
            pair.snr_a = result_.channel(ref).snr;
            pair.snr_b = result_.channel(id).snr;
            uint64_t total = 0;
            for (const uint64_t v : pair.series.raw) total += v;
            if (total > 0 && setup_.n_max >= 5) pair.z = significance(pair.series);
            result_.pairs.push_back(std::move(pair));
        }
        return std::move(result_);
    }

private:
    struct PendingEvent {
        uint64_t cycle;
        uint8_t channel;
        float dt_ns;   // trigger-relative; cycle-scale offsets fit easily
    };

    struct ChannelState {
        qtt::ChannelRole role = qtt::ChannelRole::apd;
        ChannelTally tally;
        std::vector<uint64_t> signal_cycles;
        ArrivalHistogram block_histogram;
        ArrivalHistogram full_histogram;
        bool histograms_ready = false;
    };

    double gate_width(uint8_t id) const {
        for (const auto& c : setup_.gates.channels)
            if (c.id == id) return c.width_ns;
        throw AnalysisError("analyzer: no gate width for channel " + std::to_string(id));
    }

    void set_window(double window_ns) {
        window_ns_ = window_ns;
        for (auto& [id, state] : channels_) {
            state.block_histogram.init(setup_.bin_width_ns, 0.0, window_ns_);
            state.full_histogram.init(setup_.bin_width_ns, 0.0, window_ns_);
            state.histograms_ready = true;
        }
        for (const auto& ev : deferred_) route(ev.cycle, ev.channel, ev.dt_ns);
        deferred_.clear();
    }

    // Events arriving before the window is known (everything in the first
    // cycle when the window comes from the trigger spacing) are replayed
    // once it is.
    void flush_deferred() {
        if (window_ns_ > 0.0 || deferred_.empty()) return;
        double max_dt = 0.0;
        for (const auto& ev : deferred_) max_dt = std::max(max_dt, double(ev.dt_ns));
        set_window(max_dt + setup_.bin_width_ns);
    }

    void route(uint64_t cycle, uint8_t channel, double dt_ns) {
        auto& state = channels_.at(channel);
        if (state.block_histogram.add(dt_ns)) {
            state.full_histogram.add(dt_ns);
            pending_.push_back({cycle, channel, static_cast<float>(dt_ns)});
        } else {
            ++state.tally.ignored;
        }
    }

    void process(const qtt::TimeTagRecord& r) {
        if (r.timestamp_ps < last_timestamp_)
            throw AnalysisError("analyzer: records must be time-sorted");
        last_timestamp_ = r.timestamp_ps;
        const size_t block = static_cast<size_t>(r.timestamp_ps / block_ps_);
        if (block != current_block_) {
            finalize_block();
            current_block_ = block;
        }
        if (r.channel == setup_.trigger_channel) {
            if (window_ns_ == 0.0 && have_trigger_ && r.timestamp_ps > last_trigger_) {
                set_window(setup_.histogram_window_ns > 0.0
                               ? setup_.histogram_window_ns
                               : static_cast<double>(r.timestamp_ps - last_trigger_) * 1e-3);
            }
            cycle_of_last_trigger_ = cycle_count_++;
            last_trigger_ = r.timestamp_ps;
            have_trigger_ = true;
            return;
        }
        const auto it = channels_.find(r.channel);
        if (it == channels_.end()) return;   // unknown detection channel: not analyzed
        if (!have_trigger_) {
            ++result_.pre_trigger_skipped;
            return;
        }
        const double dt_ns = static_cast<double>(r.timestamp_ps - last_trigger_) * 1e-3;
        if (window_ns_ == 0.0) {
            deferred_.push_back({cycle_of_last_trigger_, r.channel, static_cast<float>(dt_ns)});
            return;
        }
        route(cycle_of_last_trigger_, r.channel, dt_ns);
    }

    void finalize_block() {
        flush_deferred();
        if (pending_.empty()) {
            reset_block_histograms();
            return;
        }
        const auto& ref_state = channels_.at(setup_.reference_channel);
        const BlockGates gates = locate_gates_for_block(ref_state.block_histogram, setup_.gates);
        // Pad skipped (eventless) blocks so gate indices line up with block
        // numbers.
        while (result_.gates.blocks.size() < current_block_)
            result_.gates.blocks.push_back(gates);
        result_.gates.blocks.push_back(gates);
        for (const auto& ev : pending_) {
            auto& state = channels_.at(ev.channel);
            const auto& g = gates.by_channel.at(ev.channel);
            const double dt = static_cast<double>(ev.dt_ns);
            if (g.signal.contains(dt)) {
                ++state.tally.signal;
                if (state.signal_cycles.empty() || state.signal_cycles.back() != ev.cycle)
                    state.signal_cycles.push_back(ev.cycle);
            } else if (g.noise.contains(dt)) {
                ++state.tally.noise;
            } else {
                ++state.tally.ignored;
            }
        }
        pending_.clear();
        reset_block_histograms();
    }

    void reset_block_histograms() {
        for (auto& [id, state] : channels_) {
            if (state.histograms_ready)
                std::fill(state.block_histogram.counts.begin(),
                          state.block_histogram.counts.end(), 0);
            state.block_histogram.in_window = 0;
            state.block_histogram.out_of_window = 0;
        }
    }

    AnalyzerSetup setup_;
    uint64_t block_ps_ = 0;
    std::map<uint8_t, ChannelState> channels_;
    std::vector<PendingEvent> pending_;
    std::vector<PendingEvent> deferred_;
    AnalysisResult result_;
    uint64_t cycle_count_ = 0;
    uint64_t cycle_of_last_trigger_ = 0;
    uint64_t last_trigger_ = 0;
    uint64_t last_timestamp_ = 0;
    size_t current_block_ = 0;
    bool have_trigger_ = false;
    double window_ns_ = 0.0;
};

inline AnalysisResult analyze_records(std::span<const qtt::TimeTagRecord> records,
                                      const AnalyzerSetup& setup) {
    StreamAnalyzer analyzer(setup);
    analyzer.on_records(records);
    return analyzer.finish();
}

}  // namespace ionlink
