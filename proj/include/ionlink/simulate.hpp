#pragma once

// Event-driven Monte Carlo generator. Each cycle runs initialization,
// excitation, and (at most one) spontaneous emission; the emitted photon is
// routed to exactly one detection channel, so two channels never share a
// signal event in the same cycle. Event counts are sampled first and placed
// second, so runtime scales with the number of detected events plus the
// trigger stream, not with per-cycle work.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <vector>

#include "ionlink/config.hpp"
#include "ionlink/emission.hpp"
#include "ionlink/photonics.hpp"
#include "ionlink/timetag.hpp"

namespace ionlink {

struct ChannelSimCounts {
    uint64_t signal = 0;
    uint64_t signal_filtered = 0;   // lost to pump-detuning transmission dips
    uint64_t flat_noise = 0;
    uint64_t pulse_background = 0;
    uint64_t dead_time_dropped = 0;
};

struct SimulationSummary {
    uint64_t cycles = 0;
    uint64_t records = 0;
    std::vector<ChannelSimCounts> per_channel;
};

// Inverse-CDF draw from the rise/decay profile truncated to the excitation
// window; u in [0,1), result ns after excitation start.
inline double sample_emission_time(const EmissionProfile& profile, double window_ns, double u) {
    return EmissionShape(profile, window_ns).sample(u);
}

namespace detail {

// Distinct uniform cycle indices via sample-sort-dedupe rounds; collisions
// are rare at the occupancies this simulator runs at.
inline std::vector<uint64_t> sample_distinct_cycles(std::mt19937_64& rng, uint64_t range,
                                                    uint64_t n) {
    std::vector<uint64_t> cycles;
    cycles.reserve(n + 64);
    std::uniform_int_distribution<uint64_t> dist(0, range - 1);
    while (cycles.size() < n) {
        const uint64_t need = n - cycles.size();
        for (uint64_t i = 0; i < need; ++i) cycles.push_back(dist(rng));
        std::sort(cycles.begin(), cycles.end());
        cycles.erase(std::unique(cycles.begin(), cycles.end()), cycles.end());
    }
    return cycles;
}

// Transmission of the channel's narrowband filter at the drifted pump
// detuning, relative to zero detuning.
inline double detuning_modulation(const ChannelModel& channel, const DriftModel& drift,
                                  double t_s) {
    if (channel.filter_fwhm_mhz <= 0.0 || drift.detuning_amplitude_mhz <= 0.0) return 1.0;
    const double delta = drift.detuning_amplitude_mhz *
                         std::sin(2.0 * std::numbers::pi * t_s / drift.detuning_period_s);
    const FilterSpec filter{channel.filter_fwhm_mhz, 1.0};
    return filter_transmission({channel.photon_fwhm_mhz, delta}, filter) /
           filter_transmission({channel.photon_fwhm_mhz, 0.0}, filter);
}

struct SimEvent {
    uint64_t t_ps;
    uint8_t channel;   // stream channel id (1-based; 0 is the trigger)

    bool operator<(const SimEvent& other) const {
        return t_ps != other.t_ps ? t_ps < other.t_ps : channel < other.channel;
    }
};

struct GeneratedEvents {
    std::vector<SimEvent> events;
    SimulationSummary summary;
    uint64_t period_ps = 0;
};

inline GeneratedEvents generate_events(const ExperimentConfig& config) {
    config.validate();
    const uint64_t cycles = config.cycle_count();
    if (cycles == 0) throw ConfigError("run.duration_s", "duration shorter than one cycle");
    const uint64_t period_ps = config.pulse.cycle_period_ps();
    const uint64_t total_ps = cycles * period_ps;
    const double total_s = static_cast<double>(total_ps) * 1e-12;
    const double excitation_start_ns = config.pulse.excitation_start_ns();

    SimulationSummary summary;
    summary.cycles = cycles;
    summary.per_channel.resize(config.channels.size());

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Arrival-time random walk, one offset per slice; slice 0 is unshifted.
    const uint64_t slice_ps = seconds_to_ps_saturating(config.drift.walk_slice_s);
    const uint64_t n_slices = total_ps / std::max<uint64_t>(slice_ps, 1) + 2;
    std::vector<double> walk_offset_ns(n_slices, 0.0);
    if (config.drift.arrival_walk_step_ns > 0.0) {
        for (uint64_t k = 1; k < n_slices; ++k)
            walk_offset_ns[k] =
                walk_offset_ns[k - 1] + config.drift.arrival_walk_step_ns * normal(rng);
    }
    auto walk_at = [&](uint64_t t_ps) {
        return walk_offset_ns[std::min<uint64_t>(t_ps / std::max<uint64_t>(slice_ps, 1),
                                                 n_slices - 1)];
    };

    const EmissionShape shape(config.emission, config.pulse.excitation_duration_ns);

    std::vector<detail::SimEvent> events;

    // --- signal: one emission per cycle at most, routed to a single channel
    double p_total = 0.0;
    for (const auto& c : config.channels) p_total += c.signal_probability;
    if (p_total > 0.0) {
        std::binomial_distribution<int64_t> count_dist(static_cast<int64_t>(cycles), p_total);
        const uint64_t n_signal = static_cast<uint64_t>(count_dist(rng));
        events.reserve(n_signal + 1024);
        const std::vector<uint64_t> signal_cycles =
            detail::sample_distinct_cycles(rng, cycles, n_signal);
        std::vector<double> route_cdf(config.channels.size());
        double acc = 0.0;
        for (size_t i = 0; i < config.channels.size(); ++i) {
            acc += config.channels[i].signal_probability / p_total;
            route_cdf[i] = acc;
        }
        for (const uint64_t cycle : signal_cycles) {
            const double u_route = uniform(rng);
            size_t ch = 0;
            while (ch + 1 < route_cdf.size() && u_route > route_cdf[ch]) ++ch;
            const auto& channel = config.channels[ch];
            const uint64_t cycle_start = cycle * period_ps;
            const double mod = detail::detuning_modulation(
                channel, config.drift, static_cast<double>(cycle_start) * 1e-12);
            if (mod < 1.0 && uniform(rng) >= mod) {
                ++summary.per_channel[ch].signal_filtered;
                continue;
            }
            double t_ns = excitation_start_ns + shape.sample(uniform(rng));
            if (channel.jitter_sigma_ns > 0.0) t_ns += channel.jitter_sigma_ns * normal(rng);
            t_ns += walk_at(cycle_start);
            const int64_t t_ps = static_cast<int64_t>(cycle_start) +
                                 static_cast<int64_t>(std::llround(t_ns * 1e3));
            events.push_back({static_cast<uint64_t>(std::max<int64_t>(t_ps, 0)),
                              static_cast<uint8_t>(ch + 1)});
            ++summary.per_channel[ch].signal;
        }
    }

    // --- flat noise: homogeneous Poisson per channel
    for (size_t ch = 0; ch < config.channels.size(); ++ch) {
        const auto& channel = config.channels[ch];
        if (channel.noise_cps <= 0.0) continue;
        std::poisson_distribution<int64_t> count_dist(channel.noise_cps * total_s);
        const int64_t n = count_dist(rng);
        std::uniform_int_distribution<uint64_t> time_dist(0, total_ps - 1);
        for (int64_t i = 0; i < n; ++i)
            events.push_back({time_dist(rng), static_cast<uint8_t>(ch + 1)});
        summary.per_channel[ch].flat_noise += static_cast<uint64_t>(n);
    }

    // --- pulse-correlated background: active during the excitation pulse and
    // the displaced background pulse, shifted together with the signal by the
    // arrival-time walk
    const double w_exc_ns = config.pulse.excitation_duration_ns;
    const double w_bg_ns = config.pulse.background_pulse_width_ns;
    const double pulse_on_ns = w_exc_ns + w_bg_ns;
    for (size_t ch = 0; ch < config.channels.size(); ++ch) {
        const auto& channel = config.channels[ch];
        if (channel.pulse_background_cps <= 0.0 || pulse_on_ns <= 0.0) continue;
        const double on_time_s = pulse_on_ns * 1e-9 * static_cast<double>(cycles);
        std::poisson_distribution<int64_t> count_dist(channel.pulse_background_cps * on_time_s);
        const int64_t n = count_dist(rng);
        std::uniform_int_distribution<uint64_t> cycle_dist(0, cycles - 1);
        for (int64_t i = 0; i < n; ++i) {
            const uint64_t cycle_start = cycle_dist(rng) * period_ps;
            const double x = uniform(rng) * pulse_on_ns;
            double t_ns = excitation_start_ns +
                          (x < w_exc_ns ? x : config.pulse.background_pulse_offset_ns +
                                                  (x - w_exc_ns));
            t_ns += walk_at(cycle_start);
            const int64_t t_ps = static_cast<int64_t>(cycle_start) +
                                 static_cast<int64_t>(std::llround(t_ns * 1e3));
            events.push_back({static_cast<uint64_t>(std::max<int64_t>(t_ps, 0)),
                              static_cast<uint8_t>(ch + 1)});
        }
        summary.per_channel[ch].pulse_background += static_cast<uint64_t>(n);
    }

    std::sort(events.begin(), events.end());

    // --- detector dead time
    bool any_dead_time = false;
    for (const auto& c : config.channels) any_dead_time |= c.dead_time_ns > 0.0;
    if (any_dead_time) {
        std::vector<uint64_t> last_seen(config.channels.size() + 1, UINT64_MAX);
        std::vector<uint64_t> dead_ps(config.channels.size() + 1, 0);
        for (size_t ch = 0; ch < config.channels.size(); ++ch)
            dead_ps[ch + 1] =
                static_cast<uint64_t>(std::llround(config.channels[ch].dead_time_ns * 1e3));
        size_t kept = 0;
        for (const auto& ev : events) {
            const uint64_t last = last_seen[ev.channel];
            if (last != UINT64_MAX && dead_ps[ev.channel] > 0 &&
                ev.t_ps - last < dead_ps[ev.channel]) {
                ++summary.per_channel[ev.channel - 1].dead_time_dropped;
                continue;
            }
            last_seen[ev.channel] = ev.t_ps;
            events[kept++] = ev;
        }
        events.resize(kept);
    }

    summary.records = cycles + events.size();
    return {std::move(events), std::move(summary), period_ps};
}

// Merges the implicit trigger train (one per cycle start) with the sorted
// event list and feeds the sink in fixed-size chunks. Ties go to the
// trigger.
inline void emit_merged(const GeneratedEvents& generated, qtt::RecordSink& sink) {
    const uint64_t cycles = generated.summary.cycles;
    const uint64_t period_ps = generated.period_ps;
    const auto& events = generated.events;
    std::vector<qtt::TimeTagRecord> chunk(1 << 16);
    size_t fill = 0;
    auto push = [&](uint64_t t, uint8_t ch) {
        chunk[fill++] = {t, ch, 0};
        if (fill == chunk.size()) {
            sink.on_records(std::span<const qtt::TimeTagRecord>(chunk.data(), fill));
            fill = 0;
        }
    };
    size_t next_event = 0;
    for (uint64_t cycle = 0; cycle < cycles; ++cycle) {
        const uint64_t trigger_t = cycle * period_ps;
        while (next_event < events.size() && events[next_event].t_ps < trigger_t) {
            push(events[next_event].t_ps, events[next_event].channel);
            ++next_event;
        }
        push(trigger_t, 0);
    }
    while (next_event < events.size()) {
        push(events[next_event].t_ps, events[next_event].channel);
        ++next_event;
    }
    if (fill > 0) sink.on_records(std::span<const qtt::TimeTagRecord>(chunk.data(), fill));
}

}  // namespace detail

inline SimulationSummary simulate(const ExperimentConfig& config, qtt::RecordSink& sink) {
    const detail::GeneratedEvents generated = detail::generate_events(config);
    detail::emit_merged(generated, sink);
    return generated.summary;
}

// Simulates straight into a .qtt byte stream; returns (summary, bytes).
inline std::pair<SimulationSummary, uint64_t> simulate_to_stream(const ExperimentConfig& config,
                                                                 std::ostream& out) {
    const detail::GeneratedEvents generated = detail::generate_events(config);
    qtt::StreamHeader header = config.stream_header();
    header.record_count = generated.summary.records;
    qtt::StreamWriter writer(out, header);
    qtt::WriterSink sink(writer);
    detail::emit_merged(generated, sink);
    const uint64_t bytes = writer.finish();
    return {generated.summary, bytes};
}

// Closed-form expected (signal, background) counts for one channel inside a
// trigger-relative window, used as the analytic oracle in tests. Exact when
// the arrival-time walk and detector jitter are zero; background terms are
// exact always.
struct ExpectedCounts {
    double signal = 0.0;
    double noise = 0.0;
};

inline ExpectedCounts expected_counts(const ExperimentConfig& config, size_t channel_index,
                                      double window_start_ns, double window_end_ns) {
    config.validate();
    if (channel_index >= config.channels.size())
        throw std::invalid_argument("expected_counts: no such channel");
    if (window_end_ns < window_start_ns)
        throw std::invalid_argument("expected_counts: window ends before it starts");
    const auto& channel = config.channels[channel_index];
    const double cycles = static_cast<double>(config.cycle_count());
    const uint64_t period_ps = config.pulse.cycle_period_ps();
    const double total_s = cycles * static_cast<double>(period_ps) * 1e-12;
    const double exc_start = config.pulse.excitation_start_ns();

    ExpectedCounts out;

    // signal: per-shot probability, detuning-averaged, times the profile
    // fraction inside the window
    if (channel.signal_probability > 0.0) {
        double mod_avg = 1.0;
        if (channel.filter_fwhm_mhz > 0.0 && config.drift.detuning_amplitude_mhz > 0.0) {
            const int steps = 20000;   // Simpson over the run
            double sum = 0.0;
            for (int i = 0; i <= steps; ++i) {
                const double t = total_s * i / steps;
                const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
                sum += w * detail::detuning_modulation(channel, config.drift, t);
            }
            mod_avg = sum / (3.0 * steps);
        }
        const EmissionShape shape(config.emission, config.pulse.excitation_duration_ns);
        const double fraction =
            shape.window_fraction(window_start_ns - exc_start, window_end_ns - exc_start);
        out.signal = channel.signal_probability * mod_avg * fraction * cycles;
    }

    // flat noise: rate times total open gate time
    const double width_ns = window_end_ns - window_start_ns;
    out.noise = channel.noise_cps * width_ns * 1e-9 * cycles;

    // pulse-correlated background: rate times window/pulse overlap
    if (channel.pulse_background_cps > 0.0) {
        auto overlap = [&](double a0, double a1) {
            const double lo = std::max(window_start_ns, a0);
            const double hi = std::min(window_end_ns, a1);
            return std::max(0.0, hi - lo);
        };
        const double on_ns =
            overlap(exc_start, exc_start + config.pulse.excitation_duration_ns) +
            overlap(exc_start + config.pulse.background_pulse_offset_ns,
                    exc_start + config.pulse.background_pulse_offset_ns +
                        config.pulse.background_pulse_width_ns);
        out.noise += channel.pulse_background_cps * on_ns * 1e-9 * cycles;
    }
    return out;
}

}  // namespace ionlink
