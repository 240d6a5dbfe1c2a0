#pragma once

// Temporal emission profile of the extracted photon: exponential rise into
// exponential decay, truncated to the excitation window and normalized to
// unit area there. All times are ns relative to excitation start.

#include <cmath>
#include <stdexcept>

namespace ionlink {

struct EmissionProfile {
    double rise_ns = 15.0;
    double decay_ns = 10.8;   // 1/Gamma for Gamma/2pi = 14.8 MHz
    double onset_ns = 0.0;

    void validate() const {
        if (rise_ns < 0.0 || decay_ns < 0.0 || onset_ns < 0.0)
            throw std::invalid_argument("EmissionProfile: negative time constant");
    }
};

// Profile shape and its integrals over a window of length window_ns past the
// onset. Degenerate limits (rise -> 0, decay -> 0) are handled explicitly.
class EmissionShape {
public:
    EmissionShape(const EmissionProfile& profile, double window_ns)
        : rise_(profile.rise_ns), decay_(profile.decay_ns), onset_(profile.onset_ns),
          span_(window_ns - profile.onset_ns) {
        profile.validate();
        if (!(span_ > 0.0))
            throw std::invalid_argument("EmissionShape: window ends before onset");
        if (rise_ > 0.0 && decay_ > 0.0)
            combined_ = rise_ * decay_ / (rise_ + decay_);
        norm_ = cumulative_raw(span_);
        if (!(norm_ > 0.0))
            throw std::invalid_argument("EmissionShape: profile has zero area in window");
    }

    double onset_ns() const { return onset_; }
    double window_end_ns() const { return onset_ + span_; }
    bool degenerate() const { return decay_ == 0.0; }

    // Unnormalized density at t ns past excitation start.
    double density(double t_ns) const {
        const double t = t_ns - onset_;
        if (t < 0.0 || t > span_ || decay_ == 0.0) return 0.0;
        const double rise = rise_ > 0.0 ? 1.0 - std::exp(-t / rise_) : 1.0;
        return rise * std::exp(-t / decay_);
    }

    // CDF over the truncated window, in [0,1]; argument in ns past
    // excitation start.
    double cdf(double t_ns) const {
        const double t = t_ns - onset_;
        if (t <= 0.0) return 0.0;
        if (t >= span_ || decay_ == 0.0) return 1.0;
        return cumulative_raw(t) / norm_;
    }

    double window_fraction(double from_ns, double to_ns) const {
        if (to_ns <= from_ns) return 0.0;
        return cdf(to_ns) - cdf(from_ns);
    }

    // Inverse-CDF sample; u in [0,1). Newton on the closed-form CDF with a
    // bisection bracket keeps it robust near the edges.
    double sample(double u) const {
        if (u < 0.0 || u >= 1.0)
            throw std::invalid_argument("EmissionShape::sample: u must be in [0,1)");
        if (decay_ == 0.0) return onset_;   // all mass at the onset
        const double target = u * norm_;
        double lo = 0.0, hi = span_;
        double t = peak_offset();
        for (int i = 0; i < 64; ++i) {
            const double f = cumulative_raw(t) - target;
            if (f > 0.0) hi = t; else lo = t;
            const double d = density_raw(t);
            double next = d > 0.0 ? t - f / d : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (std::abs(next - t) < 1e-9) { t = next; break; }
            t = next;
        }
        return onset_ + t;
    }

    // Mode of the profile, ns past excitation start.
    double peak_time_ns() const { return onset_ + peak_offset(); }

    // Analytic mean of the truncated profile, ns past excitation start.
    double mean_ns() const {
        if (decay_ == 0.0) return onset_;
        double m = moment1(decay_);
        if (rise_ > 0.0) m -= moment1(combined_);
        return onset_ + m / norm_;
    }

private:
    double density_raw(double t) const {
        const double rise = rise_ > 0.0 ? 1.0 - std::exp(-t / rise_) : 1.0;
        return rise * std::exp(-t / decay_);
    }

    // integral of the unnormalized density over [0, t]
    double cumulative_raw(double t) const {
        if (decay_ == 0.0) return t >= 0.0 ? 1.0 : 0.0;   // delta at onset
        double c = decay_ * (1.0 - std::exp(-t / decay_));
        if (rise_ > 0.0) c -= combined_ * (1.0 - std::exp(-t / combined_));
        return c;
    }

    // integral of s * exp(-s/tau) over [0, T], T = span_
    double moment1(double tau) const {
        const double e = std::exp(-span_ / tau);
        return tau * tau * (1.0 - e) - tau * span_ * e;
    }

    // d/dt[(1-e^{-t/a})e^{-t/b}] = 0  =>  e^{-t/a} = a/(a+b)
    double peak_offset() const {
        if (rise_ == 0.0 || decay_ == 0.0) return 0.0;
        return std::min(rise_ * std::log((rise_ + decay_) / rise_), span_);
    }

    double rise_;
    double decay_;
    double onset_;
    double span_;
    double combined_ = 0.0;
    double norm_ = 1.0;
};

}  // namespace ionlink
