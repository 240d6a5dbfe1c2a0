#pragma once

// Weighted Levenberg-Marquardt fit of the sin^2 conversion-efficiency law
// to measured (pump power, efficiency) samples.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include "ionlink/photonics.hpp"

namespace ionlink {

struct EfficiencySample {
    double pump_mw = 0.0;
    double efficiency = 0.0;
    double sigma = 0.0;   // measurement uncertainty; <= 0 means unit weight
};

struct FitOptions {
    int max_iterations = 10;
    double tolerance = 1e-10;   // relative parameter change at convergence
};

struct ConversionFit {
    ConversionCurve curve;
    std::array<double, 4> covariance{};   // row-major 2x2 over (eta_peak, p_max)
    double chi2 = 0.0;
    double residual_norm = 0.0;
    int iterations = 0;
};

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline double fit_weight(const EfficiencySample& s) {
    return s.sigma > 0.0 ? 1.0 / (s.sigma * s.sigma) : 1.0;
}

// chi^2 for the current parameters.
inline double fit_chi2(std::span<const EfficiencySample> samples, double eta, double p_max) {
    double chi2 = 0.0;
    for (const auto& s : samples) {
        const double phase = 0.5 * std::numbers::pi * std::sqrt(s.pump_mw / p_max);
        const double sn = std::sin(phase);
        const double r = eta * sn * sn - s.efficiency;
        chi2 += fit_weight(s) * r * r;
    }
    return chi2;
}

}  // namespace detail

// Estimates (eta_peak, p_max) by weighted least squares. Initialization per
// the measurement procedure: eta from the largest observed efficiency, p_max
// from the power where it occurred. Throws FitError on degenerate samples or
// when the iteration cap is hit before the parameter change drops below
// tolerance.
inline ConversionFit fit_conversion_curve(std::span<const EfficiencySample> samples,
                                          const FitOptions& options = {}) {
    if (samples.size() < 3)
        throw FitError("fit_conversion_curve: need at least 3 samples");
    double p_lo = samples[0].pump_mw, p_hi = samples[0].pump_mw;
    double best_eff = -1.0, best_p = 0.0;
    for (const auto& s : samples) {
        if (s.pump_mw < 0.0)
            throw FitError("fit_conversion_curve: negative pump power");
        if (s.efficiency < 0.0)
            throw FitError("fit_conversion_curve: negative efficiency");
        p_lo = std::min(p_lo, s.pump_mw);
        p_hi = std::max(p_hi, s.pump_mw);
        if (s.efficiency > best_eff) {
            best_eff = s.efficiency;
            best_p = s.pump_mw;
        }
    }
    if (!(p_hi > p_lo))
        throw FitError("fit_conversion_curve: all samples at the same pump power");
    if (!(best_eff > 0.0) || !(best_p > 0.0))
        throw FitError("fit_conversion_curve: no positive-efficiency sample to initialize from");

    double eta = best_eff;
    double p_max = best_p;
    double lambda = 1e-3;
    double chi2 = detail::fit_chi2(samples, eta, p_max);

    ConversionFit result;
    bool converged = false;
    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        // Normal equations J^T W J and J^T W r with the analytic Jacobian.
        double a00 = 0, a01 = 0, a11 = 0, b0 = 0, b1 = 0;
        for (const auto& s : samples) {
            const double w = detail::fit_weight(s);
            const double phase = 0.5 * std::numbers::pi * std::sqrt(s.pump_mw / p_max);
            const double sn = std::sin(phase);
            const double model = eta * sn * sn;
            const double d_eta = sn * sn;
            const double d_pmax = -eta * std::sin(2.0 * phase) * phase / (2.0 * p_max);
            const double r = s.efficiency - model;
            a00 += w * d_eta * d_eta;
            a01 += w * d_eta * d_pmax;
            a11 += w * d_pmax * d_pmax;
            b0 += w * d_eta * r;
            b1 += w * d_pmax * r;
        }

        // Damped solve; retry with stronger damping while the step is
        // rejected.
        double step_eta = 0, step_pmax = 0;
        bool accepted = false;
        for (int damp = 0; damp < 30 && !accepted; ++damp) {
            const double m00 = a00 * (1.0 + lambda);
            const double m11 = a11 * (1.0 + lambda);
            const double det = m00 * m11 - a01 * a01;
            if (det == 0.0 || !std::isfinite(det)) {
                lambda *= 10.0;
                continue;
            }
            step_eta = (m11 * b0 - a01 * b1) / det;
            step_pmax = (m00 * b1 - a01 * b0) / det;
            const double trial_eta = eta + step_eta;
            const double trial_pmax = p_max + step_pmax;
            if (!(trial_pmax > 0.0) || !std::isfinite(trial_eta) || !std::isfinite(trial_pmax)) {
                lambda *= 10.0;
                continue;
            }
            const double trial_chi2 = detail::fit_chi2(samples, trial_eta, trial_pmax);
            if (trial_chi2 <= chi2) {
                eta = trial_eta;
                p_max = trial_pmax;
                chi2 = trial_chi2;
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
            } else {
                lambda *= 10.0;
            }
        }
        result.iterations = iter;
        if (!accepted)
            throw FitError("fit_conversion_curve: no acceptable step found");

        const double rel_change = std::max(std::abs(step_eta) / std::max(std::abs(eta), 1e-300),
                                           std::abs(step_pmax) / std::max(std::abs(p_max), 1e-300));
        if (rel_change < options.tolerance) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw FitError("fit_conversion_curve: no convergence within iteration cap");

    // Parameter covariance: inverse of J^T W J at the solution, scaled by
    // the reduced chi^2 so under- or over-stated sigmas do not distort the
    // reported uncertainties.
    double a00 = 0, a01 = 0, a11 = 0;
    for (const auto& s : samples) {
        const double w = detail::fit_weight(s);
        const double phase = 0.5 * std::numbers::pi * std::sqrt(s.pump_mw / p_max);
        const double sn = std::sin(phase);
        const double d_eta = sn * sn;
        const double d_pmax = -eta * std::sin(2.0 * phase) * phase / (2.0 * p_max);
        a00 += w * d_eta * d_eta;
        a01 += w * d_eta * d_pmax;
        a11 += w * d_pmax * d_pmax;
    }
    const double det = a00 * a11 - a01 * a01;
    const double dof = static_cast<double>(samples.size()) - 2.0;
    const double scale = dof > 0.0 ? chi2 / dof : 0.0;
    if (det > 0.0) {
        result.covariance = {scale * a11 / det, scale * -a01 / det,
                             scale * -a01 / det, scale * a00 / det};
    }
    result.curve = ConversionCurve{eta, p_max};
    result.chi2 = chi2;
    result.residual_norm = std::sqrt(chi2);
    return result;
}

}  // namespace ionlink
