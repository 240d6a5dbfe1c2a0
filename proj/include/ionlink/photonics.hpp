#pragma once

// Closed-form physics models for the two-stage frequency-conversion link:
// pump-power conversion-efficiency law, Lorentzian filter transmission,
// anti-Stokes noise scaling scenarios, and link-budget arithmetic.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionlink {

// sin^2 conversion law, parameterized by the pump power at peak efficiency.
struct ConversionCurve {
    double eta_peak = 0.0;   // peak quantum efficiency, in [0,1]
    double p_max_mw = 1.0;   // pump power at peak conversion, mW

    void validate() const {
        if (!(eta_peak >= 0.0 && eta_peak <= 1.0))
            throw std::invalid_argument("ConversionCurve: eta_peak must be in [0,1]");
        if (!(p_max_mw > 0.0))
            throw std::invalid_argument("ConversionCurve: p_max_mw must be > 0");
    }
};

// eta_peak * sin^2((pi/2) sqrt(P/P_max)). Exact at the endpoints: 0 at P=0,
// eta_peak at P=P_max.
inline double conversion_efficiency(double pump_mw, const ConversionCurve& curve) {
    curve.validate();
    if (pump_mw < 0.0)
        throw std::invalid_argument("conversion_efficiency: pump power must be >= 0");
    const double phase = 0.5 * std::numbers::pi * std::sqrt(pump_mw / curve.p_max_mw);
    const double s = std::sin(phase);
    return curve.eta_peak * s * s;
}

// Emitter line: natural linewidth plus any offset from the filter center.
struct LorentzianLine {
    double fwhm_mhz = 0.0;
    double center_detuning_mhz = 0.0;
};

// Narrowband filter stage. Broadband stages in front of it are folded into
// peak_transmission.
struct FilterSpec {
    double fwhm_mhz = 1.0;
    double peak_transmission = 1.0;
};

// Transmission of a unit-area Lorentzian photon line through a Lorentzian
// passband. The overlap integral is itself a Lorentzian with summed
// half-widths, so this is closed form:
//
//   T(delta) = peak * g_f (g_f + g_p) / (delta^2 + (g_f + g_p)^2),
//
// with g = FWHM/2. At zero detuning this reduces to
// peak * fwhm_f / (fwhm_f + fwhm_p).
inline double filter_transmission(const LorentzianLine& photon, const FilterSpec& filter) {
    if (photon.fwhm_mhz < 0.0)
        throw std::invalid_argument("filter_transmission: photon fwhm must be >= 0");
    if (!(filter.fwhm_mhz > 0.0))
        throw std::invalid_argument("filter_transmission: filter fwhm must be > 0");
    if (!(filter.peak_transmission >= 0.0 && filter.peak_transmission <= 1.0))
        throw std::invalid_argument("filter_transmission: peak transmission must be in [0,1]");
    const double g_sum = 0.5 * (filter.fwhm_mhz + photon.fwhm_mhz);
    const double g_f = 0.5 * filter.fwhm_mhz;
    const double d = photon.center_detuning_mhz;
    return filter.peak_transmission * g_f * g_sum / (d * d + g_sum * g_sum);
}

// Alternative pump wavelengths for the second conversion stage and the
// relative anti-Stokes noise they produce. The factors are tabulated data,
// not a Raman-spectrum model.
struct NoiseScenario {
    double pump_nm = 0.0;
    double target_nm = 0.0;
    double noise_scale = 1.0;   // relative to the 1589-nm baseline
};

inline const std::vector<NoiseScenario>& noise_scenario_table() {
    static const std::vector<NoiseScenario> table = {
        {1589.0, 1534.0, 1.0},     // C-band baseline
        {1640.0, 1515.0, 0.1},     // S-band option
        {1930.0, 1309.0, 1.0e-3},  // O-band option
    };
    return table;
}

inline double noise_scale_for_pump(double pump_nm) {
    for (const auto& s : noise_scenario_table()) {
        if (std::abs(s.pump_nm - pump_nm) < 0.5) return s.noise_scale;
    }
    throw std::invalid_argument("noise_scale_for_pump: no scenario for pump wavelength " +
                                std::to_string(pump_nm) + " nm");
}

// Ordered chain of named efficiency factors; the product is a per-shot
// detection probability.
struct BudgetEntry {
    std::string label;
    double factor = 1.0;
};

struct LinkBudget {
    std::vector<BudgetEntry> entries;
};

inline double budget_product(const LinkBudget& budget) {
    if (budget.entries.empty())
        throw std::invalid_argument("budget_product: empty budget");
    double product = 1.0;
    for (const auto& e : budget.entries) {
        if (!(e.factor >= 0.0 && e.factor <= 1.0))
            throw std::invalid_argument("budget_product: factor '" + e.label +
                                        "' = " + std::to_string(e.factor) +
                                        " outside [0,1]");
        product *= e.factor;
    }
    return product;
}

// Labeled running-product table for reports.
struct BudgetBreakdownRow {
    std::string label;
    double factor = 1.0;
    double cumulative = 1.0;
};

inline std::vector<BudgetBreakdownRow> budget_breakdown(const LinkBudget& budget) {
    if (budget.entries.empty())
        throw std::invalid_argument("budget_breakdown: empty budget");
    std::vector<BudgetBreakdownRow> rows;
    rows.reserve(budget.entries.size());
    double running = 1.0;
    for (const auto& e : budget.entries) {
        if (!(e.factor >= 0.0 && e.factor <= 1.0))
            throw std::invalid_argument("budget_breakdown: factor '" + e.label +
                                        "' outside [0,1]");
        running *= e.factor;
        rows.push_back({e.label, e.factor, running});
    }
    return rows;
}

// Detector-corrected photon-number ratio between two chain points. p_a and
// p_b are per-shot detection probabilities, det_a/det_b the detector
// efficiencies at those points; polarization_factor undoes a known
// polarization split upstream of conversion (2 when half the light cannot
// convert, 1 otherwise).
inline double stage_conversion_ratio(double p_a, double det_a, double p_b, double det_b,
                                     double polarization_factor) {
    auto check_unit = [](double v, const char* name) {
        if (!(v > 0.0 && v <= 1.0))
            throw std::invalid_argument(std::string("stage_conversion_ratio: ") + name +
                                        " must be in (0,1]");
    };
    check_unit(p_a, "p_a");
    check_unit(det_a, "det_a");
    check_unit(p_b, "p_b");
    check_unit(det_b, "det_b");
    if (!(polarization_factor > 0.0))
        throw std::invalid_argument("stage_conversion_ratio: polarization_factor must be > 0");
    return polarization_factor * (p_b / det_b) / (p_a / det_a);
}

}  // namespace ionlink
