#include "ionlink/emission.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ionlink;

namespace {

// Quadrature oracle for the profile integrals (Simpson on the raw density).
double cdf_by_quadrature(const EmissionShape& shape, double from_ns, double to_ns) {
    const int steps = 200000;
    double sum = 0.0;
    for (int i = 0; i <= steps; ++i) {
        const double t = from_ns + (to_ns - from_ns) * i / steps;
        const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += w * shape.density(t);
    }
    return sum * (to_ns - from_ns) / steps / 3.0;
}

}  // namespace

TEST(EmissionShape, CdfMatchesQuadrature) {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> rise(0.5, 30.0), decay(2.0, 25.0);
    for (int trial = 0; trial < 6; ++trial) {
        const EmissionProfile profile{rise(rng), decay(rng), 0.0};
        const EmissionShape shape(profile, 200.0);
        const double total = cdf_by_quadrature(shape, 0.0, 200.0);
        for (double t : {10.0, 36.0, 60.0, 120.0, 199.0}) {
            const double numeric = cdf_by_quadrature(shape, 0.0, t) / total;
            EXPECT_NEAR(shape.cdf(t), numeric, 1e-6);
        }
    }
}

TEST(EmissionShape, MeanMatchesQuadrature) {
    const EmissionProfile profile{15.0, 10.8, 0.0};
    const EmissionShape shape(profile, 200.0);
    const int steps = 200000;
    double sum = 0.0, total = 0.0;
    for (int i = 0; i <= steps; ++i) {
        const double t = 200.0 * i / steps;
        const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += w * t * shape.density(t);
        total += w * shape.density(t);
    }
    EXPECT_NEAR(shape.mean_ns(), sum / total, 1e-6);
}

TEST(EmissionShape, SampleLowerEdgeIsOnset) {
    const EmissionShape shape({15.0, 10.8, 4.0}, 200.0);
    EXPECT_NEAR(shape.sample(0.0), 4.0, 1e-6);
    EXPECT_NEAR(shape.sample(1e-12), 4.0, 1e-3);
}

TEST(EmissionShape, DegenerateDecayCollapsesToOnset) {
    const EmissionShape shape({15.0, 0.0, 7.0}, 200.0);
    for (double u : {0.0, 0.3, 0.999}) EXPECT_DOUBLE_EQ(shape.sample(u), 7.0);
}

TEST(EmissionShape, InverseCdfRoundTrip) {
    const EmissionShape shape({15.0, 10.8, 0.0}, 200.0);
    for (double u = 0.0; u < 1.0; u += 0.01) {
        EXPECT_NEAR(shape.cdf(shape.sample(u)), u, 1e-7);
    }
}

TEST(EmissionShape, SampleMeanMatchesAnalyticMean) {
    const EmissionShape shape({15.0, 10.8, 0.0}, 200.0);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 1'000'000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = shape.sample(u(rng));
        sum += t;
        sum2 += t * t;
    }
    const double sample_mean = sum / n;
    const double sample_sd = std::sqrt(sum2 / n - sample_mean * sample_mean);
    const double standard_error = sample_sd / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(sample_mean, shape.mean_ns(), 3.0 * standard_error);
}

TEST(EmissionShape, PeakIsWhereDensityIsLargest) {
    const EmissionShape shape({15.0, 10.8, 0.0}, 200.0);
    const double peak = shape.peak_time_ns();
    EXPECT_NEAR(peak, 15.0 * std::log((15.0 + 10.8) / 15.0), 1e-9);
    for (double dt : {-2.0, -0.5, 0.5, 2.0})
        EXPECT_GE(shape.density(peak), shape.density(peak + dt));
}

TEST(EmissionShape, PureDecayLimit) {
    const EmissionShape shape({0.0, 10.0, 0.0}, 400.0);
    // CDF of a plain exponential: 1 - e^{-t/tau}, renormalized on [0, 400]
    const double norm = 1.0 - std::exp(-40.0);
    EXPECT_NEAR(shape.cdf(10.0), (1.0 - std::exp(-1.0)) / norm, 1e-9);
    EXPECT_NEAR(shape.peak_time_ns(), 0.0, 1e-12);
}

TEST(EmissionShape, RejectsBadWindows) {
    EXPECT_THROW(EmissionShape({15.0, 10.8, 250.0}, 200.0), std::invalid_argument);
    EXPECT_THROW(EmissionShape({-1.0, 10.8, 0.0}, 200.0), std::invalid_argument);
    const EmissionShape shape({15.0, 10.8, 0.0}, 200.0);
    EXPECT_THROW(shape.sample(1.0), std::invalid_argument);
    EXPECT_THROW(shape.sample(-0.1), std::invalid_argument);
}

TEST(EmissionShape, WindowFractionIsAdditive) {
    const EmissionShape shape({15.0, 10.8, 0.0}, 200.0);
    const double a = shape.window_fraction(0.0, 36.0);
    const double b = shape.window_fraction(36.0, 90.0);
    const double c = shape.window_fraction(0.0, 90.0);
    EXPECT_NEAR(a + b, c, 1e-12);
    EXPECT_NEAR(shape.window_fraction(0.0, 200.0), 1.0, 1e-12);
}
