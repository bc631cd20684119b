#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ortk/fpe.hpp"
#include "ortk/rng.hpp"

using namespace ortk;

namespace {

double simpson_mass(const UniformGrid1D& g, const std::vector<double>& f) {
    return integrate(simpson_weights(g), f);
}

double density_mean(const UniformGrid1D& g, const std::vector<double>& f) {
    const QuadratureWeights w = simpson_weights(g);
    double m = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) m += w[i] * g.node(i) * f[i];
    return m;
}

double l1_distance(const UniformGrid1D& g, const std::vector<double>& a,
                   const std::vector<double>& b) {
    const QuadratureWeights w = simpson_weights(g);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * std::abs(a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("drift matches the potential families") {
    const PotentialSpec dw = PotentialSpec::double_well();
    REQUIRE(dw.drift(0.0) == 0.0);
    REQUIRE(dw.drift(1.0) == 0.0);
    REQUIRE(dw.drift(-1.0) == 0.0);
    REQUIRE(dw.drift(2.0) == Catch::Approx(-6.0));
    REQUIRE(dw.drift(0.5) == Catch::Approx(0.375));

    const PotentialSpec ou = PotentialSpec::quadratic(3.0);
    REQUIRE(ou.drift(2.0) == Catch::Approx(-6.0));
    REQUIRE(ou.drift(-0.5) == Catch::Approx(1.5));

    // tabulated V' = 2y sampled coarsely; drift is -interp(V')
    const PotentialSpec tab = PotentialSpec::tabulated({-3.0, 0.0, 3.0}, {-6.0, 0.0, 6.0});
    REQUIRE(tab.drift(1.5) == Catch::Approx(-3.0));
    REQUIRE(tab.drift(-3.0) == Catch::Approx(6.0));
    REQUIRE_THROWS_AS(tab.drift(3.5), ConfigError);
}

TEST_CASE("tabulated potential must cover the grid plus ghost nodes") {
    const UniformGrid1D g = build_grid(2.0, 10);
    // covers [-2, 2] but not the ghost nodes at +-2.4
    const PotentialSpec tight = PotentialSpec::tabulated({-2.0, 2.0}, {-1.0, 1.0});
    REQUIRE_THROWS_AS(drift_samples(tight, g), ConfigError);
    const PotentialSpec wide = PotentialSpec::tabulated({-3.0, 3.0}, {-1.0, 1.0});
    REQUIRE_NOTHROW(drift_samples(wide, g));
}

TEST_CASE("dirac surrogate is unit mass, centered and symmetric") {
    const UniformGrid1D g = build_grid(2.0, 400);   // dx = 0.01 puts 0.5 on a node
    const DensitySnapshot p = dirac_approximation(0.5, g, 20.0 * g.spacing());
    REQUIRE(simpson_mass(g, p.values) == Catch::Approx(1.0).epsilon(1e-12));
    const auto peak = std::max_element(p.values.begin(), p.values.end());
    REQUIRE(g.node(std::distance(p.values.begin(), peak)) == Catch::Approx(0.5).margin(1e-12));
    // symmetry around the center node
    const std::size_t c = static_cast<std::size_t>(std::distance(p.values.begin(), peak));
    for (std::size_t k = 1; k < 50; ++k)
        REQUIRE(p.values[c - k] == Catch::Approx(p.values[c + k]).epsilon(1e-12));
    // centers that do not sit on a node are rejected
    REQUIRE_THROWS_AS(dirac_approximation(0.5004, g, 0.8), ConfigError);
}

TEST_CASE("implicit step conserves mass") {
    const UniformGrid1D g = build_grid(2.0, 400);
    const DriftSamples b = drift_samples(PotentialSpec::double_well(), g);
    DensitySnapshot p = dirac_approximation(0.5, g, 0.2);
    const double mass0 = simpson_mass(g, p.values);
    const DensitySnapshot q = step_implicit(p, b, g, 2e-3, 0.25);
    REQUIRE(simpson_mass(g, q.values) == Catch::Approx(mass0).margin(1e-7));
    REQUIRE(q.time == Catch::Approx(2e-3));
}

TEST_CASE("full march keeps mass within the audit band") {
    const UniformGrid1D g = build_grid(2.0, 400);
    const TimeGrid tg = build_time_grid(1.0, 500);
    const DensitySnapshot p =
        solve_fpe(0.5, PotentialSpec::double_well(), g, tg, 0.25, 0.2);
    REQUIRE(std::abs(simpson_mass(g, p.values) - 1.0) < 1e-3);
    const double lo = *std::min_element(p.values.begin(), p.values.end());
    REQUIRE(lo >= -1e-8);
}

TEST_CASE("symmetric start under an even potential stays symmetric") {
    const UniformGrid1D g = build_grid(2.0, 500);
    const TimeGrid tg = build_time_grid(0.5, 250);
    const DensitySnapshot p =
        solve_fpe(0.0, PotentialSpec::double_well(), g, tg, 0.25, 0.8);
    for (std::size_t i = 0; i < p.values.size(); ++i)
        REQUIRE(p.values[i] ==
                Catch::Approx(p.values[p.values.size() - 1 - i]).margin(1e-13));
}

TEST_CASE("analytic OU density identities") {
    const UniformGrid1D g = build_grid(6.0, 1200);
    // t = 0 reduces to the initial gaussian
    const DensitySnapshot p0 = analytic_ou_density(OUParams{0.5, 0.2, 0.0, 1.0, 1.0}, g);
    double peak_x = 0.0, peak_v = -1.0;
    for (std::size_t i = 0; i < p0.values.size(); ++i)
        if (p0.values[i] > peak_v) {
            peak_v = p0.values[i];
            peak_x = g.node(i);
        }
    REQUIRE(peak_x == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(peak_v == Catch::Approx(1.0 / (0.2 * std::sqrt(2.0 * M_PI))).epsilon(1e-12));
    // late-time variance approaches eps^2 / (2k) regardless of the start
    const DensitySnapshot pinf = analytic_ou_density(OUParams{0.5, 0.2, 40.0, 1.0, 1.0}, g);
    const double stationary_peak = 1.0 / (std::sqrt(0.5) * std::sqrt(2.0 * M_PI));
    REQUIRE(*std::max_element(pinf.values.begin(), pinf.values.end()) ==
            Catch::Approx(stationary_peak).epsilon(1e-10));
    REQUIRE(density_mean(g, pinf.values) == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("solver matches the closed-form OU density") {
    const double a = 6.0, T = 1.0, eps = 1.0, x0 = 0.5, sigma0 = 0.2;
    const UniformGrid1D g = build_grid(a, 1200);        // dx = 1e-2
    const TimeGrid tg = build_time_grid(T, 100);        // dt = 1e-2
    const DensitySnapshot num =
        solve_fpe(x0, PotentialSpec::quadratic(1.0), g, tg, eps, sigma0);
    const DensitySnapshot exact = analytic_ou_density(OUParams{x0, sigma0, T, eps, 1.0}, g);
    REQUIRE(l1_distance(g, num.values, exact.values) < 5e-2);
    REQUIRE(density_mean(g, num.values) ==
            Catch::Approx(x0 * std::exp(-T)).margin(2e-3));
}

TEST_CASE("OU error drops by at least 1.5x per halving") {
    const double a = 6.0, T = 1.0, eps = 1.0, x0 = 0.5, sigma0 = 0.2;
    double prev = 0.0;
    for (int lvl = 0; lvl < 3; ++lvl) {
        const std::size_t n = 1200u << lvl;
        const std::size_t m = 100u << lvl;
        const UniformGrid1D g = build_grid(a, n);
        const TimeGrid tg = build_time_grid(T, m);
        const DensitySnapshot num =
            solve_fpe(x0, PotentialSpec::quadratic(1.0), g, tg, eps, sigma0);
        const DensitySnapshot exact =
            analytic_ou_density(OUParams{x0, sigma0, T, eps, 1.0}, g);
        const double err = l1_distance(g, num.values, exact.values);
        if (lvl > 0) REQUIRE(prev / err > 1.5);
        prev = err;
    }
}

TEST_CASE("double-well march agrees with a path-sampling oracle") {
    // independent oracle: Euler-Maruyama paths of the same SDE; the FPE
    // solution's CDF must match the empirical CDF within sampling error
    const double eps = 0.25, T = 1.0, x0 = 0.5, start_sigma = 0.2;
    const UniformGrid1D g = build_grid(2.0, 400);
    const TimeGrid tg = build_time_grid(T, 500);
    const DensitySnapshot p =
        solve_fpe(x0, PotentialSpec::double_well(), g, tg, eps, start_sigma);

    // paths start from the same gaussian the solver uses as its dirac stand-in
    const std::size_t paths = 200000, steps = 500;
    const double dt = T / double(steps), root = eps * std::sqrt(dt);
    Rng rng(424242);
    std::vector<double> ends(paths);
    for (std::size_t k = 0; k < paths; ++k) {
        double x = x0 + start_sigma * rng.normal();
        for (std::size_t s = 0; s < steps; ++s)
            x += (x - x * x * x) * dt + root * rng.normal();
        ends[k] = x;
    }
    const QuadratureWeights w = simpson_weights(g);
    for (const double q : {0.7, 1.0, 1.3}) {
        double cdf = 0.0;
        for (std::size_t i = 0; i < p.values.size() && g.node(i) <= q; ++i)
            cdf += w[i] * p.values[i];
        const double emp =
            double(std::count_if(ends.begin(), ends.end(), [&](double v) { return v <= q; })) /
            double(paths);
        // dirac surrogate width and EM time bias dominate the 2e-2 margin
        REQUIRE(cdf == Catch::Approx(emp).margin(2e-2));
    }
}

TEST_CASE("audit failures throw") {
    const UniformGrid1D g = build_grid(2.0, 400);
    const TimeGrid tg = build_time_grid(1.0, 500);
    // a start this close to the wall truncates the gaussian stand-in, leaving
    // a ~1e-4 mass defect that a 1e-9 tolerance cannot absorb
    FpeOptions opt;
    opt.mass_tolerance = 1e-9;
    REQUIRE_THROWS_AS(solve_fpe(1.9, PotentialSpec::double_well(), g, tg, 0.25, 0.2, opt),
                      AuditError);
}
