#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ortk/cache.hpp"
#include "ortk/kernel.hpp"
#include "ortk/rng.hpp"

using namespace ortk;

namespace {

/* Coarse-profile kernel, built once and shared across test cases. */
const KernelMatrix& coarse_kernel(KernelBuildStats* stats_out = nullptr) {
    static KernelBuildStats stats;
    static const KernelMatrix K = [] {
        KernelBuildParams prm;
        prm.potential = PotentialSpec::double_well();
        prm.grid = build_grid(2.0, 500);
        prm.time = build_time_grid(1.0, 500);
        prm.eps = 0.25;
        prm.sigma = 0.8;
        return build_kernel(prm, &stats);
    }();
    if (stats_out) *stats_out = stats;
    return K;
}

/* Tiny synthetic kernel with rows scaled to exactly unit Simpson mass — a
 * Markov operator by construction, independent of the FPE solver. */
KernelMatrix toy_kernel() {
    const UniformGrid1D g = build_grid(1.0, 8);
    KernelMatrix K{g, simpson_weights(g), {}};
    const std::size_t n = K.n();
    K.data.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = g.node(i);
        double mass = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double y = g.node(j);
            const double v = std::exp(-2.0 * (y - 0.5 * x) * (y - 0.5 * x)) + 0.1;
            K.data[i * n + j] = v;
            mass += K.weights[j] * v;
        }
        for (std::size_t j = 0; j < n; ++j) K.data[i * n + j] /= mass;
    }
    return K;
}

}  // namespace

TEST_CASE("coarse kernel passes its own audits with margin") {
    KernelBuildStats stats;
    const KernelMatrix& K = coarse_kernel(&stats);
    REQUIRE(K.n() == 501);
    REQUIRE(stats.max_row_mass_dev < 1e-4);
    REQUIRE(stats.min_entry >= 0.0);        // strictly positive rows at this profile
    REQUIRE(stats.min_pivot > 1.0);         // diagonally dominant system
}

TEST_CASE("kernel application is linear and positivity preserving") {
    const KernelMatrix& K = coarse_kernel();
    const std::size_t n = K.n();
    Rng rng(7);
    std::vector<double> f(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
        f[i] = rng.uniform();
        g[i] = rng.uniform() - 0.5;
    }
    const std::vector<double> Lf = apply_kernel(K, f);
    const std::vector<double> Lg = apply_kernel(K, g);
    std::vector<double> combo(n);
    for (std::size_t i = 0; i < n; ++i) combo[i] = 2.0 * f[i] - 3.0 * g[i];
    const std::vector<double> Lcombo = apply_kernel(K, combo);
    for (std::size_t i = 0; i < n; ++i)
        REQUIRE(Lcombo[i] == Catch::Approx(2.0 * Lf[i] - 3.0 * Lg[i]).margin(1e-12));
    for (const double v : Lf) REQUIRE(v >= 0.0);
}

TEST_CASE("kernel application preserves integrals within the row-mass band") {
    const KernelMatrix& K = coarse_kernel();
    Rng rng(11);
    std::vector<double> f(K.n());
    for (double& v : f) v = rng.uniform() - 0.3;
    const double before = integrate(K.weights, f);
    const double after = integrate(K.weights, apply_kernel(K, f));
    double l1 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) l1 += K.weights[i] * std::abs(f[i]);
    REQUIRE(std::abs(after - before) <= 1e-4 * l1);
}

TEST_CASE("invariant density matches a dense eigensolver on the toy kernel") {
    const KernelMatrix K = toy_kernel();
    const std::size_t n = K.n();
    const InvariantResult inv = invariant_density(K);
    REQUIRE(inv.residual <= 1e-10);
    REQUIRE(inv.eigenvalue == Catch::Approx(1.0).margin(1e-12));

    // oracle: (Lf)_j = sum_i w_i K_ij f_i as a dense matrix, full eigensolve
    Eigen::MatrixXd M(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i)
            M(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
                K.weights[i] * K.at(i, j);
    const Eigen::EigenSolver<Eigen::MatrixXd> es(M);
    Eigen::Index top = 0;
    for (Eigen::Index k = 1; k < es.eigenvalues().size(); ++k)
        if (std::abs(es.eigenvalues()[k]) > std::abs(es.eigenvalues()[top])) top = k;
    REQUIRE(std::abs(es.eigenvalues()[top]) == Catch::Approx(1.0).margin(1e-12));
    std::vector<double> oracle(n);
    for (std::size_t j = 0; j < n; ++j)
        oracle[j] = es.eigenvectors().col(top)[static_cast<Eigen::Index>(j)].real();
    const double mass = integrate(K.weights, oracle);
    for (double& v : oracle) v /= mass;
    for (std::size_t j = 0; j < n; ++j)
        REQUIRE(inv.density[j] == Catch::Approx(oracle[j]).margin(1e-10));
}

TEST_CASE("power iteration lands on the same density from random starts") {
    const KernelMatrix K = toy_kernel();
    const std::size_t n = K.n();
    const InvariantResult ref = invariant_density(K);
    Rng rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> f(n);
        for (double& v : f) v = 0.1 + rng.uniform();
        for (int it = 0; it < 2000; ++it) {
            f = apply_kernel(K, f);
            const double mass = integrate(K.weights, f);
            for (double& v : f) v /= mass;
        }
        for (std::size_t j = 0; j < n; ++j)
            REQUIRE(f[j] == Catch::Approx(ref.density[j]).margin(1e-8));
    }
}

TEST_CASE("coarse invariant density is bimodal and symmetric") {
    const KernelMatrix& K = coarse_kernel();
    const InvariantResult inv = invariant_density(K);
    REQUIRE(inv.residual <= 1e-10);
    REQUIRE(std::abs(inv.eigenvalue - 1.0) < 1e-4);
    double sym = 0.0;
    const std::size_t n = inv.density.size();
    for (std::size_t i = 0; i < n; ++i)
        sym += std::abs(inv.density[i] - inv.density[n - 1 - i]) * K.grid.spacing();
    REQUIRE(sym < 1e-6);
    // peaks at the potential minima
    std::vector<double> peaks;
    for (std::size_t i = 1; i + 1 < n; ++i)
        if (inv.density[i] > inv.density[i - 1] && inv.density[i] > inv.density[i + 1])
            peaks.push_back(K.grid.node(i));
    REQUIRE(peaks.size() == 2);
    REQUIRE(peaks[0] == Catch::Approx(-1.0).margin(2.0 * K.grid.spacing()));
    REQUIRE(peaks[1] == Catch::Approx(1.0).margin(2.0 * K.grid.spacing()));
}

TEST_CASE("rank-one kernel has zero spectral gap") {
    // identical rows: everything maps to the same density in one application
    const UniformGrid1D g = build_grid(1.0, 8);
    KernelMatrix K{g, simpson_weights(g), {}};
    const std::size_t n = K.n();
    K.data.assign(n * n, 0.0);
    double mass = 0.0;
    std::vector<double> shape(n);
    for (std::size_t j = 0; j < n; ++j) {
        shape[j] = 1.0 + g.node(j) * g.node(j);
        mass += K.weights[j] * shape[j];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) K.data[i * n + j] = shape[j] / mass;
    const InvariantResult inv = invariant_density(K);
    const GapEstimate gap = spectral_gap_estimate(K, inv.density);
    REQUIRE(gap.converged);
    REQUIRE(gap.value < 1e-12);
}

TEST_CASE("coarse spectral gap reproduces the pinned value") {
    const KernelMatrix& K = coarse_kernel();
    const InvariantResult inv = invariant_density(K);
    const GapEstimate gap = spectral_gap_estimate(K, inv.density);
    REQUIRE(gap.converged);
    // second eigenvalue modulus of the coarse-profile operator (regression pin)
    REQUIRE(gap.value == Catch::Approx(0.718730956982808).margin(1e-6));
}

TEST_CASE("norm report on a constant") {
    const UniformGrid1D g = build_grid(2.0, 500);
    std::vector<double> one(g.node_count(), 1.0);
    const NormReport r = norms(one, g, 2.0);
    REQUIRE(r.l1 == Catch::Approx(4.0).epsilon(1e-13));
    REQUIRE(r.l2 == Catch::Approx(2.0).epsilon(1e-13));
    REQUIRE(r.linf == 1.0);
    REQUIRE(r.l1_weighted == Catch::Approx(4.0 + 16.0 / 3.0).epsilon(1e-12));
    REQUIRE(r.strong == Catch::Approx(r.l1_weighted).epsilon(1e-12));  // derivative is zero
}

TEST_CASE("kernel cache round-trips bit-identically") {
    const KernelMatrix K = toy_kernel();
    const auto path = std::filesystem::temp_directory_path() / "ortk_cache_test.ortk";
    write_kernel_cache(path, K, build_time_grid(1.0, 500), 0.25);
    KernelCacheMeta meta;
    std::string why;
    const auto back = read_kernel_cache(path, &meta, &why);
    REQUIRE(back.has_value());
    REQUIRE(meta.nodes == K.n());
    REQUIRE(meta.steps == 500);
    REQUIRE(meta.half_width == 1.0);
    REQUIRE(meta.final_time == 1.0);
    REQUIRE(meta.eps == 0.25);
    REQUIRE(back->data == K.data);           // exact byte-for-byte payload
    REQUIRE(back->grid == K.grid);
    std::filesystem::remove(path);
}

TEST_CASE("corrupted cache files are rejected with a reason") {
    const KernelMatrix K = toy_kernel();
    const auto path = std::filesystem::temp_directory_path() / "ortk_cache_corrupt.ortk";
    write_kernel_cache(path, K, build_time_grid(1.0, 500), 0.25);

    SECTION("payload bit flip fails the checksum") {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(64);
        char b = 0;
        fs.seekg(64);
        fs.read(&b, 1);
        b = static_cast<char>(b ^ 0x40);
        fs.seekp(64);
        fs.write(&b, 1);
        fs.close();
        std::string why;
        REQUIRE_FALSE(read_kernel_cache(path, nullptr, &why).has_value());
        REQUIRE(why.find("checksum") != std::string::npos);
    }
    SECTION("truncation is detected") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        std::string why;
        REQUIRE_FALSE(read_kernel_cache(path, nullptr, &why).has_value());
    }
    SECTION("wrong magic is detected") {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(0);
        fs.write("NOPE", 4);
        fs.close();
        std::string why;
        REQUIRE_FALSE(read_kernel_cache(path, nullptr, &why).has_value());
        REQUIRE(why.find("magic") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("thread count does not change the kernel bits") {
    KernelBuildParams prm;
    prm.potential = PotentialSpec::double_well();
    prm.grid = build_grid(2.0, 100);
    prm.time = build_time_grid(0.2, 40);
    prm.eps = 0.5;                     // wide noise keeps the tiny grid positive
    prm.sigma = 0.8;
    prm.threads = 1;
    const KernelMatrix K1 = build_kernel(prm);
    prm.threads = 4;
    const KernelMatrix K4 = build_kernel(prm);
    prm.threads = 0;                   // auto
    const KernelMatrix K0 = build_kernel(prm);
    REQUIRE(K1.data == K4.data);
    REQUIRE(K1.data == K0.data);
}
