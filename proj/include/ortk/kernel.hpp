#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ortk/errors.hpp"
#include "ortk/fpe.hpp"
#include "ortk/grid.hpp"
#include "ortk/parallel.hpp"

namespace ortk {

/* Discretized transfer kernel: data[i * n + j] = kappa(x_i, y_j), the density
 * at y_j after time T of a point mass started at x_i.  The operator acts on
 * densities through the stored quadrature:  (Lf)_j = sum_i w_i kappa_ij f_i. */
struct KernelMatrix {
    UniformGrid1D grid;
    QuadratureWeights weights;
    std::vector<double> data;

    std::size_t n() const { return grid.node_count(); }
    const double* row(std::size_t i) const { return data.data() + i * n(); }
    double* row(std::size_t i) { return data.data() + i * n(); }
    double at(std::size_t i, std::size_t j) const { return data[i * n() + j]; }
    double& at(std::size_t i, std::size_t j) { return data[i * n() + j]; }
};

struct KernelBuildParams {
    PotentialSpec potential;
    UniformGrid1D grid;
    TimeGrid time;
    double eps = 0.25;
    double sigma = 0.0;              // dirac surrogate width
    unsigned threads = 1;
    double positivity_floor = -1e-8;
    double row_mass_lo = 0.99;
    double row_mass_hi = 1.01;
};

struct KernelBuildStats {
    double min_entry = 0.0;
    double max_row_mass_dev = 0.0;
    double min_pivot = 0.0;
    double wall_ms = 0.0;
};

/* Evolve one point mass per grid node to time T; row i of the kernel is the
 * arrival density from x_i.  Rows are independent, so they parallelize over a
 * static partition and the result is bitwise identical at any thread count.
 * Positivity and the row-mass band are hard audits here: a base kernel that
 * fails either is unusable downstream. */
inline KernelMatrix build_kernel(const KernelBuildParams& prm,
                                 KernelBuildStats* stats = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    KernelMatrix K{prm.grid, simpson_weights(prm.grid), {}};
    const std::size_t n = K.n();
    K.data.assign(n * n, 0.0);

    const DriftSamples b = drift_samples(prm.potential, prm.grid);
    const StepOperator op(prm.grid, b, prm.time.dt(), prm.eps);

    parallel_for(0, n, prm.threads, [&](std::size_t i) {
        DensitySnapshot p = dirac_approximation(prm.grid.node(i), prm.grid, prm.sigma);
        for (std::size_t k = 0; k < prm.time.steps; ++k) op.apply_inplace(p.values);
        std::copy(p.values.begin(), p.values.end(), K.row(i));
    });

    double min_entry = K.data[0];
    for (const double v : K.data) min_entry = std::min(min_entry, v);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mass = 0.0;
        const double* r = K.row(i);
        for (std::size_t j = 0; j < n; ++j) mass += K.weights[j] * r[j];
        max_dev = std::max(max_dev, std::abs(mass - 1.0));
        if (mass < prm.row_mass_lo || mass > prm.row_mass_hi)
            throw AuditError("kernel row " + std::to_string(i) + " has mass " +
                             format_double(mass) + ", outside [" +
                             format_double(prm.row_mass_lo) + ", " +
                             format_double(prm.row_mass_hi) + "]");
    }
    if (min_entry < prm.positivity_floor)
        throw AuditError("kernel minimum entry " + format_double(min_entry) +
                         " is below the positivity floor " +
                         format_double(prm.positivity_floor));
    if (stats) {
        stats->min_entry = min_entry;
        stats->max_row_mass_dev = max_dev;
        stats->min_pivot = op.min_pivot();
        stats->wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    }
    return K;
}

/* Push a density one operator step forward: out_j = sum_i w_i kappa_ij f_i. */
inline std::vector<double> apply_kernel(const KernelMatrix& K, const std::vector<double>& f) {
    const std::size_t n = K.n();
    if (f.size() != n)
        throw ShapeError("apply: density length " + std::to_string(f.size()) +
                         " vs kernel size " + std::to_string(n));
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = K.weights[i] * f[i];
        if (c == 0.0) continue;
        const double* r = K.row(i);
        for (std::size_t j = 0; j < n; ++j) out[j] += c * r[j];
    }
    return out;
}

struct PowerIterOptions {
    double tol = 1e-10;
    std::size_t max_iters = 200000;
};

struct InvariantResult {
    std::vector<double> density;    // unit Simpson mass
    std::size_t iterations = 0;
    double residual = 0.0;          // quadrature L1 distance between final iterates
    double eigenvalue = 0.0;        // quadrature mass of the last un-normalized apply
};

/* Dominant eigendensity by power iteration on the mass-normalized map
 * f -> Lf / mass(Lf).  The direction residual is driven to tol; the dominant
 * eigenvalue itself is reported and sits within the row-mass tolerance of 1
 * for a physical kernel. */
inline InvariantResult invariant_density(const KernelMatrix& K,
                                         const PowerIterOptions& opt = {}) {
    const std::size_t n = K.n();
    InvariantResult out;
    out.density.assign(n, 1.0 / (2.0 * K.grid.half_width));
    for (std::size_t it = 1; it <= opt.max_iters; ++it) {
        std::vector<double> next = apply_kernel(K, out.density);
        const double mass = integrate(K.weights, next);
        if (!(mass > 0.0) || !std::isfinite(mass))
            throw NumericError("power iteration lost positivity: iterate mass " +
                               format_double(mass));
        for (double& v : next) v /= mass;
        double resid = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            resid += K.weights[j] * std::abs(next[j] - out.density[j]);
        out.density.swap(next);
        out.iterations = it;
        out.residual = resid;
        out.eigenvalue = mass;
        if (resid <= opt.tol) return out;
    }
    throw NumericError("power iteration failed to reach residual " +
                       std::to_string(opt.tol) + " in " +
                       std::to_string(opt.max_iters) + " iterations (last residual " +
                       std::to_string(out.residual) + ")");
}

struct GapEstimate {
    double value = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
};

/* Modulus of the second eigenvalue by power iteration on the complement of
 * the invariant direction: each iterate is deflated by its f0-projection
 * (v -> v - f0 * mass(v)) and the quadrature-L1 growth ratio is tracked until
 * it stabilizes.  Non-convergence is reported, not thrown — the estimate is
 * diagnostic, nothing downstream consumes it. */
inline GapEstimate spectral_gap_estimate(const KernelMatrix& K,
                                         const std::vector<double>& f0,
                                         std::size_t max_iters = 10000,
                                         double ratio_tol = 1e-8) {
    const std::size_t n = K.n();
    if (f0.size() != n) throw ShapeError("spectral gap: density length vs kernel size");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = K.grid.node(i);   // deterministic start
    auto deflate = [&](std::vector<double>& u) {
        const double m = integrate(K.weights, u);
        for (std::size_t i = 0; i < n; ++i) u[i] -= f0[i] * m;
    };
    auto l1 = [&](const std::vector<double>& u) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += K.weights[i] * std::abs(u[i]);
        return s;
    };
    deflate(v);
    double norm = l1(v);
    if (!(norm > 0.0)) return GapEstimate{0.0, true, 0};
    for (double& x : v) x /= norm;

    GapEstimate out;
    double prev_ratio = -1.0;
    std::size_t stable = 0;
    for (std::size_t it = 1; it <= max_iters; ++it) {
        v = apply_kernel(K, v);
        deflate(v);
        norm = l1(v);
        out.iterations = it;
        if (!(norm > 0.0)) {   // complement collapsed; gap numerically zero
            out.value = 0.0;
            out.converged = true;
            return out;
        }
        const double ratio = norm;
        for (double& x : v) x /= norm;
        out.value = ratio;
        if (prev_ratio >= 0.0 && std::abs(ratio - prev_ratio) <= ratio_tol * std::max(1.0, ratio)) {
            if (++stable >= 5) {
                out.converged = true;
                return out;
            }
        } else {
            stable = 0;
        }
        prev_ratio = ratio;
    }
    return out;
}

struct NormReport {
    double l1 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
    double l1_weighted = 0.0;   // weight (1 + x^2)^{alpha/2}
    double strong = 0.0;        // adds the weighted derivative term
    double alpha = 0.0;
};

/* Quadrature norms of a sample vector; the derivative in the strong norm is
 * central differencing with one-sided ends. */
inline NormReport norms(const std::vector<double>& f, const UniformGrid1D& g,
                        double alpha = 0.0) {
    if (f.size() != g.node_count()) throw ShapeError("norms: samples vs grid size");
    const QuadratureWeights w = simpson_weights(g);
    NormReport r;
    r.alpha = alpha;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double x = g.node(i);
        const double wt = std::pow(1.0 + x * x, alpha / 2.0);
        r.l1 += w[i] * std::abs(f[i]);
        r.l2 += w[i] * f[i] * f[i];
        r.linf = std::max(r.linf, std::abs(f[i]));
        r.l1_weighted += w[i] * std::abs(f[i]) * wt;
    }
    r.l2 = std::sqrt(r.l2);
    const double dx = g.spacing();
    const std::size_t n = g.intervals;
    double deriv_term = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        double df;
        if (i == 0)
            df = (f[1] - f[0]) / dx;
        else if (i == n)
            df = (f[n] - f[n - 1]) / dx;
        else
            df = (f[i + 1] - f[i - 1]) / (2.0 * dx);
        const double x = g.node(i);
        deriv_term += w[i] * std::abs(df) * std::pow(1.0 + x * x, alpha / 2.0);
    }
    r.strong = r.l1_weighted + deriv_term;
    return r;
}

}  // namespace ortk
