#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ortk/errors.hpp"
#include "ortk/grid.hpp"
#include "ortk/tridiag.hpp"

namespace ortk {

/* Drift field b = -V' of the gradient diffusion dX = b(X) dt + eps dW.
 * Built-ins: the double well V(y) = y^4/4 - y^2/2 (drift y - y^3) and the
 * quadratic well V(y) = k y^2 / 2 (drift -k y, the OU process).  A tabulated
 * V' is linearly interpolated and must cover the grid including one ghost
 * spacing beyond each boundary. */
struct PotentialSpec {
    enum class Kind { double_well, quadratic, tabulated };

    Kind kind = Kind::double_well;
    double curvature = 1.0;          // quadratic only
    std::vector<double> tab_y;       // tabulated only: ascending sample points
    std::vector<double> tab_dv;      // tabulated only: V'(tab_y)

    static PotentialSpec double_well() { return PotentialSpec{}; }
    static PotentialSpec quadratic(double k) {
        if (!(k > 0.0)) throw ConfigError("quadratic potential needs positive curvature");
        return PotentialSpec{Kind::quadratic, k, {}, {}};
    }
    static PotentialSpec tabulated(std::vector<double> y, std::vector<double> dv) {
        if (y.size() != dv.size() || y.size() < 2)
            throw ConfigError("tabulated potential needs >= 2 matching (y, V') samples");
        for (std::size_t i = 1; i < y.size(); ++i)
            if (!(y[i] > y[i - 1]))
                throw ConfigError("tabulated potential samples must be strictly ascending");
        return PotentialSpec{Kind::tabulated, 1.0, std::move(y), std::move(dv)};
    }

    double drift(double y) const {
        switch (kind) {
            case Kind::double_well: return y - y * y * y;
            case Kind::quadratic: return -curvature * y;
            case Kind::tabulated: {
                auto it = std::lower_bound(tab_y.begin(), tab_y.end(), y);
                if (it == tab_y.begin() && y == tab_y.front()) ++it;  // left endpoint
                if (it == tab_y.begin() || it == tab_y.end())
                    throw ConfigError("tabulated potential does not cover y = " +
                                      std::to_string(y));
                const auto hi = static_cast<std::size_t>(it - tab_y.begin());
                const std::size_t lo = hi - 1;
                const double t = (y - tab_y[lo]) / (tab_y[hi] - tab_y[lo]);
                return -((1.0 - t) * tab_dv[lo] + t * tab_dv[hi]);
            }
        }
        throw ConfigError("unknown potential kind");
    }

    /* Fail early if a tabulated table cannot serve the grid plus its ghosts. */
    void require_coverage(const UniformGrid1D& g) const {
        if (kind != Kind::tabulated) return;
        const double lo = -g.half_width - g.spacing();
        const double hi = g.half_width + g.spacing();
        if (!(tab_y.front() < lo) || !(tab_y.back() > hi))
            throw ConfigError("tabulated potential covers [" + std::to_string(tab_y.front()) +
                              ", " + std::to_string(tab_y.back()) +
                              "] but the grid with ghosts needs (" + std::to_string(lo) + ", " +
                              std::to_string(hi) + ")");
    }
};

/* Drift at every node plus one ghost value beyond each boundary; the ghosts
 * feed the second-order reflecting-boundary closure. */
struct DriftSamples {
    std::vector<double> values;
    double ghost_left = 0.0;
    double ghost_right = 0.0;
};

inline DriftSamples drift_samples(const PotentialSpec& pot, const UniformGrid1D& g) {
    pot.require_coverage(g);
    DriftSamples b;
    b.values.resize(g.node_count());
    for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] = pot.drift(g.node(i));
    b.ghost_left = pot.drift(-g.half_width - g.spacing());
    b.ghost_right = pot.drift(g.half_width + g.spacing());
    return b;
}

/* Density samples on the grid at one instant. */
struct DensitySnapshot {
    std::vector<double> values;
    double time = 0.0;
};

/* Narrow Gaussian surrogate for a point mass at a grid node, renormalized to
 * exact unit Simpson mass.  `center` must coincide with a node. */
inline DensitySnapshot dirac_approximation(double center, const UniformGrid1D& g,
                                           double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("dirac surrogate width must be positive");
    const double pos = (center + g.half_width) / g.spacing();
    const double snapped = std::round(pos);
    if (std::abs(pos - snapped) > 1e-9 || snapped < 0.0 ||
        snapped > static_cast<double>(g.intervals))
        throw ConfigError("dirac center " + std::to_string(center) +
                          " is not a grid node");
    const double xc = g.node(static_cast<std::size_t>(snapped));
    DensitySnapshot p;
    p.values.resize(g.node_count());
    const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double z = (g.node(i) - xc) / sigma;
        p.values[i] = norm * std::exp(-0.5 * z * z);
    }
    const double mass = integrate(simpson_weights(g), p.values);
    if (!(mass > 0.0))
        throw NumericError("dirac surrogate has vanishing quadrature mass");
    for (double& v : p.values) v /= mass;
    return p;
}

/* One backward-Euler step of the Fokker-Planck equation
 *     dp/dt = (eps^2/2) p_yy - (b p)_y
 * with zero-flux (reflecting) boundaries.  The ghost nodes are eliminated
 * through the centered flux condition (eps^2/2) p' = b p at the walls, which
 * keeps the closure second order.  Factor once, then step any number of
 * densities. */
class StepOperator {
  public:
    StepOperator(const UniformGrid1D& g, const DriftSamples& b, double dt, double eps)
        : factor_(make_factor(g, b, dt, eps)) {}

    void apply_inplace(std::vector<double>& p) const { factor_.solve_inplace(p); }
    double min_pivot() const { return factor_.min_pivot(); }

  private:
    static TridiagonalFactor make_factor(const UniformGrid1D& g, const DriftSamples& b,
                                         double dt, double eps) {
        if (!(dt > 0.0)) throw ConfigError("time step must be positive");
        if (!(eps > 0.0)) throw ConfigError("noise amplitude must be positive");
        const std::size_t n = g.intervals;
        if (b.values.size() != g.node_count())
            throw ShapeError("drift sample count does not match the grid");
        const double dx = g.spacing();
        const double lam = eps * eps * dt / (2.0 * dx * dx);
        const double gam = dt / (2.0 * dx);   // times b gives the advection weight
        const double c = 4.0 * dx / (eps * eps);

        std::vector<double> lower(n + 1, 0.0), diag(n + 1, 0.0), upper(n + 1, 0.0);
        for (std::size_t i = 1; i < n; ++i) {
            lower[i] = -lam - gam * b.values[i - 1];
            diag[i] = 1.0 + 2.0 * lam;
            upper[i] = -lam + gam * b.values[i + 1];
        }
        // left wall: ghost p_{-1} = p_1 - c b_0 p_0
        diag[0] = 1.0 + 2.0 * lam + c * b.values[0] * (lam + gam * b.ghost_left);
        upper[0] = -2.0 * lam + gam * b.values[1] - gam * b.ghost_left;
        // right wall: ghost p_{n+1} = p_{n-1} + c b_n p_n
        diag[n] = 1.0 + 2.0 * lam + c * b.values[n] * (-lam + gam * b.ghost_right);
        lower[n] = -2.0 * lam + gam * b.ghost_right - gam * b.values[n - 1];

        return TridiagonalFactor(std::move(lower), diag, upper);
    }

    TridiagonalFactor factor_;
};

inline DensitySnapshot step_implicit(const DensitySnapshot& p, const DriftSamples& b,
                                     const UniformGrid1D& g, double dt, double eps) {
    StepOperator op(g, b, dt, eps);
    DensitySnapshot out{p.values, p.time + dt};
    op.apply_inplace(out.values);
    return out;
}

struct FpeOptions {
    double positivity_floor = -1e-8;
    double mass_tolerance = 1e-3;
    bool audit = true;
};

/* March the density of a point mass at x0 to the final time.  Audits mass
 * drift and positivity of the result unless disabled. */
inline DensitySnapshot solve_fpe(double x0, const PotentialSpec& pot, const UniformGrid1D& g,
                                 const TimeGrid& tg, double eps, double sigma,
                                 const FpeOptions& opt = {}) {
    const DriftSamples b = drift_samples(pot, g);
    const StepOperator op(g, b, tg.dt(), eps);
    DensitySnapshot p = dirac_approximation(x0, g, sigma);
    for (std::size_t k = 0; k < tg.steps; ++k) op.apply_inplace(p.values);
    p.time = tg.final_time;
    if (opt.audit) {
        const double mass = integrate(simpson_weights(g), p.values);
        if (std::abs(mass - 1.0) > opt.mass_tolerance)
            throw AuditError("density mass drifted to " + format_double(mass) +
                             " (tolerance " + std::to_string(opt.mass_tolerance) + ")");
        const double lo = *std::min_element(p.values.begin(), p.values.end());
        if (lo < opt.positivity_floor)
            throw AuditError("density dipped to " + std::to_string(lo) +
                             ", below the positivity floor");
    }
    return p;
}

struct OUParams {
    double mean0 = 0.0;
    double sigma0 = 1.0;
    double t = 0.0;
    double eps = 1.0;
    double curvature = 1.0;
};

/* Gaussian transition density of the OU process dX = -k X dt + eps dW started
 * from N(mean0, sigma0^2):
 *   mean(t)  = mean0 e^{-kt}
 *   var(t)   = sigma0^2 e^{-2kt} + eps^2 (1 - e^{-2kt}) / (2k)
 * sampled on the grid without renormalization. */
inline DensitySnapshot analytic_ou_density(const OUParams& ou, const UniformGrid1D& g) {
    if (!(ou.sigma0 > 0.0)) throw ConfigError("OU initial spread must be positive");
    if (!(ou.eps > 0.0)) throw ConfigError("OU noise amplitude must be positive");
    if (ou.t < 0.0) throw ConfigError("OU time must be nonnegative");
    const double k = ou.curvature;
    const double decay = std::exp(-k * ou.t);
    const double mean = ou.mean0 * decay;
    const double var = ou.sigma0 * ou.sigma0 * decay * decay +
                       ou.eps * ou.eps * (1.0 - decay * decay) / (2.0 * k);
    const double sd = std::sqrt(var);
    DensitySnapshot p;
    p.time = ou.t;
    p.values.resize(g.node_count());
    const double norm = 1.0 / (sd * std::sqrt(2.0 * M_PI));
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double z = (g.node(i) - mean) / sd;
        p.values[i] = norm * std::exp(-0.5 * z * z);
    }
    return p;
}

}  // namespace ortk
