#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ortk/errors.hpp"

namespace ortk {

/* Uniform mesh on the symmetric interval [-a, a] with `intervals` cells,
 * so intervals+1 nodes.  The interval count must be even because every
 * quadrature in the project is composite Simpson. */
struct UniformGrid1D {
    double half_width = 0.0;
    std::size_t intervals = 0;

    double spacing() const { return 2.0 * half_width / static_cast<double>(intervals); }
    std::size_t node_count() const { return intervals + 1; }
    double node(std::size_t i) const {
        return -half_width + static_cast<double>(i) * spacing();
    }
    std::vector<double> nodes() const {
        std::vector<double> xs(node_count());
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = node(i);
        return xs;
    }
    bool operator==(const UniformGrid1D&) const = default;
};

inline UniformGrid1D build_grid(double half_width, std::size_t intervals) {
    if (!(half_width > 0.0) || !std::isfinite(half_width))
        throw ConfigError("grid half-width must be positive and finite, got " +
                          std::to_string(half_width));
    if (intervals < 2 || intervals % 2 != 0)
        throw ConfigError("grid interval count must be even and >= 2, got " +
                          std::to_string(intervals));
    return UniformGrid1D{half_width, intervals};
}

/* Time axis [0, T] with uniform steps. */
struct TimeGrid {
    double final_time = 0.0;
    std::size_t steps = 0;

    double dt() const { return final_time / static_cast<double>(steps); }
    bool operator==(const TimeGrid&) const = default;
};

inline TimeGrid build_time_grid(double final_time, std::size_t steps) {
    if (!(final_time > 0.0) || !std::isfinite(final_time))
        throw ConfigError("final time must be positive and finite");
    if (steps == 0) throw ConfigError("time step count must be >= 1");
    return TimeGrid{final_time, steps};
}

using QuadratureWeights = std::vector<double>;

/* Composite Simpson 1/3 weights: (1,4,2,...,2,4,1) * h/3. */
inline QuadratureWeights simpson_weights(std::size_t intervals, double spacing) {
    if (intervals < 2 || intervals % 2 != 0)
        throw ConfigError("Simpson rule needs an even interval count >= 2, got " +
                          std::to_string(intervals));
    QuadratureWeights w(intervals + 1);
    const double h3 = spacing / 3.0;
    w.front() = h3;
    w.back() = h3;
    for (std::size_t i = 1; i < intervals; ++i) w[i] = (i % 2 ? 4.0 : 2.0) * h3;
    return w;
}

inline QuadratureWeights simpson_weights(const UniformGrid1D& g) {
    return simpson_weights(g.intervals, g.spacing());
}

inline double integrate(const QuadratureWeights& w, const std::vector<double>& f) {
    if (w.size() != f.size())
        throw ShapeError("integrate: " + std::to_string(f.size()) + " samples vs " +
                         std::to_string(w.size()) + " weights");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * f[i];
    return s;
}

/* Node range of the symmetric subinterval [-d, d] inside a parent grid.
 * d is snapped to the nearest node; because the parent grid is symmetric with
 * an even cell count, the snapped range always has an even cell count and no
 * parity widening is ever required. */
struct SubgridRestriction {
    std::size_t first = 0;   // parent index of -d_snapped
    std::size_t last = 0;    // parent index of +d_snapped
    double spacing = 0.0;
    double snapped_half_width = 0.0;

    std::size_t intervals() const { return last - first; }
    std::size_t node_count() const { return last - first + 1; }
    double node(std::size_t k) const {
        return -snapped_half_width + static_cast<double>(k) * spacing;
    }
    std::vector<double> nodes() const {
        std::vector<double> xs(node_count());
        for (std::size_t k = 0; k < xs.size(); ++k) xs[k] = node(k);
        return xs;
    }
    QuadratureWeights weights() const { return simpson_weights(intervals(), spacing); }

    /* Slice a full-grid sample vector down to the subinterval. */
    std::vector<double> restrict(const std::vector<double>& full) const {
        if (full.size() <= last)
            throw ShapeError("restrict: vector of size " + std::to_string(full.size()) +
                             " does not cover node " + std::to_string(last));
        return std::vector<double>(full.begin() + static_cast<std::ptrdiff_t>(first),
                                   full.begin() + static_cast<std::ptrdiff_t>(last + 1));
    }

    /* Zero-extend a subinterval vector back to full-grid length. */
    std::vector<double> embed(const std::vector<double>& sub, std::size_t full_nodes) const {
        if (sub.size() != node_count())
            throw ShapeError("embed: expected " + std::to_string(node_count()) +
                             " samples, got " + std::to_string(sub.size()));
        std::vector<double> full(full_nodes, 0.0);
        for (std::size_t k = 0; k < sub.size(); ++k) full[first + k] = sub[k];
        return full;
    }

    bool operator==(const SubgridRestriction&) const = default;
};

inline SubgridRestriction restrict_to_domain(const UniformGrid1D& g, double d) {
    if (!(d > 0.0) || !std::isfinite(d))
        throw ConfigError("restriction half-width must be positive and finite");
    if (!(d < g.half_width))
        throw ConfigError("restriction half-width " + std::to_string(d) +
                          " must be strictly inside the grid half-width " +
                          std::to_string(g.half_width));
    const double dx = g.spacing();
    const auto j = static_cast<std::size_t>(std::llround(d / dx));
    if (j < 1)
        throw ConfigError("restriction half-width " + std::to_string(d) +
                          " is below one grid spacing " + std::to_string(dx));
    const std::size_t center = g.intervals / 2;
    if (j >= center)
        throw ConfigError("restriction half-width rounds onto the grid boundary");
    return SubgridRestriction{center - j, center + j, dx,
                              static_cast<double>(j) * dx};
}

}  // namespace ortk
