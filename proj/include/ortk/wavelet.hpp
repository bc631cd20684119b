#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ortk/errors.hpp"
#include "ortk/grid.hpp"
#include "ortk/parallel.hpp"
#include "ortk/response.hpp"
#include "ortk/rng.hpp"

namespace ortk {

/* Tensor trig basis on D x D.  Each element is
 *     norm(j) * trig_x(i pi x / d) * trig_y(j pi y / d)
 * with x-frequency i >= 1 (so every element is zero-mean in x) and
 * y-frequency j >= 0; the two kinds whose y-factor would be sin(0) = 0 are
 * excluded.  norm(j) makes the discrete Simpson L2 norm on D x D exactly one:
 * 1/(d sqrt(2)) when j = 0, 1/d otherwise. */
enum class WaveKind { cos_cos, cos_sin, sin_cos, sin_sin };

inline const char* to_string(WaveKind k) {
    switch (k) {
        case WaveKind::cos_cos: return "cc";
        case WaveKind::cos_sin: return "cs";
        case WaveKind::sin_cos: return "sc";
        case WaveKind::sin_sin: return "ss";
    }
    return "?";
}

struct WaveletIndex {
    unsigned i = 1;
    unsigned j = 0;
    WaveKind kind = WaveKind::cos_cos;

    bool x_is_cos() const { return kind == WaveKind::cos_cos || kind == WaveKind::cos_sin; }
    bool y_is_cos() const { return kind == WaveKind::cos_cos || kind == WaveKind::sin_cos; }
    bool operator==(const WaveletIndex&) const = default;
};

inline double wavelet_normalizer(unsigned j, double d) {
    return j == 0 ? 1.0 / (d * std::sqrt(2.0)) : 1.0 / d;
}

inline double wavelet_x_factor(const WaveletIndex& idx, double x, double d) {
    const double a = static_cast<double>(idx.i) * M_PI * x / d;
    return idx.x_is_cos() ? std::cos(a) : std::sin(a);
}

inline double wavelet_y_factor(const WaveletIndex& idx, double y, double d) {
    const double a = static_cast<double>(idx.j) * M_PI * y / d;
    return idx.y_is_cos() ? std::cos(a) : std::sin(a);
}

inline double eval_wavelet(const WaveletIndex& idx, double x, double y, double d) {
    return wavelet_normalizer(idx.j, d) * wavelet_x_factor(idx, x, d) *
           wavelet_y_factor(idx, y, d);
}

/* Fixed enumeration: i ascending, then j, then kind in (cc, cs, sc, ss)
 * order.  Everything downstream (coefficient tables, random draws, reports)
 * keys on this order, so it must never change. */
inline std::vector<WaveletIndex> enumerate_basis(unsigned max_i, unsigned max_j) {
    if (max_i < 1) throw ConfigError("basis needs max x-frequency >= 1");
    std::vector<WaveletIndex> basis;
    basis.reserve(static_cast<std::size_t>(max_i) * (2 + 4 * max_j));
    for (unsigned i = 1; i <= max_i; ++i)
        for (unsigned j = 0; j <= max_j; ++j)
            for (const WaveKind k : {WaveKind::cos_cos, WaveKind::cos_sin, WaveKind::sin_cos,
                                     WaveKind::sin_sin}) {
                const bool y_sin =
                    k == WaveKind::cos_sin || k == WaveKind::sin_sin;
                if (j == 0 && y_sin) continue;   // sin(0 y) is identically zero
                basis.push_back(WaveletIndex{i, j, k});
            }
    return basis;
}

/* Observable phi whose expected value the perturbation should move. */
struct ObservableSpec {
    enum class Kind { gaussian_pdf, tabulated };

    Kind kind = Kind::gaussian_pdf;
    double mean = 0.0;
    double sigma = 0.1;
    std::vector<double> tab_y;
    std::vector<double> tab_phi;

    static ObservableSpec gaussian(double mean, double sigma) {
        if (!(sigma > 0.0)) throw ConfigError("gaussian observable needs positive sigma");
        return ObservableSpec{Kind::gaussian_pdf, mean, sigma, {}, {}};
    }
    static ObservableSpec tabulated(std::vector<double> y, std::vector<double> phi) {
        if (y.size() != phi.size() || y.size() < 2)
            throw ConfigError("tabulated observable needs >= 2 matching samples");
        for (std::size_t i = 1; i < y.size(); ++i)
            if (!(y[i] > y[i - 1]))
                throw ConfigError("tabulated observable samples must be strictly ascending");
        return ObservableSpec{Kind::tabulated, 0.0, 0.0, std::move(y), std::move(phi)};
    }

    double operator()(double y) const {
        if (kind == Kind::gaussian_pdf) {
            const double z = (y - mean) / sigma;
            return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
        }
        const auto it = std::lower_bound(tab_y.begin(), tab_y.end(), y);
        if (it == tab_y.begin() || it == tab_y.end())
            throw ConfigError("tabulated observable does not cover y = " + std::to_string(y));
        const auto hi = static_cast<std::size_t>(it - tab_y.begin());
        const std::size_t lo = hi - 1;
        const double t = (y - tab_y[lo]) / (tab_y[hi] - tab_y[lo]);
        return (1.0 - t) * tab_phi[lo] + t * tab_phi[hi];
    }

    std::vector<double> samples_on(const std::vector<double>& nodes) const {
        std::vector<double> out(nodes.size());
        for (std::size_t k = 0; k < nodes.size(); ++k) out[k] = (*this)(nodes[k]);
        return out;
    }
};

/* Sensitivity of the expectation rate to one basis element: the element's
 * own response, paired with phi.  The y-factor separates out of apply_dot,
 * so the source term is (sum_i w_i u(x_i) f0_i) * norm * v(y). */
inline double coefficient(const WaveletIndex& idx, const std::vector<double>& phi_on_domain,
                          const ResolventFactor& factor,
                          const std::vector<double>& f0_on_domain) {
    const SubgridRestriction& dom = factor.domain();
    const std::size_t m = dom.node_count();
    if (phi_on_domain.size() != m || f0_on_domain.size() != m)
        throw ShapeError("coefficient: sample lengths vs domain size");
    const QuadratureWeights w = dom.weights();
    const double d = dom.snapped_half_width;
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        s += w[i] * wavelet_x_factor(idx, dom.node(i), d) * f0_on_domain[i];
    std::vector<double> rhs(m);
    const double scale = s * wavelet_normalizer(idx.j, d);
    for (std::size_t j = 0; j < m; ++j)
        rhs[j] = scale * wavelet_y_factor(idx, dom.node(j), d);
    const std::vector<double> eta = factor.solve(rhs);
    double g = 0.0;
    for (std::size_t j = 0; j < m; ++j) g += w[j] * phi_on_domain[j] * eta[j];
    return g;
}

struct CoefficientTable {
    std::vector<WaveletIndex> basis;
    std::vector<double> values;

    double norm2() const {
        double s = 0.0;
        for (const double v : values) s += v * v;
        return std::sqrt(s);
    }
};

inline CoefficientTable compute_coefficients(const std::vector<WaveletIndex>& basis,
                                             const std::vector<double>& phi_on_domain,
                                             const ResolventFactor& factor,
                                             const std::vector<double>& f0_on_domain,
                                             unsigned threads = 1) {
    CoefficientTable table{basis, std::vector<double>(basis.size(), 0.0)};
    parallel_for(0, basis.size(), threads, [&](std::size_t r) {
        table.values[r] = coefficient(basis[r], phi_on_domain, factor, f0_on_domain);
    });
    return table;
}

/* Evaluate sum_r c_r h_r on the D x D node block.  Grouping by the four
 * (x-kind, y-kind) pairs turns the sum into U * C * V^T per pair — identical
 * result, far fewer flops than element-by-element accumulation. */
inline PerturbationKernel span_element(const std::vector<WaveletIndex>& basis,
                                       const std::vector<double>& coeffs,
                                       const SubgridRestriction& domain,
                                       ConstraintAxis axis = ConstraintAxis::zero_mean_in_x) {
    if (coeffs.size() != basis.size())
        throw ShapeError("span_element: coefficient count vs basis size");
    const std::size_t m = domain.node_count();
    const double d = domain.snapped_half_width;
    unsigned max_i = 0, max_j = 0;
    for (const auto& idx : basis) {
        max_i = std::max(max_i, idx.i);
        max_j = std::max(max_j, idx.j);
    }
    const auto mi = static_cast<Eigen::Index>(max_i);
    const auto mj = static_cast<Eigen::Index>(max_j) + 1;
    const auto mm = static_cast<Eigen::Index>(m);

    Eigen::MatrixXd Uc(mm, mi), Us(mm, mi), Vc(mm, mj), Vs(mm, mj);
    for (Eigen::Index k = 0; k < mm; ++k) {
        const double x = domain.node(static_cast<std::size_t>(k));
        for (Eigen::Index i = 0; i < mi; ++i) {
            const double a = static_cast<double>(i + 1) * M_PI * x / d;
            Uc(k, i) = std::cos(a);
            Us(k, i) = std::sin(a);
        }
        for (Eigen::Index j = 0; j < mj; ++j) {
            const double a = static_cast<double>(j) * M_PI * x / d;
            Vc(k, j) = std::cos(a);
            Vs(k, j) = std::sin(a);
        }
    }
    Eigen::MatrixXd Ccc = Eigen::MatrixXd::Zero(mi, mj), Ccs = Ccc, Csc = Ccc, Css = Ccc;
    for (std::size_t r = 0; r < basis.size(); ++r) {
        const auto& idx = basis[r];
        const double v = coeffs[r] * wavelet_normalizer(idx.j, d);
        auto& C = idx.x_is_cos() ? (idx.y_is_cos() ? Ccc : Ccs)
                                 : (idx.y_is_cos() ? Csc : Css);
        C(static_cast<Eigen::Index>(idx.i) - 1, static_cast<Eigen::Index>(idx.j)) += v;
    }
    Eigen::MatrixXd G = Uc * Ccc * Vc.transpose() + Uc * Ccs * Vs.transpose() +
                        Us * Csc * Vc.transpose() + Us * Css * Vs.transpose();

    PerturbationKernel out{domain, std::vector<double>(m * m), axis};
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out.data[i * m + j] = G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return out;
}

/* Unit-norm coefficient direction that maximizes the expectation rate over
 * the span: the normalized coefficient table itself (Riesz representation —
 * the objective is linear in the coefficients). */
inline PerturbationKernel assemble_optimal(const CoefficientTable& table,
                                           const SubgridRestriction& domain) {
    const double norm = table.norm2();
    if (!(norm > 0.0))
        throw NumericError(
            "degenerate objective: every basis coefficient vanishes, no direction to pick");
    std::vector<double> c(table.values.size());
    for (std::size_t r = 0; r < c.size(); ++r) c[r] = table.values[r] / norm;
    return span_element(table.basis, c, domain, ConstraintAxis::zero_mean_in_x);
}

/* The optimizer's objective for an arbitrary admissible perturbation. */
inline double objective_value(const PerturbationKernel& kdot,
                              const std::vector<double>& phi_on_domain,
                              const ResolventFactor& factor,
                              const std::vector<double>& f0_on_domain) {
    return expectation_rate(phi_on_domain, kdot, factor, f0_on_domain);
}

/* Random unit-norm element of the span, for sampling checks of optimality.
 * Coefficients are drawn in basis order from the caller's generator, so a
 * fixed seed fixes the whole sweep. */
inline PerturbationKernel random_span_element(const std::vector<WaveletIndex>& basis,
                                              const SubgridRestriction& domain, Rng& rng) {
    std::vector<double> c(basis.size());
    double norm2 = 0.0;
    for (double& v : c) {
        v = rng.normal();
        norm2 += v * v;
    }
    if (!(norm2 > 0.0)) throw NumericError("degenerate random draw");
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : c) v *= inv;
    return span_element(basis, c, domain, ConstraintAxis::zero_mean_in_x);
}

}  // namespace ortk
