#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ortk/errors.hpp"
#include "ortk/grid.hpp"
#include "ortk/kernel.hpp"

namespace ortk {

/* Which family of line integrals of the perturbation vanishes:
 *   zero_mean_in_x — integrals over x at fixed y (the class the optimizer
 *                    searches; columns of the kernel stay balanced),
 *   zero_mean_in_y — integrals over y at fixed x (row masses, i.e. the
 *                    Markov property, are preserved under perturbation). */
enum class ConstraintAxis { zero_mean_in_x, zero_mean_in_y };

inline const char* to_string(ConstraintAxis a) {
    return a == ConstraintAxis::zero_mean_in_x ? "zero_mean_in_x" : "zero_mean_in_y";
}

/* Kernel perturbation kappa-dot sampled on the D x D node block,
 * data[i * nodes + j] = kdot(x_i, y_j). */
struct PerturbationKernel {
    SubgridRestriction domain;
    std::vector<double> data;
    ConstraintAxis axis = ConstraintAxis::zero_mean_in_x;

    std::size_t n() const { return domain.node_count(); }
    double at(std::size_t i, std::size_t j) const { return data[i * n() + j]; }
    double& at(std::size_t i, std::size_t j) { return data[i * n() + j]; }

    /* Largest Simpson average over any line along the tagged axis; ~1e-15 for
     * anything assembled from the trig basis. */
    double max_line_mean() const {
        const QuadratureWeights w = domain.weights();
        const std::size_t m = n();
        const double len = 2.0 * domain.snapped_half_width;
        double worst = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            double s = 0.0;
            if (axis == ConstraintAxis::zero_mean_in_x)
                for (std::size_t i = 0; i < m; ++i) s += w[i] * at(i, k);
            else
                for (std::size_t j = 0; j < m; ++j) s += w[j] * at(k, j);
            worst = std::max(worst, std::abs(s) / len);
        }
        return worst;
    }
};

/* Source term of the response equation: d_j = sum_i w_i kdot(x_i, y_j) f0(x_i),
 * the perturbation pushing the invariant density forward one step. */
inline std::vector<double> apply_dot(const PerturbationKernel& kdot,
                                     const std::vector<double>& f0_on_domain) {
    const std::size_t m = kdot.n();
    if (f0_on_domain.size() != m)
        throw ShapeError("apply_dot: density length " + std::to_string(f0_on_domain.size()) +
                         " vs perturbation size " + std::to_string(m));
    const QuadratureWeights w = kdot.domain.weights();
    std::vector<double> d(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double c = w[i] * f0_on_domain[i];
        if (c == 0.0) continue;
        const double* r = kdot.data.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) d[j] += c * r[j];
    }
    return d;
}

struct ResolventOptions {
    double rcond_floor = 1e-13;
    double residual_tol = 1e-10;
    std::size_t radius_max_iters = 50000;
    double radius_tol = 1e-10;
};

/* LU factorization of  Id - L_D^T  where L_D is the transfer operator cut to
 * the perturbation domain: (L_D^T eta)_j = sum_i w_i kappa(x_i, y_j) eta_i.
 * Before factoring, the spectral radius of the restricted operator is
 * estimated; it must be < 1 (mass leaks out of any proper subdomain, making
 * the restriction strictly sub-Markov), otherwise Id - L_D^T may be close to
 * singular and the whole linear-response formula is on thin ice. */
class ResolventFactor {
  public:
    ResolventFactor(const KernelMatrix& K, const SubgridRestriction& domain,
                    const ResolventOptions& opt = {})
        : domain_(domain), opt_(opt) {
        if (domain.last >= K.n())
            throw ShapeError("restriction does not fit inside the kernel grid");
        if (std::abs(domain.spacing - K.grid.spacing()) >
            1e-12 * std::max(1.0, K.grid.spacing()))
            throw ShapeError("restriction spacing does not match the kernel grid");
        const std::size_t m = domain.node_count();
        const QuadratureWeights w = domain.weights();
        A_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < m; ++i)
                A_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
                    w[i] * K.at(domain.first + i, domain.first + j);

        radius_ = estimate_radius();
        if (!(radius_ < 1.0))
            throw NumericError("restricted operator spectral radius " +
                               std::to_string(radius_) +
                               " is not < 1; the sub-Markov premise fails on this domain");

        Eigen::MatrixXd M = Eigen::MatrixXd::Identity(A_.rows(), A_.cols()) - A_;
        lu_.compute(M);
        rcond_ = lu_.rcond();
        if (!(rcond_ > opt.rcond_floor))
            throw NumericError("resolvent matrix condition estimate rcond = " +
                               std::to_string(rcond_) + " is below the floor " +
                               std::to_string(opt.rcond_floor));
    }

    const SubgridRestriction& domain() const { return domain_; }
    double restricted_radius() const { return radius_; }
    double rcond() const { return rcond_; }

    /* eta = (Id - L_D^T)^{-1} rhs, with the relative residual re-checked
     * against the factorization inputs on every solve. */
    std::vector<double> solve(const std::vector<double>& rhs) const {
        const auto m = static_cast<std::size_t>(A_.rows());
        if (rhs.size() != m)
            throw ShapeError("resolvent solve: rhs length " + std::to_string(rhs.size()) +
                             " vs system size " + std::to_string(m));
        const Eigen::Map<const Eigen::VectorXd> b(rhs.data(),
                                                  static_cast<Eigen::Index>(m));
        const double bnorm = b.template lpNorm<1>();
        if (bnorm == 0.0) return std::vector<double>(m, 0.0);
        const Eigen::VectorXd x = lu_.solve(b);
        const double resid = (x - A_ * x - b).template lpNorm<1>() / bnorm;
        if (!(resid <= opt_.residual_tol))
            throw NumericError("resolvent solve residual " + std::to_string(resid) +
                               " exceeds tolerance " + std::to_string(opt_.residual_tol));
        return std::vector<double>(x.data(), x.data() + m);
    }

  private:
    double estimate_radius() const {
        const auto m = A_.rows();
        Eigen::VectorXd v = Eigen::VectorXd::Ones(m);
        v /= v.template lpNorm<1>();
        double prev = -1.0;
        std::size_t stable = 0;
        double ratio = 0.0;
        for (std::size_t it = 0; it < opt_.radius_max_iters; ++it) {
            v = A_ * v;
            ratio = v.template lpNorm<1>();
            if (!(ratio > 0.0)) return 0.0;
            v /= ratio;
            if (prev >= 0.0 &&
                std::abs(ratio - prev) <= opt_.radius_tol * std::max(1.0, ratio)) {
                if (++stable >= 5) return ratio;
            } else {
                stable = 0;
            }
            prev = ratio;
        }
        throw NumericError("restricted spectral radius estimate did not settle (last " +
                           std::to_string(ratio) + ")");
    }

    SubgridRestriction domain_;
    ResolventOptions opt_;
    Eigen::MatrixXd A_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    double radius_ = 0.0;
    double rcond_ = 0.0;
};

using ResponseVector = std::vector<double>;

/* First-order change of the invariant density on D per unit perturbation
 * strength: R = (Id - L_D^T)^{-1} [apply_dot(kdot, f0)]. */
inline ResponseVector response(const PerturbationKernel& kdot, const ResolventFactor& factor,
                               const std::vector<double>& f0_on_domain) {
    return factor.solve(apply_dot(kdot, f0_on_domain));
}

/* |integral of R over D| relative to ||R||_1 — a scale-free residual of the
 * mass-neutrality the full-domain theory predicts.  The restricted scheme
 * only satisfies it approximately, so this is reported, not asserted. */
inline double response_mass_ratio(const ResponseVector& R, const SubgridRestriction& domain) {
    const QuadratureWeights w = domain.weights();
    double total = 0.0, l1 = 0.0;
    for (std::size_t j = 0; j < R.size(); ++j) {
        total += w[j] * R[j];
        l1 += w[j] * std::abs(R[j]);
    }
    return l1 > 0.0 ? std::abs(total) / l1 : 0.0;
}

/* d/d(delta) of E[phi] at delta = 0: the quadrature pairing of phi with the
 * response on D. */
inline double expectation_rate(const std::vector<double>& phi_on_domain,
                               const PerturbationKernel& kdot, const ResolventFactor& factor,
                               const std::vector<double>& f0_on_domain) {
    const ResponseVector R = response(kdot, factor, f0_on_domain);
    if (phi_on_domain.size() != R.size())
        throw ShapeError("expectation_rate: observable samples vs response length");
    const QuadratureWeights w = factor.domain().weights();
    double s = 0.0;
    for (std::size_t j = 0; j < R.size(); ++j) s += w[j] * phi_on_domain[j] * R[j];
    return s;
}

struct PerturbedKernel {
    KernelMatrix kernel;
    double min_entry = 0.0;
    double max_row_mass_dev = 0.0;
};

/* K + delta * kdot on the D x D block.  Row masses are recorded rather than
 * gated: perturbations that are zero-mean in x redistribute row mass by
 * design, and the downstream eigensolve renormalizes. */
inline PerturbedKernel perturb_kernel(const KernelMatrix& K, const PerturbationKernel& kdot,
                                      double delta) {
    if (kdot.domain.last >= K.n())
        throw ShapeError("perturbation domain does not fit inside the kernel grid");
    PerturbedKernel out{K, 0.0, 0.0};
    const std::size_t m = kdot.n();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out.kernel.at(kdot.domain.first + i, kdot.domain.first + j) +=
                delta * kdot.at(i, j);
    out.min_entry = *std::min_element(out.kernel.data.begin(), out.kernel.data.end());
    for (std::size_t i = 0; i < out.kernel.n(); ++i) {
        double mass = 0.0;
        const double* r = out.kernel.row(i);
        for (std::size_t j = 0; j < out.kernel.n(); ++j) mass += out.kernel.weights[j] * r[j];
        out.max_row_mass_dev = std::max(out.max_row_mass_dev, std::abs(mass - 1.0));
    }
    return out;
}

}  // namespace ortk
