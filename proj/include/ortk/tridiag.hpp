#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ortk/errors.hpp"

namespace ortk {

/* Thomas factorization of a tridiagonal system, factored once and reused for
 * many right-hand sides.  No pivoting: the implicit scheme that feeds this is
 * strictly diagonally dominant for every intended parameter range, and the
 * factorization records its minimum pivot magnitude so a violation surfaces
 * as a diagnosable failure instead of silent noise. */
class TridiagonalFactor {
  public:
    /* lower[i] multiplies x[i-1] in row i (lower[0] unused); upper[i]
     * multiplies x[i+1] (upper[n-1] unused). */
    TridiagonalFactor(std::vector<double> lower, const std::vector<double>& diag,
                      const std::vector<double>& upper)
        : lower_(std::move(lower)), cprime_(diag.size()), inv_denom_(diag.size()) {
        const std::size_t n = diag.size();
        if (n == 0 || lower_.size() != n || upper.size() != n)
            throw ShapeError("tridiagonal bands must have equal nonzero length");
        min_pivot_ = std::abs(diag[0]);
        double denom = diag[0];
        check_pivot(denom, 0);
        inv_denom_[0] = 1.0 / denom;
        cprime_[0] = upper[0] * inv_denom_[0];
        for (std::size_t i = 1; i < n; ++i) {
            denom = diag[i] - lower_[i] * cprime_[i - 1];
            check_pivot(denom, i);
            if (std::abs(denom) < min_pivot_) min_pivot_ = std::abs(denom);
            inv_denom_[i] = 1.0 / denom;
            cprime_[i] = upper[i] * inv_denom_[i];
        }
    }

    std::size_t size() const { return cprime_.size(); }
    double min_pivot() const { return min_pivot_; }

    /* Solve in place: rhs becomes the solution. */
    void solve_inplace(std::vector<double>& rhs) const {
        const std::size_t n = size();
        if (rhs.size() != n)
            throw ShapeError("tridiagonal solve: rhs length " + std::to_string(rhs.size()) +
                             " vs system size " + std::to_string(n));
        rhs[0] *= inv_denom_[0];
        for (std::size_t i = 1; i < n; ++i)
            rhs[i] = (rhs[i] - lower_[i] * rhs[i - 1]) * inv_denom_[i];
        for (std::size_t i = n - 1; i-- > 0;)
            rhs[i] -= cprime_[i] * rhs[i + 1];
    }

    std::vector<double> solve(std::vector<double> rhs) const {
        solve_inplace(rhs);
        return rhs;
    }

  private:
    static void check_pivot(double denom, std::size_t row) {
        if (!(std::abs(denom) > 1e-300) || !std::isfinite(denom))
            throw NumericError("tridiagonal factorization hit a vanishing pivot at row " +
                               std::to_string(row));
    }

    std::vector<double> lower_;
    std::vector<double> cprime_;
    std::vector<double> inv_denom_;
    double min_pivot_ = 0.0;
};

}  // namespace ortk
