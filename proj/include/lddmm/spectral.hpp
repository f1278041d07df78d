#pragma once

// The metric operator L = (Id - alpha * Laplacian)^s and its inverse K,
// diagonalised by the DFT (periodic boundary conditions).  The Laplacian
// symbol is the one of the 3-point finite-difference stencil, so
// L(cos mode k) = lambda_k * (cos mode k) exactly on the grid.

#include <cstddef>
#include <span>
#include <vector>

#include "lddmm/grid.hpp"

namespace lddmm::spectral {

class CauchyNavierOperator {
public:
    /// Throws InvalidParameter if alpha <= 0 or alpha/s are not finite.
    static CauchyNavierOperator build(double alpha, double s, const grid::GridSpec& grid);

    double alpha() const noexcept { return alpha_; }
    double s() const noexcept { return s_; }
    const grid::GridSpec& grid() const noexcept { return grid_; }

    /// lambda_k for a frequency multi-index (k_i in [0, N_i)).
    double multiplier(std::span<const std::size_t> k) const;
    /// All lambda_k in row-major frequency order over the full grid.
    const std::vector<double>& multipliers() const noexcept { return full_; }
    /// lambda_k on the half spectrum used by real-to-complex transforms
    /// (last axis truncated to N/2 + 1).
    const std::vector<double>& half_multipliers() const noexcept { return half_; }
    /// 1 / lambda_k on the half spectrum.
    const std::vector<double>& half_inverse_multipliers() const noexcept { return half_inv_; }

    grid::VectorField apply_L(const grid::VectorField& v) const;
    grid::VectorField apply_K(const grid::VectorField& v) const;

private:
    CauchyNavierOperator() = default;

    double alpha_ = 0.0;
    double s_ = 0.0;
    grid::GridSpec grid_;
    std::vector<double> full_;
    std::vector<double> half_;
    std::vector<double> half_inv_;
};

/// Filters one scalar node array (row-major over `grid`) in place of `out`:
/// out = IDFT(m * DFT(in)), with `half_multipliers` laid out as in
/// CauchyNavierOperator::half_multipliers().  `in` and `out` may alias.
void filter_scalar(const grid::GridSpec& grid, std::span<const double> half_multipliers,
                   std::span<const double> in, std::span<double> out);

/// Number of complex coefficients in the half spectrum of `grid`.
std::size_t half_spectrum_size(const grid::GridSpec& grid);

}  // namespace lddmm::spectral
