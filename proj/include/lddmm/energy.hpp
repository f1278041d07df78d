#pragma once

// LDDMM energies
//   E(v)  = 1/2 <Lv, v> + 1/sigma2 ||I0 o (phi_1^v)^-1 - I1||^2
// for a stationary v (inverse map exp(-v)) or an initial velocity v0
// (inverse map transported along the EPDiff geodesic).  Inner products are
// discrete L2: grid sums times the cell volume.

#include <memory>
#include <vector>

#include "lddmm/autodiff.hpp"
#include "lddmm/diffeo.hpp"
#include "lddmm/grid.hpp"
#include "lddmm/layers.hpp"
#include "lddmm/spectral.hpp"

namespace lddmm::energy {

enum class Parameterization { stationary, epdiff };

struct EnergyConfig {
    double sigma2 = 1.0;
    Parameterization parameterization = Parameterization::stationary;
    diffeo::IntegrationConfig integration;
};

/// Throws InvalidParameter on sigma2 <= 0 or zero time steps / squarings.
void validate(const EnergyConfig& cfg);

struct EnergyTerms {
    double regularizer = 0.0;  // 1/2 <Lv, v>
    double image = 0.0;        // 1/sigma2 ||Iw - I1||^2
    double total() const { return regularizer + image; }
};

/// (phi_1^v)^-1 per the configured parameterization.
grid::DisplacementField inverse_map(const grid::VectorField& v, const spectral::CauchyNavierOperator& op,
                                    const EnergyConfig& cfg);

EnergyTerms energy_stationary(const grid::VectorField& v, const grid::ScalarImage& source,
                              const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                              const EnergyConfig& cfg);
EnergyTerms energy_shooting(const grid::VectorField& v0, const grid::ScalarImage& source,
                            const grid::ScalarImage& target, const spectral::CauchyNavierOperator& op,
                            const EnergyConfig& cfg);
/// Dispatches on cfg.parameterization.
EnergyTerms energy(const grid::VectorField& v, const grid::ScalarImage& source, const grid::ScalarImage& target,
                   const spectral::CauchyNavierOperator& op, const EnergyConfig& cfg);

/// Mean squared difference over nodes.
double mse(const grid::ScalarImage& a, const grid::ScalarImage& b);
/// ||Iw - I1||^2 / ||I0 - I1||^2; UndefinedMetric if I0 == I1.
double mse_rel(const grid::ScalarImage& source, const grid::ScalarImage& target, const grid::ScalarImage& warped);

/// Half-spectrum multipliers of the smoothing P used where velocities are
/// produced by per-coordinate updates: K^1/2 for stationary fields (whitens
/// the regulariser), K for initial velocities (the input is a momentum).
std::shared_ptr<const std::vector<double>> velocity_smoother(const spectral::CauchyNavierOperator& op,
                                                             Parameterization parameterization);

template <typename T>
struct TapeEnergy {
    ad::Tensor<T> regularizer;   // [B]
    ad::Tensor<T> image;         // [B]
    ad::Tensor<T> total;         // [B]
    ad::Tensor<T> displacement;  // [B, d, grid...] of (phi_1^v)^-1
    ad::Tensor<T> warped;        // [B, 1, grid...]
};

/// Batched, differentiable energy of velocities v [B, d, grid...] for
/// images [B, 1, grid...].
template <typename T>
TapeEnergy<T> energy_layer(ad::Tape<T>& tape, const ad::Tensor<T>& v, const ad::Tensor<T>& source,
                           const ad::Tensor<T>& target, const ad::MetricMultipliers& metric,
                           const EnergyConfig& cfg);

}  // namespace lddmm::energy
