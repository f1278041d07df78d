#pragma once

// Integrators turning velocity fields into diffeomorphisms:
//   - forward-Euler solution of the transport equation for the inverse map,
//   - scaling-and-squaring group exponential of a stationary field,
//   - forward-Euler geodesic shooting with the EPDiff equation.
// These are plain (tape-free) double-precision routines; the differentiable
// counterparts live in layers.hpp.

#include <cstddef>
#include <vector>

#include "lddmm/grid.hpp"
#include "lddmm/spectral.hpp"

namespace lddmm::diffeo {

/// v_{t_j} for t_j = j / T, j = 0..T.
struct VelocityFlow {
    std::vector<grid::VectorField> steps;

    std::size_t time_steps() const noexcept { return steps.empty() ? 0 : steps.size() - 1; }
};

/// How a stationary field is exponentiated.
enum class Exponential {
    scaling_squaring,
    euler,  // T Euler steps of the transport equation with v_t = v
};

struct IntegrationConfig {
    std::size_t time_steps = 10;
    std::size_t squarings = 6;
    Exponential exponential = Exponential::scaling_squaring;
};

/// u_0 = 0, u_{j+1}(x) = u_j(x) - v_{t_j}(x + u_j(x)) / T; returns u_T,
/// the displacement of (phi_1)^-1.
grid::DisplacementField integrate_transport(const VelocityFlow& flow);

/// Group exponential by `squarings` self-compositions of v / 2^squarings.
grid::DisplacementField exp_svf(const grid::VectorField& v, std::size_t squarings);

/// Right-hand side K[(Dv)^T Lv + D(Lv) v + Lv div v] of the EPDiff equation.
grid::VectorField epdiff_rhs(const grid::VectorField& v, const spectral::CauchyNavierOperator& op);

/// Forward-Euler EPDiff shooting; returns {v_0, .., v_T}.  Throws
/// DivergenceError naming the step at which a non-finite value appears.
VelocityFlow shoot_epdiff(const grid::VectorField& v0, const spectral::CauchyNavierOperator& op,
                          std::size_t time_steps);

/// (phi_1^v)^-1 for a stationary field: exp(-v).
grid::DisplacementField inverse_map_stationary(const grid::VectorField& v, const IntegrationConfig& cfg);

/// (phi_1^v)^-1 for the geodesic flow shot from v0.
grid::DisplacementField inverse_map_shooting(const grid::VectorField& v0,
                                             const spectral::CauchyNavierOperator& op,
                                             const IntegrationConfig& cfg);

}  // namespace lddmm::diffeo
