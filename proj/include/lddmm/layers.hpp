#pragma once

// Differentiable integration layers: the spatial transformer (warp), map
// composition, scaling-and-squaring, Euler transport and EPDiff shooting,
// each unrolled through the tape so gradients reach the velocity fields.
// Tensors are [B, d, grid...] for fields and [B, C, grid...] for images.

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "lddmm/autodiff.hpp"
#include "lddmm/diffeo.hpp"
#include "lddmm/spectral.hpp"

namespace lddmm::ad {

/// Half-spectrum multipliers of L and K shared across tape records.
struct MetricMultipliers {
    std::shared_ptr<const std::vector<double>> L;
    std::shared_ptr<const std::vector<double>> K;

    static MetricMultipliers from(const spectral::CauchyNavierOperator& op);
};

/// Batch conversions between grid containers (channel-last, double) and
/// [B, C, grid...] tensors.
template <typename T> Tensor<T> field_tensor(std::span<const grid::VectorField> fields, bool requires_grad = false);
template <typename T> Tensor<T> image_tensor(std::span<const grid::ScalarImage> images, bool requires_grad = false);
template <typename T> grid::VectorField to_field(const Tensor<T>& t, std::size_t sample);
template <typename T> grid::ScalarImage to_image(const Tensor<T>& t, std::size_t sample, std::size_t channel = 0);

/// image sampled at x + u(x).
template <typename T> Tensor<T> warp(Tape<T>& tape, const Tensor<T>& image, const Tensor<T>& displacement);

/// u_inner + u_outer o (id + u_inner).
template <typename T> Tensor<T> compose(Tape<T>& tape, const Tensor<T>& outer, const Tensor<T>& inner);

/// Displacement of exp(v) by scaling and squaring.
template <typename T> Tensor<T> exp_svf_layer(Tape<T>& tape, const Tensor<T>& v, std::size_t squarings);

/// Displacement of (phi_1)^-1 from T + 1 velocity samples by forward Euler.
template <typename T> Tensor<T> euler_transport_layer(Tape<T>& tape, std::span<const Tensor<T>> flow);

/// K[(Dv)^T Lv + D(Lv) v + Lv div v].
template <typename T> Tensor<T> epdiff_rhs_layer(Tape<T>& tape, const Tensor<T>& v, const MetricMultipliers& m);

/// {v_0, .., v_T} by forward-Euler EPDiff; throws DivergenceError on blow-up.
template <typename T>
std::vector<Tensor<T>> epdiff_shoot_layer(Tape<T>& tape, const Tensor<T>& v0, const MetricMultipliers& m,
                                          std::size_t time_steps);

/// (phi_1^v)^-1 of a stationary field, per `cfg.exponential`.
template <typename T>
Tensor<T> stationary_inverse_layer(Tape<T>& tape, const Tensor<T>& v, const diffeo::IntegrationConfig& cfg);

/// (phi_1^v)^-1 of the geodesic shot from v0.
template <typename T>
Tensor<T> shooting_inverse_layer(Tape<T>& tape, const Tensor<T>& v0, const MetricMultipliers& m,
                                 const diffeo::IntegrationConfig& cfg);

}  // namespace lddmm::ad
