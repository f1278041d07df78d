#include "lddmm/layers.hpp"

#include <cmath>
#include <string>

#include "detail.hpp"

namespace lddmm::ad {

using detail::require;
using detail::shape_str;

MetricMultipliers MetricMultipliers::from(const spectral::CauchyNavierOperator& op) {
    return {std::make_shared<const std::vector<double>>(op.half_multipliers()),
            std::make_shared<const std::vector<double>>(op.half_inverse_multipliers())};
}

namespace {

template <typename T>
void require_field(const Tensor<T>& v, const char* what) {
    require(v.rank() >= 4 && v.rank() <= 5 && v.dim(1) == v.rank() - 2,
            std::string(what) + ": expected a [B, d, grid...] field, got " + shape_str(v.shape()));
}

template <typename T>
Tensor<T> displaced_grid(Tape<T>& tape, const Tensor<T>& u) {
    return add(tape, u, identity_grid<T>(u.dim(0), detail::spatial_of(u.shape())));
}

grid::GridSpec grid_of(const Tensor<auto>& t) { return grid::GridSpec(detail::spatial_of(t.shape())); }

}  // namespace

template <typename T>
Tensor<T> field_tensor(std::span<const grid::VectorField> fields, bool requires_grad) {
    require(!fields.empty(), "field_tensor: empty batch");
    const auto& g = fields[0].grid;
    const std::size_t d = g.dims(), n = g.node_count();
    Shape shape{fields.size(), d};
    shape.insert(shape.end(), g.extents().begin(), g.extents().end());
    std::vector<T> out(element_count(shape));
    for (std::size_t b = 0; b < fields.size(); ++b) {
        grid::require_same_grid(g, fields[b].grid, "field_tensor");
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t i = 0; i < n; ++i) out[(b * d + c) * n + i] = static_cast<T>(fields[b].values[i * d + c]);
    }
    return Tensor<T>(std::move(shape), std::move(out), requires_grad);
}

template <typename T>
Tensor<T> image_tensor(std::span<const grid::ScalarImage> images, bool requires_grad) {
    require(!images.empty(), "image_tensor: empty batch");
    const auto& g = images[0].grid;
    const std::size_t n = g.node_count();
    Shape shape{images.size(), 1};
    shape.insert(shape.end(), g.extents().begin(), g.extents().end());
    std::vector<T> out(element_count(shape));
    for (std::size_t b = 0; b < images.size(); ++b) {
        grid::require_same_grid(g, images[b].grid, "image_tensor");
        for (std::size_t i = 0; i < n; ++i) out[b * n + i] = static_cast<T>(images[b].values[i]);
    }
    return Tensor<T>(std::move(shape), std::move(out), requires_grad);
}

template <typename T>
grid::VectorField to_field(const Tensor<T>& t, std::size_t sample) {
    require_field(t, "to_field");
    require(sample < t.dim(0), "to_field: sample index out of range");
    const grid::GridSpec g = grid_of(t);
    const std::size_t d = g.dims(), n = g.node_count();
    grid::VectorField out(g);
    const auto v = t.values();
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < n; ++i) out.values[i * d + c] = static_cast<double>(v[(sample * d + c) * n + i]);
    return out;
}

template <typename T>
grid::ScalarImage to_image(const Tensor<T>& t, std::size_t sample, std::size_t channel) {
    require(t.rank() >= 4 && t.rank() <= 5, "to_image: expected [B, C, grid...], got " + shape_str(t.shape()));
    require(sample < t.dim(0) && channel < t.dim(1), "to_image: index out of range");
    const grid::GridSpec g = grid_of(t);
    const std::size_t n = g.node_count();
    grid::ScalarImage out(g);
    const auto v = t.values();
    const std::size_t base = (sample * t.dim(1) + channel) * n;
    for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<double>(v[base + i]);
    return out;
}

template <typename T>
Tensor<T> warp(Tape<T>& tape, const Tensor<T>& image, const Tensor<T>& displacement) {
    require_field(displacement, "warp");
    require(image.rank() == displacement.rank() && image.dim(0) == displacement.dim(0) &&
                detail::spatial_of(image.shape()) == detail::spatial_of(displacement.shape()),
            "warp: image " + shape_str(image.shape()) + " vs displacement " + shape_str(displacement.shape()));
    return grid_sample(tape, image, displaced_grid(tape, displacement));
}

template <typename T>
Tensor<T> compose(Tape<T>& tape, const Tensor<T>& outer, const Tensor<T>& inner) {
    require_field(inner, "compose");
    require(outer.shape() == inner.shape(), "compose: " + shape_str(outer.shape()) + " vs " + shape_str(inner.shape()));
    return add(tape, inner, grid_sample(tape, outer, displaced_grid(tape, inner)));
}

template <typename T>
Tensor<T> exp_svf_layer(Tape<T>& tape, const Tensor<T>& v, std::size_t squarings) {
    require_field(v, "exp_svf_layer");
    if (squarings < 1) throw InvalidParameter("exp_svf_layer: squarings must be >= 1");
    Tensor<T> u = scalar_mul(tape, v, std::ldexp(1.0, -static_cast<int>(squarings)));
    for (std::size_t k = 0; k < squarings; ++k) u = compose(tape, u, u);
    return u;
}

template <typename T>
Tensor<T> euler_transport_layer(Tape<T>& tape, std::span<const Tensor<T>> flow) {
    require(flow.size() >= 2, "euler_transport_layer: flow needs T >= 1");
    for (const auto& v : flow) {
        require_field(v, "euler_transport_layer");
        require(v.shape() == flow[0].shape(), "euler_transport_layer: flow fields differ in shape");
    }
    const std::size_t steps = flow.size() - 1;
    const double dt = 1.0 / static_cast<double>(steps);
    Tensor<T> u = Tensor<T>::zeros(flow[0].shape());
    for (std::size_t j = 0; j < steps; ++j) {
        Tensor<T> vs = grid_sample(tape, flow[j], displaced_grid(tape, u));
        u = sub(tape, u, scalar_mul(tape, vs, dt));
    }
    return u;
}

template <typename T>
Tensor<T> epdiff_rhs_layer(Tape<T>& tape, const Tensor<T>& v, const MetricMultipliers& mm) {
    require_field(v, "epdiff_rhs_layer");
    const std::size_t d = v.dim(1);
    const Tensor<T> m = spectral_filter(tape, v, mm.L);

    std::vector<Tensor<T>> dv(d), dm(d);
    for (std::size_t a = 0; a < d; ++a) {
        dv[a] = spatial_diff(tape, v, a);  // channel j: d v_j / d x_a
        dm[a] = spatial_diff(tape, m, a);  // channel i: d m_i / d x_a
    }
    Tensor<T> div = slice_channels(tape, dv[0], 0, 1);
    for (std::size_t a = 1; a < d; ++a) div = add(tape, div, slice_channels(tape, dv[a], a, a + 1));

    // (Dv)^T m: component i is sum_j d v_j / d x_i * m_j
    std::vector<Tensor<T>> t1(d);
    for (std::size_t i = 0; i < d; ++i) t1[i] = channel_sum(tape, mul(tape, dv[i], m));
    Tensor<T> rhs = concat(tape, std::span<const Tensor<T>>(t1));
    // D(m) v: component i is sum_j d m_i / d x_j * v_j
    for (std::size_t j = 0; j < d; ++j) rhs = add(tape, rhs, mul(tape, dm[j], slice_channels(tape, v, j, j + 1)));
    rhs = add(tape, rhs, mul(tape, m, div));
    return spectral_filter(tape, rhs, mm.K);
}

template <typename T>
std::vector<Tensor<T>> epdiff_shoot_layer(Tape<T>& tape, const Tensor<T>& v0, const MetricMultipliers& mm,
                                          std::size_t time_steps) {
    require_field(v0, "epdiff_shoot_layer");
    if (time_steps < 1) throw InvalidParameter("epdiff_shoot_layer: time steps must be >= 1");
    const double dt = 1.0 / static_cast<double>(time_steps);
    std::vector<Tensor<T>> flow{v0};
    for (std::size_t j = 0; j < time_steps; ++j) {
        Tensor<T> next = sub(tape, flow.back(), scalar_mul(tape, epdiff_rhs_layer(tape, flow.back(), mm), dt));
        for (T x : next.values())
            if (!std::isfinite(x))
                throw DivergenceError("epdiff_shoot_layer: non-finite velocity at step " + std::to_string(j + 1),
                                      static_cast<std::ptrdiff_t>(j + 1));
        flow.push_back(std::move(next));
    }
    return flow;
}

template <typename T>
Tensor<T> stationary_inverse_layer(Tape<T>& tape, const Tensor<T>& v, const diffeo::IntegrationConfig& cfg) {
    const Tensor<T> neg = scalar_mul(tape, v, -1.0);
    if (cfg.exponential == diffeo::Exponential::scaling_squaring) return exp_svf_layer(tape, neg, cfg.squarings);
    if (cfg.time_steps < 1) throw InvalidParameter("stationary_inverse_layer: time steps must be >= 1");
    std::vector<Tensor<T>> flow(cfg.time_steps + 1, v);
    return euler_transport_layer(tape, std::span<const Tensor<T>>(flow));
}

template <typename T>
Tensor<T> shooting_inverse_layer(Tape<T>& tape, const Tensor<T>& v0, const MetricMultipliers& mm,
                                 const diffeo::IntegrationConfig& cfg) {
    const auto flow = epdiff_shoot_layer(tape, v0, mm, cfg.time_steps);
    return euler_transport_layer(tape, std::span<const Tensor<T>>(flow));
}

#define LDDMM_INSTANTIATE(T)                                                                                   \
    template Tensor<T> field_tensor(std::span<const grid::VectorField>, bool);                                 \
    template Tensor<T> image_tensor(std::span<const grid::ScalarImage>, bool);                                 \
    template grid::VectorField to_field(const Tensor<T>&, std::size_t);                                        \
    template grid::ScalarImage to_image(const Tensor<T>&, std::size_t, std::size_t);                           \
    template Tensor<T> warp(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> compose(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> exp_svf_layer(Tape<T>&, const Tensor<T>&, std::size_t);                                 \
    template Tensor<T> euler_transport_layer(Tape<T>&, std::span<const Tensor<T>>);                            \
    template Tensor<T> epdiff_rhs_layer(Tape<T>&, const Tensor<T>&, const MetricMultipliers&);                 \
    template std::vector<Tensor<T>> epdiff_shoot_layer(Tape<T>&, const Tensor<T>&, const MetricMultipliers&,   \
                                                       std::size_t);                                           \
    template Tensor<T> stationary_inverse_layer(Tape<T>&, const Tensor<T>&, const diffeo::IntegrationConfig&); \
    template Tensor<T> shooting_inverse_layer(Tape<T>&, const Tensor<T>&, const MetricMultipliers&,            \
                                              const diffeo::IntegrationConfig&);

LDDMM_INSTANTIATE(float)
LDDMM_INSTANTIATE(double)

}  // namespace lddmm::ad
