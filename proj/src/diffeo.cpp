#include "lddmm/diffeo.hpp"

#include <cmath>
#include <string>

#include "lddmm/error.hpp"

namespace lddmm::diffeo {

using grid::DisplacementField;
using grid::VectorField;

grid::DisplacementField integrate_transport(const VelocityFlow& flow) {
    if (flow.steps.size() < 2) throw InvalidParameter("integrate_transport: flow needs T >= 1");
    const auto& g = flow.steps.front().grid;
    for (const auto& v : flow.steps) grid::require_same_grid(g, v.grid, "integrate_transport");

    const std::size_t T = flow.time_steps();
    const double dt = 1.0 / static_cast<double>(T);
    const std::size_t d = g.dims();
    DisplacementField u(g);
    std::vector<grid::Point> points(g.node_count());
    for (std::size_t j = 0; j < T; ++j) {
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            points[n] = g.node_position(n);
            for (std::size_t a = 0; a < d; ++a) points[n][a] += u.at(n, a);
        }
        const auto vs = grid::interpolate(flow.steps[j], points);
        for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] -= dt * vs[i];
    }
    return u;
}

grid::DisplacementField exp_svf(const VectorField& v, std::size_t squarings) {
    if (squarings < 1) throw InvalidParameter("exp_svf: squarings must be >= 1");
    DisplacementField u(grid::scaled(v, std::ldexp(1.0, -static_cast<int>(squarings))));
    for (std::size_t k = 0; k < squarings; ++k) u = grid::compose(u, u);
    return u;
}

grid::VectorField epdiff_rhs(const VectorField& v, const spectral::CauchyNavierOperator& op) {
    const auto& g = v.grid;
    const std::size_t d = g.dims();
    const VectorField m = op.apply_L(v);
    const grid::MatrixField dv = grid::jacobian(v);
    const grid::MatrixField dm = grid::jacobian(m);
    const grid::ScalarImage div = grid::divergence(v);

    VectorField rhs(g);
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        for (std::size_t i = 0; i < d; ++i) {
            double acc = m.at(n, i) * div.values[n];
            for (std::size_t j = 0; j < d; ++j) {
                acc += dv.at(n, j, i) * m.at(n, j);  // (Dv)^T Lv
                acc += dm.at(n, i, j) * v.at(n, j);  // D(Lv) v
            }
            rhs.at(n, i) = acc;
        }
    }
    return op.apply_K(rhs);
}

VelocityFlow shoot_epdiff(const VectorField& v0, const spectral::CauchyNavierOperator& op,
                          std::size_t time_steps) {
    if (time_steps < 1) throw InvalidParameter("shoot_epdiff: time steps must be >= 1");
    grid::require_same_grid(op.grid(), v0.grid, "shoot_epdiff");
    const double dt = 1.0 / static_cast<double>(time_steps);
    VelocityFlow flow;
    flow.steps.reserve(time_steps + 1);
    flow.steps.push_back(v0);
    for (std::size_t j = 0; j < time_steps; ++j) {
        const VectorField& v = flow.steps.back();
        VectorField rhs = epdiff_rhs(v, op);
        VectorField next = v;
        for (std::size_t i = 0; i < next.values.size(); ++i) {
            next.values[i] -= dt * rhs.values[i];
            if (!std::isfinite(next.values[i]))
                throw DivergenceError("shoot_epdiff: non-finite velocity at step " + std::to_string(j + 1),
                                      static_cast<std::ptrdiff_t>(j + 1));
        }
        flow.steps.push_back(std::move(next));
    }
    return flow;
}

grid::DisplacementField inverse_map_stationary(const VectorField& v, const IntegrationConfig& cfg) {
    if (cfg.exponential == Exponential::scaling_squaring) return exp_svf(grid::scaled(v, -1.0), cfg.squarings);
    if (cfg.time_steps < 1) throw InvalidParameter("inverse_map_stationary: time steps must be >= 1");
    VelocityFlow flow{std::vector<VectorField>(cfg.time_steps + 1, v)};
    return integrate_transport(flow);
}

grid::DisplacementField inverse_map_shooting(const VectorField& v0, const spectral::CauchyNavierOperator& op,
                                             const IntegrationConfig& cfg) {
    return integrate_transport(shoot_epdiff(v0, op, cfg.time_steps));
}

}  // namespace lddmm::diffeo
