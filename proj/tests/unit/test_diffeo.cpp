#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fields.hpp"
#include "lddmm/diffeo.hpp"
#include "lddmm/error.hpp"

using namespace lddmm;
using grid::GridSpec;
using grid::VectorField;

namespace {

// v(t, x) = a(x) cos(pi t) + t b(x), sampled at t_j = j / T.
diffeo::VelocityFlow sampled_flow(const VectorField& a, const VectorField& b, std::size_t T) {
    diffeo::VelocityFlow flow;
    for (std::size_t j = 0; j <= T; ++j) {
        const double t = static_cast<double>(j) / static_cast<double>(T);
        flow.steps.push_back(grid::sum(grid::scaled(a, std::cos(std::numbers::pi * t)), grid::scaled(b, t)));
    }
    return flow;
}

VectorField gaussian_bumps(const GridSpec& g, double amplitude, double width) {
    VectorField v(g);
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        const auto p = g.node_position(n);
        const double r2 = std::pow(p[0] - 0.5, 2) + std::pow(p[1] - 0.45, 2);
        const double e = std::exp(-r2 / (2 * width * width));
        v.at(n, 0) = amplitude * e;
        v.at(n, 1) = -0.5 * amplitude * e * (p[0] - 0.5) / width;
    }
    return v;
}

std::array<double, 2> field_mean(const VectorField& v) {
    std::array<double, 2> m{};
    for (std::size_t n = 0; n < v.grid.node_count(); ++n)
        for (std::size_t a = 0; a < 2; ++a) m[a] += v.at(n, a);
    for (auto& x : m) x /= static_cast<double>(v.grid.node_count());
    return m;
}

}  // namespace

TEST_CASE("integrate_transport") {
    const GridSpec g({32, 32});
    std::mt19937_64 rng(21);

    SUBCASE("zero flow gives the identity") {
        diffeo::VelocityFlow flow{std::vector<VectorField>(11, VectorField(g))};
        CHECK(grid::max_abs(diffeo::integrate_transport(flow)) == 0.0);
    }
    SUBCASE("constant flow gives the exact translation -c") {
        const double c[2] = {0.031, -0.017};
        diffeo::VelocityFlow flow{std::vector<VectorField>(11, VectorField::constant(g, c))};
        const auto u = diffeo::integrate_transport(flow);
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            CHECK(std::abs(u.at(n, 0) + c[0]) < 1e-12);
            CHECK(std::abs(u.at(n, 1) + c[1]) < 1e-12);
        }
    }
    SUBCASE("Euler self-convergence is first order") {
        const auto a = testing::smooth_field(g, rng, 0.05, 1), b = testing::smooth_field(g, rng, 0.05, 1);
        auto solve = [&](std::size_t T) { return diffeo::integrate_transport(sampled_flow(a, b, T)); };
        const auto u10 = solve(10), u20 = solve(20), u40 = solve(40), u100 = solve(100), u200 = solve(200);
        const double ratio = grid::sup_distance(u10, u20) / grid::sup_distance(u20, u40);
        CHECK(ratio >= 1.5);
        CHECK(ratio <= 2.5);
        // first order predicts e(10,100) / e(100,200) = (1/10 - 1/100) / (1/100 - 1/200) = 18
        const double far = grid::sup_distance(u10, u100) / grid::sup_distance(u100, u200);
        CHECK(far >= 18.0 * 0.75);
        CHECK(far <= 18.0 * 1.25);
    }
    SUBCASE("mismatched grids and empty flows are rejected") {
        diffeo::VelocityFlow flow{{VectorField(g), VectorField(GridSpec({16, 32}))}};
        CHECK_THROWS_AS(diffeo::integrate_transport(flow), ShapeError);
        CHECK_THROWS_AS(diffeo::integrate_transport(diffeo::VelocityFlow{}), InvalidParameter);
    }
}

TEST_CASE("exp_svf") {
    const GridSpec g({32, 32});
    std::mt19937_64 rng(22);

    SUBCASE("zero field gives the identity") { CHECK(grid::max_abs(diffeo::exp_svf(VectorField(g), 6)) == 0.0); }
    SUBCASE("constant fields exponentiate to themselves") {
        const double c[2] = {0.04, 0.09};
        for (std::size_t k : {1u, 6u, 10u}) {
            const auto u = diffeo::exp_svf(VectorField::constant(g, c), k);
            for (std::size_t n = 0; n < g.node_count(); ++n) {
                CHECK(std::abs(u.at(n, 0) - c[0]) < 1e-12);
                CHECK(std::abs(u.at(n, 1) - c[1]) < 1e-12);
            }
        }
    }
    SUBCASE("exp(v) o exp(-v) is close to the identity") {
        for (int t = 0; t < 5; ++t) {
            const auto v = testing::smooth_field(g, rng, 0.05, 1);
            const auto fwd = diffeo::exp_svf(v, 6), bwd = diffeo::exp_svf(grid::scaled(v, -1), 6);
            const auto id = grid::DisplacementField::identity(g);
            CHECK(grid::sup_distance_interior(grid::compose(fwd, bwd), id) <= 1e-3);
        }
    }
    SUBCASE("moderate fields stay diffeomorphic") {
        for (int t = 0; t < 5; ++t) {
            auto v = testing::smooth_field(g, rng, 1.0, 3);
            v = grid::scaled(v, 0.5 * g.min_spacing() / grid::max_abs(v));
            const auto det = grid::jacobian_determinant(diffeo::exp_svf(v, 6));
            for (std::size_t n = 0; n < g.node_count(); ++n)
                if (g.is_interior(n)) CHECK(det.values[n] > 0.0);
        }
    }
    SUBCASE("zero squarings is invalid") { CHECK_THROWS_AS(diffeo::exp_svf(VectorField(g), 0), InvalidParameter); }
}

TEST_CASE("shoot_epdiff") {
    const GridSpec g({32, 32});
    const auto op = spectral::CauchyNavierOperator::build(0.0025, 4, g);
    std::mt19937_64 rng(23);

    SUBCASE("zero initial velocity stays zero") {
        const auto flow = diffeo::shoot_epdiff(VectorField(g), op, 10);
        REQUIRE(flow.steps.size() == 11);
        for (const auto& v : flow.steps) CHECK(grid::max_abs(v) == 0.0);
    }
    SUBCASE("constant initial velocity is preserved and transports to a translation") {
        const double c[2] = {-0.02, 0.05};
        const auto v0 = VectorField::constant(g, c);
        const auto flow = diffeo::shoot_epdiff(v0, op, 10);
        for (const auto& v : flow.steps) CHECK(grid::sup_distance(v, v0) < 1e-12);
        const auto u = diffeo::integrate_transport(flow);
        CHECK(grid::sup_distance(u, grid::scaled(v0, -1)) < 1e-12);
    }
    SUBCASE("mean velocity is conserved away from the boundary") {
        const auto v0 = gaussian_bumps(g, 0.05, 0.08);
        const auto flow = diffeo::shoot_epdiff(v0, op, 10);
        const auto m0 = field_mean(v0), m1 = field_mean(flow.steps.back());
        CHECK(std::abs(m0[0] - m1[0]) < 1e-6);
        CHECK(std::abs(m0[1] - m1[1]) < 1e-6);
        CHECK(grid::sup_distance(flow.steps.back(), v0) > 1e-4);  // the flow did evolve
    }
    SUBCASE("Euler self-convergence is first order") {
        const auto v0 = testing::smooth_field(g, rng, 0.08, 1);
        auto end = [&](std::size_t T) { return diffeo::shoot_epdiff(v0, op, T).steps.back(); };
        const auto v10 = end(10), v20 = end(20), v40 = end(40), v100 = end(100), v200 = end(200);
        const double ratio = grid::sup_distance(v10, v20) / grid::sup_distance(v20, v40);
        CHECK(ratio >= 1.5);
        CHECK(ratio <= 2.5);
        const double far = grid::sup_distance(v10, v100) / grid::sup_distance(v100, v200);
        CHECK(far >= 18.0 * 0.75);
        CHECK(far <= 18.0 * 1.25);
    }
    SUBCASE("blow-up is reported with the step index") {
        const auto v0 = testing::smooth_field(g, rng, 1e6, 8);
        try {
            diffeo::shoot_epdiff(v0, op, 10);
            FAIL("expected divergence");
        } catch (const DivergenceError& e) {
            CHECK(e.step() >= 1);
            CHECK(e.step() <= 10);
        }
    }
}
