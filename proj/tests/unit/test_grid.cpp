#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fields.hpp"
#include "lddmm/error.hpp"
#include "lddmm/grid.hpp"

using namespace lddmm;
using grid::GridSpec;
using grid::Point;

namespace {

// Independent bilinear oracle: clamp, then lerp along the last axis on two
// rows and lerp the results along the first axis.
double nested_lerp_2d(const grid::ScalarImage& img, const Point& p) {
    const auto& g = img.grid;
    auto axis = [&](std::size_t a, double& t) {
        const double n = static_cast<double>(g.extent(a));
        double c = p[a] * n;
        if (c < 0) c = 0;
        if (c > n - 1) c = n - 1;
        std::size_t i = static_cast<std::size_t>(std::floor(c));
        if (i == g.extent(a) - 1) i -= 1;
        t = c - static_cast<double>(i);
        return i;
    };
    double t0 = 0, t1 = 0;
    const std::size_t i0 = axis(0, t0), i1 = axis(1, t1);
    auto v = [&](std::size_t a, std::size_t b) { return img.values[a * g.extent(1) + b]; };
    const double lo = v(i0, i1) + t1 * (v(i0, i1 + 1) - v(i0, i1));
    const double hi = v(i0 + 1, i1) + t1 * (v(i0 + 1, i1 + 1) - v(i0 + 1, i1));
    return lo + t0 * (hi - lo);
}

Point random_point(std::mt19937_64& rng, std::size_t d, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Point p{};
    for (std::size_t a = 0; a < d; ++a) p[a] = u(rng);
    return p;
}

}  // namespace

TEST_CASE("GridSpec validates its extents") {
    CHECK_THROWS_AS(GridSpec({3, 8}), InvalidParameter);
    CHECK_THROWS_AS(GridSpec({8}), InvalidParameter);
    CHECK_THROWS_AS(GridSpec({8, 8, 8, 8}), InvalidParameter);
    const GridSpec g({8, 16});
    CHECK(g.node_count() == 128);
    CHECK(g.spacing(1) == doctest::Approx(1.0 / 16));
    CHECK(g.cell_volume() == doctest::Approx(1.0 / 128));
}

TEST_CASE("interpolate reproduces node values exactly") {
    std::mt19937_64 rng(1);
    for (auto ext : {std::vector<std::size_t>{9, 7}, std::vector<std::size_t>{5, 6, 7}}) {
        const GridSpec g(ext);
        auto img = testing::smooth_image(g, rng);
        std::vector<Point> nodes;
        for (std::size_t n = 0; n < g.node_count(); ++n) nodes.push_back(g.node_position(n));
        const auto s = grid::interpolate(img, nodes);
        for (std::size_t n = 0; n < g.node_count(); ++n) CHECK(s[n] == img.values[n]);
    }
}

TEST_CASE("interpolate of a linear ramp at a midpoint is the mean") {
    const GridSpec g({16, 16});
    grid::ScalarImage img(g);
    for (std::size_t n = 0; n < g.node_count(); ++n) img.values[n] = 3.0 * g.unravel(n)[1] + 1.0;
    const Point mid{2.0 / 16, 4.5 / 16, 0};
    const auto s = grid::interpolate(img, std::span<const Point>(&mid, 1));
    CHECK(s[0] == doctest::Approx((img.values[2 * 16 + 4] + img.values[2 * 16 + 5]) / 2).epsilon(1e-12));
}

TEST_CASE("interpolate matches the nested-lerp oracle, including clamped points") {
    std::mt19937_64 rng(2);
    const GridSpec g({32, 24});
    const auto img = testing::smooth_image(g, rng);
    std::vector<Point> pts;
    for (int i = 0; i < 100; ++i) pts.push_back(random_point(rng, 2, -0.1, 1.1));
    const auto s = grid::interpolate(img, pts);
    for (int i = 0; i < 100; ++i) CHECK(std::abs(s[i] - nested_lerp_2d(img, pts[i])) < 1e-6);
}

TEST_CASE("interpolate rejects non-finite coordinates") {
    const GridSpec g({8, 8});
    const grid::ScalarImage img(g, 1.0);
    const Point bad{NAN, 0.2, 0};
    CHECK_THROWS_AS(grid::interpolate(img, std::span<const Point>(&bad, 1)), InvalidInput);
}

TEST_CASE("warp_image") {
    std::mt19937_64 rng(3);
    const GridSpec g({32, 32});
    const auto img = testing::smooth_image(g, rng);

    SUBCASE("zero displacement is the identity") {
        const auto w = grid::warp_image(img, grid::DisplacementField::identity(g));
        CHECK(w.values == img.values);
    }
    SUBCASE("whole-step constant displacement shifts indices") {
        const int k0 = 2, k1 = -3;
        const double c[2] = {k0 / 32.0, k1 / 32.0};
        const grid::DisplacementField u(grid::VectorField::constant(g, c));
        const auto w = grid::warp_image(img, u);
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            const auto idx = g.unravel(n);
            const long i = static_cast<long>(idx[0]) + k0, j = static_cast<long>(idx[1]) + k1;
            if (i < 0 || i >= 32 || j < 0 || j >= 32) continue;
            CHECK(w.values[n] == doctest::Approx(img.values[i * 32 + j]).epsilon(1e-12));
        }
    }
    SUBCASE("warp followed by the fixed-point inverse warp recovers the image") {
        const auto u = grid::DisplacementField(testing::smooth_field(g, rng, 0.02, 1));
        // w(y) = -u(y + w(y)) by fixed-point iteration
        grid::DisplacementField w(g);
        for (int it = 0; it < 50; ++it) {
            std::vector<Point> pts(g.node_count());
            for (std::size_t n = 0; n < g.node_count(); ++n) {
                pts[n] = g.node_position(n);
                for (std::size_t a = 0; a < 2; ++a) pts[n][a] += w.at(n, a);
            }
            const auto s = grid::interpolate(u, pts);
            for (std::size_t i = 0; i < s.size(); ++i) w.values[i] = -s[i];
        }
        const auto back = grid::warp_image(grid::warp_image(img, u), w);
        double mse = 0.0;
        for (std::size_t n = 0; n < g.node_count(); ++n) mse += std::pow(back.values[n] - img.values[n], 2);
        mse /= static_cast<double>(g.node_count());
        CHECK(mse < 1e-3);
    }
    SUBCASE("grid mismatch is a shape error") {
        CHECK_THROWS_AS(grid::warp_image(img, grid::DisplacementField::identity(GridSpec({16, 32}))), ShapeError);
    }
}

TEST_CASE("compose") {
    std::mt19937_64 rng(4);
    const GridSpec g({24, 24});
    const grid::DisplacementField f(testing::smooth_field(g, rng, 0.03));
    const auto id = grid::DisplacementField::identity(g);

    SUBCASE("identity is a two-sided unit") {
        CHECK(grid::sup_distance(grid::compose(id, f), f) == 0.0);
        CHECK(grid::sup_distance(grid::compose(f, id), f) < 1e-15);
    }
    SUBCASE("constant displacements add") {
        const double a[2] = {0.05, -0.02}, b[2] = {-0.01, 0.04}, c[2] = {0.03, 0.01};
        const grid::DisplacementField A(grid::VectorField::constant(g, a)), B(grid::VectorField::constant(g, b)),
            C(grid::VectorField::constant(g, c));
        const auto ab = grid::compose(A, B);
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            CHECK(ab.at(n, 0) == doctest::Approx(0.04).epsilon(1e-12));
            CHECK(ab.at(n, 1) == doctest::Approx(0.02).epsilon(1e-12));
        }
        // associativity on constants
        CHECK(grid::sup_distance(grid::compose(grid::compose(A, B), C), grid::compose(A, grid::compose(B, C))) < 1e-15);
    }
    SUBCASE("random fields match a pointwise oracle") {
        const grid::DisplacementField outer(testing::smooth_field(g, rng, 0.03));
        const auto res = grid::compose(outer, f);
        std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
        for (int i = 0; i < 50; ++i) {
            const std::size_t n = pick(rng);
            Point p = g.node_position(n);
            for (std::size_t a = 0; a < 2; ++a) p[a] += f.at(n, a);
            for (std::size_t a = 0; a < 2; ++a) {
                grid::ScalarImage comp(g);
                for (std::size_t m = 0; m < g.node_count(); ++m) comp.values[m] = outer.at(m, a);
                const double expected = f.at(n, a) + nested_lerp_2d(comp, p);
                CHECK(std::abs(res.at(n, a) - expected) < 1e-6);
            }
        }
    }
}

TEST_CASE("finite-difference operators") {
    const GridSpec g({64, 64});
    SUBCASE("constant fields have zero derivatives") {
        const double c[2] = {0.3, -1.2};
        const auto v = grid::VectorField::constant(g, c);
        CHECK(grid::max_abs(grid::gradient(grid::ScalarImage(g, 2.5))) == 0.0);
        for (double x : grid::divergence(v).values) CHECK(x == 0.0);
        for (double x : grid::jacobian(v).values) CHECK(x == 0.0);
    }
    SUBCASE("jacobian of a linear field is its matrix") {
        const double A[2][2] = {{0.5, -1.5}, {2.0, 0.25}};
        grid::VectorField v(g);
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            const auto p = g.node_position(n);
            for (std::size_t i = 0; i < 2; ++i) v.at(n, i) = A[i][0] * p[0] + A[i][1] * p[1];
        }
        const auto J = grid::jacobian(v);
        for (std::size_t n = 0; n < g.node_count(); ++n)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j) CHECK(J.at(n, i, j) == doctest::Approx(A[i][j]).epsilon(1e-9));
        const auto div = grid::divergence(v);
        CHECK(div.values[g.node_count() / 2 + 5] == doctest::Approx(0.75).epsilon(1e-9));
    }
    SUBCASE("derivative of sin(2 pi x1) at x1 = 0") {
        grid::ScalarImage f(g);
        for (std::size_t n = 0; n < g.node_count(); ++n) f.values[n] = std::sin(2 * std::numbers::pi * g.node_position(n)[0]);
        const auto grad = grid::gradient(f);
        // one-sided (sin(2 pi h) - 0) / h; by odd symmetry equal to the central value
        const double expected = std::sin(2 * std::numbers::pi / 64) / (1.0 / 64);
        CHECK(expected == doctest::Approx(6.27309).epsilon(1e-5));
        CHECK(grad.at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(grad.at(0, 1) == 0.0);
        // interior node i = 8: central difference
        const double central = (std::sin(2 * std::numbers::pi * 9 / 64) - std::sin(2 * std::numbers::pi * 7 / 64)) * 32;
        CHECK(grad.at(8 * 64 + 3, 0) == doctest::Approx(central).epsilon(1e-12));
    }
}

TEST_CASE("jacobian_determinant") {
    SUBCASE("identity gives one") {
        const GridSpec g({16, 16});
        for (double x : grid::jacobian_determinant(grid::DisplacementField::identity(g)).values) CHECK(x == 1.0);
    }
    SUBCASE("u = 0.1 x gives 1.1^d") {
        for (auto ext : {std::vector<std::size_t>{16, 16}, std::vector<std::size_t>{8, 8, 8}}) {
            const GridSpec g(ext);
            grid::DisplacementField u(g);
            for (std::size_t n = 0; n < g.node_count(); ++n) {
                const auto p = g.node_position(n);
                for (std::size_t a = 0; a < g.dims(); ++a) u.at(n, a) = 0.1 * p[a];
            }
            const auto det = grid::jacobian_determinant(u);
            const double expected = std::pow(1.1, static_cast<double>(g.dims()));
            for (std::size_t n = 0; n < g.node_count(); ++n)
                if (g.is_interior(n)) CHECK(det.values[n] == doctest::Approx(expected).epsilon(1e-9));
        }
    }
    SUBCASE("small smooth fields are diffeomorphic") {
        std::mt19937_64 rng(5);
        const GridSpec g({32, 32});
        for (int trial = 0; trial < 5; ++trial) {
            const grid::DisplacementField u(testing::smooth_field(g, rng, 0.02));
            for (double x : grid::jacobian_determinant(u).values) CHECK(x > 0.0);
        }
    }
}

TEST_CASE("trilinear interpolation in 3D matches separable evaluation of a trilinear function") {
    const GridSpec g({6, 7, 8});
    grid::ScalarImage img(g);
    auto f = [](const Point& p) { return 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + 3.0 * p[0] * p[1] * p[2]; };
    for (std::size_t n = 0; n < g.node_count(); ++n) img.values[n] = f(g.node_position(n));
    std::mt19937_64 rng(6);
    std::vector<Point> pts;
    for (int i = 0; i < 50; ++i) {
        Point p = random_point(rng, 3);
        for (std::size_t a = 0; a < 3; ++a) p[a] *= static_cast<double>(g.extent(a) - 1) / g.extent(a);
        pts.push_back(p);
    }
    const auto s = grid::interpolate(img, pts);
    // multilinear interpolation is exact on functions linear in each variable
    for (int i = 0; i < 50; ++i) CHECK(s[i] == doctest::Approx(f(pts[i])).epsilon(1e-12));
}
