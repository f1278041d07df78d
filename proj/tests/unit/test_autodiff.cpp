#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fields.hpp"
#include "gradcheck.hpp"
#include "lddmm/diffeo.hpp"
#include "lddmm/error.hpp"
#include "lddmm/layers.hpp"

using namespace lddmm;
using namespace lddmm::ad;
using testing::gradient_error;
using testing::project;
using testing::random_tensor;

namespace {

template <typename T>
using Inputs = std::vector<Tensor<T>>;

// Distinct values on a 0.01 lattice in random order, so max-pool windows
// never tie within a finite-difference step.
template <typename T>
Tensor<T> lattice_tensor(Shape shape, std::mt19937_64& rng) {
    std::vector<T> v(element_count(shape));
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(0.01 * static_cast<double>(order[i]) - 0.3);
    return Tensor<T>(std::move(shape), std::move(v), true);
}

// Unit-domain coordinates strictly inside the grid box, with fractional
// cell positions in [0.15, 0.85] so small steps never cross a cell edge.
template <typename T>
Tensor<T> interior_coords(std::size_t batch, const Shape& grid, const Shape& out, std::mt19937_64& rng) {
    const std::size_t d = grid.size();
    Shape shape{batch, d};
    shape.insert(shape.end(), out.begin(), out.end());
    const std::size_t n = element_count(out);
    std::vector<T> v(element_count(shape));
    std::uniform_real_distribution<double> frac(0.15, 0.85);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t a = 0; a < d; ++a) {
            std::uniform_int_distribution<std::size_t> cell(0, grid[a] - 2);
            for (std::size_t i = 0; i < n; ++i)
                v[(b * d + a) * n + i] =
                    static_cast<T>((static_cast<double>(cell(rng)) + frac(rng)) / static_cast<double>(grid[a]));
        }
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
void check_grad(const Inputs<T>& in, const testing::LossFn<T>& f) {
    const auto s = testing::fd_settings<T>();
    CHECK(gradient_error(in, f, s.eps) <= s.tol);
}

}  // namespace

TEST_CASE_TEMPLATE("elementwise primitives match finite differences", T, float, double) {
    std::mt19937_64 rng(31);
    const Shape sh{2, 3, 4, 5};
    auto a = random_tensor<T>(sh, rng), b = random_tensor<T>(sh, rng);
    auto s = random_tensor<T>({1}, rng);
    auto bc = random_tensor<T>({2, 1, 4, 5}, rng);

    check_grad<T>({a, b}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, add(t, x[0], x[1])); });
    check_grad<T>({a, b}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, sub(t, x[0], x[1])); });
    check_grad<T>({a, s}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, add(t, x[0], x[1])); });
    check_grad<T>({a, s}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, sub(t, x[0], x[1])); });
    check_grad<T>({a, b}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, mul(t, x[0], x[1])); });
    check_grad<T>({a, bc}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, mul(t, x[0], x[1])); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, scalar_mul(t, x[0], -1.7)); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, add_scalar(t, x[0], 0.3)); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, sigmoid(t, scalar_mul(t, x[0], 3.0))); });

    auto away = testing::signed_away_from_zero<T>(sh, rng, 0.05);
    check_grad<T>({away}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, relu(t, x[0])); });
    auto pos = random_tensor<T>(sh, rng, 0.2, 2.0);
    check_grad<T>({pos}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, log(t, x[0])); });
    // bounds at +-0.5 with no entry within 0.01 of them
    for (auto& v : away.mutable_values())
        if (std::abs(std::abs(v) - 0.5) < 0.01) v = v > 0 ? 0.3 : -0.3;
    check_grad<T>({away}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, clamp(t, x[0], -0.5, 0.5)); });
}

TEST_CASE_TEMPLATE("reductions and shape ops match finite differences", T, float, double) {
    std::mt19937_64 rng(32);
    auto a = random_tensor<T>({2, 3, 4, 5}, rng), b = random_tensor<T>({2, 2, 4, 5}, rng);
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return sum(t, x[0]); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return mean(t, x[0]); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return sum_of_squares(t, x[0]); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, sum_per_sample(t, x[0])); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, reshape(t, x[0], {6, 20})); });
    check_grad<T>({a, b}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, concat(t, {x[0], x[1]})); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, slice_channels(t, x[0], 1, 3)); });
    check_grad<T>({a}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, channel_sum(t, x[0])); });
}

TEST_CASE_TEMPLATE("linear layers match finite differences", T, float, double) {
    std::mt19937_64 rng(33);
    SUBCASE("matmul and dense") {
        auto a = random_tensor<T>({3, 4}, rng), b = random_tensor<T>({4, 5}, rng);
        check_grad<T>({a, b}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, matmul(t, x[0], x[1])); });
        auto x = random_tensor<T>({3, 6}, rng), w = random_tensor<T>({4, 6}, rng), bias = random_tensor<T>({4}, rng);
        check_grad<T>({x, w, bias},
                      [](Tape<T>& t, const Inputs<T>& x) { return project(t, dense(t, x[0], x[1], x[2])); });
    }
    SUBCASE("2D convolutions") {
        for (std::size_t k : {1u, 3u})
            for (std::size_t stride : {1u, 2u}) {
                auto x = random_tensor<T>({2, 3, 6, 7}, rng), w = random_tensor<T>({4, 3, k, k}, rng),
                     bias = random_tensor<T>({4}, rng);
                check_grad<T>({x, w, bias}, [stride](Tape<T>& t, const Inputs<T>& x) {
                    return project(t, conv(t, x[0], x[1], x[2], stride));
                });
            }
    }
    SUBCASE("3D convolution") {
        auto x = random_tensor<T>({1, 2, 4, 5, 6}, rng), w = random_tensor<T>({3, 2, 3, 3, 3}, rng),
             bias = random_tensor<T>({3}, rng);
        check_grad<T>({x, w, bias}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, conv(t, x[0], x[1], x[2], 1)); });
    }
    SUBCASE("transposed convolutions") {
        auto x = random_tensor<T>({2, 3, 4, 5}, rng), w = random_tensor<T>({3, 2, 2, 2}, rng),
             bias = random_tensor<T>({2}, rng);
        check_grad<T>({x, w, bias},
                      [](Tape<T>& t, const Inputs<T>& x) { return project(t, transposed_conv(t, x[0], x[1], x[2], 2)); });
        auto w3 = random_tensor<T>({3, 2, 3, 3}, rng);
        check_grad<T>({x, w3, bias},
                      [](Tape<T>& t, const Inputs<T>& x) { return project(t, transposed_conv(t, x[0], x[1], x[2], 2)); });
        auto x3 = random_tensor<T>({1, 2, 3, 4, 3}, rng), w33 = random_tensor<T>({2, 3, 2, 2, 2}, rng),
             b3 = random_tensor<T>({3}, rng);
        check_grad<T>({x3, w33, b3},
                      [](Tape<T>& t, const Inputs<T>& x) { return project(t, transposed_conv(t, x[0], x[1], x[2], 2)); });
    }
    SUBCASE("max pooling, even and odd extents") {
        auto even = lattice_tensor<T>({2, 2, 6, 8}, rng), odd = lattice_tensor<T>({1, 2, 5, 7}, rng),
             vol = lattice_tensor<T>({1, 1, 4, 5, 3}, rng);
        for (const auto& x : {even, odd, vol})
            check_grad<T>({x}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, max_pool2(t, x[0])); });
    }
}

TEST_CASE_TEMPLATE("spatial operators match finite differences", T, float, double) {
    std::mt19937_64 rng(34);
    SUBCASE("spatial_diff") {
        auto x = random_tensor<T>({2, 2, 6, 5}, rng), x3 = random_tensor<T>({1, 3, 4, 5, 6}, rng);
        for (std::size_t a = 0; a < 2; ++a)
            check_grad<T>({x}, [a](Tape<T>& t, const Inputs<T>& x) { return project(t, spatial_diff(t, x[0], a)); });
        for (std::size_t a = 0; a < 3; ++a)
            check_grad<T>({x3}, [a](Tape<T>& t, const Inputs<T>& x) { return project(t, spatial_diff(t, x[0], a)); });
    }
    SUBCASE("grid_sample, image and coordinates") {
        auto img = random_tensor<T>({2, 2, 6, 7}, rng);
        auto coords = interior_coords<T>(2, {6, 7}, {5, 4}, rng);
        check_grad<T>({img, coords}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, grid_sample(t, x[0], x[1])); });
        auto img3 = random_tensor<T>({1, 1, 4, 5, 6}, rng);
        auto c3 = interior_coords<T>(1, {4, 5, 6}, {3, 3, 2}, rng);
        check_grad<T>({img3, c3}, [](Tape<T>& t, const Inputs<T>& x) { return project(t, grid_sample(t, x[0], x[1])); });
    }
    SUBCASE("spectral_filter") {
        const auto op = spectral::CauchyNavierOperator::build(0.01, 2, grid::GridSpec({6, 8}));
        const auto mm = MetricMultipliers::from(op);
        auto x = random_tensor<T>({2, 2, 6, 8}, rng);
        check_grad<T>({x}, [mm](Tape<T>& t, const Inputs<T>& x) { return project(t, spectral_filter(t, x[0], mm.L)); });
        check_grad<T>({x}, [mm](Tape<T>& t, const Inputs<T>& x) { return project(t, spectral_filter(t, x[0], mm.K)); });
    }
}

namespace {

Tensor<double> small_field(std::size_t batch, const grid::GridSpec& g, std::mt19937_64& rng, double amp) {
    std::vector<grid::VectorField> fields;
    for (std::size_t b = 0; b < batch; ++b) fields.push_back(testing::smooth_field(g, rng, amp, 2));
    return field_tensor<double>(fields, true);
}

Tensor<double> small_image(std::size_t batch, const grid::GridSpec& g, std::mt19937_64& rng) {
    std::vector<grid::ScalarImage> imgs;
    for (std::size_t b = 0; b < batch; ++b) imgs.push_back(testing::smooth_image(g, rng, 1.0, 3));
    return image_tensor<double>(imgs, true);
}

}  // namespace

TEST_CASE("integration layers match finite differences") {
    std::mt19937_64 rng(35);
    const grid::GridSpec g({10, 9});
    const auto op = spectral::CauchyNavierOperator::build(0.0025, 2, g);
    const auto mm = MetricMultipliers::from(op);
    const double eps = 1e-6, tol = 1e-6;

    auto img = small_image(2, g, rng);
    auto u = small_field(2, g, rng, 0.04), w = small_field(2, g, rng, 0.04);
    CHECK(gradient_error<double>({img, u}, [](Tape<double>& t, const Inputs<double>& x) {
              return project(t, warp(t, x[0], x[1]));
          }, eps) <= tol);
    CHECK(gradient_error<double>({u, w}, [](Tape<double>& t, const Inputs<double>& x) {
              return project(t, compose(t, x[0], x[1]));
          }, eps) <= tol);
    CHECK(gradient_error<double>({u}, [](Tape<double>& t, const Inputs<double>& x) {
              return project(t, exp_svf_layer(t, x[0], 3));
          }, eps) <= tol);
    CHECK(gradient_error<double>({u, w}, [](Tape<double>& t, const Inputs<double>& x) {
              const std::vector<Tensor<double>> flow{x[0], x[1], x[0], x[1]};
              return project(t, euler_transport_layer<double>(t, flow));
          }, eps) <= tol);
    CHECK(gradient_error<double>({u}, [mm](Tape<double>& t, const Inputs<double>& x) {
              return project(t, epdiff_rhs_layer(t, x[0], mm));
          }, eps) <= tol);
    CHECK(gradient_error<double>({u}, [mm](Tape<double>& t, const Inputs<double>& x) {
              return project(t, epdiff_shoot_layer(t, x[0], mm, 3).back());
          }, eps) <= tol);
    diffeo::IntegrationConfig euler{4, 6, diffeo::Exponential::euler};
    CHECK(gradient_error<double>({u}, [euler](Tape<double>& t, const Inputs<double>& x) {
              return project(t, stationary_inverse_layer(t, x[0], euler));
          }, eps) <= tol);
    diffeo::IntegrationConfig shoot{3, 6, diffeo::Exponential::scaling_squaring};
    CHECK(gradient_error<double>({u}, [mm, shoot](Tape<double>& t, const Inputs<double>& x) {
              return project(t, shooting_inverse_layer(t, x[0], mm, shoot));
          }, eps) <= tol);
}

TEST_CASE("image to warp to MSE pipeline gradient with respect to velocity") {
    std::mt19937_64 rng(36);
    const grid::GridSpec g({16, 16});
    auto source = small_image(1, g, rng), target = small_image(1, g, rng);
    auto v = small_field(1, g, rng, 0.05);
    const auto src = source.detach(), tgt = target.detach();
    const double err = gradient_error<double>(
        {v},
        [&](Tape<double>& t, const Inputs<double>& x) {
            const auto phi = exp_svf_layer(t, scalar_mul(t, x[0], -1.0), 6);
            return mean(t, sum_of_squares(t, sub(t, warp(t, src, phi), tgt)));
        },
        1e-6, 20);
    CHECK(err <= 1e-3);
}

TEST_CASE("layers agree with the tape-free integrators") {
    std::mt19937_64 rng(37);
    const grid::GridSpec g({16, 12});
    const auto op = spectral::CauchyNavierOperator::build(0.0025, 4, g);
    const auto mm = MetricMultipliers::from(op);
    const auto v = testing::smooth_field(g, rng, 0.05, 2), w = testing::smooth_field(g, rng, 0.05, 2);
    const auto img = testing::smooth_image(g, rng);
    const auto vt = field_tensor<double>(std::span(&v, 1)), wt = field_tensor<double>(std::span(&w, 1));
    Tape<double> tape(false);

    CHECK(grid::sup_distance(to_field(exp_svf_layer(tape, vt, 6), 0), diffeo::exp_svf(v, 6)) < 1e-12);
    const auto warped = to_image(warp(tape, image_tensor<double>(std::span(&img, 1)), vt), 0);
    const auto expected = grid::warp_image(img, grid::DisplacementField(v));
    for (std::size_t n = 0; n < g.node_count(); ++n) CHECK(std::abs(warped.values[n] - expected.values[n]) < 1e-12);

    const std::vector<Tensor<double>> flow{vt, wt, vt};
    const diffeo::VelocityFlow ref{{v, w, v}};
    CHECK(grid::sup_distance(to_field(euler_transport_layer<double>(tape, flow), 0), diffeo::integrate_transport(ref)) <
          1e-12);

    const auto shot = epdiff_shoot_layer(tape, vt, mm, 10);
    const auto ref_shot = diffeo::shoot_epdiff(v, op, 10);
    for (std::size_t j = 0; j <= 10; ++j) CHECK(grid::sup_distance(to_field(shot[j], 0), ref_shot.steps[j]) < 1e-10);
}

TEST_CASE("tape semantics") {
    std::mt19937_64 rng(38);
    SUBCASE("relu gradient at -1 and 2") {
        Tensor<double> x({2}, {-1.0, 2.0}, true);
        Tape<double> t;
        t.backward(sum(t, relu(t, x)));
        CHECK(x.grad()[0] == 0.0);
        CHECK(x.grad()[1] == 1.0);
    }
    SUBCASE("d sum(Wx) / dW is outer(1, x)") {
        auto x = random_tensor<double>({1, 4}, rng, -1, 1, false);
        auto W = random_tensor<double>({3, 4}, rng);
        auto b = Tensor<double>::zeros({3});
        Tape<double> t;
        t.backward(sum(t, dense(t, x, W, b)));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(W.grad()[i * 4 + j] == doctest::Approx(x.values()[j]));
    }
    SUBCASE("constant loss gives zero gradients") {
        auto x = random_tensor<double>({3, 3}, rng);
        Tape<double> t;
        t.backward(add_scalar(t, scalar_mul(t, sum(t, x), 0.0), 2.5));
        for (double gx : x.grad()) CHECK(gx == 0.0);
        // an empty tape with an untracked loss means no forward pass happened
        Tape<double> empty;
        CHECK_THROWS_AS(empty.backward(Tensor<double>::scalar(4.0)), UsageError);
    }
    SUBCASE("<v, v> has gradient 2v") {
        auto v = random_tensor<double>({2, 2, 3, 3}, rng);
        Tape<double> t;
        t.backward(sum_of_squares(t, v));
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.grad()[i] == doctest::Approx(2 * v.values()[i]));
    }
    SUBCASE("zero upstream gradient gives zero downstream gradients") {
        auto x = random_tensor<double>({1, 2, 5, 5}, rng), w = random_tensor<double>({2, 2, 3, 3}, rng);
        auto b = random_tensor<double>({2}, rng);
        Tape<double> t;
        const auto y = relu(t, conv(t, x, w, b, 1));
        t.backward(sum(t, mul(t, y, Tensor<double>::zeros(y.shape()))));
        for (const auto* p : {&x, &w, &b})
            for (double gx : p->grad()) CHECK(gx == 0.0);
    }
    SUBCASE("backward is deterministic and idempotent") {
        auto x = random_tensor<float>({2, 3, 8, 8}, rng), w = random_tensor<float>({4, 3, 3, 3}, rng);
        auto b = random_tensor<float>({4}, rng);
        auto run = [&] {
            Tape<float> t;
            t.backward(project(t, max_pool2(t, relu(t, conv(t, x, w, b, 1)))));
            std::vector<float> g(w.grad().begin(), w.grad().end());
            g.insert(g.end(), x.grad().begin(), x.grad().end());
            return g;
        };
        CHECK(run() == run());
        Tape<float> t;
        const auto loss = project(t, conv(t, x, w, b, 2));
        t.backward(loss);
        const std::vector<float> first(w.grad().begin(), w.grad().end());
        t.backward(loss);
        CHECK(std::vector<float>(w.grad().begin(), w.grad().end()) == first);
    }
    SUBCASE("disabled tapes record nothing") {
        auto x = random_tensor<double>({4}, rng);
        Tape<double> off(false);
        const auto y = sum(off, mul(off, x, x));
        CHECK(off.size() == 0);
        CHECK_FALSE(y.requires_grad());
        Tape<double> on;
        const auto z = sum(on, mul(on, x.detach(), x.detach()));
        CHECK(on.size() == 0);
        CHECK_FALSE(z.requires_grad());
    }
    SUBCASE("usage errors") {
        auto x = random_tensor<double>({2, 2}, rng);
        Tape<double> t, other;
        CHECK_THROWS_AS(t.backward(Tensor<double>()), UsageError);
        CHECK_THROWS_AS(t.backward(mul(t, x, x)), UsageError);
        const auto foreign = sum(other, x);
        CHECK_THROWS_AS(t.backward(foreign), UsageError);
        Tape<double> empty;
        CHECK_THROWS_AS(empty.backward(Tensor<double>({2}, {1.0, 2.0})), UsageError);
    }
    SUBCASE("shape errors") {
        Tape<double> t;
        auto a = random_tensor<double>({2, 3}, rng), b = random_tensor<double>({3, 2}, rng);
        CHECK_THROWS_AS(add(t, a, b), ShapeError);
        CHECK_THROWS_AS(matmul(t, a, a), ShapeError);
        auto x = random_tensor<double>({1, 2, 6, 6}, rng), w = random_tensor<double>({2, 3, 3, 3}, rng);
        CHECK_THROWS_AS(conv(t, x, w, Tensor<double>::zeros({2}), 1), ShapeError);
        CHECK_THROWS_AS(concat(t, {x, random_tensor<double>({1, 2, 5, 6}, rng)}), ShapeError);
        CHECK_THROWS_AS(grid_sample(t, x, random_tensor<double>({1, 3, 4, 4}, rng)), ShapeError);
        CHECK_THROWS_AS(Tensor<double>({2, 2}, {1.0}), ShapeError);
    }
}
