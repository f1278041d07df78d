#pragma once

// Central finite-difference oracle for tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lddmm/autodiff.hpp"

namespace lddmm::testing {

template <typename T>
using LossFn = std::function<ad::Tensor<T>(ad::Tape<T>&, const std::vector<ad::Tensor<T>>&)>;

template <typename T>
struct FdSettings {
    double eps;
    double tol;
};

template <typename T>
constexpr FdSettings<T> fd_settings() {
    if constexpr (sizeof(T) == 4) return {1e-3, 1e-3};
    else return {1e-6, 1e-6};
}

template <typename T>
ad::Tensor<T> random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(ad::element_count(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return ad::Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from zero: |x| in [gap, 1].
template <typename T>
ad::Tensor<T> signed_away_from_zero(ad::Shape shape, std::mt19937_64& rng, double gap) {
    auto t = random_tensor<T>(std::move(shape), rng, gap, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (auto& x : t.mutable_values())
        if (flip(rng)) x = -x;
    return t;
}

/// sum(out * W) for a fixed random W, so every output entry contributes.
template <typename T>
ad::Tensor<T> project(ad::Tape<T>& tape, const ad::Tensor<T>& out, unsigned seed = 99) {
    std::mt19937_64 rng(seed);
    const auto w = random_tensor<T>(out.shape(), rng, -1.0, 1.0, false);
    return ad::sum(tape, ad::mul(tape, out, w));
}

/// Central difference of `eval` (a function of the offset) at step eps,
/// cross-checked against the quotient at eps / 10.  For a smooth function
/// the two agree to O(eps^2); if they differ by more than `kink_tol * scale`
/// the stencil straddles a kink (a sample point crossing a cell edge of the
/// multilinear interpolation) and the step shrinks, at most to eps / 100.
/// `refined` counts the coordinates that needed a smaller step.
template <typename Eval>
double central_difference(const Eval& eval, double eps, double scale, std::size_t* refined,
                          double kink_tol = 3e-7) {
    auto quotient = [&](double h) { return (eval(h) - eval(-h)) / (2 * h); };
    double h = eps, c = quotient(h);
    for (int k = 0; k < 2; ++k, h /= 10) {
        const double finer = quotient(h / 10);
        if (std::abs(c - finer) <= kink_tol * scale) break;
        if (k == 0 && refined) ++*refined;
        c = finer;
    }
    return c;
}

/// Relative inf-norm error between tape gradients and central differences,
/// over up to `samples` coordinates of each input.
template <typename T>
double gradient_error(const std::vector<ad::Tensor<T>>& inputs, const LossFn<T>& f, double eps,
                      std::size_t samples = 40, unsigned seed = 7, std::size_t* refined = nullptr) {
    ad::Tape<T> tape;
    const auto loss = f(tape, inputs);
    tape.backward(loss);
    std::vector<std::vector<T>> analytic;
    for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto x = inputs[k];
        if (!x.requires_grad()) continue;
        std::vector<std::size_t> idx(x.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(samples, idx.size()));
        double scale = 0.0;
        for (T g : analytic[k]) scale = std::max(scale, std::abs(static_cast<double>(g)));

        double num = 0.0, den = 0.0;
        for (std::size_t i : idx) {
            const T orig = x.values()[i];
            double fd = 0.0;
            if constexpr (sizeof(T) == 8) {
                fd = central_difference(
                    [&](double h) {
                        ad::Tape<T> off(false);
                        x.mutable_values()[i] = orig + h;
                        const double l = f(off, inputs).item();
                        x.mutable_values()[i] = orig;
                        return l;
                    },
                    eps, scale, refined);
            } else {
                // float evaluations: rounding would look like a kink, keep the plain quotient
                const T up = static_cast<T>(orig + eps), down = static_cast<T>(orig - eps);
                ad::Tape<T> off(false);
                x.mutable_values()[i] = up;
                const double lp = f(off, inputs).item();
                x.mutable_values()[i] = down;
                const double lm = f(off, inputs).item();
                x.mutable_values()[i] = orig;
                fd = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
            }
            num = std::max(num, std::abs(fd - static_cast<double>(analytic[k][i])));
            den = std::max({den, std::abs(fd), std::abs(static_cast<double>(analytic[k][i]))});
        }
        if (den > 0.0) worst = std::max(worst, num / den);
    }
    return worst;
}

/// Float32 tape gradients against central differences of the same function
/// evaluated in float64 at the same (float-representable) point.  A float32
/// loss that sums many nodes rounds at ~1e-7 of its magnitude, which a
/// float32 difference quotient would amplify past the tolerance by itself.
/// `f` must be generic over the tape precision.
template <typename F>
double mixed_gradient_error(const std::vector<ad::Tensor<float>>& inputs, const F& f, double eps,
                            std::size_t samples = 40, unsigned seed = 7, std::size_t* refined = nullptr) {
    std::vector<ad::Tensor<double>> wide;
    for (const auto& x : inputs)
        wide.emplace_back(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), x.requires_grad());

    ad::Tape<float> tape;
    const auto loss = f(tape, inputs);
    tape.backward(loss);

    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        const auto analytic = inputs[k].grad();
        std::vector<std::size_t> idx(inputs[k].size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(samples, idx.size()));
        double scale = 0.0;
        for (float g : analytic) scale = std::max(scale, std::abs(static_cast<double>(g)));

        double num = 0.0, den = 0.0;
        for (std::size_t i : idx) {
            auto x = wide[k];
            const double orig = x.values()[i];
            const double fd = central_difference(
                [&](double h) {
                    ad::Tape<double> off(false);
                    x.mutable_values()[i] = orig + h;
                    const double l = f(off, wide).item();
                    x.mutable_values()[i] = orig;
                    return l;
                },
                eps, scale, refined);
            num = std::max(num, std::abs(fd - static_cast<double>(analytic[i])));
            den = std::max({den, std::abs(fd), std::abs(static_cast<double>(analytic[i]))});
        }
        if (den > 0.0) worst = std::max(worst, num / den);
    }
    return worst;
}

}  // namespace lddmm::testing
