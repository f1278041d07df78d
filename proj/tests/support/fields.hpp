#pragma once

// Seeded generators of smooth test images and fields.  Every field is a
// short sum of integer-frequency sinusoids, so it is periodic on the grid.

#include <cmath>
#include <numbers>
#include <random>

#include "lddmm/grid.hpp"

namespace lddmm::testing {

inline double smooth_value(const grid::Point& p, std::size_t dims, const std::vector<double>& coef) {
    // coef holds groups of (amplitude, k0, k1, k2, phase)
    double v = 0.0;
    for (std::size_t t = 0; t + 4 < coef.size(); t += 5) {
        double arg = coef[t + 4];
        for (std::size_t a = 0; a < dims; ++a) arg += 2.0 * std::numbers::pi * coef[t + 1 + a] * p[a];
        v += coef[t] * std::sin(arg);
    }
    return v;
}

inline std::vector<double> random_modes(std::mt19937_64& rng, int terms, int max_freq, double amplitude) {
    std::uniform_int_distribution<int> freq(0, max_freq);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> coef;
    for (int t = 0; t < terms; ++t) {
        coef.push_back(amplitude * unit(rng) / terms);
        for (int a = 0; a < 3; ++a) coef.push_back(freq(rng));
        coef.push_back(std::numbers::pi * unit(rng));
    }
    return coef;
}

inline grid::ScalarImage smooth_image(const grid::GridSpec& g, std::mt19937_64& rng, double amplitude = 1.0,
                                      int max_freq = 2) {
    const auto coef = random_modes(rng, 4, max_freq, amplitude);
    grid::ScalarImage img(g);
    for (std::size_t n = 0; n < g.node_count(); ++n) img.values[n] = smooth_value(g.node_position(n), g.dims(), coef);
    return img;
}

inline grid::VectorField smooth_field(const grid::GridSpec& g, std::mt19937_64& rng, double amplitude,
                                      int max_freq = 2) {
    grid::VectorField v(g);
    for (std::size_t c = 0; c < g.dims(); ++c) {
        const auto coef = random_modes(rng, 4, max_freq, amplitude);
        for (std::size_t n = 0; n < g.node_count(); ++n) v.at(n, c) = smooth_value(g.node_position(n), g.dims(), coef);
    }
    return v;
}

}  // namespace lddmm::testing
