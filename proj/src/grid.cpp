#include "lddmm/grid.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "lddmm/error.hpp"

namespace lddmm::grid {

namespace {

std::string describe(const GridSpec& g) {
    std::ostringstream os;
    for (std::size_t a = 0; a < g.dims(); ++a) os << (a ? "x" : "") << g.extent(a);
    return os.str();
}

// Corner indices and weights of the multilinear stencil around a point.
struct Stencil {
    std::array<std::size_t, 8> node{};
    std::array<double, 8> weight{};
    int size = 0;
};

Stencil make_stencil(const GridSpec& g, const Point& p) {
    const std::size_t d = g.dims();
    std::array<std::size_t, 3> lo{};
    std::array<double, 3> frac{};
    for (std::size_t a = 0; a < d; ++a) {
        if (!std::isfinite(p[a])) throw InvalidInput("interpolate: non-finite point coordinate");
        const double n = static_cast<double>(g.extent(a));
        double c = std::clamp(p[a] * n, 0.0, n - 1.0);
        // node positions i / N do not always round-trip through * N
        if (const double r = std::nearbyint(c); std::abs(c - r) <= 1e-12 * n) c = r;
        auto i = static_cast<std::size_t>(c);
        if (i > g.extent(a) - 2) i = g.extent(a) - 2;
        lo[a] = i;
        frac[a] = c - static_cast<double>(i);
    }
    Stencil s;
    s.size = 1 << d;
    for (int corner = 0; corner < s.size; ++corner) {
        std::size_t node = 0;
        double w = 1.0;
        for (std::size_t a = 0; a < d; ++a) {
            const bool up = (corner >> (d - 1 - a)) & 1;
            node += (lo[a] + (up ? 1 : 0)) * g.stride(a);
            w *= up ? frac[a] : 1.0 - frac[a];
        }
        s.node[corner] = node;
        s.weight[corner] = w;
    }
    return s;
}

// Sample `channels` interleaved values at p into out[0..channels).
void sample(const GridSpec& g, const std::vector<double>& values, std::size_t channels,
            const Point& p, double* out) {
    const Stencil s = make_stencil(g, p);
    for (std::size_t c = 0; c < channels; ++c) out[c] = 0.0;
    for (int k = 0; k < s.size; ++k) {
        const double* src = values.data() + s.node[k] * channels;
        for (std::size_t c = 0; c < channels; ++c) out[c] += s.weight[k] * src[c];
    }
}

Point displaced(const GridSpec& g, std::size_t node, const VectorField& u) {
    Point p = g.node_position(node);
    for (std::size_t a = 0; a < g.dims(); ++a) p[a] += u.at(node, a);
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------

GridSpec::GridSpec(std::vector<std::size_t> extents) : extents_(std::move(extents)) {
    if (extents_.size() < 2 || extents_.size() > 3)
        throw InvalidParameter("GridSpec: dims must be 2 or 3");
    for (auto n : extents_)
        if (n < 4) throw InvalidParameter("GridSpec: every extent must be >= 4");
    strides_.assign(extents_.size(), 1);
    for (std::size_t a = extents_.size() - 1; a > 0; --a) strides_[a - 1] = strides_[a] * extents_[a];
    count_ = strides_[0] * extents_[0];
}

double GridSpec::min_spacing() const {
    return 1.0 / static_cast<double>(*std::max_element(extents_.begin(), extents_.end()));
}

double GridSpec::cell_volume() const {
    return 1.0 / static_cast<double>(count_);
}

std::array<std::size_t, 3> GridSpec::unravel(std::size_t node) const {
    std::array<std::size_t, 3> idx{};
    for (std::size_t a = 0; a < dims(); ++a) {
        idx[a] = node / strides_[a];
        node %= strides_[a];
    }
    return idx;
}

Point GridSpec::node_position(std::size_t node) const {
    const auto idx = unravel(node);
    Point p{};
    for (std::size_t a = 0; a < dims(); ++a) p[a] = static_cast<double>(idx[a]) * spacing(a);
    return p;
}

bool GridSpec::is_interior(std::size_t node) const {
    const auto idx = unravel(node);
    for (std::size_t a = 0; a < dims(); ++a)
        if (idx[a] == 0 || idx[a] + 1 == extents_[a]) return false;
    return true;
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
    if (!(a == b))
        throw ShapeError(std::string(what) + ": grid mismatch (" + describe(a) + " vs " +
                         describe(b) + ")");
}

// ---------------------------------------------------------------------------

ScalarImage::ScalarImage(GridSpec g, double fill)
    : grid(std::move(g)), values(grid.node_count(), fill) {}

ScalarImage::ScalarImage(GridSpec g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.node_count()) throw ShapeError("ScalarImage: value count != node count");
}

LabelImage::LabelImage(GridSpec g, std::int32_t fill)
    : grid(std::move(g)), values(grid.node_count(), fill) {}

LabelImage::LabelImage(GridSpec g, std::vector<std::int32_t> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.node_count()) throw ShapeError("LabelImage: value count != node count");
}

VectorField::VectorField(GridSpec g, double fill)
    : grid(std::move(g)), values(grid.node_count() * grid.dims(), fill) {}

VectorField::VectorField(GridSpec g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.node_count() * grid.dims())
        throw ShapeError("VectorField: value count != node count * dims");
}

VectorField VectorField::constant(const GridSpec& g, std::span<const double> c) {
    if (c.size() != g.dims()) throw ShapeError("VectorField::constant: component count != dims");
    VectorField v(g);
    for (std::size_t n = 0; n < g.node_count(); ++n)
        for (std::size_t a = 0; a < g.dims(); ++a) v.at(n, a) = c[a];
    return v;
}

// ---------------------------------------------------------------------------

std::vector<double> interpolate(const ScalarImage& image, std::span<const Point> points) {
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) sample(image.grid, image.values, 1, points[i], &out[i]);
    return out;
}

std::vector<double> interpolate(const VectorField& field, std::span<const Point> points) {
    const std::size_t d = field.dims();
    std::vector<double> out(points.size() * d);
    for (std::size_t i = 0; i < points.size(); ++i) sample(field.grid, field.values, d, points[i], &out[i * d]);
    return out;
}

ScalarImage warp_image(const ScalarImage& image, const DisplacementField& phi_inv) {
    require_same_grid(image.grid, phi_inv.grid, "warp_image");
    const auto& g = image.grid;
    ScalarImage out(g);
    for (std::size_t n = 0; n < g.node_count(); ++n)
        sample(g, image.values, 1, displaced(g, n, phi_inv), &out.values[n]);
    return out;
}

DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner) {
    require_same_grid(outer.grid, inner.grid, "compose");
    const auto& g = inner.grid;
    const std::size_t d = g.dims();
    DisplacementField out(g);
    std::array<double, 3> s{};
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        sample(g, outer.values, d, displaced(g, n, inner), s.data());
        for (std::size_t a = 0; a < d; ++a) out.at(n, a) = inner.at(n, a) + s[a];
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<double> partial(const GridSpec& g, std::span<const double> values, std::size_t channels,
                            std::size_t channel, std::size_t axis) {
    if (axis >= g.dims()) throw InvalidParameter("partial: axis out of range");
    if (values.size() != g.node_count() * channels) throw ShapeError("partial: value count mismatch");
    for (double x : values)
        if (!std::isfinite(x)) throw InvalidInput("partial: non-finite field value");
    const std::size_t n_axis = g.extent(axis);
    const std::size_t stride = g.stride(axis);
    const double inv_h = static_cast<double>(n_axis);
    std::vector<double> out(g.node_count());
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        const std::size_t i = (n / stride) % n_axis;
        auto at = [&](std::size_t node) { return values[node * channels + channel]; };
        if (i == 0)
            out[n] = (at(n + stride) - at(n)) * inv_h;
        else if (i + 1 == n_axis)
            out[n] = (at(n) - at(n - stride)) * inv_h;
        else
            out[n] = (at(n + stride) - at(n - stride)) * 0.5 * inv_h;
    }
    return out;
}

VectorField gradient(const ScalarImage& f) {
    const auto& g = f.grid;
    VectorField out(g);
    for (std::size_t a = 0; a < g.dims(); ++a) {
        const auto da = partial(g, f.values, 1, 0, a);
        for (std::size_t n = 0; n < g.node_count(); ++n) out.at(n, a) = da[n];
    }
    return out;
}

ScalarImage divergence(const VectorField& v) {
    const auto& g = v.grid;
    ScalarImage out(g);
    for (std::size_t a = 0; a < g.dims(); ++a) {
        const auto da = partial(g, v.values, g.dims(), a, a);
        for (std::size_t n = 0; n < g.node_count(); ++n) out.values[n] += da[n];
    }
    return out;
}

MatrixField jacobian(const VectorField& v) {
    const auto& g = v.grid;
    const std::size_t d = g.dims();
    MatrixField out{g, std::vector<double>(g.node_count() * d * d)};
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const auto dij = partial(g, v.values, d, i, j);
            for (std::size_t n = 0; n < g.node_count(); ++n) out.values[(n * d + i) * d + j] = dij[n];
        }
    return out;
}

ScalarImage jacobian_determinant(const DisplacementField& phi_inv) {
    const auto& g = phi_inv.grid;
    const std::size_t d = g.dims();
    const MatrixField du = jacobian(phi_inv);
    ScalarImage out(g);
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        auto m = [&](std::size_t i, std::size_t j) { return du.at(n, i, j) + (i == j ? 1.0 : 0.0); };
        if (d == 2) {
            out.values[n] = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
        } else {
            out.values[n] = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                            m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                            m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

double sup_distance(const VectorField& a, const VectorField& b) {
    require_same_grid(a.grid, b.grid, "sup_distance");
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

double sup_distance_interior(const VectorField& a, const VectorField& b) {
    require_same_grid(a.grid, b.grid, "sup_distance_interior");
    const std::size_t d = a.dims();
    double m = 0.0;
    for (std::size_t n = 0; n < a.grid.node_count(); ++n) {
        if (!a.grid.is_interior(n)) continue;
        for (std::size_t c = 0; c < d; ++c) m = std::max(m, std::abs(a.at(n, c) - b.at(n, c)));
    }
    return m;
}

double max_abs(const VectorField& v) {
    double m = 0.0;
    for (double x : v.values) m = std::max(m, std::abs(x));
    return m;
}

VectorField scaled(const VectorField& v, double s) {
    VectorField out = v;
    for (double& x : out.values) x *= s;
    return out;
}

VectorField sum(const VectorField& a, const VectorField& b) {
    require_same_grid(a.grid, b.grid, "sum");
    VectorField out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
    return out;
}

double l2_inner(const ScalarImage& a, const ScalarImage& b) {
    require_same_grid(a.grid, b.grid, "l2_inner");
    return std::inner_product(a.values.begin(), a.values.end(), b.values.begin(), 0.0) * a.grid.cell_volume();
}

double l2_inner(const VectorField& a, const VectorField& b) {
    require_same_grid(a.grid, b.grid, "l2_inner");
    return std::inner_product(a.values.begin(), a.values.end(), b.values.begin(), 0.0) * a.grid.cell_volume();
}

}  // namespace lddmm::grid
