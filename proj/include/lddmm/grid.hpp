#pragma once

// Grid-sampled images and vector fields on the unit domain, plus the
// interpolation, warping and finite-difference operators shared by the
// integrators and the evaluation code.
//
// Layout: row-major with the first spatial axis slowest and the channel
// index fastest, i.e. value(i0, .., i{d-1}, c) lives at
// ((i0 * N1 + i1) * .. ) * channels + c.
//
// Node i along axis a sits at unit-domain coordinate i * h_a, h_a = 1 / N_a.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lddmm::grid {

/// A unit-domain point; only the first `dims` entries are meaningful.
using Point = std::array<double, 3>;

class GridSpec {
public:
    GridSpec() = default;
    /// Throws InvalidParameter unless 2 <= extents.size() <= 3 and all N_i >= 4.
    explicit GridSpec(std::vector<std::size_t> extents);

    std::size_t dims() const noexcept { return extents_.size(); }
    const std::vector<std::size_t>& extents() const noexcept { return extents_; }
    std::size_t extent(std::size_t axis) const { return extents_.at(axis); }
    double spacing(std::size_t axis) const { return 1.0 / static_cast<double>(extents_.at(axis)); }
    double min_spacing() const;
    /// Product of spacings; the measure of one cell in the discrete L2 product.
    double cell_volume() const;
    std::size_t node_count() const noexcept { return count_; }
    /// Row-major stride of `axis` in nodes.
    std::size_t stride(std::size_t axis) const { return strides_.at(axis); }

    /// Multi-index of a flat node index.
    std::array<std::size_t, 3> unravel(std::size_t node) const;
    Point node_position(std::size_t node) const;
    /// True if the node is at least one node away from every face.
    bool is_interior(std::size_t node) const;

    bool operator==(const GridSpec& other) const { return extents_ == other.extents_; }

private:
    std::vector<std::size_t> extents_;
    std::vector<std::size_t> strides_;
    std::size_t count_ = 0;
};

struct ScalarImage {
    GridSpec grid;
    std::vector<double> values;

    ScalarImage() = default;
    explicit ScalarImage(GridSpec g, double fill = 0.0);
    /// Throws ShapeError if the value count does not match the grid.
    ScalarImage(GridSpec g, std::vector<double> v);

    double& operator[](std::size_t node) { return values[node]; }
    double operator[](std::size_t node) const { return values[node]; }
};

struct LabelImage {
    GridSpec grid;
    std::vector<std::int32_t> values;

    LabelImage() = default;
    explicit LabelImage(GridSpec g, std::int32_t fill = 0);
    LabelImage(GridSpec g, std::vector<std::int32_t> v);
};

/// d components per node, in unit-domain units.
struct VectorField {
    GridSpec grid;
    std::vector<double> values;

    VectorField() = default;
    explicit VectorField(GridSpec g, double fill = 0.0);
    VectorField(GridSpec g, std::vector<double> v);

    std::size_t dims() const noexcept { return grid.dims(); }
    double& at(std::size_t node, std::size_t c) { return values[node * grid.dims() + c]; }
    double at(std::size_t node, std::size_t c) const { return values[node * grid.dims() + c]; }

    /// Field with every node set to `c`.
    static VectorField constant(const GridSpec& g, std::span<const double> c);
};

/// Map x -> x + u(x); u == 0 is the identity.
struct DisplacementField : VectorField {
    using VectorField::VectorField;
    DisplacementField() = default;
    explicit DisplacementField(VectorField u) : VectorField(std::move(u)) {}

    static DisplacementField identity(const GridSpec& g) { return DisplacementField(g); }
};

/// Per-node d x d matrices, row-major per node: J(node)[i][j] = d v_i / d x_j.
struct MatrixField {
    GridSpec grid;
    std::vector<double> values;

    double at(std::size_t node, std::size_t i, std::size_t j) const {
        const std::size_t d = grid.dims();
        return values[(node * d + i) * d + j];
    }
};

// ---------------------------------------------------------------------------
// Interpolation and warping

/// Bilinear / trilinear samples of an image; points are clamped to the grid box.
std::vector<double> interpolate(const ScalarImage& image, std::span<const Point> points);
/// Samples of a vector field, d values per point, concatenated.
std::vector<double> interpolate(const VectorField& field, std::span<const Point> points);

/// output(x) = I(x + u(x)).
ScalarImage warp_image(const ScalarImage& image, const DisplacementField& phi_inv);

/// u_res(x) = u_inner(x) + u_outer(x + u_inner(x)).
DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner);

// ---------------------------------------------------------------------------
// Finite differences (central inside, one-sided first-order at the faces)

/// d/dx_axis of one channel of a channel-interleaved node array.
std::vector<double> partial(const GridSpec& grid, std::span<const double> values,
                            std::size_t channels, std::size_t channel, std::size_t axis);

VectorField gradient(const ScalarImage& f);
ScalarImage divergence(const VectorField& v);
MatrixField jacobian(const VectorField& v);
/// det(Id + Du) per node.
ScalarImage jacobian_determinant(const DisplacementField& phi_inv);

// ---------------------------------------------------------------------------
// Small helpers used across modules

/// max |a - b| over all entries; throws ShapeError on grid mismatch.
double sup_distance(const VectorField& a, const VectorField& b);
/// Same, restricted to interior nodes.
double sup_distance_interior(const VectorField& a, const VectorField& b);
double max_abs(const VectorField& v);

VectorField scaled(const VectorField& v, double s);
VectorField sum(const VectorField& a, const VectorField& b);

/// Sum over nodes of a*b times the cell volume.
double l2_inner(const ScalarImage& a, const ScalarImage& b);
double l2_inner(const VectorField& a, const VectorField& b);

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what);

}  // namespace lddmm::grid
