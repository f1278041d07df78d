#include "lddmm/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "lddmm/error.hpp"

namespace lddmm::spectral {

namespace {

double laplacian_symbol(std::size_t k, std::size_t n) {
    const double h = 1.0 / static_cast<double>(n);
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    return (2.0 - 2.0 * std::cos(theta)) / (h * h);
}

// Plans and scratch buffers for one grid shape.  FFTW planning is not
// thread-safe; a cache per thread keeps distinct threads independent.
class FftPlan {
public:
    explicit FftPlan(const grid::GridSpec& g) : nodes_(g.node_count()), half_(half_spectrum_size(g)) {
        real_ = fftw_alloc_real(nodes_);
        spec_ = fftw_alloc_complex(half_);
        std::vector<int> n(g.extents().begin(), g.extents().end());
        const int rank = static_cast<int>(n.size());
        forward_ = fftw_plan_dft_r2c(rank, n.data(), real_, spec_, FFTW_ESTIMATE);
        backward_ = fftw_plan_dft_c2r(rank, n.data(), spec_, real_, FFTW_ESTIMATE);
    }
    ~FftPlan() {
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
        fftw_free(real_);
        fftw_free(spec_);
    }
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;

    void filter(std::span<const double> m, std::span<const double> in, std::span<double> out) {
        std::copy(in.begin(), in.end(), real_);
        fftw_execute(forward_);
        for (std::size_t k = 0; k < half_; ++k) {
            spec_[k][0] *= m[k];
            spec_[k][1] *= m[k];
        }
        // c2r overwrites its input; spec_ is scratch here.
        fftw_execute(backward_);
        const double scale = 1.0 / static_cast<double>(nodes_);
        for (std::size_t i = 0; i < nodes_; ++i) out[i] = real_[i] * scale;
    }

private:
    std::size_t nodes_;
    std::size_t half_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
};

FftPlan& plan_for(const grid::GridSpec& g) {
    thread_local std::map<std::vector<std::size_t>, std::unique_ptr<FftPlan>> cache;
    auto& slot = cache[g.extents()];
    if (!slot) slot = std::make_unique<FftPlan>(g);
    return *slot;
}

grid::VectorField filter_field(const grid::GridSpec& op_grid, const std::vector<double>& m,
                               const grid::VectorField& v, const char* what) {
    grid::require_same_grid(op_grid, v.grid, what);
    const std::size_t d = v.dims();
    const std::size_t n = v.grid.node_count();
    grid::VectorField out(v.grid);
    std::vector<double> channel(n);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t i = 0; i < n; ++i) channel[i] = v.values[i * d + c];
        filter_scalar(v.grid, m, channel, channel);
        for (std::size_t i = 0; i < n; ++i) out.values[i * d + c] = channel[i];
    }
    return out;
}

}  // namespace

std::size_t half_spectrum_size(const grid::GridSpec& g) {
    std::size_t count = 1;
    for (std::size_t a = 0; a + 1 < g.dims(); ++a) count *= g.extent(a);
    return count * (g.extent(g.dims() - 1) / 2 + 1);
}

void filter_scalar(const grid::GridSpec& g, std::span<const double> half_multipliers,
                   std::span<const double> in, std::span<double> out) {
    if (in.size() != g.node_count() || out.size() != g.node_count())
        throw ShapeError("filter_scalar: array size != node count");
    if (half_multipliers.size() != half_spectrum_size(g))
        throw ShapeError("filter_scalar: multiplier count != half spectrum size");
    plan_for(g).filter(half_multipliers, in, out);
}

CauchyNavierOperator CauchyNavierOperator::build(double alpha, double s, const grid::GridSpec& g) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidParameter("CauchyNavierOperator: alpha must be > 0");
    if (!std::isfinite(s)) throw InvalidParameter("CauchyNavierOperator: s must be finite");
    CauchyNavierOperator op;
    op.alpha_ = alpha;
    op.s_ = s;
    op.grid_ = g;

    const std::size_t d = g.dims();
    op.full_.resize(g.node_count());
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        const auto k = g.unravel(node);
        op.full_[node] = op.multiplier(std::span<const std::size_t>(k.data(), d));
    }

    const std::size_t last = g.extent(d - 1);
    const std::size_t half_last = last / 2 + 1;
    op.half_.resize(half_spectrum_size(g));
    for (std::size_t i = 0; i < op.half_.size(); ++i) {
        const std::size_t outer = i / half_last;
        const std::size_t kl = i % half_last;
        op.half_[i] = op.full_[outer * last + kl];
    }
    op.half_inv_.resize(op.half_.size());
    for (std::size_t i = 0; i < op.half_.size(); ++i) op.half_inv_[i] = 1.0 / op.half_[i];
    return op;
}

double CauchyNavierOperator::multiplier(std::span<const std::size_t> k) const {
    if (k.size() != grid_.dims()) throw ShapeError("multiplier: frequency index rank != dims");
    double sym = 0.0;
    for (std::size_t a = 0; a < k.size(); ++a) {
        if (k[a] >= grid_.extent(a)) throw InvalidParameter("multiplier: frequency index out of range");
        sym += laplacian_symbol(k[a], grid_.extent(a));
    }
    return std::pow(1.0 + alpha_ * sym, s_);
}

grid::VectorField CauchyNavierOperator::apply_L(const grid::VectorField& v) const {
    return filter_field(grid_, half_, v, "apply_L");
}

grid::VectorField CauchyNavierOperator::apply_K(const grid::VectorField& v) const {
    return filter_field(grid_, half_inv_, v, "apply_K");
}

}  // namespace lddmm::spectral
