#include <algorithm>
#include <array>
#include <cmath>

#include "detail.hpp"
#include "lddmm/grid.hpp"
#include "lddmm/spectral.hpp"

namespace lddmm::ad {

using detail::grad_of;
using detail::require;
using detail::shape_str;

namespace {

struct AxisView {
    std::size_t outer, n, inner;  // shape viewed as [outer, n, inner]
};

AxisView view_along(const Shape& s, std::size_t dim) {
    AxisView v{1, s[dim], 1};
    for (std::size_t i = 0; i < dim; ++i) v.outer *= s[i];
    for (std::size_t i = dim + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

// Multilinear stencil at a unit-domain point, with per-axis data for the
// coordinate derivative.
struct SampleStencil {
    int corners = 0;
    std::array<std::size_t, 8> node{};
    std::array<double, 8> weight{};
    std::array<double, 3> frac{};
    std::array<bool, 3> clamped{};
};

SampleStencil stencil_at(const std::array<std::size_t, 3>& ext, const std::array<std::size_t, 3>& stride,
                         std::size_t d, const double* p) {
    SampleStencil s;
    std::array<std::size_t, 3> lo{};
    for (std::size_t a = 0; a < d; ++a) {
        if (!std::isfinite(p[a])) throw InvalidInput("grid_sample: non-finite coordinate");
        const double n = static_cast<double>(ext[a]);
        const double raw = p[a] * n;
        const double c = std::clamp(raw, 0.0, n - 1.0);
        s.clamped[a] = raw < 0.0 || raw > n - 1.0;
        std::size_t i = static_cast<std::size_t>(c);
        if (i > ext[a] - 2) i = ext[a] - 2;
        lo[a] = i;
        s.frac[a] = c - static_cast<double>(i);
    }
    s.corners = 1 << d;
    for (int k = 0; k < s.corners; ++k) {
        std::size_t node = 0;
        double w = 1.0;
        for (std::size_t a = 0; a < d; ++a) {
            const bool up = (k >> (d - 1 - a)) & 1;
            node += (lo[a] + (up ? 1 : 0)) * stride[a];
            w *= up ? s.frac[a] : 1.0 - s.frac[a];
        }
        s.node[k] = node;
        s.weight[k] = w;
    }
    return s;
}

// d weight_k / d frac_a
double weight_derivative(const SampleStencil& s, int k, std::size_t a, std::size_t d) {
    double w = 1.0;
    for (std::size_t b = 0; b < d; ++b) {
        const bool up = (k >> (d - 1 - b)) & 1;
        if (b == a)
            w *= up ? 1.0 : -1.0;
        else
            w *= up ? s.frac[b] : 1.0 - s.frac[b];
    }
    return w;
}

}  // namespace

template <typename T>
Tensor<T> spatial_diff(Tape<T>& tape, const Tensor<T>& x, std::size_t axis) {
    require(x.rank() >= 4 && axis < x.rank() - 2, "spatial_diff: bad axis for " + shape_str(x.shape()));
    const AxisView v = view_along(x.shape(), 2 + axis);
    require(v.n >= 2, "spatial_diff: axis extent must be >= 2");
    const T inv_h = static_cast<T>(v.n);
    const T half_inv_h = static_cast<T>(0.5 * static_cast<double>(v.n));
    const auto xv = x.values();
    std::vector<T> out(x.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        const T* src = xv.data() + o * v.n * v.inner;
        T* dst = out.data() + o * v.n * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) {
            dst[j] = (src[v.inner + j] - src[j]) * inv_h;
            const std::size_t last = (v.n - 1) * v.inner;
            dst[last + j] = (src[last + j] - src[last - v.inner + j]) * inv_h;
        }
        for (std::size_t i = 1; i + 1 < v.n; ++i)
            for (std::size_t j = 0; j < v.inner; ++j) {
                const std::size_t at = i * v.inner + j;
                dst[at] = (src[at + v.inner] - src[at - v.inner]) * half_inv_h;
            }
    }
    return tape.record(x.shape(), std::move(out), {x}, [x, v, inv_h, half_inv_h](const Node<T>& node) {
        T* gx = grad_of(x);
        if (!gx) return;
        for (std::size_t o = 0; o < v.outer; ++o) {
            const T* g = node.grad.data() + o * v.n * v.inner;
            T* dst = gx + o * v.n * v.inner;
            const std::size_t last = (v.n - 1) * v.inner;
            for (std::size_t j = 0; j < v.inner; ++j) {
                dst[v.inner + j] += g[j] * inv_h;
                dst[j] -= g[j] * inv_h;
                dst[last + j] += g[last + j] * inv_h;
                dst[last - v.inner + j] -= g[last + j] * inv_h;
            }
            for (std::size_t i = 1; i + 1 < v.n; ++i)
                for (std::size_t j = 0; j < v.inner; ++j) {
                    const std::size_t at = i * v.inner + j;
                    dst[at + v.inner] += g[at] * half_inv_h;
                    dst[at - v.inner] -= g[at] * half_inv_h;
                }
        }
    });
}

template <typename T>
Tensor<T> grid_sample(Tape<T>& tape, const Tensor<T>& image, const Tensor<T>& coords) {
    require(image.rank() >= 4 && image.rank() <= 5, "grid_sample: image must be [B, C, 2 or 3 spatial axes]");
    const std::size_t d = image.rank() - 2;
    require(coords.rank() == image.rank() && coords.dim(0) == image.dim(0) && coords.dim(1) == d,
            "grid_sample: coords " + shape_str(coords.shape()) + " incompatible with image " + shape_str(image.shape()));
    const std::size_t batch = image.dim(0), channels = image.dim(1);
    std::array<std::size_t, 3> ext{1, 1, 1}, stride{1, 1, 1};
    for (std::size_t a = 0; a < d; ++a) {
        ext[a] = image.dim(2 + a);
        require(ext[a] >= 2, "grid_sample: image extents must be >= 2");
    }
    for (std::size_t a = d; a-- > 1;) stride[a - 1] = stride[a] * ext[a];
    const std::size_t in_n = stride[0] * ext[0];
    const std::size_t out_n = coords.size() / (batch * d);

    Shape shape{batch, channels};
    for (std::size_t a = 0; a < d; ++a) shape.push_back(coords.dim(2 + a));
    std::vector<T> out(batch * channels * out_n);
    const auto iv = image.values();
    const auto cv = coords.values();
    std::array<double, 3> p{};
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < out_n; ++i) {
            for (std::size_t a = 0; a < d; ++a) p[a] = cv[(b * d + a) * out_n + i];
            const SampleStencil s = stencil_at(ext, stride, d, p.data());
            for (std::size_t c = 0; c < channels; ++c) {
                const T* src = iv.data() + (b * channels + c) * in_n;
                double acc = 0.0;
                for (int k = 0; k < s.corners; ++k) acc += s.weight[k] * src[s.node[k]];
                out[(b * channels + c) * out_n + i] = static_cast<T>(acc);
            }
        }
    return tape.record(std::move(shape), std::move(out), {image, coords},
                       [image, coords, batch, channels, d, ext, stride, in_n, out_n](const Node<T>& o) {
        T* gi = grad_of(image);
        T* gc = grad_of(coords);
        const auto iv = image.values();
        const auto cv = coords.values();
        std::array<double, 3> p{};
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < out_n; ++i) {
                for (std::size_t a = 0; a < d; ++a) p[a] = cv[(b * d + a) * out_n + i];
                const SampleStencil s = stencil_at(ext, stride, d, p.data());
                std::array<double, 3> dp{};
                for (std::size_t c = 0; c < channels; ++c) {
                    const double g = o.grad[(b * channels + c) * out_n + i];
                    if (g == 0.0) continue;
                    if (gi) {
                        T* dst = gi + (b * channels + c) * in_n;
                        for (int k = 0; k < s.corners; ++k) dst[s.node[k]] += static_cast<T>(g * s.weight[k]);
                    }
                    if (gc) {
                        const T* src = iv.data() + (b * channels + c) * in_n;
                        for (std::size_t a = 0; a < d; ++a) {
                            if (s.clamped[a]) continue;
                            double acc = 0.0;
                            for (int k = 0; k < s.corners; ++k) acc += weight_derivative(s, k, a, d) * src[s.node[k]];
                            dp[a] += g * acc * static_cast<double>(ext[a]);
                        }
                    }
                }
                if (gc)
                    for (std::size_t a = 0; a < d; ++a) gc[(b * d + a) * out_n + i] += static_cast<T>(dp[a]);
            }
    });
}

template <typename T>
Tensor<T> spectral_filter(Tape<T>& tape, const Tensor<T>& x, std::shared_ptr<const std::vector<double>> m) {
    require(x.rank() >= 4 && x.rank() <= 5, "spectral_filter: expected [B, C, 2 or 3 spatial axes]");
    const grid::GridSpec g(detail::spatial_of(x.shape()));
    require(m && m->size() == spectral::half_spectrum_size(g), "spectral_filter: multiplier count does not match grid");
    const std::size_t planes = x.dim(0) * x.dim(1), n = g.node_count();

    auto run = [g, m, planes, n](const T* in, T* out, bool accumulate) {
        std::vector<double> buf(n);
        for (std::size_t p = 0; p < planes; ++p) {
            std::copy_n(in + p * n, n, buf.begin());
            spectral::filter_scalar(g, *m, buf, buf);
            T* dst = out + p * n;
            if (accumulate)
                for (std::size_t i = 0; i < n; ++i) dst[i] += static_cast<T>(buf[i]);
            else
                for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(buf[i]);
        }
    };
    std::vector<T> out(x.size());
    run(x.values().data(), out.data(), false);
    return tape.record(x.shape(), std::move(out), {x}, [x, run](const Node<T>& o) {
        // Real symmetric multipliers: the filter is its own adjoint.
        if (T* gx = grad_of(x)) run(o.grad.data(), gx, true);
    });
}

template <typename T>
Tensor<T> identity_grid(std::size_t batch, const Shape& spatial) {
    const std::size_t d = spatial.size();
    const std::size_t n = element_count(spatial);
    std::vector<T> v(batch * d * n);
    for (std::size_t a = 0; a < d; ++a) {
        std::size_t stride = 1;
        for (std::size_t b = a + 1; b < d; ++b) stride *= spatial[b];
        const double h = 1.0 / static_cast<double>(spatial[a]);
        for (std::size_t i = 0; i < n; ++i) {
            const T pos = static_cast<T>(static_cast<double>((i / stride) % spatial[a]) * h);
            for (std::size_t b = 0; b < batch; ++b) v[(b * d + a) * n + i] = pos;
        }
    }
    Shape shape{batch, d};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    return Tensor<T>(std::move(shape), std::move(v), false);
}

#define LDDMM_INSTANTIATE(T)                                                                          \
    template Tensor<T> spatial_diff(Tape<T>&, const Tensor<T>&, std::size_t);                        \
    template Tensor<T> grid_sample(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> spectral_filter(Tape<T>&, const Tensor<T>&, std::shared_ptr<const std::vector<double>>); \
    template Tensor<T> identity_grid<T>(std::size_t, const Shape&);

LDDMM_INSTANTIATE(float)
LDDMM_INSTANTIATE(double)

}  // namespace lddmm::ad
