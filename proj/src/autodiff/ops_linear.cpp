#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>

#include "detail.hpp"

namespace lddmm::ad {

using detail::grad_of;
using detail::require;
using detail::shape_str;

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;

// Geometry of a strided, zero-padded correlation over up to three spatial
// axes.  2D tensors use a unit leading axis.
struct ConvGeom {
    std::size_t channels = 0;
    std::array<std::size_t, 3> in{1, 1, 1}, k{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0}, out{1, 1, 1};

    std::size_t in_size() const { return in[0] * in[1] * in[2]; }
    std::size_t out_size() const { return out[0] * out[1] * out[2]; }
    std::size_t k_size() const { return k[0] * k[1] * k[2]; }
    std::size_t rows() const { return channels * k_size(); }
};

ConvGeom make_geom(std::size_t channels, const Shape& spatial, const Shape& kernel, std::size_t stride, bool same_pad) {
    require(spatial.size() == kernel.size() && (spatial.size() == 2 || spatial.size() == 3),
            "conv: spatial rank must be 2 or 3 and match the kernel");
    ConvGeom g;
    g.channels = channels;
    const std::size_t off = 3 - spatial.size();
    for (std::size_t a = 0; a < spatial.size(); ++a) {
        g.in[off + a] = spatial[a];
        g.k[off + a] = kernel[a];
        g.stride[off + a] = stride;
        g.pad[off + a] = same_pad ? kernel[a] / 2 : 0;
        const std::size_t padded = spatial[a] + 2 * g.pad[off + a];
        require(padded >= kernel[a], "conv: kernel larger than padded input");
        g.out[off + a] = (padded - kernel[a]) / stride + 1;
    }
    return g;
}

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
    using I = std::ptrdiff_t;
    const std::size_t P = g.out_size();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t kz = 0; kz < g.k[0]; ++kz)
            for (std::size_t ky = 0; ky < g.k[1]; ++ky)
                for (std::size_t kx = 0; kx < g.k[2]; ++kx) {
                    const std::size_t row = ((c * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx;
                    T* dst = col + row * P;
                    for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
                        const I iz = static_cast<I>(oz * g.stride[0] + kz) - static_cast<I>(g.pad[0]);
                        for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
                            T* d = dst + (oz * g.out[1] + oy) * g.out[2];
                            const I iy = static_cast<I>(oy * g.stride[1] + ky) - static_cast<I>(g.pad[1]);
                            if (iz < 0 || iz >= static_cast<I>(g.in[0]) || iy < 0 || iy >= static_cast<I>(g.in[1])) {
                                std::fill_n(d, g.out[2], T(0));
                                continue;
                            }
                            const T* src = x + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
                            for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                                const I ix = static_cast<I>(ox * g.stride[2] + kx) - static_cast<I>(g.pad[2]);
                                d[ox] = (ix >= 0 && ix < static_cast<I>(g.in[2])) ? src[ix] : T(0);
                            }
                        }
                    }
                }
}

template <typename T>
void col2im(const ConvGeom& g, const T* col, T* x) {
    using I = std::ptrdiff_t;
    const std::size_t P = g.out_size();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t kz = 0; kz < g.k[0]; ++kz)
            for (std::size_t ky = 0; ky < g.k[1]; ++ky)
                for (std::size_t kx = 0; kx < g.k[2]; ++kx) {
                    const std::size_t row = ((c * g.k[0] + kz) * g.k[1] + ky) * g.k[2] + kx;
                    const T* src_row = col + row * P;
                    for (std::size_t oz = 0; oz < g.out[0]; ++oz) {
                        const I iz = static_cast<I>(oz * g.stride[0] + kz) - static_cast<I>(g.pad[0]);
                        if (iz < 0 || iz >= static_cast<I>(g.in[0])) continue;
                        for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
                            const I iy = static_cast<I>(oy * g.stride[1] + ky) - static_cast<I>(g.pad[1]);
                            if (iy < 0 || iy >= static_cast<I>(g.in[1])) continue;
                            const T* s = src_row + (oz * g.out[1] + oy) * g.out[2];
                            T* dst = x + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2];
                            for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                                const I ix = static_cast<I>(ox * g.stride[2] + kx) - static_cast<I>(g.pad[2]);
                                if (ix >= 0 && ix < static_cast<I>(g.in[2])) dst[ix] += s[ox];
                            }
                        }
                    }
                }
}

Shape out_spatial(const ConvGeom& g, std::size_t rank) {
    return Shape(g.out.begin() + (3 - rank), g.out.end());
}

Shape in_spatial(const ConvGeom& g, std::size_t rank) {
    return Shape(g.in.begin() + (3 - rank), g.in.end());
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    MapM<T>(out.data(), m, n).noalias() = MapC<T>(a.values().data(), m, k) * MapC<T>(b.values().data(), k, n);
    return tape.record({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const Node<T>& o) {
        MapC<T> go(o.grad.data(), m, n);
        if (T* ga = grad_of(a)) MapM<T>(ga, m, k).noalias() += go * MapC<T>(b.values().data(), k, n).transpose();
        if (T* gb = grad_of(b)) MapM<T>(gb, k, n).noalias() += MapC<T>(a.values().data(), m, k).transpose() * go;
    });
}

template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require(x.rank() == 2 && weight.rank() == 2 && weight.dim(1) == x.dim(1) && bias.size() == weight.dim(0),
            "dense: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                shape_str(bias.shape()));
    const std::size_t batch = x.dim(0), in = x.dim(1), outn = weight.dim(0);
    std::vector<T> out(batch * outn);
    MapM<T> y(out.data(), batch, outn);
    y.noalias() = MapC<T>(x.values().data(), batch, in) * MapC<T>(weight.values().data(), outn, in).transpose();
    const auto bv = bias.values();
    for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < outn; ++c) y(r, c) += bv[c];
    return tape.record({batch, outn}, std::move(out), {x, weight, bias}, [x, weight, bias, batch, in, outn](const Node<T>& o) {
        MapC<T> go(o.grad.data(), batch, outn);
        if (T* gx = grad_of(x)) MapM<T>(gx, batch, in).noalias() += go * MapC<T>(weight.values().data(), outn, in);
        if (T* gw = grad_of(weight))
            MapM<T>(gw, outn, in).noalias() += go.transpose() * MapC<T>(x.values().data(), batch, in);
        if (T* gb = grad_of(bias))
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t c = 0; c < outn; ++c) gb[c] += go(r, c);
    });
}

template <typename T>
Tensor<T> conv(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride) {
    require(stride >= 1, "conv: stride must be >= 1");
    require(x.rank() >= 4 && weight.rank() == x.rank() && weight.dim(1) == x.dim(1) && bias.size() == weight.dim(0),
            "conv: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                shape_str(bias.shape()));
    const std::size_t rank = x.rank() - 2;
    const ConvGeom g = make_geom(x.dim(1), detail::spatial_of(x.shape()), detail::spatial_of(weight.shape()), stride, true);
    const std::size_t batch = x.dim(0), O = weight.dim(0), K = g.rows(), P = g.out_size(), N = g.in_size();

    Shape shape{batch, O};
    for (auto e : out_spatial(g, rank)) shape.push_back(e);
    std::vector<T> out(batch * O * P);
    std::vector<T> col(K * P);
    MapC<T> W(weight.values().data(), O, K);
    const auto bv = bias.values();
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(g, x.values().data() + n * g.channels * N, col.data());
        MapM<T> y(out.data() + n * O * P, O, P);
        y.noalias() = W * MapC<T>(col.data(), K, P);
        for (std::size_t o = 0; o < O; ++o) y.row(o).array() += bv[o];
    }
    return tape.record(std::move(shape), std::move(out), {x, weight, bias}, [x, weight, bias, g, batch, O, K, P, N](const Node<T>& o) {
        std::vector<T> col(K * P), dcol(K * P);
        MapC<T> W(weight.values().data(), O, K);
        T* gx = grad_of(x);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        for (std::size_t n = 0; n < batch; ++n) {
            MapC<T> go(o.grad.data() + n * O * P, O, P);
            if (gw) {
                im2col(g, x.values().data() + n * g.channels * N, col.data());
                MapM<T>(gw, O, K).noalias() += go * MapC<T>(col.data(), K, P).transpose();
            }
            if (gb)
                // plain loop: Eigen's vectorised sum peels by address, so its
                // rounding would depend on where the buffer was allocated
                for (std::size_t r = 0; r < O; ++r) {
                    const T* row = o.grad.data() + (n * O + r) * P;
                    T acc = 0;
                    for (std::size_t i = 0; i < P; ++i) acc += row[i];
                    gb[r] += acc;
                }
            if (gx) {
                MapM<T>(dcol.data(), K, P).noalias() = W.transpose() * go;
                col2im(g, dcol.data(), gx + n * g.channels * N);
            }
        }
    });
}

template <typename T>
Tensor<T> transposed_conv(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                          std::size_t stride) {
    require(stride >= 1, "transposed_conv: stride must be >= 1");
    require(x.rank() >= 4 && weight.rank() == x.rank() && weight.dim(0) == x.dim(1) && bias.size() == weight.dim(1),
            "transposed_conv: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                shape_str(bias.shape()));
    const std::size_t rank = x.rank() - 2;
    const std::size_t batch = x.dim(0), Cin = x.dim(1), Cout = weight.dim(1);
    const Shape in_sp = detail::spatial_of(x.shape());
    const Shape k_sp = detail::spatial_of(weight.shape());
    Shape out_sp(rank);
    for (std::size_t a = 0; a < rank; ++a) out_sp[a] = (in_sp[a] - 1) * stride + k_sp[a];
    // The adjoint geometry: a correlation from the output grid back to the input grid.
    const ConvGeom g = make_geom(Cout, out_sp, k_sp, stride, false);
    const std::size_t K = g.rows(), P = g.out_size(), N = g.in_size();

    Shape shape{batch, Cout};
    for (auto e : in_spatial(g, rank)) shape.push_back(e);
    std::vector<T> out(batch * Cout * N, T(0));
    std::vector<T> col(K * P);
    MapC<T> W(weight.values().data(), Cin, K);
    const auto bv = bias.values();
    for (std::size_t n = 0; n < batch; ++n) {
        MapM<T>(col.data(), K, P).noalias() = W.transpose() * MapC<T>(x.values().data() + n * Cin * P, Cin, P);
        T* y = out.data() + n * Cout * N;
        col2im(g, col.data(), y);
        for (std::size_t c = 0; c < Cout; ++c)
            for (std::size_t i = 0; i < N; ++i) y[c * N + i] += bv[c];
    }
    return tape.record(std::move(shape), std::move(out), {x, weight, bias}, [x, weight, bias, g, batch, Cin, Cout, K, P, N](const Node<T>& o) {
        std::vector<T> dcol(K * P);
        MapC<T> W(weight.values().data(), Cin, K);
        T* gx = grad_of(x);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        for (std::size_t n = 0; n < batch; ++n) {
            const T* go = o.grad.data() + n * Cout * N;
            im2col(g, go, dcol.data());
            MapC<T> dc(dcol.data(), K, P);
            if (gx) MapM<T>(gx + n * Cin * P, Cin, P).noalias() += W * dc;
            if (gw) MapM<T>(gw, Cin, K).noalias() += MapC<T>(x.values().data() + n * Cin * P, Cin, P) * dc.transpose();
            if (gb)
                for (std::size_t c = 0; c < Cout; ++c)
                    for (std::size_t i = 0; i < N; ++i) gb[c] += go[c * N + i];
        }
    });
}

template <typename T>
Tensor<T> max_pool2(Tape<T>& tape, const Tensor<T>& x) {
    require(x.rank() == 4 || x.rank() == 5, "max_pool2: expected [B, C, spatial...] with 2 or 3 spatial axes");
    const std::size_t rank = x.rank() - 2;
    std::array<std::size_t, 3> in{1, 1, 1}, out{1, 1, 1}, win{1, 1, 1};
    for (std::size_t a = 0; a < rank; ++a) {
        in[3 - rank + a] = x.dim(2 + a);
        out[3 - rank + a] = (x.dim(2 + a) + 1) / 2;
        win[3 - rank + a] = 2;
    }
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t in_n = in[0] * in[1] * in[2], out_n = out[0] * out[1] * out[2];
    Shape shape{x.dim(0), x.dim(1)};
    for (std::size_t a = 0; a < rank; ++a) shape.push_back(out[3 - rank + a]);

    std::vector<T> y(planes * out_n);
    auto arg = std::make_shared<std::vector<std::uint32_t>>(planes * out_n);
    const auto xv = x.values();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data() + p * in_n;
        for (std::size_t oz = 0; oz < out[0]; ++oz)
            for (std::size_t oy = 0; oy < out[1]; ++oy)
                for (std::size_t ox = 0; ox < out[2]; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = 0;
                    for (std::size_t dz = 0; dz < win[0]; ++dz)
                        for (std::size_t dy = 0; dy < win[1]; ++dy)
                            for (std::size_t dx = 0; dx < win[2]; ++dx) {
                                const std::size_t iz = oz * win[0] + dz, iy = oy * win[1] + dy, ix = ox * win[2] + dx;
                                if (iz >= in[0] || iy >= in[1] || ix >= in[2]) continue;
                                const std::size_t i = (iz * in[1] + iy) * in[2] + ix;
                                if (src[i] > best) {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                    const std::size_t o = p * out_n + (oz * out[1] + oy) * out[2] + ox;
                    y[o] = best;
                    (*arg)[o] = static_cast<std::uint32_t>(best_i);
                }
    }
    return tape.record(std::move(shape), std::move(y), {x}, [x, arg, planes, in_n, out_n](const Node<T>& o) {
        if (T* gx = grad_of(x))
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i < out_n; ++i) gx[p * in_n + (*arg)[p * out_n + i]] += o.grad[p * out_n + i];
    });
}

#define LDDMM_INSTANTIATE(T)                                                                                      \
    template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> dense(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> conv(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);         \
    template Tensor<T> transposed_conv(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
    template Tensor<T> max_pool2(Tape<T>&, const Tensor<T>&);

LDDMM_INSTANTIATE(float)
LDDMM_INSTANTIATE(double)

}  // namespace lddmm::ad
