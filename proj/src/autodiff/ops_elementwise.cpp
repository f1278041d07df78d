#include <algorithm>
#include <cmath>

#include "detail.hpp"

namespace lddmm::ad {

using detail::grad_of;
using detail::require;
using detail::shape_str;

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const bool scalar_b = b.size() == 1 && a.size() != 1;
    require(scalar_b || a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    if (scalar_b)
        for (auto& x : out) x += bv[0];
    else
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape.record(a.shape(), std::move(out), {a, b}, [a, b, scalar_b](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
        if (T* gb = grad_of(b)) {
            if (scalar_b) {
                double s = 0.0;
                for (T g : o.grad) s += g;
                gb[0] += static_cast<T>(s);
            } else {
                for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    const bool scalar_b = b.size() == 1 && a.size() != 1;
    require(scalar_b || a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    if (scalar_b)
        for (auto& x : out) x -= bv[0];
    else
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return tape.record(a.shape(), std::move(out), {a, b}, [a, b, scalar_b](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
        if (T* gb = grad_of(b)) {
            if (scalar_b) {
                double s = 0.0;
                for (T g : o.grad) s += g;
                gb[0] -= static_cast<T>(s);
            } else {
                for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) {
        const auto av = a.values();
        const auto bv = b.values();
        std::vector<T> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        return tape.record(a.shape(), std::move(out), {a, b}, [a, b](const Node<T>& o) {
            const auto av = a.values();
            const auto bv = b.values();
            if (T* ga = grad_of(a))
                for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * bv[i];
            if (T* gb = grad_of(b))
                for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * av[i];
        });
    }
    // channel broadcast: b is [B, 1, ...]
    require(a.rank() >= 2 && b.rank() == a.rank() && b.dim(0) == a.dim(0) && b.dim(1) == 1 &&
                std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t batch = a.dim(0), channels = a.dim(1), inner = a.size() / (batch * channels);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(a.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) out[base + i] = av[base + i] * bv[n * inner + i];
        }
    return tape.record(a.shape(), std::move(out), {a, b}, [a, b, batch, channels, inner](const Node<T>& o) {
        const auto av = a.values();
        const auto bv = b.values();
        T* ga = grad_of(a);
        T* gb = grad_of(b);
        for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t base = (n * channels + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    if (ga) ga[base + i] += o.grad[base + i] * bv[n * inner + i];
                    if (gb) gb[n * inner + i] += o.grad[base + i] * av[base + i];
                }
            }
    });
}

template <typename T>
Tensor<T> scalar_mul(Tape<T>& tape, const Tensor<T>& a, double s) {
    const T k = static_cast<T>(s);
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& x : out) x *= k;
    return tape.record(a.shape(), std::move(out), {a}, [a, k](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += k * o.grad[i];
    });
}

template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, double s) {
    const T k = static_cast<T>(s);
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& x : out) x += k;
    return tape.record(a.shape(), std::move(out), {a}, [a](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& x : out) x = x > T(0) ? x : T(0);
    return tape.record(a.shape(), std::move(out), {a}, [a](const Node<T>& o) {
        const auto av = a.values();
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (av[i] > T(0)) ga[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& a) {
    std::vector<T> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = av[i];
        if (x >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            const T e = std::exp(x);
            out[i] = e / (T(1) + e);
        }
    }
    auto kept = std::make_shared<std::vector<T>>(out);
    return tape.record(a.shape(), std::move(out), {a}, [a, kept](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const T s = (*kept)[i];
                ga[i] += o.grad[i] * s * (T(1) - s);
            }
    });
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& a) {
    std::vector<T> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
    return tape.record(a.shape(), std::move(out), {a}, [a](const Node<T>& o) {
        const auto av = a.values();
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] / av[i];
    });
}

template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& a, double lo, double hi) {
    const T l = static_cast<T>(lo), h = static_cast<T>(hi);
    std::vector<T> out(a.values().begin(), a.values().end());
    for (auto& x : out) x = std::clamp(x, l, h);
    return tape.record(a.shape(), std::move(out), {a}, [a, l, h](const Node<T>& o) {
        const auto av = a.values();
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (av[i] >= l && av[i] <= h) ga[i] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
    double s = 0.0;
    for (T x : a.values()) s += x;
    return tape.record({1}, {static_cast<T>(s)}, {a}, [a](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
    require(a.size() > 0, "mean: empty tensor");
    double s = 0.0;
    for (T x : a.values()) s += x;
    const double inv = 1.0 / static_cast<double>(a.size());
    return tape.record({1}, {static_cast<T>(s * inv)}, {a}, [a, inv](const Node<T>& o) {
        if (T* ga = grad_of(a)) {
            const T g = static_cast<T>(o.grad[0] * inv);
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g;
        }
    });
}

template <typename T>
Tensor<T> sum_of_squares(Tape<T>& tape, const Tensor<T>& a) {
    double s = 0.0;
    for (T x : a.values()) s += static_cast<double>(x) * x;
    return tape.record({1}, {static_cast<T>(s)}, {a}, [a](const Node<T>& o) {
        const auto av = a.values();
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += T(2) * av[i] * o.grad[0];
    });
}

template <typename T>
Tensor<T> sum_per_sample(Tape<T>& tape, const Tensor<T>& a) {
    require(a.rank() >= 1 && a.dim(0) > 0, "sum_per_sample: needs a leading batch axis");
    const std::size_t batch = a.dim(0), inner = a.size() / batch;
    std::vector<T> out(batch);
    const auto av = a.values();
    for (std::size_t n = 0; n < batch; ++n) {
        double s = 0.0;
        for (std::size_t i = 0; i < inner; ++i) s += av[n * inner + i];
        out[n] = static_cast<T>(s);
    }
    return tape.record({batch}, std::move(out), {a}, [a, batch, inner](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < inner; ++i) ga[n * inner + i] += o.grad[n];
    });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
    require(element_count(shape) == a.size(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<T> out(a.values().begin(), a.values().end());
    return tape.record(std::move(shape), std::move(out), {a}, [a](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> parts) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    require(s0.size() >= 2, "concat: inputs need a channel axis");
    std::size_t channels = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(s.size() == s0.size() && s[0] == s0[0] && std::equal(s.begin() + 2, s.end(), s0.begin() + 2),
                "concat: incompatible shapes " + shape_str(s0) + " vs " + shape_str(s));
        channels += s[1];
    }
    const std::size_t batch = s0[0];
    const std::size_t inner = element_count(Shape(s0.begin() + 2, s0.end()));
    Shape shape = s0;
    shape[1] = channels;
    std::vector<T> out(batch * channels * inner);
    for (std::size_t n = 0; n < batch; ++n) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t block = p.dim(1) * inner;
            const auto pv = p.values();
            std::copy_n(pv.begin() + n * block, block, out.begin() + (n * channels * inner + offset));
            offset += block;
        }
    }
    std::vector<Tensor<T>> kept(parts.begin(), parts.end());
    return tape.record(std::move(shape), std::move(out), parts, [kept, batch, channels, inner](const Node<T>& o) {
        for (std::size_t n = 0; n < batch; ++n) {
            std::size_t offset = 0;
            for (const auto& p : kept) {
                const std::size_t block = p.dim(1) * inner;
                if (T* gp = grad_of(p)) {
                    const T* src = o.grad.data() + n * channels * inner + offset;
                    for (std::size_t i = 0; i < block; ++i) gp[n * block + i] += src[i];
                }
                offset += block;
            }
        }
    });
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, std::initializer_list<Tensor<T>> parts) {
    return concat(tape, std::span<const Tensor<T>>(parts.begin(), parts.size()));
}

template <typename T>
Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& a, std::size_t begin, std::size_t end) {
    require(a.rank() >= 2 && begin < end && end <= a.dim(1), "slice_channels: bad range for " + shape_str(a.shape()));
    const std::size_t batch = a.dim(0), channels = a.dim(1), inner = a.size() / (batch * channels);
    const std::size_t width = end - begin;
    Shape shape = a.shape();
    shape[1] = width;
    std::vector<T> out(batch * width * inner);
    const auto av = a.values();
    for (std::size_t n = 0; n < batch; ++n)
        std::copy_n(av.begin() + (n * channels + begin) * inner, width * inner, out.begin() + n * width * inner);
    return tape.record(std::move(shape), std::move(out), {a}, [a, batch, channels, inner, begin, width](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t i = 0; i < width * inner; ++i)
                    ga[(n * channels + begin) * inner + i] += o.grad[n * width * inner + i];
    });
}

template <typename T>
Tensor<T> channel_sum(Tape<T>& tape, const Tensor<T>& a) {
    require(a.rank() >= 2, "channel_sum: needs a channel axis");
    const std::size_t batch = a.dim(0), channels = a.dim(1), inner = a.size() / (batch * channels);
    Shape shape = a.shape();
    shape[1] = 1;
    std::vector<T> out(batch * inner, T(0));
    const auto av = a.values();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < inner; ++i) out[n * inner + i] += av[(n * channels + c) * inner + i];
    return tape.record(std::move(shape), std::move(out), {a}, [a, batch, channels, inner](const Node<T>& o) {
        if (T* ga = grad_of(a))
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t i = 0; i < inner; ++i) ga[(n * channels + c) * inner + i] += o.grad[n * inner + i];
    });
}

#define LDDMM_INSTANTIATE(T)                                                                          \
    template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> scalar_mul(Tape<T>&, const Tensor<T>&, double);                                \
    template Tensor<T> add_scalar(Tape<T>&, const Tensor<T>&, double);                                \
    template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                              \
    template Tensor<T> sigmoid(Tape<T>&, const Tensor<T>&);                                           \
    template Tensor<T> log(Tape<T>&, const Tensor<T>&);                                               \
    template Tensor<T> clamp(Tape<T>&, const Tensor<T>&, double, double);                             \
    template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                               \
    template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                              \
    template Tensor<T> sum_of_squares(Tape<T>&, const Tensor<T>&);                                    \
    template Tensor<T> sum_per_sample(Tape<T>&, const Tensor<T>&);                                    \
    template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                    \
    template Tensor<T> concat(Tape<T>&, std::span<const Tensor<T>>);                                  \
    template Tensor<T> concat(Tape<T>&, std::initializer_list<Tensor<T>>);                            \
    template Tensor<T> slice_channels(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);          \
    template Tensor<T> channel_sum(Tape<T>&, const Tensor<T>&);

LDDMM_INSTANTIATE(float)
LDDMM_INSTANTIATE(double)

}  // namespace lddmm::ad
