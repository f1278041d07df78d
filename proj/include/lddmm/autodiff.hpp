#pragma once

// Minimal tape-based reverse-mode differentiation over dense n-d arrays.
//
// A Tensor is a shared handle to a node holding values, an optional
// gradient buffer and, for recorded results, the rule that pushes its
// gradient back to its inputs.  Leaves (parameters, data) live outside any
// tape; every op result is recorded on the Tape passed to it.  Ops check
// shapes eagerly and throw ShapeError.
//
// Spatial tensors are laid out [batch, channel, N0, N1(, N2)], axis a of
// the unit domain being tensor dimension 2 + a.
//
// Instantiated for float (training) and double (oracle checks).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

namespace lddmm::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);

template <typename T>
class Tape;

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    const void* owner = nullptr;  // tape that recorded this node, null for leaves
    std::function<void(const Node&)> backward;

    T* grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false) { return full({1}, value, requires_grad); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    std::span<const T> values() const { return node_->value; }
    /// Mutable access for optimizers and data loading.  Mutating a tensor that
    /// an unfinished tape still references invalidates that tape's gradients.
    std::span<T> mutable_values() { return node_->value; }
    /// Accumulated gradient; all zeros if none has been computed.
    std::span<const T> grad() const;
    void zero_grad();
    T item() const;

    /// Same values, no gradient tracking.
    Tensor detach() const;

    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& handle() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Ordered record of the differentiable ops executed since construction or
/// the last clear().  Confined to one thread.
template <typename T>
class Tape {
public:
    explicit Tape(bool enabled = true) : enabled_(enabled) {}

    bool enabled() const noexcept { return enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// True if an op on `inputs` must be recorded.
    bool wants(std::initializer_list<const Tensor<T>*> inputs) const;
    bool wants(std::span<const Tensor<T>> inputs) const;

    /// Registers an op result.  `rule` receives the result node (with its
    /// gradient filled) and accumulates into the inputs it captured.
    Tensor<T> record(Shape shape, std::vector<T> value, std::span<const Tensor<T>> inputs,
                     std::function<void(const Node<T>&)> rule);
    Tensor<T> record(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                     std::function<void(const Node<T>&)> rule);

    /// Reverse sweep from a scalar loss.  Gradients of every tensor reached
    /// by this tape are reset first, so repeated calls give identical results.
    void backward(const Tensor<T>& loss);

    void clear();

private:
    bool enabled_;
    std::vector<std::shared_ptr<Node<T>>> nodes_;
    std::vector<std::shared_ptr<Node<T>>> leaves_;
    std::unordered_set<const Node<T>*> leaf_set_;
};

// ---------------------------------------------------------------------------
// Elementwise and reductions

/// b may match a exactly or be a scalar ({1}).
template <typename T> Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise product.  b may also be [B, 1, ...] against a's [B, C, ...]
/// (broadcast over channels).
template <typename T> Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scalar_mul(Tape<T>& tape, const Tensor<T>& a, double s);
template <typename T> Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, double s);
template <typename T> Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> log(Tape<T>& tape, const Tensor<T>& a);
/// Values limited to [lo, hi]; gradient passes only where no clipping occurred.
template <typename T> Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& a, double lo, double hi);

template <typename T> Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> sum_of_squares(Tape<T>& tape, const Tensor<T>& a);
/// [B, ...] -> [B]: sum over everything but the leading axis.
template <typename T> Tensor<T> sum_per_sample(Tape<T>& tape, const Tensor<T>& a);

// ---------------------------------------------------------------------------
// Shape manipulation (channel axis is dimension 1)

template <typename T> Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat(Tape<T>& tape, std::initializer_list<Tensor<T>> parts);
template <typename T> Tensor<T> slice_channels(Tape<T>& tape, const Tensor<T>& a, std::size_t begin, std::size_t end);
/// [B, C, ...] -> [B, 1, ...]
template <typename T> Tensor<T> channel_sum(Tape<T>& tape, const Tensor<T>& a);

// ---------------------------------------------------------------------------
// Linear layers

/// [m, k] x [k, n]
template <typename T> Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
/// x [B, in], weight [out, in], bias [out] -> [B, out]
template <typename T> Tensor<T> dense(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// x [B, C, spatial...], weight [O, C, k...], bias [O]; zero padding k/2 on
/// every side, so stride 1 with odd k preserves extents.
template <typename T>
Tensor<T> conv(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride);
/// x [B, Cin, spatial...], weight [Cin, Cout, k...], bias [Cout]; no padding,
/// output extent (N - 1) * stride + k.
template <typename T>
Tensor<T> transposed_conv(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                          std::size_t stride);
/// Window-2 stride-2 max over every spatial axis; odd extents round up
/// (the last window is clipped).
template <typename T> Tensor<T> max_pool2(Tape<T>& tape, const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Spatial operators on unit-domain grids

/// Finite-difference derivative along unit-domain axis `axis` (central
/// inside, one-sided at the faces, spacing 1 / N).
template <typename T> Tensor<T> spatial_diff(Tape<T>& tape, const Tensor<T>& x, std::size_t axis);
/// Multilinear samples of image [B, C, grid...] at unit-domain coordinates
/// [B, d, out...]; coordinates are clamped to the grid box.  Differentiable
/// in both arguments.
template <typename T> Tensor<T> grid_sample(Tape<T>& tape, const Tensor<T>& image, const Tensor<T>& coords);
/// Per-(sample, channel) DFT filter with real symmetric multipliers on the
/// half spectrum (see spectral::CauchyNavierOperator).
template <typename T>
Tensor<T> spectral_filter(Tape<T>& tape, const Tensor<T>& x, std::shared_ptr<const std::vector<double>> half_multipliers);

/// Constant [B, d, grid...] tensor of node positions.
template <typename T> Tensor<T> identity_grid(std::size_t batch, const Shape& spatial);

}  // namespace lddmm::ad
