#pragma once

#include <string>

#include "lddmm/autodiff.hpp"
#include "lddmm/error.hpp"

namespace lddmm::ad::detail {

/// Gradient buffer of an input inside a backward rule, or null if the input
/// does not track gradients.
template <typename T>
T* grad_of(const Tensor<T>& t) {
    return t.requires_grad() ? t.node()->grad_buffer() : nullptr;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

/// Spatial extents (dims 2..) of a [B, C, spatial...] tensor.
inline Shape spatial_of(const Shape& s) { return Shape(s.begin() + 2, s.end()); }

}  // namespace lddmm::ad::detail
