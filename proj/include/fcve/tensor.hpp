#ifndef FCVE_TENSOR_HPP
#define FCVE_TENSOR_HPP

#include <cstdint>
#include <numeric>
#include <vector>

#include "fcve/errors.hpp"

namespace fcve {

// Dense row-major tensor. Feature maps use {channels, height, width},
// images are feature maps with a single channel: {1, H, W}.
template <typename T>
struct TensorT {
    std::vector<int> dims;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(std::vector<int> d)
        : dims(std::move(d)), v(static_cast<size_t>(numel(dims)), T(0)) {}
    TensorT(std::vector<int> d, std::vector<T> values)
        : dims(std::move(d)), v(std::move(values)) {
        if (static_cast<int64_t>(v.size()) != numel(dims))
            throw ShapeMismatch("tensor value count does not match dims");
    }

    static int64_t numel(const std::vector<int>& d) {
        int64_t p = 1;
        for (int e : d) p *= e;
        return p;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    // {C,H,W} accessors
    T& at(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * dims[1] + y) * dims[2] + x];
    }
    T at(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * dims[1] + y) * dims[2] + x];
    }

    bool same_shape(const TensorT& o) const { return dims == o.dims; }
};

using Tensor = TensorT<float>;
using Image = Tensor; // values in [0,1], dims {1,H,W}

template <typename T, typename U>
TensorT<U> tensor_cast(const TensorT<T>& t) {
    TensorT<U> out(t.dims);
    for (int64_t i = 0; i < t.size(); ++i) out.v[i] = static_cast<U>(t.v[i]);
    return out;
}

} // namespace fcve

#endif
