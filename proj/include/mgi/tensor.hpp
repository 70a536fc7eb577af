#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

namespace mgi {

/// Dense row-major tensor. Shape conventions in the model:
///   conv-space activations (N, C, Z, Y, X), dense activations (N, F),
///   conv weights (Cout, Cin, k, k, k), dense weights (Out, In).
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(count(), T(0));
    }

    std::size_t count() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>());
    }

    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(t.shape[i]);
    }
    return s + ")";
}

} // namespace mgi
