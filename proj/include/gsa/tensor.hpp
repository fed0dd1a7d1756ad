#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gsa/errors.hpp"

namespace gsa {

// Dense [heads x tokens x dim] tensor, row-major. Carrier for Q, K, V and
// attention outputs. Plain 2-D data (token features, weight matrices) is
// stored with heads == 1.
template <typename T>
struct Tensor {
    int heads = 0;
    int tokens = 0;
    int dim = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int heads_, int tokens_, int dim_)
        : heads(heads_), tokens(tokens_), dim(dim_),
          data(static_cast<size_t>(heads_) * tokens_ * dim_, T(0)) {}

    size_t size() const { return data.size(); }

    T* row(int h, int t) {
        return data.data() + (static_cast<size_t>(h) * tokens + t) * dim;
    }
    const T* row(int h, int t) const {
        return data.data() + (static_cast<size_t>(h) * tokens + t) * dim;
    }

    T& at(int h, int t, int d) { return row(h, t)[d]; }
    T at(int h, int t, int d) const { return row(h, t)[d]; }

    bool same_shape(const Tensor& o) const {
        return heads == o.heads && tokens == o.tokens && dim == o.dim;
    }
};

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
    for (T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <typename T>
inline void require_finite(const Tensor<T>& t, const char* name) {
    if (!all_finite(t)) throw NonFiniteInput(std::string(name) + " contains NaN/Inf");
}

template <typename T>
inline void require_same_heads_dim(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.heads != b.heads || a.dim != b.dim)
        throw ShapeMismatch(std::string(what) + ": heads/dim disagree");
}

// Stacks b's rows after a's rows. Inverse of row-range slicing.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.tokens == 0) return b;
    if (b.tokens == 0) return a;
    require_same_heads_dim(a, b, "concat_rows");
    Tensor<T> out(a.heads, a.tokens + b.tokens, a.dim);
    for (int h = 0; h < a.heads; ++h) {
        for (int t = 0; t < a.tokens; ++t) {
            const T* src = a.row(h, t);
            std::copy(src, src + a.dim, out.row(h, t));
        }
        for (int t = 0; t < b.tokens; ++t) {
            const T* src = b.row(h, t);
            std::copy(src, src + b.dim, out.row(h, a.tokens + t));
        }
    }
    return out;
}

// Copies rows [begin, begin+count) of every head.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int begin, int count) {
    if (begin < 0 || count < 0 || begin + count > a.tokens)
        throw IndexOutOfRange("slice_rows: range outside tensor");
    Tensor<T> out(a.heads, count, a.dim);
    for (int h = 0; h < a.heads; ++h)
        for (int t = 0; t < count; ++t) {
            const T* src = a.row(h, begin + t);
            std::copy(src, src + a.dim, out.row(h, t));
        }
    return out;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("max_abs_diff: shapes differ");
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
        if (d > worst) worst = d;
    }
    return worst;
}

}  // namespace gsa
