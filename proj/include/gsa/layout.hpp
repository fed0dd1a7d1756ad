#pragma once

#include <vector>

#include "gsa/errors.hpp"
#include "gsa/tensor.hpp"

namespace gsa {

// Geometry of a token sequence: [special tokens][frame 0 row-major grid][frame 1]...
// Each frame's grid is tiled independently by non-overlapping s x s windows,
// so a window never spans two frames.
struct TokenLayout {
    int num_special = 0;
    int num_frames = 1;
    int grid_h = 0;
    int grid_w = 0;
    int window_s = 1;

    int tokens_per_frame() const { return grid_h * grid_w; }
    int image_tokens() const { return num_frames * tokens_per_frame(); }
    int total_tokens() const { return num_special + image_tokens(); }

    int wins_h() const { return grid_h / window_s; }
    int wins_w() const { return grid_w / window_s; }
    int windows_per_frame() const { return wins_h() * wins_w(); }
    int num_windows() const { return num_frames * windows_per_frame(); }

    // image_token_index is relative to the image block (special tokens excluded).
    int window_of_token(int image_token_index) const;

    // The s^2 member tokens of a window, ascending image-token index.
    std::vector<int> tokens_of_window(int window_index) const;

    int frame_of_window(int window_index) const {
        if (window_index < 0 || window_index >= num_windows())
            throw IndexOutOfRange("frame_of_window: window index out of range");
        return window_index / windows_per_frame();
    }
};

TokenLayout build_token_layout(int num_special, int num_frames, int grid_h, int grid_w,
                               int window_s);

template <typename T>
struct QkvPartition {
    Tensor<T> q_spec, k_spec, v_spec;
    Tensor<T> q_img, k_img, v_img;
};

// Splits projected tensors by token type. Concatenating the slices back in
// order reproduces the inputs bitwise.
template <typename T>
QkvPartition<T> partition_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              const TokenLayout& layout) {
    const int total = layout.total_tokens();
    if (q.tokens != total || k.tokens != total || v.tokens != total)
        throw ShapeMismatch("partition_qkv: token count does not match layout");
    require_same_heads_dim(q, k, "partition_qkv");
    require_same_heads_dim(q, v, "partition_qkv");
    QkvPartition<T> p;
    p.q_spec = slice_rows(q, 0, layout.num_special);
    p.k_spec = slice_rows(k, 0, layout.num_special);
    p.v_spec = slice_rows(v, 0, layout.num_special);
    p.q_img = slice_rows(q, layout.num_special, layout.image_tokens());
    p.k_img = slice_rows(k, layout.num_special, layout.image_tokens());
    p.v_img = slice_rows(v, layout.num_special, layout.image_tokens());
    return p;
}

}  // namespace gsa
