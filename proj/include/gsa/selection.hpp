#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gsa/dot.hpp"
#include "gsa/layout.hpp"
#include "gsa/parallel.hpp"
#include "gsa/tensor.hpp"
#include "gsa/types.hpp"

namespace gsa {

// Per-head, per-query-window key-window lists. Rows are CSR-packed because
// hybrid rows can differ in length after deduplication. All queries of a
// compression window share its row.
struct SelectionPlan {
    int heads = 0;
    int rows = 0;                       // num_windows
    std::vector<int64_t> offsets;       // heads*rows + 1
    std::vector<int32_t> window_ids;    // flat row payloads
    std::vector<int32_t> forced_windows;  // ascending; empty for plain

    int row_size(int h, int r) const {
        const size_t i = static_cast<size_t>(h) * rows + r;
        return static_cast<int>(offsets[i + 1] - offsets[i]);
    }
    const int32_t* row(int h, int r) const {
        return window_ids.data() + offsets[static_cast<size_t>(h) * rows + r];
    }
};

// Frames whose windows are force-included by the hybrid variant: the
// reference frame 0 plus every ref_stride-th frame after it.
std::vector<int> forced_frames(const TokenLayout& layout, int ref_stride);

// All windows of the forced frames, ascending.
std::vector<int32_t> forced_windows_of(const TokenLayout& layout, int ref_stride);

// Byte mask over windows, 1 = window belongs to a forced frame. Used to keep
// the dynamic top-k out of the forced set.
std::vector<uint8_t> forced_window_mask(const TokenLayout& layout, int ref_stride);

// plain: rows are the top-k rows unchanged. hybrid: forced windows
// (ascending) followed by the dynamic entries in score order, duplicates of
// forced entries dropped.
SelectionPlan build_selection_plan(const TopkResult& topk, const TokenLayout& layout,
                                   SelectionVariant variant, int ref_stride);

template <typename T>
struct SelectionResult {
    Tensor<T> out;       // one row per image token
    std::vector<T> lse;  // heads * image_tokens, m + log(l)
};

// Fine-grained attention restricted to the selected windows. Query rows of
// window w attend exactly the s^2 member tokens of every window in plan row
// (h, w), iterated in row order; online softmax per query with the same
// running statistics as the tiled kernel. The per-row log-sum-exp is kept
// for the backward pass.
template <typename T>
SelectionResult<T> block_sparse_attention(const Tensor<T>& q_img, const Tensor<T>& k_img,
                                          const Tensor<T>& v_img, const SelectionPlan& plan,
                                          const TokenLayout& layout, T scale,
                                          const KernelTiling& tiling,
                                          KernelStats* stats = nullptr, int threads = 1) {
    if (q_img.tokens != layout.image_tokens())
        throw ShapeMismatch("block_sparse_attention: Q rows != image tokens");
    if (k_img.tokens != layout.image_tokens() || v_img.tokens != layout.image_tokens())
        throw ShapeMismatch("block_sparse_attention: K/V rows != image tokens");
    require_same_heads_dim(q_img, k_img, "block_sparse_attention");
    require_same_heads_dim(q_img, v_img, "block_sparse_attention");
    validate_tiling(tiling);
    if (plan.heads != q_img.heads || plan.rows != layout.num_windows())
        throw ShapeMismatch("block_sparse_attention: plan shape does not match layout/heads");

    const int heads = q_img.heads, dim = q_img.dim;
    const int windows = layout.num_windows();
    const int s2 = layout.window_s * layout.window_s;

    for (int h = 0; h < heads; ++h)
        for (int w = 0; w < windows; ++w)
            if (plan.row_size(h, w) == 0)
                throw EmptySelection("block_sparse_attention: empty plan row");

    SelectionResult<T> res;
    res.out = Tensor<T>(heads, layout.image_tokens(), dim);
    res.lse.assign(static_cast<size_t>(heads) * layout.image_tokens(), T(0));

    const T neg_inf = -std::numeric_limits<T>::infinity();

    parallel_for(heads * windows, threads, [&](int item) {
        const int h = item / windows;
        const int w = item % windows;
        const int nsel = plan.row_size(h, w);
        const int32_t* sel = plan.row(h, w);

        // gather the fine key set once per (head, window); shared by all
        // s^2 queries of the window
        std::vector<int> keys;
        keys.reserve(static_cast<size_t>(nsel) * s2);
        for (int j = 0; j < nsel; ++j)
            for (int member : layout.tokens_of_window(sel[j])) keys.push_back(member);

        if (stats)
            stats->keys_attended.fetch_add(static_cast<uint64_t>(keys.size()) * s2,
                                           std::memory_order_relaxed);

        std::vector<T> acc(dim);
        for (int qt : layout.tokens_of_window(w)) {
            const T* qrow = q_img.row(h, qt);
            T m = neg_inf, l = T(0);
            std::fill(acc.begin(), acc.end(), T(0));
            for (int key : keys) {
                const T s = scaled_dot(qrow, k_img.row(h, key), dim, scale);
                if (s > m) {
                    const T alpha = std::exp(m - s);
                    for (int d = 0; d < dim; ++d) acc[d] *= alpha;
                    l *= alpha;
                    m = s;
                }
                const T p = std::exp(s - m);
                l += p;
                const T* vrow = v_img.row(h, key);
                for (int d = 0; d < dim; ++d) acc[d] += p * vrow[d];
            }
            T* orow = res.out.row(h, qt);
            const T inv = T(1) / l;
            for (int d = 0; d < dim; ++d) orow[d] = acc[d] * inv;
            res.lse[static_cast<size_t>(h) * layout.image_tokens() + qt] = m + std::log(l);
        }
    });
    return res;
}

}  // namespace gsa
