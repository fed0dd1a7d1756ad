#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "gsa/dot.hpp"
#include "gsa/layout.hpp"
#include "gsa/selection.hpp"
#include "gsa/tensor.hpp"
#include "gsa/types.hpp"

// Brute-force implementations of every kernel. No tiling, no streaming, no
// shared state with the fused paths beyond the score primitive; these are
// the ground truth the kernels are tested against. Clarity over speed.

namespace gsa {

template <typename T>
inline T resolved_scale(const GsaParams& params, int dim) {
    return params.scale > 0.0 ? static_cast<T>(params.scale)
                              : static_cast<T>(1.0 / std::sqrt(static_cast<double>(dim)));
}

// Max-subtracted softmax in place. -inf entries come out as exact zeros.
template <typename T>
inline void softmax_inplace(T* logits, int n) {
    T m = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < n; ++i) m = std::max(m, logits[i]);
    T sum = T(0);
    for (int i = 0; i < n; ++i) {
        logits[i] = std::exp(logits[i] - m);
        sum += logits[i];
    }
    const T inv = T(1) / sum;
    for (int i = 0; i < n; ++i) logits[i] *= inv;
}

// Dense softmax(Q K^T * scale) V, one query row at a time.
template <typename T>
Tensor<T> full_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale) {
    if (k.tokens != v.tokens) throw ShapeMismatch("full_attention: K/V token counts differ");
    require_same_heads_dim(q, k, "full_attention");
    require_same_heads_dim(q, v, "full_attention");
    if (scale <= T(0)) throw GsaError("full_attention: scale must be > 0");
    require_finite(q, "Q");
    require_finite(k, "K");
    require_finite(v, "V");
    Tensor<T> out(q.heads, q.tokens, q.dim);
    if (q.tokens == 0) return out;
    if (k.tokens == 0) throw ShapeMismatch("full_attention: empty key set");

    std::vector<T> p(k.tokens);
    for (int h = 0; h < q.heads; ++h) {
        for (int t = 0; t < q.tokens; ++t) {
            const T* qrow = q.row(h, t);
            for (int j = 0; j < k.tokens; ++j) {
                const T* krow = k.row(h, j);
                T s = T(0);
                for (int d = 0; d < q.dim; ++d) s += qrow[d] * krow[d];
                p[j] = s * scale;
            }
            softmax_inplace(p.data(), k.tokens);
            T* orow = out.row(h, t);
            for (int j = 0; j < k.tokens; ++j) {
                const T* vrow = v.row(h, j);
                for (int d = 0; d < q.dim; ++d) orow[d] += p[j] * vrow[d];
            }
        }
    }
    return out;
}

// Indices of the k largest scores, descending score, ties toward the lower
// index. k >= n returns every index under the same ordering.
template <typename T>
std::vector<int32_t> naive_topk(const std::vector<T>& scores, int k) {
    for (T s : scores)
        if (!std::isfinite(static_cast<double>(s)))
            throw NonFiniteInput("naive_topk: scores must be finite");
    std::vector<int32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int32_t a, int32_t b) { return scores[a] > scores[b]; });
    const int take = std::min<int>(k, static_cast<int>(order.size()));
    order.resize(std::max(take, 0));
    return order;
}

// naive_topk over the non-excluded positions only; returned indices are in
// the original coordinate system. Compaction preserves relative order, so
// the tie rule carries over.
template <typename T>
std::vector<int32_t> naive_topk_excluding(const std::vector<T>& scores,
                                          const std::vector<uint8_t>& excluded, int k) {
    std::vector<T> kept;
    std::vector<int32_t> remap;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!excluded.empty() && excluded[i]) continue;
        kept.push_back(scores[i]);
        remap.push_back(static_cast<int32_t>(i));
    }
    std::vector<int32_t> local = naive_topk(kept, k);
    for (int32_t& idx : local) idx = remap[idx];
    return local;
}

template <typename T>
struct MaskedAttentionResult {
    Tensor<T> out;
    std::vector<double> denominators;  // per (head, query): sum_j exp(score_j) over allowed j
};

// Selection-branch oracle: dense attention over all image keys with the
// unselected ones masked to -inf. Mathematically identical to gathering the
// selected windows' tokens.
template <typename T>
MaskedAttentionResult<T> masked_image_attention(const Tensor<T>& q_img, const Tensor<T>& k_img,
                                                const Tensor<T>& v_img, const SelectionPlan& plan,
                                                const TokenLayout& layout, T scale) {
    if (q_img.tokens != layout.image_tokens())
        throw ShapeMismatch("masked_image_attention: Q rows != image tokens");
    require_same_heads_dim(q_img, k_img, "masked_image_attention");
    require_same_heads_dim(q_img, v_img, "masked_image_attention");

    const int mi = layout.image_tokens();
    const T neg_inf = -std::numeric_limits<T>::infinity();
    MaskedAttentionResult<T> res;
    res.out = Tensor<T>(q_img.heads, mi, q_img.dim);
    res.denominators.assign(static_cast<size_t>(q_img.heads) * mi, 0.0);

    std::vector<uint8_t> allowed(mi);
    std::vector<T> p(mi);
    for (int h = 0; h < q_img.heads; ++h) {
        for (int w = 0; w < layout.num_windows(); ++w) {
            std::fill(allowed.begin(), allowed.end(), uint8_t(0));
            const int32_t* sel = plan.row(h, w);
            for (int j = 0; j < plan.row_size(h, w); ++j)
                for (int member : layout.tokens_of_window(sel[j])) allowed[member] = 1;

            for (int qt : layout.tokens_of_window(w)) {
                const T* qrow = q_img.row(h, qt);
                double denom = 0.0;
                for (int j = 0; j < mi; ++j) {
                    if (!allowed[j]) {
                        p[j] = neg_inf;
                        continue;
                    }
                    const T* krow = k_img.row(h, j);
                    T s = T(0);
                    for (int d = 0; d < q_img.dim; ++d) s += qrow[d] * krow[d];
                    p[j] = s * scale;
                    denom += std::exp(static_cast<double>(p[j]));
                }
                res.denominators[static_cast<size_t>(h) * mi + qt] = denom;
                softmax_inplace(p.data(), mi);
                T* orow = res.out.row(h, qt);
                for (int j = 0; j < mi; ++j) {
                    if (p[j] == T(0)) continue;
                    const T* vrow = v_img.row(h, j);
                    for (int d = 0; d < q_img.dim; ++d) orow[d] += p[j] * vrow[d];
                }
            }
        }
    }
    return res;
}

namespace detail {

// Loop-based s x s mean pooling, same member order as the kernel path so the
// pooled tensors (and hence the guide scores fed to top-k) agree bitwise.
template <typename T>
Tensor<T> pool_loop(const Tensor<T>& x_img, const TokenLayout& layout) {
    const int s2 = layout.window_s * layout.window_s;
    Tensor<T> out(x_img.heads, layout.num_windows(), x_img.dim);
    for (int h = 0; h < x_img.heads; ++h)
        for (int w = 0; w < layout.num_windows(); ++w) {
            T* dst = out.row(h, w);
            for (int member : layout.tokens_of_window(w)) {
                const T* src = x_img.row(h, member);
                for (int d = 0; d < x_img.dim; ++d) dst[d] += src[d];
            }
            for (int d = 0; d < x_img.dim; ++d) dst[d] /= static_cast<T>(s2);
        }
    return out;
}

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

// The fully composed naive GSA: dense special attention, loop pooling,
// dense compressed attention with sort-based top-k, nearest upsample,
// masked dense selection attention, sigmoid gate, concatenation.
// gate_weights is [heads x dim x dim], applied as sigmoid(q . W).
template <typename T>
Tensor<T> reference_gsa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                        const TokenLayout& layout, const GsaParams& params,
                        const Tensor<T>& gate_weights) {
    validate_params(params);
    if (params.window_s != layout.window_s)
        throw ShapeMismatch("reference_gsa: params.window_s != layout.window_s");
    if (gate_weights.heads != q.heads || gate_weights.tokens != q.dim ||
        gate_weights.dim != q.dim)
        throw ShapeMismatch("reference_gsa: gate weights must be heads x dim x dim");

    const T scale = resolved_scale<T>(params, q.dim);
    const int heads = q.heads, dim = q.dim;
    const int windows = layout.num_windows();
    auto parts = partition_qkv(q, k, v, layout);

    // special tokens: dense attention over everything
    Tensor<T> o_spec = full_attention(parts.q_spec, k, v, scale);

    // compression branch, dense in the compressed space
    Tensor<T> qc = detail::pool_loop(parts.q_img, layout);
    Tensor<T> kc = detail::pool_loop(parts.k_img, layout);
    Tensor<T> vc = detail::pool_loop(parts.v_img, layout);

    std::vector<uint8_t> excluded;
    if (params.variant == SelectionVariant::kHybrid)
        excluded = forced_window_mask(layout, params.ref_stride);
    int selectable = windows;
    for (uint8_t e : excluded)
        if (e) --selectable;
    const int k_eff = std::min(params.top_k, selectable);

    Tensor<T> o_comp_coarse(heads, windows, dim);
    TopkResult topk(heads, windows, k_eff);
    std::vector<T> score_row(windows);
    for (int h = 0; h < heads; ++h) {
        for (int wq = 0; wq < windows; ++wq) {
            const T* qrow = qc.row(h, wq);
            for (int wk = 0; wk < windows; ++wk)
                score_row[wk] = scaled_dot(qrow, kc.row(h, wk), dim, scale);
            std::vector<int32_t> top = excluded.empty()
                                           ? naive_topk(score_row, k_eff)
                                           : naive_topk_excluding(score_row, excluded, k_eff);
            std::copy(top.begin(), top.end(), topk.row(h, wq));

            softmax_inplace(score_row.data(), windows);
            T* orow = o_comp_coarse.row(h, wq);
            for (int wk = 0; wk < windows; ++wk) {
                const T* vrow = vc.row(h, wk);
                for (int d = 0; d < dim; ++d) orow[d] += score_row[wk] * vrow[d];
            }
        }
    }

    SelectionPlan plan = build_selection_plan(topk, layout, params.variant, params.ref_stride);
    Tensor<T> o_sel = masked_image_attention(parts.q_img, parts.k_img, parts.v_img, plan,
                                             layout, scale)
                          .out;

    // nearest upsample + gated fuse
    Tensor<T> o_img(heads, layout.image_tokens(), dim);
    for (int h = 0; h < heads; ++h) {
        const T* wg = gate_weights.row(h, 0);
        for (int t = 0; t < layout.image_tokens(); ++t) {
            const T* qrow = parts.q_img.row(h, t);
            const T* comp = o_comp_coarse.row(h, layout.window_of_token(t));
            const T* sel = o_sel.row(h, t);
            T* orow = o_img.row(h, t);
            for (int d = 0; d < dim; ++d) {
                T z = T(0);
                for (int a = 0; a < dim; ++a) z += qrow[a] * wg[a * dim + d];
                const T g = detail::sigmoid(z);
                orow[d] = g * comp[d] + (T(1) - g) * sel[d];
            }
        }
    }
    return concat_rows(o_spec, o_img);
}

}  // namespace gsa
