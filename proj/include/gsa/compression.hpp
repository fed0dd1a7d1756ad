#pragma once

#include <algorithm>
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

// Non-overlapping s x s average pooling over each frame's patch grid.
// Row w of the output is the arithmetic mean of the s^2 member rows of
// window w, accumulated in ascending token order.
template <typename T>
Tensor<T> avg_pool_tokens(const Tensor<T>& x_img, const TokenLayout& layout) {
    if (x_img.tokens != layout.image_tokens())
        throw ShapeMismatch("avg_pool_tokens: rows != image tokens");
    const int s2 = layout.window_s * layout.window_s;
    const T inv = T(1) / static_cast<T>(s2);
    Tensor<T> out(x_img.heads, layout.num_windows(), x_img.dim);
    for (int h = 0; h < x_img.heads; ++h) {
        for (int w = 0; w < layout.num_windows(); ++w) {
            T* dst = out.row(h, w);
            for (int member : layout.tokens_of_window(w)) {
                const T* src = x_img.row(h, member);
                for (int d = 0; d < x_img.dim; ++d) dst[d] += src[d];
            }
            for (int d = 0; d < x_img.dim; ++d) dst[d] *= inv;
        }
    }
    return out;
}

// Nearest-neighbor upsampling: every fine token receives a copy of its
// window's coarse row.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& coarse, const TokenLayout& layout) {
    if (coarse.tokens != layout.num_windows())
        throw ShapeMismatch("upsample_nearest: rows != num windows");
    Tensor<T> out(coarse.heads, layout.image_tokens(), coarse.dim);
    for (int h = 0; h < coarse.heads; ++h)
        for (int t = 0; t < layout.image_tokens(); ++t) {
            const T* src = coarse.row(h, layout.window_of_token(t));
            std::copy(src, src + coarse.dim, out.row(h, t));
        }
    return out;
}

namespace detail {

// One (score, column) candidate of the streaming selection. Ordering is the
// same total order the sort-based oracle uses: higher score first, lower
// index first on equal scores. Index -1 marks an empty slot and loses to
// every real entry, including real entries at -inf.
template <typename T>
struct TopkEntry {
    T score;
    int32_t index;
};

template <typename T>
inline bool topk_better(const TopkEntry<T>& a, const TopkEntry<T>& b) {
    if (a.index < 0) return false;
    if (b.index < 0) return true;
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
}

// Merges one row's running list with a tile's sorted candidates, keeping the
// best `cap`. Both inputs are sorted under topk_better; tiles never repeat
// a column, so no dedup is needed.
template <typename T>
inline void topk_merge(TopkEntry<T>* run_row, int& run_len, const TopkEntry<T>* tile,
                       int tile_len, int cap, std::vector<TopkEntry<T>>& scratch) {
    scratch.clear();
    int i = 0, j = 0;
    while (static_cast<int>(scratch.size()) < cap && (i < run_len || j < tile_len)) {
        if (j >= tile_len || (i < run_len && topk_better(run_row[i], tile[j])))
            scratch.push_back(run_row[i++]);
        else
            scratch.push_back(tile[j++]);
    }
    run_len = static_cast<int>(scratch.size());
    std::copy(scratch.begin(), scratch.end(), run_row);
}

}  // namespace detail

// Plain tiled attention with online softmax: per query tile, iterate key
// tiles keeping a running row max m, denominator l and rescaled accumulator.
// Writes per-row log-sum-exp m + log(l) into lse. Used for the dense special
// token path and as the value half of the compressed kernel.
template <typename T>
void tiled_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale,
                     const KernelTiling& tiling, Tensor<T>& out, std::vector<T>& lse,
                     KernelStats* stats = nullptr, int threads = 1) {
    if (k.tokens != v.tokens) throw ShapeMismatch("tiled_attention: K/V token counts differ");
    require_same_heads_dim(q, k, "tiled_attention");
    require_same_heads_dim(q, v, "tiled_attention");
    validate_tiling(tiling);
    const int heads = q.heads, mq = q.tokens, mk = k.tokens, dim = q.dim;
    out = Tensor<T>(heads, mq, dim);
    lse.assign(static_cast<size_t>(heads) * mq, T(0));
    if (mq == 0) return;
    if (mk == 0) throw ShapeMismatch("tiled_attention: empty key set");

    const int bm = tiling.block_m, bn = tiling.block_n;
    const int qtiles = (mq + bm - 1) / bm;
    const T neg_inf = -std::numeric_limits<T>::infinity();

    parallel_for(heads * qtiles, threads, [&](int item) {
        const int h = item / qtiles;
        const int qt = item % qtiles;
        const int q0 = qt * bm;
        const int qrows = std::min(bm, mq - q0);

        std::vector<T> scores(static_cast<size_t>(qrows) * bn);
        std::vector<T> m(qrows, neg_inf), l(qrows, T(0));
        std::vector<T> acc(static_cast<size_t>(qrows) * dim, T(0));

        for (int k0 = 0; k0 < mk; k0 += bn) {
            const int krows = std::min(bn, mk - k0);
            for (int qi = 0; qi < qrows; ++qi) {
                const T* qrow = q.row(h, q0 + qi);
                T* srow = scores.data() + static_cast<size_t>(qi) * bn;
                for (int kj = 0; kj < krows; ++kj)
                    srow[kj] = scaled_dot(qrow, k.row(h, k0 + kj), dim, scale);
            }
            if (stats)
                stats->scores_computed.fetch_add(static_cast<uint64_t>(qrows) * krows,
                                                 std::memory_order_relaxed);
            for (int qi = 0; qi < qrows; ++qi) {
                const T* srow = scores.data() + static_cast<size_t>(qi) * bn;
                T m_tile = neg_inf;
                for (int kj = 0; kj < krows; ++kj) m_tile = std::max(m_tile, srow[kj]);
                const T m_new = std::max(m[qi], m_tile);
                const T alpha = std::exp(m[qi] - m_new);
                T* arow = acc.data() + static_cast<size_t>(qi) * dim;
                for (int d = 0; d < dim; ++d) arow[d] *= alpha;
                T l_new = l[qi] * alpha;
                for (int kj = 0; kj < krows; ++kj) {
                    const T p = std::exp(srow[kj] - m_new);
                    l_new += p;
                    const T* vrow = v.row(h, k0 + kj);
                    for (int d = 0; d < dim; ++d) arow[d] += p * vrow[d];
                }
                m[qi] = m_new;
                l[qi] = l_new;
            }
        }
        for (int qi = 0; qi < qrows; ++qi) {
            T* orow = out.row(h, q0 + qi);
            const T* arow = acc.data() + static_cast<size_t>(qi) * dim;
            const T inv = T(1) / l[qi];
            for (int d = 0; d < dim; ++d) orow[d] = arow[d] * inv;
            lse[static_cast<size_t>(h) * mq + q0 + qi] = m[qi] + std::log(l[qi]);
        }
    });
}

template <typename T>
struct CompressedResult {
    Tensor<T> out;       // coarse attention output, one row per window
    std::vector<T> lse;  // heads * windows, m + log(l)
    TopkResult topk;
};

// Fused compressed attention + streaming top-k. A single pass over the key
// tiles both updates the online softmax and maintains each query row's k
// best (score, window) pairs, so the full score matrix is never
// materialized. Columns flagged in `excluded` still contribute to the
// softmax but are never top-k candidates; the realized row width is
// min(k, selectable columns). Results are independent of the tiling.
template <typename T>
CompressedResult<T> fused_compressed_attention_topk(
    const Tensor<T>& qc, const Tensor<T>& kc, const Tensor<T>& vc, int k, T scale,
    const KernelTiling& tiling, const std::vector<uint8_t>* excluded = nullptr,
    bool keep_guide_scores = false, KernelStats* stats = nullptr, int threads = 1) {
    if (kc.tokens != vc.tokens || qc.tokens != kc.tokens)
        throw ShapeMismatch("fused_compressed_attention_topk: Q/K/V must share the window count");
    require_same_heads_dim(qc, kc, "fused_compressed_attention_topk");
    require_same_heads_dim(qc, vc, "fused_compressed_attention_topk");
    validate_tiling(tiling);
    if (k < 0) throw GsaError("fused_compressed_attention_topk: k must be >= 0");
    if (excluded && static_cast<int>(excluded->size()) != kc.tokens)
        throw ShapeMismatch("fused_compressed_attention_topk: exclusion mask size");

    const int heads = qc.heads, windows = qc.tokens, dim = qc.dim;
    int selectable = windows;
    if (excluded)
        for (uint8_t e : *excluded)
            if (e) --selectable;
    const int k_eff = std::min(k, selectable);

    CompressedResult<T> res;
    res.out = Tensor<T>(heads, windows, dim);
    res.lse.assign(static_cast<size_t>(heads) * windows, T(0));
    res.topk = TopkResult(heads, windows, k_eff);
    if (keep_guide_scores)
        res.topk.guide_scores.assign(res.topk.indices.size(), 0.0);
    if (windows == 0) return res;

    const int bm = tiling.block_m, bn = tiling.block_n;
    const int qtiles = (windows + bm - 1) / bm;
    const T neg_inf = -std::numeric_limits<T>::infinity();

    parallel_for(heads * qtiles, threads, [&](int item) {
        const int h = item / qtiles;
        const int qt = item % qtiles;
        const int q0 = qt * bm;
        const int qrows = std::min(bm, windows - q0);

        std::vector<T> scores(static_cast<size_t>(qrows) * bn);
        std::vector<T> m(qrows, neg_inf), l(qrows, T(0));
        std::vector<T> acc(static_cast<size_t>(qrows) * dim, T(0));
        std::vector<detail::TopkEntry<T>> run(static_cast<size_t>(qrows) * std::max(k_eff, 1));
        std::vector<int> run_len(qrows, 0);
        std::vector<detail::TopkEntry<T>> tile_cand(bn);
        std::vector<detail::TopkEntry<T>> scratch;
        scratch.reserve(2 * std::max(k_eff, 1));

        for (int k0 = 0; k0 < windows; k0 += bn) {
            const int krows = std::min(bn, windows - k0);
            for (int qi = 0; qi < qrows; ++qi) {
                const T* qrow = qc.row(h, q0 + qi);
                T* srow = scores.data() + static_cast<size_t>(qi) * bn;
                for (int kj = 0; kj < krows; ++kj)
                    srow[kj] = scaled_dot(qrow, kc.row(h, k0 + kj), dim, scale);
            }
            if (stats)
                stats->scores_computed.fetch_add(static_cast<uint64_t>(qrows) * krows,
                                                 std::memory_order_relaxed);
            for (int qi = 0; qi < qrows; ++qi) {
                const T* srow = scores.data() + static_cast<size_t>(qi) * bn;

                // online softmax update, rescaled-accumulator form
                T m_tile = neg_inf;
                for (int kj = 0; kj < krows; ++kj) m_tile = std::max(m_tile, srow[kj]);
                const T m_new = std::max(m[qi], m_tile);
                const T alpha = std::exp(m[qi] - m_new);
                T* arow = acc.data() + static_cast<size_t>(qi) * dim;
                for (int d = 0; d < dim; ++d) arow[d] *= alpha;
                T l_new = l[qi] * alpha;
                for (int kj = 0; kj < krows; ++kj) {
                    const T p = std::exp(srow[kj] - m_new);
                    l_new += p;
                    const T* vrow = vc.row(h, k0 + kj);
                    for (int d = 0; d < dim; ++d) arow[d] += p * vrow[d];
                }
                m[qi] = m_new;
                l[qi] = l_new;

                // streaming top-k: take this tile's best candidates, merge
                // with the running set
                if (k_eff > 0) {
                    int nc = 0;
                    for (int kj = 0; kj < krows; ++kj) {
                        const int32_t col = static_cast<int32_t>(k0 + kj);
                        if (excluded && (*excluded)[col]) continue;
                        tile_cand[nc++] = {srow[kj], col};
                    }
                    if (nc > 0) {
                        const int take = std::min(k_eff, nc);
                        std::partial_sort(tile_cand.begin(), tile_cand.begin() + take,
                                          tile_cand.begin() + nc, detail::topk_better<T>);
                        detail::topk_merge(run.data() + static_cast<size_t>(qi) * k_eff,
                                           run_len[qi], tile_cand.data(), take, k_eff, scratch);
                    }
                }
            }
        }
        for (int qi = 0; qi < qrows; ++qi) {
            T* orow = res.out.row(h, q0 + qi);
            const T* arow = acc.data() + static_cast<size_t>(qi) * dim;
            const T inv = T(1) / l[qi];
            for (int d = 0; d < dim; ++d) orow[d] = arow[d] * inv;
            res.lse[static_cast<size_t>(h) * windows + q0 + qi] = m[qi] + std::log(l[qi]);
            if (k_eff > 0) {
                const detail::TopkEntry<T>* rrow = run.data() + static_cast<size_t>(qi) * k_eff;
                int32_t* dst = res.topk.row(h, q0 + qi);
                for (int j = 0; j < k_eff; ++j) dst[j] = rrow[j].index;
                if (keep_guide_scores) {
                    double* gs = res.topk.guide_scores.data() +
                                 (static_cast<size_t>(h) * windows + q0 + qi) * k_eff;
                    for (int j = 0; j < k_eff; ++j) gs[j] = static_cast<double>(rrow[j].score);
                }
            }
        }
    });
    return res;
}

}  // namespace gsa
