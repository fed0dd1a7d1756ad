#pragma once

#include <cmath>
#include <vector>

#include "gsa/compression.hpp"
#include "gsa/layout.hpp"
#include "gsa/reference.hpp"
#include "gsa/selection.hpp"
#include "gsa/tensor.hpp"
#include "gsa/types.hpp"

namespace gsa {

// Projection and gate weights. w_q/w_k/w_v are [heads x model_dim x dim],
// applied as x . W per head; w_g is [heads x dim x dim] on the head space.
template <typename T>
struct LayerWeights {
    Tensor<T> w_q, w_k, w_v;
    Tensor<T> w_g;

    int heads() const { return w_q.heads; }
    int model_dim() const { return w_q.tokens; }
    int dim() const { return w_q.dim; }
};

template <typename T>
void validate_weights(const LayerWeights<T>& w) {
    const int h = w.w_q.heads, c = w.w_q.tokens, d = w.w_q.dim;
    auto shaped = [&](const Tensor<T>& t, int th, int tt, int td) {
        return t.heads == th && t.tokens == tt && t.dim == td;
    };
    if (!shaped(w.w_k, h, c, d) || !shaped(w.w_v, h, c, d))
        throw ShapeMismatch("weights: w_q/w_k/w_v shapes disagree");
    if (!shaped(w.w_g, h, d, d)) throw ShapeMismatch("weights: w_g must be heads x dim x dim");
    require_finite(w.w_q, "w_q");
    require_finite(w.w_k, "w_k");
    require_finite(w.w_v, "w_v");
    require_finite(w.w_g, "w_g");
}

template <typename T>
struct Projected {
    Tensor<T> q, k, v;
};

// Per head: Q[h] = X . W_q[h], likewise K and V. X is [1 x tokens x model_dim].
template <typename T>
Projected<T> project_qkv(const Tensor<T>& x, const LayerWeights<T>& weights) {
    validate_weights(weights);
    if (x.heads != 1 || x.dim != weights.model_dim())
        throw ShapeMismatch("project_qkv: X must be [1 x tokens x model_dim]");
    require_finite(x, "X");
    const int heads = weights.heads(), tokens = x.tokens;
    const int c = weights.model_dim(), d = weights.dim();
    Projected<T> out{Tensor<T>(heads, tokens, d), Tensor<T>(heads, tokens, d),
                     Tensor<T>(heads, tokens, d)};
    auto matmul = [&](const Tensor<T>& w, Tensor<T>& dst) {
        for (int h = 0; h < heads; ++h) {
            const T* wh = w.row(h, 0);  // [c x d], row-major
            for (int t = 0; t < tokens; ++t) {
                const T* xrow = x.row(0, t);
                T* drow = dst.row(h, t);
                for (int a = 0; a < c; ++a) {
                    const T xa = xrow[a];
                    const T* wrow = wh + static_cast<size_t>(a) * d;
                    for (int j = 0; j < d; ++j) drow[j] += xa * wrow[j];
                }
            }
        }
    };
    matmul(weights.w_q, out.q);
    matmul(weights.w_k, out.k);
    matmul(weights.w_v, out.v);
    return out;
}

// Dense attention for the special tokens; keys/values cover the whole
// sequence. Thin wrapper over the tiled kernel.
template <typename T>
Tensor<T> special_token_attention(const Tensor<T>& q_spec, const Tensor<T>& k,
                                  const Tensor<T>& v, T scale,
                                  const KernelTiling& tiling = {},
                                  std::vector<T>* lse_out = nullptr,
                                  KernelStats* stats = nullptr, int threads = 1) {
    Tensor<T> out;
    std::vector<T> lse;
    if (q_spec.tokens == 0) {
        out = Tensor<T>(q_spec.heads, 0, q_spec.dim);
        if (lse_out) lse_out->clear();
        return out;
    }
    tiled_attention(q_spec, k, v, scale, tiling, out, lse, stats, threads);
    if (lse_out) *lse_out = std::move(lse);
    return out;
}

// Elementwise sigmoid of the per-head linear map g = sigma(q . W_g).
template <typename T>
Tensor<T> gate(const Tensor<T>& q_img, const Tensor<T>& w_g) {
    if (w_g.heads != q_img.heads || w_g.tokens != q_img.dim || w_g.dim != q_img.dim)
        throw ShapeMismatch("gate: weights must be heads x dim x dim");
    const int dim = q_img.dim;
    Tensor<T> g(q_img.heads, q_img.tokens, dim);
    for (int h = 0; h < q_img.heads; ++h) {
        const T* wh = w_g.row(h, 0);
        for (int t = 0; t < q_img.tokens; ++t) {
            const T* qrow = q_img.row(h, t);
            T* grow = g.row(h, t);
            for (int a = 0; a < dim; ++a) {
                const T qa = qrow[a];
                const T* wrow = wh + static_cast<size_t>(a) * dim;
                for (int j = 0; j < dim; ++j) grow[j] += qa * wrow[j];
            }
            for (int j = 0; j < dim; ++j) grow[j] = T(1) / (T(1) + std::exp(-grow[j]));
        }
    }
    return g;
}

// Everything the backward pass needs: inputs, per-branch outputs, softmax
// statistics and the detached selection. Probability matrices are not
// stored; backward rebuilds them from the LSE rows.
template <typename T>
struct ForwardContext {
    TokenLayout layout;
    GsaParams params;
    LayerWeights<T> weights;
    Tensor<T> x;

    Tensor<T> q, k, v;        // projected, full sequence
    Tensor<T> qc, kc, vc;     // pooled image tensors
    Tensor<T> o_comp_coarse;  // compressed-attention output per window
    std::vector<T> lse_comp;
    TopkResult topk;
    SelectionPlan plan;
    Tensor<T> o_sel;
    std::vector<T> lse_sel;
    Tensor<T> gate_vals;
    Tensor<T> o_spec;
    std::vector<T> lse_spec;
};

template <typename T>
struct GsaOutput {
    Tensor<T> out;
    ForwardContext<T> saved;
};

namespace detail {

// Shared tail of the two forward entry points, starting from projected
// tensors and a realized plan.
template <typename T>
Tensor<T> assemble_image_output(const QkvPartition<T>& parts, const Tensor<T>& o_comp_coarse,
                                const Tensor<T>& o_sel, const Tensor<T>& gate_vals,
                                const TokenLayout& layout) {
    const int heads = parts.q_img.heads, dim = parts.q_img.dim;
    Tensor<T> o_img(heads, layout.image_tokens(), dim);
    for (int h = 0; h < heads; ++h)
        for (int t = 0; t < layout.image_tokens(); ++t) {
            const T* comp = o_comp_coarse.row(h, layout.window_of_token(t));
            const T* sel = o_sel.row(h, t);
            const T* g = gate_vals.row(h, t);
            T* orow = o_img.row(h, t);
            for (int d = 0; d < dim; ++d)
                orow[d] = g[d] * comp[d] + (T(1) - g[d]) * sel[d];
        }
    return o_img;
}

}  // namespace detail

// The full GSA layer: project, partition, dense special path, pooled
// compressed attention with fused top-k, plan construction, block-sparse
// selection attention, gated fuse, concatenation.
template <typename T>
GsaOutput<T> gsa_forward(const Tensor<T>& x, const TokenLayout& layout, const GsaParams& params,
                         const LayerWeights<T>& weights, KernelStats* stats = nullptr,
                         int threads = 1) {
    validate_params(params);
    if (params.window_s != layout.window_s)
        throw ShapeMismatch("gsa_forward: params.window_s != layout.window_s");
    if (x.tokens != layout.total_tokens())
        throw ShapeMismatch("gsa_forward: X rows != layout.total_tokens()");

    GsaOutput<T> r;
    ForwardContext<T>& ctx = r.saved;
    ctx.layout = layout;
    ctx.params = params;
    ctx.weights = weights;
    ctx.x = x;

    const T scale = resolved_scale<T>(params, weights.dim());
    Projected<T> proj = project_qkv(x, weights);
    ctx.q = proj.q;
    ctx.k = proj.k;
    ctx.v = proj.v;
    auto parts = partition_qkv(proj.q, proj.k, proj.v, layout);

    ctx.o_spec = special_token_attention(parts.q_spec, proj.k, proj.v, scale, params.tiling,
                                         &ctx.lse_spec, stats, threads);

    ctx.qc = avg_pool_tokens(parts.q_img, layout);
    ctx.kc = avg_pool_tokens(parts.k_img, layout);
    ctx.vc = avg_pool_tokens(parts.v_img, layout);

    std::vector<uint8_t> excluded;
    if (params.variant == SelectionVariant::kHybrid)
        excluded = forced_window_mask(layout, params.ref_stride);
    CompressedResult<T> comp = fused_compressed_attention_topk(
        ctx.qc, ctx.kc, ctx.vc, params.top_k, scale, params.tiling,
        excluded.empty() ? nullptr : &excluded, false, stats, threads);
    ctx.o_comp_coarse = std::move(comp.out);
    ctx.lse_comp = std::move(comp.lse);
    ctx.topk = std::move(comp.topk);

    ctx.plan = build_selection_plan(ctx.topk, layout, params.variant, params.ref_stride);
    SelectionResult<T> sel = block_sparse_attention(parts.q_img, parts.k_img, parts.v_img,
                                                    ctx.plan, layout, scale, params.tiling,
                                                    stats, threads);
    ctx.o_sel = std::move(sel.out);
    ctx.lse_sel = std::move(sel.lse);

    ctx.gate_vals = gate(parts.q_img, weights.w_g);
    Tensor<T> o_img =
        detail::assemble_image_output(parts, ctx.o_comp_coarse, ctx.o_sel, ctx.gate_vals, layout);
    r.out = concat_rows(ctx.o_spec, o_img);
    return r;
}

// Forward with the selection pinned to a given plan. This is the smooth map
// the finite-difference checker probes: with indices held constant the layer
// is differentiable everywhere.
template <typename T>
Tensor<T> gsa_forward_with_plan(const Tensor<T>& x, const TokenLayout& layout,
                                const GsaParams& params, const LayerWeights<T>& weights,
                                const SelectionPlan& plan) {
    validate_params(params);
    if (x.tokens != layout.total_tokens())
        throw ShapeMismatch("gsa_forward_with_plan: X rows != layout.total_tokens()");
    const T scale = resolved_scale<T>(params, weights.dim());
    Projected<T> proj = project_qkv(x, weights);
    auto parts = partition_qkv(proj.q, proj.k, proj.v, layout);

    Tensor<T> o_spec = special_token_attention(parts.q_spec, proj.k, proj.v, scale, params.tiling);

    Tensor<T> qc = avg_pool_tokens(parts.q_img, layout);
    Tensor<T> kc = avg_pool_tokens(parts.k_img, layout);
    Tensor<T> vc = avg_pool_tokens(parts.v_img, layout);
    Tensor<T> o_comp_coarse;
    std::vector<T> lse;
    tiled_attention(qc, kc, vc, scale, params.tiling, o_comp_coarse, lse);

    SelectionResult<T> sel =
        block_sparse_attention(parts.q_img, parts.k_img, parts.v_img, plan, layout, scale,
                               params.tiling);
    Tensor<T> gate_vals = gate(parts.q_img, weights.w_g);
    Tensor<T> o_img =
        detail::assemble_image_output(parts, o_comp_coarse, sel.out, gate_vals, layout);
    return concat_rows(o_spec, o_img);
}

}  // namespace gsa
