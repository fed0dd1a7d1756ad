#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "gsa/layer.hpp"

namespace gsa {

template <typename T>
struct GsaGradients {
    Tensor<T> dx;                  // [1 x tokens x model_dim]
    Tensor<T> dw_q, dw_k, dw_v;    // [heads x model_dim x dim]
    Tensor<T> dw_g;                // [heads x dim x dim]
};

// Adjoint of avg_pool_tokens: each member token receives its window's
// gradient divided by s^2.
template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& d_pooled, const TokenLayout& layout) {
    if (d_pooled.tokens != layout.num_windows())
        throw ShapeMismatch("avg_pool_backward: rows != num windows");
    const T inv = T(1) / static_cast<T>(layout.window_s * layout.window_s);
    Tensor<T> out(d_pooled.heads, layout.image_tokens(), d_pooled.dim);
    for (int h = 0; h < d_pooled.heads; ++h)
        for (int t = 0; t < layout.image_tokens(); ++t) {
            const T* src = d_pooled.row(h, layout.window_of_token(t));
            T* dst = out.row(h, t);
            for (int d = 0; d < d_pooled.dim; ++d) dst[d] = src[d] * inv;
        }
    return out;
}

// Adjoint of upsample_nearest: member gradients sum into their window's row.
template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& d_fine, const TokenLayout& layout) {
    if (d_fine.tokens != layout.image_tokens())
        throw ShapeMismatch("upsample_backward: rows != image tokens");
    Tensor<T> out(d_fine.heads, layout.num_windows(), d_fine.dim);
    for (int h = 0; h < d_fine.heads; ++h)
        for (int t = 0; t < layout.image_tokens(); ++t) {
            const T* src = d_fine.row(h, t);
            T* dst = out.row(h, layout.window_of_token(t));
            for (int d = 0; d < d_fine.dim; ++d) dst[d] += src[d];
        }
    return out;
}

// Manual backward of the GSA layer with the top-k selection treated as a
// constant. Attention probabilities are rebuilt from the saved LSE rows
// (p = exp(score - lse)) instead of being stored by the forward.
template <typename T>
GsaGradients<T> gsa_backward(const ForwardContext<T>& ctx, const Tensor<T>& d_out,
                             int threads = 1) {
    const TokenLayout& layout = ctx.layout;
    const int heads = ctx.weights.heads();
    const int dim = ctx.weights.dim();
    const int model_dim = ctx.weights.model_dim();
    const int total = layout.total_tokens();
    const int ms = layout.num_special;
    const int mi = layout.image_tokens();
    const int windows = layout.num_windows();
    if (d_out.heads != heads || d_out.tokens != total || d_out.dim != dim)
        throw ContextMismatch("gsa_backward: dO shape does not match the saved forward");
    if (ctx.q.tokens != total || ctx.x.tokens != total)
        throw ContextMismatch("gsa_backward: saved context is inconsistent");

    const T scale = resolved_scale<T>(ctx.params, dim);
    const T inv_s2 = T(1) / static_cast<T>(layout.window_s * layout.window_s);

    GsaGradients<T> grads;
    grads.dx = Tensor<T>(1, total, model_dim);
    grads.dw_q = Tensor<T>(heads, model_dim, dim);
    grads.dw_k = Tensor<T>(heads, model_dim, dim);
    grads.dw_v = Tensor<T>(heads, model_dim, dim);
    grads.dw_g = Tensor<T>(heads, dim, dim);

    Tensor<T> dq(heads, total, dim), dk(heads, total, dim), dv(heads, total, dim);

    parallel_for(heads, threads, [&](int h) {
        std::vector<T> d_comp_fine(static_cast<size_t>(mi) * dim);
        std::vector<T> d_sel(static_cast<size_t>(mi) * dim);
        std::vector<T> d_comp_coarse(static_cast<size_t>(windows) * dim, T(0));
        std::vector<T> dqc(static_cast<size_t>(windows) * dim, T(0));
        std::vector<T> dkc(static_cast<size_t>(windows) * dim, T(0));
        std::vector<T> dvc(static_cast<size_t>(windows) * dim, T(0));
        const T* wg = ctx.weights.w_g.row(h, 0);
        T* dwg = grads.dw_g.row(h, 0);
        std::vector<T> dz(dim);

        // gate fuse: O_img = g*comp + (1-g)*sel, g = sigmoid(q . W_g)
        for (int i = 0; i < mi; ++i) {
            const T* go = d_out.row(h, ms + i);
            const T* g = ctx.gate_vals.row(h, i);
            const T* comp = ctx.o_comp_coarse.row(h, layout.window_of_token(i));
            const T* sel = ctx.o_sel.row(h, i);
            const T* qrow = ctx.q.row(h, ms + i);
            T* dcf = d_comp_fine.data() + static_cast<size_t>(i) * dim;
            T* ds = d_sel.data() + static_cast<size_t>(i) * dim;
            for (int d = 0; d < dim; ++d) {
                dcf[d] = g[d] * go[d];
                ds[d] = (T(1) - g[d]) * go[d];
                const T dg = (comp[d] - sel[d]) * go[d];
                dz[d] = g[d] * (T(1) - g[d]) * dg;
            }
            for (int a = 0; a < dim; ++a) {
                const T qa = qrow[a];
                const T* wrow = wg + static_cast<size_t>(a) * dim;
                T acc = T(0);
                T* dwrow = dwg + static_cast<size_t>(a) * dim;
                for (int j = 0; j < dim; ++j) {
                    dwrow[j] += qa * dz[j];
                    acc += wrow[j] * dz[j];
                }
                dq.row(h, ms + i)[a] += acc;
            }
        }

        // upsample backward: window-sum the fine compression gradient
        for (int i = 0; i < mi; ++i) {
            const T* src = d_comp_fine.data() + static_cast<size_t>(i) * dim;
            T* dst = d_comp_coarse.data() +
                     static_cast<size_t>(layout.window_of_token(i)) * dim;
            for (int d = 0; d < dim; ++d) dst[d] += src[d];
        }

        // compressed attention backward, probabilities from saved LSE
        for (int wq = 0; wq < windows; ++wq) {
            const T* dout = d_comp_coarse.data() + static_cast<size_t>(wq) * dim;
            const T* orow = ctx.o_comp_coarse.row(h, wq);
            const T* qcrow = ctx.qc.row(h, wq);
            const T lse = ctx.lse_comp[static_cast<size_t>(h) * windows + wq];
            T dvec = T(0);
            for (int d = 0; d < dim; ++d) dvec += dout[d] * orow[d];
            T* dqrow = dqc.data() + static_cast<size_t>(wq) * dim;
            for (int wk = 0; wk < windows; ++wk) {
                const T* krow = ctx.kc.row(h, wk);
                const T* vrow = ctx.vc.row(h, wk);
                const T p = std::exp(scaled_dot(qcrow, krow, dim, scale) - lse);
                T da = T(0);
                for (int d = 0; d < dim; ++d) da += dout[d] * vrow[d];
                const T dsc = p * (da - dvec) * scale;
                T* dkrow = dkc.data() + static_cast<size_t>(wk) * dim;
                T* dvrow = dvc.data() + static_cast<size_t>(wk) * dim;
                for (int d = 0; d < dim; ++d) {
                    dqrow[d] += dsc * krow[d];
                    dkrow[d] += dsc * qcrow[d];
                    dvrow[d] += p * dout[d];
                }
            }
        }

        // pooling backward into the image rows
        for (int i = 0; i < mi; ++i) {
            const size_t w = static_cast<size_t>(layout.window_of_token(i)) * dim;
            T* dqi = dq.row(h, ms + i);
            T* dki = dk.row(h, ms + i);
            T* dvi = dv.row(h, ms + i);
            for (int d = 0; d < dim; ++d) {
                dqi[d] += dqc[w + d] * inv_s2;
                dki[d] += dkc[w + d] * inv_s2;
                dvi[d] += dvc[w + d] * inv_s2;
            }
        }

        // selection attention backward over the detached plan
        for (int w = 0; w < windows; ++w) {
            const int nsel = ctx.plan.row_size(h, w);
            const int32_t* sel = ctx.plan.row(h, w);
            for (int qt : layout.tokens_of_window(w)) {
                const T* dout = d_sel.data() + static_cast<size_t>(qt) * dim;
                const T* orow = ctx.o_sel.row(h, qt);
                const T* qrow = ctx.q.row(h, ms + qt);
                const T lse = ctx.lse_sel[static_cast<size_t>(h) * mi + qt];
                T dvec = T(0);
                for (int d = 0; d < dim; ++d) dvec += dout[d] * orow[d];
                T* dqi = dq.row(h, ms + qt);
                for (int j = 0; j < nsel; ++j) {
                    for (int key : layout.tokens_of_window(sel[j])) {
                        const T* krow = ctx.k.row(h, ms + key);
                        const T* vrow = ctx.v.row(h, ms + key);
                        const T p = std::exp(scaled_dot(qrow, krow, dim, scale) - lse);
                        T da = T(0);
                        for (int d = 0; d < dim; ++d) da += dout[d] * vrow[d];
                        const T dsc = p * (da - dvec) * scale;
                        T* dki = dk.row(h, ms + key);
                        T* dvi = dv.row(h, ms + key);
                        for (int d = 0; d < dim; ++d) {
                            dqi[d] += dsc * krow[d];
                            dki[d] += dsc * qrow[d];
                            dvi[d] += p * dout[d];
                        }
                    }
                }
            }
        }

        // special-token dense backward; keys cover the whole sequence
        for (int t = 0; t < ms; ++t) {
            const T* dout = d_out.row(h, t);
            const T* orow = ctx.o_spec.row(h, t);
            const T* qrow = ctx.q.row(h, t);
            const T lse = ctx.lse_spec[static_cast<size_t>(h) * ms + t];
            T dvec = T(0);
            for (int d = 0; d < dim; ++d) dvec += dout[d] * orow[d];
            T* dqi = dq.row(h, t);
            for (int j = 0; j < total; ++j) {
                const T* krow = ctx.k.row(h, j);
                const T* vrow = ctx.v.row(h, j);
                const T p = std::exp(scaled_dot(qrow, krow, dim, scale) - lse);
                T da = T(0);
                for (int d = 0; d < dim; ++d) da += dout[d] * vrow[d];
                const T dsc = p * (da - dvec) * scale;
                T* dki = dk.row(h, j);
                T* dvi = dv.row(h, j);
                for (int d = 0; d < dim; ++d) {
                    dqi[d] += dsc * krow[d];
                    dki[d] += dsc * qrow[d];
                    dvi[d] += p * dout[d];
                }
            }
        }

        // projection backward: dW = X^T dY per head
        auto weight_grad = [&](const Tensor<T>& dy, Tensor<T>& dw) {
            T* dwh = dw.row(h, 0);
            for (int t = 0; t < total; ++t) {
                const T* xrow = ctx.x.row(0, t);
                const T* dyrow = dy.row(h, t);
                for (int a = 0; a < model_dim; ++a) {
                    const T xa = xrow[a];
                    T* drow = dwh + static_cast<size_t>(a) * dim;
                    for (int j = 0; j < dim; ++j) drow[j] += xa * dyrow[j];
                }
            }
        };
        weight_grad(dq, grads.dw_q);
        weight_grad(dk, grads.dw_k);
        weight_grad(dv, grads.dw_v);
    });

    // dX rows are independent; heads reduce in fixed order inside each row
    parallel_for(total, threads, [&](int t) {
        T* dxrow = grads.dx.row(0, t);
        for (int h = 0; h < heads; ++h) {
            const T* wq = ctx.weights.w_q.row(h, 0);
            const T* wk = ctx.weights.w_k.row(h, 0);
            const T* wv = ctx.weights.w_v.row(h, 0);
            const T* dqrow = dq.row(h, t);
            const T* dkrow = dk.row(h, t);
            const T* dvrow = dv.row(h, t);
            for (int a = 0; a < model_dim; ++a) {
                T acc = T(0);
                const size_t off = static_cast<size_t>(a) * dim;
                for (int j = 0; j < dim; ++j)
                    acc += wq[off + j] * dqrow[j] + wk[off + j] * dkrow[j] +
                           wv[off + j] * dvrow[j];
                dxrow[a] += acc;
            }
        }
    });
    return grads;
}

// Compensated inner product; keeps the finite-difference scalarization's
// rounding floor below the derivative noise it is trying to measure.
template <typename T>
double kahan_inner(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("kahan_inner: shapes differ");
    double sum = 0.0, c = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double term =
            static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]) - c;
        const double t = sum + term;
        c = (t - sum) - term;
        sum = t;
    }
    return sum;
}

// Central-difference check of an analytic gradient. `forward` must be
// deterministic and smooth at `point` (for GSA: selection indices pinned).
// Probes every coordinate, or only `coords` when given. Relative error uses
// max(|analytic|, |numeric|, 1e-12) as the denominator.
inline double finite_difference_check(
    const std::function<double(const std::vector<double>&)>& forward,
    const std::vector<double>& point, const std::vector<double>& analytic_grad, double epsilon,
    const std::vector<int>* coords = nullptr) {
    if (point.size() != analytic_grad.size())
        throw ShapeMismatch("finite_difference_check: gradient size != point size");
    const double f0 = forward(point);
    const double f1 = forward(point);
    if (std::memcmp(&f0, &f1, sizeof(double)) != 0)
        throw NonDeterministicForward("finite_difference_check: forward is not deterministic");

    std::vector<int> all;
    if (!coords) {
        all.resize(point.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        coords = &all;
    }
    std::vector<double> x = point;
    double worst = 0.0;
    for (int j : *coords) {
        const double saved = x[j];
        x[j] = saved + epsilon;
        const double fp = forward(x);
        x[j] = saved - epsilon;
        const double fm = forward(x);
        x[j] = saved;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double analytic = analytic_grad[j];
        const double denom =
            std::max({std::abs(analytic), std::abs(numeric), 1e-12});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

}  // namespace gsa
