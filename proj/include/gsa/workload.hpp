#pragma once

#include <cstdint>
#include <string>

#include "gsa/layer.hpp"
#include "gsa/layout.hpp"
#include "gsa/prng.hpp"
#include "gsa/reference.hpp"
#include "gsa/tensor.hpp"
#include "gsa/types.hpp"

namespace gsa {

enum class Precision { kF32, kF64 };
enum class Distribution { kGaussian, kClustered };

std::string to_string(Precision p);
std::string to_string(Distribution d);

struct WorkloadConfig {
    uint64_t seed = 0;
    TokenLayout layout;
    int heads = 2;
    int dim = 16;
    int model_dim = 32;
    Precision precision = Precision::kF64;
    Distribution distribution = Distribution::kGaussian;
};

// Flat key=value text format; keys mirror the WorkloadConfig fields
// (layout flattened into num_special/num_frames/grid_h/grid_w/window_s).
WorkloadConfig parse_workload_config(const std::string& text);
WorkloadConfig load_workload_config(const std::string& path);
std::string serialize_workload_config(const WorkloadConfig& config);

namespace detail {

// Stream tags keep X, the weights and the cluster centroids on independent
// counter ranges of the same seed.
enum : uint64_t {
    kStreamX = 1,
    kStreamWq = 2,
    kStreamWk = 3,
    kStreamWv = 4,
    kStreamWg = 5,
    kStreamCentroid = 6,
};

}  // namespace detail

template <typename T>
struct Workload {
    Tensor<T> x;  // [1 x tokens x model_dim]
    LayerWeights<T> weights;
};

// Deterministic synthetic instance: every entry is a pure function of
// (seed, stream, counter), so identical configs are bitwise identical.
// Gaussian entries are standard normal scaled by 1/sqrt(fan-in); the
// clustered distribution adds a per-frame centroid so that attention has
// frame structure to find.
template <typename T>
Workload<T> generate_workload(const WorkloadConfig& config) {
    const TokenLayout& layout = config.layout;
    const int c = config.model_dim, d = config.dim, h = config.heads;
    const T inv_sqrt_c = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    Workload<T> w;
    w.x = Tensor<T>(1, layout.total_tokens(), c);
    CounterRng rng_x(CounterRng::derive(config.seed, detail::kStreamX));
    for (int t = 0; t < layout.total_tokens(); ++t) {
        T* row = w.x.row(0, t);
        for (int a = 0; a < c; ++a)
            row[a] = static_cast<T>(rng_x.normal(static_cast<uint64_t>(t) * c + a)) * inv_sqrt_c;
    }
    if (config.distribution == Distribution::kClustered) {
        CounterRng rng_c(CounterRng::derive(config.seed, detail::kStreamCentroid));
        for (int t = layout.num_special; t < layout.total_tokens(); ++t) {
            const int frame = (t - layout.num_special) / layout.tokens_per_frame();
            T* row = w.x.row(0, t);
            for (int a = 0; a < c; ++a) {
                const T centroid =
                    static_cast<T>(rng_c.normal(static_cast<uint64_t>(frame) * c + a)) *
                    inv_sqrt_c;
                row[a] = centroid + T(0.5) * row[a];
            }
        }
    }

    auto fill = [&](Tensor<T>& t, uint64_t tag, T scale_factor) {
        CounterRng rng(CounterRng::derive(config.seed, tag));
        for (size_t i = 0; i < t.data.size(); ++i)
            t.data[i] = static_cast<T>(rng.normal(i)) * scale_factor;
    };
    w.weights.w_q = Tensor<T>(h, c, d);
    w.weights.w_k = Tensor<T>(h, c, d);
    w.weights.w_v = Tensor<T>(h, c, d);
    w.weights.w_g = Tensor<T>(h, d, d);
    fill(w.weights.w_q, detail::kStreamWq, inv_sqrt_c);
    fill(w.weights.w_k, detail::kStreamWk, inv_sqrt_c);
    fill(w.weights.w_v, detail::kStreamWv, inv_sqrt_c);
    fill(w.weights.w_g, detail::kStreamWg, inv_sqrt_d);
    return w;
}

// Selection-stage sparsity: 1 - (fine keys attended per image query) /
// image_tokens, realized from an actual plan built on a uniform-score
// instance (dedup between forced and dynamic sets is data-dependent, so a
// closed formula would not survive the hybrid variant).
double selection_sparsity(const TokenLayout& layout, const GsaParams& params);

}  // namespace gsa
