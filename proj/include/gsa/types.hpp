#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "gsa/errors.hpp"

namespace gsa {

// Query/key tile shape for the tiled kernels. Powers of two in [8, 256].
struct KernelTiling {
    int block_m = 16;
    int block_n = 16;
};

inline bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

inline void validate_tiling(const KernelTiling& t) {
    auto ok = [](int v) { return is_pow2(v) && v >= 8 && v <= 256; };
    if (!ok(t.block_m) || !ok(t.block_n))
        throw InvalidTiling("tiling blocks must be powers of two in [8, 256], got " +
                            std::to_string(t.block_m) + "x" + std::to_string(t.block_n));
}

// Per-head, per-query-window top-k window indices, each row sorted by
// descending guide score with ties broken toward the lower index.
// k is the realized row width: min(requested k, selectable windows).
struct TopkResult {
    int heads = 0;
    int rows = 0;
    int k = 0;
    std::vector<int32_t> indices;       // heads * rows * k
    std::vector<double> guide_scores;   // same layout; may be empty

    TopkResult() = default;
    TopkResult(int heads_, int rows_, int k_)
        : heads(heads_), rows(rows_), k(k_),
          indices(static_cast<size_t>(heads_) * rows_ * k_, -1) {}

    const int32_t* row(int h, int r) const {
        return indices.data() + (static_cast<size_t>(h) * rows + r) * k;
    }
    int32_t* row(int h, int r) {
        return indices.data() + (static_cast<size_t>(h) * rows + r) * k;
    }
};

enum class SelectionVariant { kPlain, kHybrid };

inline std::string to_string(SelectionVariant v) {
    return v == SelectionVariant::kPlain ? "plain" : "hybrid";
}

// Runtime knobs of the GSA layer. top_k larger than the window count is
// clamped, not rejected: k is a free inference-time parameter.
struct GsaParams {
    int window_s = 4;
    int top_k = 32;
    double scale = 0.0;  // 0 means "use 1/sqrt(dim)"
    SelectionVariant variant = SelectionVariant::kPlain;
    int ref_stride = 100;
    KernelTiling tiling;
};

inline void validate_params(const GsaParams& p) {
    if (p.top_k < 1) throw GsaError("params: top_k must be >= 1");
    if (p.scale < 0.0) throw GsaError("params: scale must be > 0");
    if (p.variant == SelectionVariant::kHybrid && p.ref_stride < 1)
        throw InvalidStride("params: ref_stride must be >= 1 for hybrid selection");
    validate_tiling(p.tiling);
}

// Debug work counters. scores_computed counts score-matrix entries evaluated
// by the tiled/compressed kernels; keys_attended counts fine keys visited by
// the selection kernel. Used to assert the closed-form FLOP bounds.
struct KernelStats {
    std::atomic<uint64_t> scores_computed{0};
    std::atomic<uint64_t> keys_attended{0};

    void reset() {
        scores_computed.store(0);
        keys_attended.store(0);
    }
};

}  // namespace gsa
