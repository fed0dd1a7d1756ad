#include "gsa/selection.hpp"

#include <algorithm>

namespace gsa {

std::vector<int> forced_frames(const TokenLayout& layout, int ref_stride) {
    if (ref_stride < 1) throw InvalidStride("forced_frames: ref_stride must be >= 1");
    std::vector<int> frames;
    for (int f = 0; f < layout.num_frames; f += ref_stride) frames.push_back(f);
    return frames;
}

std::vector<int32_t> forced_windows_of(const TokenLayout& layout, int ref_stride) {
    std::vector<int32_t> wins;
    const int wpf = layout.windows_per_frame();
    for (int f : forced_frames(layout, ref_stride))
        for (int w = 0; w < wpf; ++w) wins.push_back(static_cast<int32_t>(f * wpf + w));
    std::sort(wins.begin(), wins.end());
    return wins;
}

std::vector<uint8_t> forced_window_mask(const TokenLayout& layout, int ref_stride) {
    std::vector<uint8_t> mask(layout.num_windows(), 0);
    for (int32_t w : forced_windows_of(layout, ref_stride)) mask[w] = 1;
    return mask;
}

SelectionPlan build_selection_plan(const TopkResult& topk, const TokenLayout& layout,
                                   SelectionVariant variant, int ref_stride) {
    if (topk.rows != layout.num_windows())
        throw ShapeMismatch("build_selection_plan: topk rows != num windows");

    SelectionPlan plan;
    plan.heads = topk.heads;
    plan.rows = topk.rows;
    plan.offsets.reserve(static_cast<size_t>(topk.heads) * topk.rows + 1);
    plan.offsets.push_back(0);

    std::vector<uint8_t> forced_mask;
    if (variant == SelectionVariant::kHybrid) {
        if (ref_stride < 1)
            throw InvalidStride("build_selection_plan: ref_stride must be >= 1 for hybrid");
        plan.forced_windows = forced_windows_of(layout, ref_stride);
        forced_mask = forced_window_mask(layout, ref_stride);
        plan.window_ids.reserve(static_cast<size_t>(topk.heads) * topk.rows *
                                (plan.forced_windows.size() + topk.k));
    } else {
        plan.window_ids.reserve(static_cast<size_t>(topk.heads) * topk.rows * topk.k);
    }

    for (int h = 0; h < topk.heads; ++h) {
        for (int r = 0; r < topk.rows; ++r) {
            const int32_t* src = topk.row(h, r);
            if (variant == SelectionVariant::kHybrid) {
                plan.window_ids.insert(plan.window_ids.end(), plan.forced_windows.begin(),
                                       plan.forced_windows.end());
                for (int j = 0; j < topk.k; ++j)
                    if (!forced_mask[src[j]]) plan.window_ids.push_back(src[j]);
            } else {
                plan.window_ids.insert(plan.window_ids.end(), src, src + topk.k);
            }
            plan.offsets.push_back(static_cast<int64_t>(plan.window_ids.size()));
        }
    }
    return plan;
}

}  // namespace gsa
