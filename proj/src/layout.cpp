#include "gsa/layout.hpp"

#include <string>

namespace gsa {

TokenLayout build_token_layout(int num_special, int num_frames, int grid_h, int grid_w,
                               int window_s) {
    if (num_special < 0) throw ZeroSizeError("build_token_layout: num_special < 0");
    if (num_frames < 1) throw ZeroSizeError("build_token_layout: num_frames < 1");
    if (grid_h < 1 || grid_w < 1) throw ZeroSizeError("build_token_layout: empty grid");
    if (window_s < 1) throw ZeroSizeError("build_token_layout: window_s < 1");
    if (grid_h % window_s != 0 || grid_w % window_s != 0)
        throw DivisibilityError("build_token_layout: grid " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w) + " not divisible by window_s=" +
                                std::to_string(window_s));
    TokenLayout layout;
    layout.num_special = num_special;
    layout.num_frames = num_frames;
    layout.grid_h = grid_h;
    layout.grid_w = grid_w;
    layout.window_s = window_s;
    return layout;
}

int TokenLayout::window_of_token(int image_token_index) const {
    if (image_token_index < 0 || image_token_index >= image_tokens())
        throw IndexOutOfRange("window_of_token: image token index out of range");
    const int tpf = tokens_per_frame();
    const int frame = image_token_index / tpf;
    const int in_frame = image_token_index % tpf;
    const int row = in_frame / grid_w;
    const int col = in_frame % grid_w;
    return frame * windows_per_frame() + (row / window_s) * wins_w() + (col / window_s);
}

std::vector<int> TokenLayout::tokens_of_window(int window_index) const {
    if (window_index < 0 || window_index >= num_windows())
        throw IndexOutOfRange("tokens_of_window: window index out of range");
    const int wpf = windows_per_frame();
    const int frame = window_index / wpf;
    const int in_frame = window_index % wpf;
    const int wrow = in_frame / wins_w();
    const int wcol = in_frame % wins_w();
    std::vector<int> members;
    members.reserve(static_cast<size_t>(window_s) * window_s);
    const int base = frame * tokens_per_frame();
    for (int dr = 0; dr < window_s; ++dr) {
        const int row = wrow * window_s + dr;
        for (int dc = 0; dc < window_s; ++dc) {
            const int col = wcol * window_s + dc;
            members.push_back(base + row * grid_w + col);
        }
    }
    return members;
}

}  // namespace gsa
