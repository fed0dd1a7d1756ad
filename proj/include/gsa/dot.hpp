#pragma once

namespace gsa {

// Attention score primitive. Every path that ranks windows (fused streaming
// top-k, sort-based reference top-k, guide-score diagnostics) must produce
// bitwise-identical scores, otherwise exact index comparison between the
// fused kernel and the oracle is ill-defined near ties. Keep the accumulation
// order fixed: four partial sums over stride-4 lanes, combined low-to-high,
// scale applied once at the end.
template <typename T>
inline T scaled_dot(const T* a, const T* b, int n, T scale) {
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) * scale;
}

template <typename T>
inline T dot(const T* a, const T* b, int n) {
    return scaled_dot(a, b, n, T(1));
}

}  // namespace gsa
