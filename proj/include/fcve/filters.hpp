#ifndef FCVE_FILTERS_HPP
#define FCVE_FILTERS_HPP

#include <vector>

namespace fcve {

// Multiplicative per-filter mask over the last conv layer's channels.
// Entries are either exactly 0 or in (t, 1) with t = 0.5 once produced by the
// thresholded-sigmoid head; arbitrary non-negative values are accepted when
// masks are constructed directly (identity mask, ablation masks).
struct McMask {
    std::vector<float> values;
};

// Additive non-negative per-filter activation deltas.
struct MiDelta {
    std::vector<float> values;
};

inline McMask ones_mask(int n) {
    McMask m;
    m.values.assign(n, 1.0f);
    return m;
}

inline McMask ablation_mask(int n, const std::vector<int>& disabled) {
    McMask m = ones_mask(n);
    for (int i : disabled)
        if (i >= 0 && i < n) m.values[i] = 0.0f;
    return m;
}

} // namespace fcve

#endif
