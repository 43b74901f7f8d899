#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vitp/ops.hpp"
#include "vitp/tensor.hpp"

// Focal attention bias geometry: multi-resolution window schedules, the
// absolute and relative bias parameterizations, and the decoupled decay
// step applied to learnable biases.

namespace vitp {

// Square patch grid; token i sits at (i / m, i % m), class token excluded.
struct GridShape {
    int m = 0;        // patches per side
    int patch_px = 0; // patch side length in pixels

    int spatial_tokens() const { return m * m; }
    int global_side() const { return 2 * m - 1; }
    void validate() const;
};

enum class ScheduleMode { mrfa_d, mrfa_w, mrfa_dw };

const char* to_string(ScheduleMode mode);
ScheduleMode schedule_mode_from_string(const std::string& s);

// Per-layer, per-head window sides in patch units. Sides are odd and lie
// in [3, 2m-1]; 2m-1 is "global" (covers the grid from any center).
struct WindowSchedule {
    ScheduleMode mode = ScheduleMode::mrfa_w;
    std::vector<std::vector<int>> sides; // [layer][head]
};

// Nearest odd integer; exact ties between two odd neighbors go up.
int round_to_odd(double x);

WindowSchedule build_window_schedule(ScheduleMode mode, int layers, int heads, const GridShape& grid);

// Chebyshev window test: j within the side-w square centered on i.
bool window_membership(int i, int j, int side, const GridShape& grid);

// Flattened m^2 x m^2 map from token pair (i, j) to the relative-offset
// slot (dr + m-1) * (2m-1) + (dc + m-1) of a (2m-1)^2 table.
std::shared_ptr<const std::vector<int32_t>> relative_index_map(const GridShape& grid);

// Spatial entries are 0 inside the window, v outside; with_class embeds
// the spatial block at indices >= 1 and keeps class row/column at 0.
template <typename T>
TensorT<T> build_absolute_bias(int side, const GridShape& grid, T v, bool with_class) {
    grid.validate();
    int s = grid.spatial_tokens();
    int n = with_class ? s + 1 : s;
    int off = with_class ? 1 : 0;
    TensorT<T> bias = TensorT<T>::zeros({n, n});
    T* bv = bias.value().data();
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
            if (!window_membership(i, j, side, grid)) bv[(i + off) * n + (j + off)] = v;
    return bias;
}

// (2m-1)^2 offset table: 0 where the offset falls inside the side-w window
// centered on offset (0,0), v elsewhere.
template <typename T>
TensorT<T> build_relative_table(int side, const GridShape& grid, T v) {
    grid.validate();
    int r = grid.global_side();
    int half = (side - 1) / 2;
    TensorT<T> table = TensorT<T>::zeros({r, r});
    T* tv = table.value().data();
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < r; ++b)
            if (std::max(std::abs(a - (grid.m - 1)), std::abs(b - (grid.m - 1))) > half)
                tv[a * r + b] = v;
    return table;
}

// Gathers the shared table into a full m^2 x m^2 bias through the offset
// map; gradients scatter-add back into the table. with_class pads a zero
// class row/column at index 0.
template <typename T>
TensorT<T> materialize_relative_bias(TapeT<T>* tape, TensorT<T> table,
                                     std::shared_ptr<const std::vector<int32_t>> index,
                                     const GridShape& grid, bool with_class) {
    int64_t s = grid.spatial_tokens();
    TensorT<T> spatial = gather_table(tape, table, std::move(index), {s, s});
    return with_class ? pad_class_bias(tape, spatial) : spatial;
}

// The decoupled decay step: theta <- (1 - lambda) * theta - alpha * grad.
// Reads the parameter's grad buffer if present, else treats it as zero.
template <typename T>
void bias_decay_step(TensorT<T>& param, T lambda, T alpha) {
    if (lambda < T(0) || lambda >= T(1))
        fail(Error::Kind::usage, "bias_decay_step: decay rate must lie in [0,1), got " +
                                     std::to_string(lambda));
    auto& pv = param.value();
    const T* g = param.has_grad() ? param.grad().data() : nullptr;
    for (size_t i = 0; i < pv.size(); ++i)
        pv[i] = (T(1) - lambda) * pv[i] - (g ? alpha * g[i] : T(0));
}

// Accumulates value counts into `counts` (size = bins) over [lo, hi];
// values outside the range land in the nearest edge bin so totals always
// match the number of entries.
template <typename T>
void histogram_accumulate(std::vector<int64_t>& counts, const std::vector<T>& values, T lo, T hi) {
    int64_t bins = static_cast<int64_t>(counts.size());
    if (bins < 2) fail(Error::Kind::usage, "histogram_accumulate: need at least 2 bins");
    if (!(lo < hi)) fail(Error::Kind::usage, "histogram_accumulate: empty range");
    for (T x : values) {
        int64_t k = static_cast<int64_t>(std::floor((double(x) - double(lo)) / (double(hi) - double(lo)) * double(bins)));
        if (k < 0) k = 0;
        if (k >= bins) k = bins - 1;
        counts[static_cast<size_t>(k)] += 1;
    }
}

} // namespace vitp
