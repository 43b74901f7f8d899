#include "vitp/focal_bias.hpp"

#include <algorithm>
#include <cmath>

namespace vitp {

void GridShape::validate() const {
    if (m < 2) fail(Error::Kind::config, "grid: patches per side must be >= 2, got " + std::to_string(m));
    if (patch_px < 1)
        fail(Error::Kind::config, "grid: patch pixel size must be >= 1, got " + std::to_string(patch_px));
}

const char* to_string(ScheduleMode mode) {
    switch (mode) {
        case ScheduleMode::mrfa_d: return "mrfa-d";
        case ScheduleMode::mrfa_w: return "mrfa-w";
        case ScheduleMode::mrfa_dw: return "mrfa-dw";
    }
    return "?";
}

ScheduleMode schedule_mode_from_string(const std::string& s) {
    if (s == "mrfa-d") return ScheduleMode::mrfa_d;
    if (s == "mrfa-w") return ScheduleMode::mrfa_w;
    if (s == "mrfa-dw") return ScheduleMode::mrfa_dw;
    fail(Error::Kind::config, "unknown schedule mode '" + s + "' (expected mrfa-d, mrfa-w or mrfa-dw)");
}

int round_to_odd(double x) {
    if (x < 1.0) fail(Error::Kind::usage, "round_to_odd: input must be >= 1, got " + std::to_string(x));
    // Odd integers are 2k+1; pick k so 2k+1 is nearest to x, ties toward
    // the larger odd value.
    auto k = static_cast<long long>(std::floor((x - 1.0) / 2.0 + 0.5));
    return static_cast<int>(2 * k + 1);
}

namespace {

// Linear ramp from `from` to `to` over `count` points, rounded to odd and
// clamped into [3, hi]. A single point degenerates to the global side.
std::vector<int> interpolate_sides(double from, double to, int count, int hi) {
    std::vector<int> sides(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        double x = count == 1 ? double(hi) : from + double(i) * (to - from) / double(count - 1);
        sides[static_cast<size_t>(i)] = std::clamp(round_to_odd(x), 3, hi);
    }
    return sides;
}

} // namespace

WindowSchedule build_window_schedule(ScheduleMode mode, int layers, int heads, const GridShape& grid) {
    grid.validate();
    if (layers < 1 || heads < 1)
        fail(Error::Kind::config, "schedule: need layers >= 1 and heads >= 1, got " +
                                      std::to_string(layers) + " and " + std::to_string(heads));
    int hi = grid.global_side();
    WindowSchedule sched;
    sched.mode = mode;
    sched.sides.resize(static_cast<size_t>(layers));
    switch (mode) {
        case ScheduleMode::mrfa_w: {
            std::vector<int> row = interpolate_sides(3.0, double(hi), heads, hi);
            for (auto& layer : sched.sides) layer = row;
            break;
        }
        case ScheduleMode::mrfa_d: {
            std::vector<int> per_layer = interpolate_sides(3.0, double(hi), layers, hi);
            for (int l = 0; l < layers; ++l)
                sched.sides[static_cast<size_t>(l)].assign(static_cast<size_t>(heads),
                                                           per_layer[static_cast<size_t>(l)]);
            break;
        }
        case ScheduleMode::mrfa_dw: {
            std::vector<int> minima = interpolate_sides(3.0, double(hi), layers, hi);
            for (int l = 0; l < layers; ++l)
                sched.sides[static_cast<size_t>(l)] =
                    interpolate_sides(double(minima[static_cast<size_t>(l)]), double(hi), heads, hi);
            break;
        }
    }
    return sched;
}

bool window_membership(int i, int j, int side, const GridShape& grid) {
    int half = (side - 1) / 2;
    int dr = i / grid.m - j / grid.m;
    int dc = i % grid.m - j % grid.m;
    return std::max(std::abs(dr), std::abs(dc)) <= half;
}

std::shared_ptr<const std::vector<int32_t>> relative_index_map(const GridShape& grid) {
    grid.validate();
    int m = grid.m, s = grid.spatial_tokens(), r = grid.global_side();
    auto map = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(s) * static_cast<size_t>(s));
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
            int dr = i / m - j / m, dc = i % m - j % m;
            (*map)[static_cast<size_t>(i) * static_cast<size_t>(s) + static_cast<size_t>(j)] =
                static_cast<int32_t>((dr + m - 1) * r + (dc + m - 1));
        }
    return map;
}

} // namespace vitp
