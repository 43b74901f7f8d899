#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "vitp/focal_bias.hpp"
#include "vitp/gradcheck.hpp"

using namespace vitp;

TEST_CASE("round_to_odd picks nearest odd, ties up") {
    CHECK(round_to_odd(3.0) == 3);
    CHECK(round_to_odd(5.545) == 5);
    CHECK(round_to_odd(8.091) == 9);
    CHECK(round_to_odd(6.0) == 7);
    CHECK(round_to_odd(4.0) == 5);
    CHECK(round_to_odd(1.0) == 1);
    CHECK_THROWS_AS(round_to_odd(0.5), Error);
}

TEST_CASE("window schedules match hand-computed ramps") {
    GridShape g4{4, 4};
    auto w = build_window_schedule(ScheduleMode::mrfa_w, 2, 4, g4);
    for (auto& layer : w.sides) CHECK(layer == std::vector<int>{3, 5, 5, 7});

    GridShape g16{16, 2};
    auto w16 = build_window_schedule(ScheduleMode::mrfa_w, 1, 12, g16);
    CHECK(w16.sides[0] == std::vector<int>{3, 5, 9, 11, 13, 15, 19, 21, 23, 25, 29, 31});

    auto d = build_window_schedule(ScheduleMode::mrfa_d, 3, 2, g4);
    CHECK(d.sides == std::vector<std::vector<int>>{{3, 3}, {5, 5}, {7, 7}});
}

TEST_CASE("degenerate single-point schedules use the global side") {
    GridShape g{4, 4};
    auto w = build_window_schedule(ScheduleMode::mrfa_w, 2, 1, g);
    CHECK(w.sides[0] == std::vector<int>{7});
    auto d = build_window_schedule(ScheduleMode::mrfa_d, 1, 3, g);
    CHECK(d.sides[0] == std::vector<int>{7, 7, 7});
}

TEST_CASE("schedule invariants hold across a sweep of shapes") {
    for (int m : {2, 3, 4, 7, 16}) {
        GridShape g{m, 2};
        int hi = 2 * m - 1;
        for (int L : {1, 2, 3, 12}) {
            for (int H : {1, 2, 3, 4, 12}) {
                for (auto mode : {ScheduleMode::mrfa_d, ScheduleMode::mrfa_w, ScheduleMode::mrfa_dw}) {
                    auto sched = build_window_schedule(mode, L, H, g);
                    REQUIRE(sched.sides.size() == size_t(L));
                    int prev_min = 3;
                    for (int l = 0; l < L; ++l) {
                        auto& row = sched.sides[size_t(l)];
                        REQUIRE(row.size() == size_t(H));
                        for (size_t h = 0; h < row.size(); ++h) {
                            CHECK(row[h] % 2 == 1);
                            CHECK(row[h] >= 3);
                            CHECK(row[h] <= hi);
                            if (h > 0) CHECK(row[h] >= row[h - 1]);
                        }
                        int row_min = *std::min_element(row.begin(), row.end());
                        CHECK(row_min >= prev_min);
                        prev_min = row_min;
                    }
                    if (mode == ScheduleMode::mrfa_w && H > 1) {
                        CHECK(sched.sides[0].front() == 3);
                        CHECK(sched.sides[0].back() == hi);
                        for (int l = 1; l < L; ++l) CHECK(sched.sides[size_t(l)] == sched.sides[0]);
                    }
                    if (mode == ScheduleMode::mrfa_d && L > 1) {
                        CHECK(sched.sides.front().front() == 3);
                        CHECK(sched.sides.back().front() == hi);
                        for (auto& row : sched.sides)
                            CHECK(std::set<int>(row.begin(), row.end()).size() == 1);
                    }
                    if (mode == ScheduleMode::mrfa_dw && H > 1) {
                        for (auto& row : sched.sides) CHECK(row.back() == hi);
                        if (L > 1) CHECK(sched.sides.back().front() == hi);
                    }
                }
            }
        }
    }
}

TEST_CASE("window membership is Chebyshev") {
    GridShape g{3, 4};
    for (int i = 0; i < 9; ++i) CHECK(window_membership(i, i, 3, g));
    CHECK_FALSE(window_membership(0, 8, 3, g)); // (0,0) vs (2,2)
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) CHECK(window_membership(i, j, 5, g));
}

TEST_CASE("absolute bias rows match enumeration") {
    GridShape g{3, 4};
    auto b = build_absolute_bias<double>(3, g, -100.0, false);
    std::set<int> zeros = {0, 1, 3, 4};
    for (int j = 0; j < 9; ++j)
        CHECK(b.value()[size_t(j)] == (zeros.count(j) ? 0.0 : -100.0));
    for (int j = 0; j < 9; ++j) CHECK(b.value()[size_t(4 * 9 + j)] == 0.0); // center token row
    auto full = build_absolute_bias<double>(5, g, -100.0, false);
    for (double v : full.value()) CHECK(v == 0.0);
}

TEST_CASE("absolute bias with class token keeps row and column 0 zero") {
    GridShape g{3, 4};
    auto b = build_absolute_bias<float>(3, g, -100.f, true);
    REQUIRE(b.shape() == std::vector<int64_t>{10, 10});
    for (int j = 0; j < 10; ++j) {
        CHECK(b.value()[size_t(j)] == 0.f);
        CHECK(b.value()[size_t(j * 10)] == 0.f);
    }
    // Spatial block shifts by one in both axes.
    auto spatial = build_absolute_bias<float>(3, g, -100.f, false);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j)
            CHECK(b.value()[size_t((i + 1) * 10 + j + 1)] == spatial.value()[size_t(i * 9 + j)]);
}

TEST_CASE("relative table init zeroes exactly the centered window") {
    GridShape g{4, 4};
    auto t = build_relative_table<double>(3, g, -100.0);
    REQUIRE(t.shape() == std::vector<int64_t>{7, 7});
    int zeros = 0, supp = 0;
    for (int a = 0; a < 7; ++a)
        for (int b = 0; b < 7; ++b) {
            double v = t.value()[size_t(a * 7 + b)];
            bool inside = std::max(std::abs(a - 3), std::abs(b - 3)) <= 1;
            CHECK(v == (inside ? 0.0 : -100.0));
            (v == 0.0 ? zeros : supp) += 1;
        }
    CHECK(zeros == 9);
    CHECK(supp == 40);
    auto global = build_relative_table<double>(7, g, -100.0);
    for (double v : global.value()) CHECK(v == 0.0);
}

TEST_CASE("relative index map covers every offset slot") {
    GridShape g2{2, 2};
    auto map2 = relative_index_map(g2);
    CHECK((*map2)[0 * 4 + 0] == 4);                // i == j, center of 3x3 table
    CHECK((*map2)[0 * 4 + 3] == 0);                // (0,0) vs (1,1) -> corner
    for (int m : {2, 3, 5}) {
        GridShape g{m, 2};
        auto map = relative_index_map(g);
        std::set<int32_t> seen(map->begin(), map->end());
        CHECK(int(seen.size()) == (2 * m - 1) * (2 * m - 1));
        CHECK(*seen.begin() == 0);
        CHECK(*seen.rbegin() == (2 * m - 1) * (2 * m - 1) - 1);
    }
}

TEST_CASE("materialized relative bias equals absolute bias at init") {
    for (int m : {2, 3, 4}) {
        GridShape g{m, 2};
        for (int w = 3; w <= 2 * m - 1; w += 2) {
            for (float v : {-100.f, -5.f, 0.f}) {
                auto table = build_relative_table<float>(w, g, v);
                auto rel = materialize_relative_bias<float>(nullptr, table, relative_index_map(g), g, false);
                auto abs_b = build_absolute_bias<float>(w, g, v, false);
                CHECK(rel.value() == abs_b.value());
                auto rel_c = materialize_relative_bias<float>(nullptr, table, relative_index_map(g), g, true);
                auto abs_c = build_absolute_bias<float>(w, g, v, true);
                CHECK(rel_c.value() == abs_c.value());
            }
        }
    }
}

TEST_CASE("table entries are shared across token pairs with equal offsets") {
    GridShape g{3, 2};
    auto table = build_relative_table<double>(3, g, -100.0);
    const int center = 2 * 5 + 2; // offset (0,0) slot for m=3 sits at (2,2) of the 5x5 table
    table.value()[size_t(center)] += 1.0;
    auto rel = materialize_relative_bias<double>(nullptr, table, relative_index_map(g), g, false);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) {
            if (i == j)
                CHECK(rel.value()[size_t(i * 9 + j)] == 1.0);
        }

    // A uniform upstream gradient of 1 over the spatial block lands m^2
    // times on the (0,0) slot.
    auto t2 = build_relative_table<double>(3, g, -100.0);
    t2.set_requires_grad(true);
    TapeT<double> tape;
    auto bias = materialize_relative_bias<double>(&tape, t2, relative_index_map(g), g, false);
    auto loss = sum(&tape, bias);
    tape.backward(loss);
    CHECK(t2.grad()[size_t(center)] == 9.0);
    double total = 0;
    for (double gv : t2.grad()) total += gv;
    CHECK(total == 81.0); // one contribution per token pair
}

TEST_CASE("materialized bias gradients pass finite differences") {
    GridShape g{2, 2};
    std::mt19937 rng(53);
    auto table = build_relative_table<double>(3, g, -1.0);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    for (auto& v : table.value()) v += dist(rng);
    auto w = TensorT<double>::zeros({5, 5});
    for (auto& v : w.value()) v = dist(rng);
    auto f = [&](TapeT<double>* tape) {
        auto bias = materialize_relative_bias<double>(tape, table, relative_index_map(g), g, true);
        return sum(tape, mul(tape, bias, w));
    };
    CHECK(grad_check<double>(f, table, 1e-3) < 1e-5);
}

TEST_CASE("decay step follows the closed form") {
    auto p = TensorT<double>::from({2, 2}, {-100, -100, -100, -100});
    for (int t = 0; t < 10; ++t) bias_decay_step(p, 0.01, 1.0);
    for (double v : p.value())
        CHECK(v == doctest::Approx(-90.43820750088044).epsilon(1e-12));

    // lambda = 0 leaves a pure gradient step.
    auto q = TensorT<double>::from({2}, {1.0, -2.0}, true);
    q.ensure_grad()[0] = 0.5;
    q.ensure_grad()[1] = -0.25;
    bias_decay_step(q, 0.0, 0.1);
    CHECK(q.value()[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-12));
    CHECK(q.value()[1] == doctest::Approx(-2.0 + 0.025).epsilon(1e-12));

    // Zero stays a fixed point under decay alone.
    auto z = TensorT<double>::zeros({3});
    for (int t = 0; t < 5; ++t) bias_decay_step(z, 0.3, 1.0);
    for (double v : z.value()) CHECK(v == 0.0);

    CHECK_THROWS_AS(bias_decay_step(z, 1.0, 1.0), Error);
}

TEST_CASE("decay closed form holds elementwise over random inits") {
    std::mt19937 rng(59);
    auto p = TensorT<double>::zeros({4, 4});
    std::uniform_real_distribution<double> dist(-100.0, 0.0);
    for (auto& v : p.value()) v = dist(rng);
    auto init = p.value();
    const double lambda = 0.05;
    const int steps = 37;
    for (int t = 0; t < steps; ++t) bias_decay_step(p, lambda, 1.0);
    for (size_t i = 0; i < init.size(); ++i) {
        double expect = init[i] * std::pow(1.0 - lambda, steps);
        if (expect == 0.0)
            CHECK(p.value()[i] == 0.0);
        else
            CHECK(std::abs(p.value()[i] - expect) / std::abs(expect) < 1e-6);
    }
}

TEST_CASE("suppressed attention weights stay negligible under -100") {
    GridShape g{3, 4};
    std::mt19937 rng(61);
    auto logits = TensorT<float>::zeros({9, 9});
    std::uniform_real_distribution<float> dist(-10.f, 10.f);
    for (auto& v : logits.value()) v = dist(rng);
    auto bias = build_absolute_bias<float>(3, g, -100.f, false);
    auto biased = add<float>(nullptr, logits, bias);
    auto attn = softmax_rows<float>(nullptr, biased);
    const float bound = std::exp(-80.f);
    for (int i = 0; i < 9; ++i) {
        float best_in = 0.f;
        for (int j = 0; j < 9; ++j)
            if (window_membership(i, j, 3, g))
                best_in = std::max(best_in, attn.value()[size_t(i * 9 + j)]);
        for (int j = 0; j < 9; ++j)
            if (!window_membership(i, j, 3, g))
                CHECK(attn.value()[size_t(i * 9 + j)] <= bound * best_in);
    }
}

TEST_CASE("zero suppression value degenerates every constructor to zeros") {
    GridShape g{4, 2};
    for (int w : {3, 5, 7}) {
        auto abs_b = build_absolute_bias<float>(w, g, 0.f, true);
        for (float v : abs_b.value()) CHECK(v == 0.f);
        auto table = build_relative_table<float>(w, g, 0.f);
        for (float v : table.value()) CHECK(v == 0.f);
    }
}

TEST_CASE("histogram counts init mass in exactly two bins") {
    GridShape g{4, 2};
    auto bias = build_absolute_bias<double>(3, g, -100.0, false);
    std::vector<int64_t> counts(22, 0);
    histogram_accumulate(counts, bias.value(), -105.0, 5.0); // bin width 5
    int64_t total = 0;
    int nonzero_bins = 0;
    for (size_t k = 0; k < counts.size(); ++k) {
        total += counts[k];
        if (counts[k] > 0) ++nonzero_bins;
    }
    CHECK(total == 256);
    CHECK(nonzero_bins == 2);
    CHECK(counts[1] == 156);  // [-100, -95)
    CHECK(counts[21] == 100); // [0, 5]

    std::vector<int64_t> zero_counts(10, 0);
    auto flat = build_absolute_bias<double>(5, g, 0.0, false);
    histogram_accumulate(zero_counts, flat.value(), -1.0, 1.0);
    CHECK(zero_counts[5] == int64_t(flat.numel()));

    // Out-of-range values clamp into the edge bins instead of vanishing.
    std::vector<int64_t> edges(4, 0);
    histogram_accumulate(edges, std::vector<double>{-999.0, 999.0, 0.1}, -1.0, 1.0);
    CHECK(edges[0] == 1);
    CHECK(edges[3] == 1);
    CHECK(edges[2] == 1);
}
