#include <random>
#include <sstream>

#include "doctest.h"
#include "vitp/analysis.hpp"

using namespace vitp;

namespace {

void rand_fill(TensorT<double>& t, std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.value()) v = dist(rng);
}

// row-normalize every map in place
void normalize_rows(TensorT<double>& attn) {
    int64_t nt = attn.dim(1);
    for (int64_t b = 0; b < attn.dim(0); ++b)
        for (int64_t r = 0; r < nt; ++r) {
            double sum = 0;
            double* row = attn.value().data() + (b * nt + r) * nt;
            for (int64_t c = 0; c < nt; ++c) sum += row[c];
            for (int64_t c = 0; c < nt; ++c) row[c] /= sum;
        }
}

} // namespace

TEST_CASE("uniform attention on a 2x2 grid matches the enumerated mean") {
    GridShape grid{2, 2};
    auto attn = TensorT<double>::full({1, 4, 4}, 0.25);
    // independent oracle: enumerate all token pairs
    double expect = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double dr = i / 2 - j / 2, dc = i % 2 - j % 2;
            expect += 0.25 * 2.0 * std::sqrt(dr * dr + dc * dc);
        }
    expect /= 4.0;
    double mad = mean_attention_distance(attn, grid);
    CHECK(mad == doctest::Approx(expect).epsilon(1e-12));
    CHECK(mad == doctest::Approx(1.70711).epsilon(1e-4));
}

TEST_CASE("self-only attention has zero reach") {
    GridShape grid{3, 4};
    auto attn = TensorT<double>::zeros({2, 9, 9});
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 9; ++i) attn.value()[(b * 9 + i) * 9 + i] = 1.0;
    CHECK(mean_attention_distance(attn, grid) == 0.0);
}

TEST_CASE("attention inside a Chebyshev window respects the diagonal bound") {
    GridShape grid{4, 2};
    int r = 1; // window side 3
    std::mt19937 rng(17);
    auto attn = TensorT<double>::zeros({3, 16, 16});
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    for (int64_t b = 0; b < 3; ++b)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j)
                if (std::abs(i / 4 - j / 4) <= r && std::abs(i % 4 - j % 4) <= r)
                    attn.value()[(b * 16 + i) * 16 + j] = dist(rng);
    normalize_rows(attn);
    CHECK(mean_attention_distance(attn, grid) <= grid.patch_px * r * std::sqrt(2.0));
}

TEST_CASE("class token column is dropped and rows are renormalized") {
    GridShape grid{2, 2};
    // 5 tokens: class + 4 spatial; every spatial query splits evenly between
    // the class token and itself, so after restriction MAD is exactly 0
    auto attn = TensorT<double>::zeros({1, 5, 5});
    attn.value()[0 * 5 + 0] = 1.0; // class row attends to itself
    for (int64_t q = 1; q < 5; ++q) {
        attn.value()[q * 5 + 0] = 0.5;
        attn.value()[q * 5 + q] = 0.5;
    }
    CHECK(mean_attention_distance(attn, grid) == 0.0);

    // shifting the spatial half to a neighbor makes the renormalized MAD the
    // full neighbor distance, not half of it
    auto attn2 = attn;
    attn2.value() = attn.value();
    attn2.value()[1 * 5 + 1] = 0.0;
    attn2.value()[1 * 5 + 2] = 0.5; // token (0,0) -> (0,1)
    double mad = mean_attention_distance(attn2, grid);
    CHECK(mad == doctest::Approx(2.0 / 4.0).epsilon(1e-12)); // one of 4 queries moved 2 px
}

TEST_CASE("non-normalized rows are rejected before restriction") {
    GridShape grid{2, 2};
    auto attn = TensorT<double>::full({1, 4, 4}, 0.25);
    attn.value()[5] += 2e-4;
    try {
        mean_attention_distance(attn, grid);
        FAIL("expected input error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::input);
    }

    auto bad_size = TensorT<double>::full({1, 6, 6}, 1.0 / 6);
    CHECK_THROWS_AS(mean_attention_distance(bad_size, grid), Error);
}

TEST_CASE("per-head MAD splits the folded capture layout") {
    GridShape grid{2, 1};
    // batch of 2, 2 heads: head 0 maps are self-only, head 1 maps uniform
    auto attn = TensorT<double>::zeros({4, 4, 4});
    for (int64_t g = 0; g < 4; ++g) {
        bool head1 = g % 2 == 1;
        for (int64_t i = 0; i < 4; ++i)
            for (int64_t j = 0; j < 4; ++j)
                attn.value()[(g * 4 + i) * 4 + j] = head1 ? 0.25 : (i == j ? 1.0 : 0.0);
    }
    auto mads = mad_per_head(attn, 2, grid);
    REQUIRE(mads.size() == 2);
    CHECK(mads[0] == 0.0);
    CHECK(mads[1] == doctest::Approx(0.5 * 1.70710678).epsilon(1e-6));
}

TEST_CASE("fresh model report: windows order the heads and bound the reach") {
    ModelConfig cfg;
    cfg.image_px = 16;
    cfg.patch_px = 2; // m = 8
    cfg.depth = 2;
    cfg.embed_dim = 24;
    cfg.heads = 4;
    cfg.num_classes = 5;
    cfg.bias_mode = BiasMode::absolute;
    ViTPModelT<double> model(cfg, 41);
    auto images = TensorT<double>::zeros({3, 3 * 16 * 16});
    std::mt19937 rng(42);
    rand_fill(images, rng, -1.0, 1.0);
    auto report = mad_report(model, images);
    REQUIRE(report.rows.size() == 8);
    CHECK(report.batch == 3);
    for (const auto& row : report.rows) {
        CHECK(row.mad_px >= 0.0);
        CHECK(row.mad_px <= report.max_possible());
        // suppression keeps the reach inside the initial window's diagonal
        double radius = (row.window_side_at_init - 1) / 2.0;
        CHECK(row.mad_px <= cfg.patch_px * radius * std::sqrt(2.0) + 1e-6);
    }
    // MRFA-W: wider window, farther reach, per layer
    for (int l = 0; l < 2; ++l)
        for (int h = 1; h < 4; ++h) {
            const auto& prev = report.rows[static_cast<size_t>(l * 4 + h - 1)];
            const auto& cur = report.rows[static_cast<size_t>(l * 4 + h)];
            CHECK(cur.mad_px >= prev.mad_px - 1e-6);
        }
}

TEST_CASE("report is invariant under batch permutation") {
    ModelConfig cfg;
    cfg.num_classes = 4;
    cfg.bias_mode = BiasMode::relative;
    ViTPModelT<double> model(cfg, 11);
    auto images = TensorT<double>::zeros({4, 3 * 16 * 16});
    std::mt19937 rng(12);
    rand_fill(images, rng, -1.0, 1.0);
    auto permuted = TensorT<double>::zeros({4, 3 * 16 * 16});
    size_t stride = 3 * 16 * 16;
    int perm[4] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i)
        std::copy(images.value().begin() + perm[i] * static_cast<int64_t>(stride),
                  images.value().begin() + (perm[i] + 1) * static_cast<int64_t>(stride),
                  permuted.value().begin() + i * static_cast<int64_t>(stride));
    auto a = mad_report(model, images);
    auto b = mad_report(model, permuted);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i)
        CHECK(a.rows[i].mad_px == doctest::Approx(b.rows[i].mad_px).epsilon(1e-12));
}

TEST_CASE("suppression off reproduces the plain model's report exactly") {
    ModelConfig with_bias;
    with_bias.num_classes = 4;
    with_bias.bias_mode = BiasMode::absolute;
    with_bias.suppression_v = 0.0;
    with_bias.learnable_bias = false;
    ModelConfig plain = with_bias;
    plain.bias_mode = BiasMode::none;
    ViTPModelT<double> m1(with_bias, 33), m2(plain, 33);
    auto images = TensorT<double>::zeros({2, 3 * 16 * 16});
    std::mt19937 rng(34);
    rand_fill(images, rng, -1.0, 1.0);
    auto r1 = mad_report(m1, images);
    auto r2 = mad_report(m2, images);
    REQUIRE(r1.rows.size() == r2.rows.size());
    for (size_t i = 0; i < r1.rows.size(); ++i)
        CHECK(r1.rows[i].mad_px == r2.rows[i].mad_px);

    // near-zero init keeps attention near uniform; every head should sit
    // within 5% of the uniform-attention MAD for this grid
    auto uniform = TensorT<double>::full({1, 16, 16}, 1.0 / 16);
    double base = mean_attention_distance(uniform, plain.grid());
    for (const auto& row : r2.rows)
        CHECK(std::abs(row.mad_px - base) / base < 0.05);
}

TEST_CASE("mad csv carries one row per layer and head") {
    ModelConfig cfg;
    cfg.num_classes = 3;
    cfg.bias_mode = BiasMode::relative;
    ViTPModelT<double> model(cfg, 8);
    auto images = TensorT<double>::zeros({1, 3 * 16 * 16});
    std::mt19937 rng(9);
    rand_fill(images, rng, -1.0, 1.0);
    auto csv = mad_csv(mad_report(model, images));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "layer,head,window_side_at_init,mad_px");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == cfg.depth * cfg.heads);
    CHECK(csv.find("0,0,3,") != std::string::npos); // first head starts at side 3
}

TEST_CASE("bias histogram counts the suppression plateau and window zeros") {
    ModelConfig cfg;
    cfg.bias_mode = BiasMode::absolute;
    cfg.mrfa_mode = ScheduleMode::mrfa_d; // depth 2: sides [3, 7], m=4
    cfg.heads = 2;
    ViTPModelT<double> model(cfg, 2);
    auto hist = bias_histogram(model, 22, -105.0, 5.0);
    CHECK(hist.total == 4 * 256); // 2 layers x 2 heads x 16x16
    int64_t at_zero = 0, at_v = 0;
    for (size_t i = 0; i < hist.counts.size(); ++i) {
        double left = -105.0 + static_cast<double>(i) * 5.0;
        if (left == -100.0) at_v = hist.counts[i];
        if (left == 0.0) at_zero = hist.counts[i];
    }
    // layer 0 (side 3): 100 in-window zeros per head; layer 1 is global
    CHECK(at_v == 2 * 156);
    CHECK(at_zero == 2 * 100 + 2 * 256);

    auto csv = histogram_csv(hist);
    CHECK(csv.rfind("bin_left,bin_right,count\n", 0) == 0);
    CHECK(csv.find("-100,-95,") != std::string::npos);

    ModelConfig none = cfg;
    none.bias_mode = BiasMode::none;
    ViTPModelT<double> plain(none, 2);
    CHECK_THROWS_AS(bias_histogram(plain, 10, -105.0, 5.0), Error);
}
