#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vitp/model.hpp"

namespace vitp {

// Mean attention distance: how far, in pixels, a head's attention reaches on
// average. The class token has no spatial coordinate, so it is dropped and
// each restricted row is renormalized before the distance-weighted average.

struct MADRow {
    int layer = 0;
    int head = 0;
    int window_side_at_init = 0;
    double mad_px = 0.0;
};

struct MADReport {
    std::vector<MADRow> rows;
    int batch = 0;
    GridShape grid;

    // hard geometric ceiling: opposite corners of the grid
    double max_possible() const {
        return grid.patch_px * std::sqrt(2.0) * static_cast<double>(grid.m - 1);
    }
};

// Attention-weighted mean Euclidean distance over spatial queries, averaged
// across the leading (batch-like) dimension. attn is [g x N_t x N_t] with
// N_t either the spatial token count or spatial + leading class token; rows
// must sum to 1 within 1e-4 before restriction.
template <typename T>
double mean_attention_distance(const TensorT<T>& attn, const GridShape& grid) {
    if (attn.ndim() != 3 || attn.dim(1) != attn.dim(2))
        fail(Error::Kind::input,
             "mean_attention_distance: want [g x N x N] attention, got " +
                 TensorT<T>::shape_str(attn.shape()));
    int64_t g = attn.dim(0), nt = attn.dim(1);
    int64_t spatial = grid.spatial_tokens();
    int64_t off; // index of the first spatial token
    if (nt == spatial)
        off = 0;
    else if (nt == spatial + 1)
        off = 1;
    else
        fail(Error::Kind::input, "mean_attention_distance: " + std::to_string(nt) +
                                     " tokens does not fit a " + std::to_string(grid.m) + "x" +
                                     std::to_string(grid.m) + " grid");
    std::vector<double> dist(static_cast<size_t>(spatial * spatial));
    for (int64_t i = 0; i < spatial; ++i)
        for (int64_t j = 0; j < spatial; ++j) {
            double dr = static_cast<double>(i / grid.m - j / grid.m);
            double dc = static_cast<double>(i % grid.m - j % grid.m);
            dist[static_cast<size_t>(i * spatial + j)] =
                grid.patch_px * std::sqrt(dr * dr + dc * dc);
        }
    const T* a = attn.value().data();
    double total = 0.0;
    for (int64_t b = 0; b < g; ++b) {
        const T* map = a + b * nt * nt;
        for (int64_t r = 0; r < nt; ++r) {
            double sum = 0.0;
            for (int64_t c = 0; c < nt; ++c) sum += static_cast<double>(map[r * nt + c]);
            if (std::abs(sum - 1.0) > 1e-4)
                fail(Error::Kind::input, "mean_attention_distance: row " + std::to_string(r) +
                                             " of map " + std::to_string(b) + " sums to " +
                                             std::to_string(sum) + ", not 1");
        }
        for (int64_t q = 0; q < spatial; ++q) {
            const T* row = map + (q + off) * nt + off;
            double rsum = 0.0;
            for (int64_t k = 0; k < spatial; ++k) rsum += static_cast<double>(row[k]);
            if (rsum < 1e-12)
                fail(Error::Kind::input,
                     "mean_attention_distance: spatial mass of query " + std::to_string(q) +
                         " vanished after dropping the class token");
            const double* drow = dist.data() + q * spatial;
            double acc = 0.0;
            for (int64_t k = 0; k < spatial; ++k) acc += static_cast<double>(row[k]) * drow[k];
            total += acc / rsum;
        }
    }
    return total / static_cast<double>(g * spatial);
}

// Per-head MAD from one layer's captured maps, which stack heads within each
// batch entry as [b*H x N_t x N_t] with head minor.
template <typename T>
std::vector<double> mad_per_head(const TensorT<T>& layer_attn, int heads, const GridShape& grid) {
    if (layer_attn.ndim() != 3 || layer_attn.dim(0) % heads != 0)
        fail(Error::Kind::input, "mad_per_head: map count " +
                                     std::to_string(layer_attn.ndim() == 3 ? layer_attn.dim(0) : -1) +
                                     " is not a multiple of " + std::to_string(heads) + " heads");
    int64_t groups = layer_attn.dim(0) / heads, nt = layer_attn.dim(1);
    std::vector<double> out;
    out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto one = TensorT<T>::zeros({groups, nt, nt});
        for (int64_t b = 0; b < groups; ++b) {
            auto src = layer_attn.value().begin() + (b * heads + h) * nt * nt;
            std::copy(src, src + nt * nt, one.value().begin() + b * nt * nt);
        }
        out.push_back(mean_attention_distance(one, grid));
    }
    return out;
}

// Runs an evaluation forward pass with attention capture and tabulates MAD
// for every (layer, head) alongside the window side the head started from.
template <typename T>
MADReport mad_report(ViTPModelT<T>& model, const TensorT<T>& images) {
    const auto& cfg = model.config();
    AttnCaptureT<T> capture;
    model.forward(nullptr, images, &capture);
    MADReport report;
    report.batch = static_cast<int>(images.dim(0));
    report.grid = cfg.grid();
    for (int l = 0; l < cfg.depth; ++l) {
        auto mads = mad_per_head(capture.layers[static_cast<size_t>(l)], cfg.heads, report.grid);
        for (int h = 0; h < cfg.heads; ++h) {
            int side = cfg.bias_mode == BiasMode::none
                           ? report.grid.global_side()
                           : model.schedule().sides[static_cast<size_t>(l)][static_cast<size_t>(h)];
            report.rows.push_back({l, h, side, mads[static_cast<size_t>(h)]});
        }
    }
    return report;
}

std::string mad_csv(const MADReport& report);

// Distribution of the model's focal-bias entries over equal-width bins;
// out-of-range values clamp to the edge bins.
struct BiasHistogram {
    double lo = 0.0, hi = 0.0;
    std::vector<int64_t> counts;
    int64_t total = 0;
};

template <typename T>
BiasHistogram bias_histogram(const ViTPModelT<T>& model, int bins, double lo, double hi) {
    if (bins < 2 || !(lo < hi))
        fail(Error::Kind::usage, "bias_histogram: need bins >= 2 and lo < hi");
    if (model.config().bias_mode == BiasMode::none)
        fail(Error::Kind::usage, "bias_histogram: model has no focal bias");
    BiasHistogram out;
    out.lo = lo;
    out.hi = hi;
    out.counts.assign(static_cast<size_t>(bins), 0);
    for (const auto& layer : model.bias_params())
        for (const auto& t : layer) {
            std::vector<double> vals(t.value().begin(), t.value().end());
            histogram_accumulate(out.counts, vals, lo, hi);
            out.total += static_cast<int64_t>(vals.size());
        }
    return out;
}

std::string histogram_csv(const BiasHistogram& hist);

void write_text_file(const std::string& path, const std::string& content);

} // namespace vitp
