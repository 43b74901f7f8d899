#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vitp/focal_bias.hpp"
#include "vitp/ops.hpp"
#include "vitp/rng.hpp"
#include "vitp/tensor.hpp"

// The ViT-P network: a uniform-scale ViT (class token, absolute position
// embedding, pre-norm blocks) whose attention logits receive a per-head
// focal bias before the softmax.

namespace vitp {

enum class BiasMode { none, absolute, relative };

const char* to_string(BiasMode mode);
BiasMode bias_mode_from_string(const std::string& s);

struct ModelConfig {
    int image_px = 16;
    int patch_px = 4;
    int depth = 2;
    int embed_dim = 32;
    int heads = 2;
    double mlp_ratio = 4.0;
    int num_classes = 10;
    BiasMode bias_mode = BiasMode::relative;
    bool learnable_bias = true;
    bool decay_enabled = true;
    double suppression_v = -100.0;
    ScheduleMode mrfa_mode = ScheduleMode::mrfa_w;
    GeluKind gelu_kind = GeluKind::erf;
    double dropout = 0.0;
    double drop_path = 0.0;

    int head_dim() const { return embed_dim / heads; }
    int patches_per_side() const { return image_px / patch_px; }
    int spatial_tokens() const { return patches_per_side() * patches_per_side(); }
    int tokens() const { return spatial_tokens() + 1; }
    int mlp_hidden() const { return static_cast<int>(mlp_ratio * embed_dim + 0.5); }
    GridShape grid() const { return GridShape{patches_per_side(), patch_px}; }

    void validate() const;
};

// Named presets. "desk-tiny" is the CPU-friendly default; tiny/small/base
// follow the DeiT dimension convention at depth 12 on 32x32 inputs.
ModelConfig model_preset(const std::string& name);

// How a parameter participates in weight decay: projection matrices decay
// at the global rate, learnable focal biases at their own rate, and
// norms / vector biases / token embeddings not at all.
enum class DecayGroup { none, weight, focal_bias };

template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> tensor;
    DecayGroup decay = DecayGroup::none;
};

template <typename T>
struct BlockParamsT {
    TensorT<T> ln1_g, ln1_b;
    TensorT<T> qkv_w, qkv_b;
    TensorT<T> proj_w, proj_b;
    TensorT<T> ln2_g, ln2_b;
    TensorT<T> fc1_w, fc1_b;
    TensorT<T> fc2_w, fc2_b;
};

// Post-softmax attention maps, one [b*H x N x N] tensor per layer.
template <typename T>
struct AttnCaptureT {
    std::vector<TensorT<T>> layers;
};

// Per-forward stochastic regularization; rates of 0 make this inert. The
// key must be derived from (seed, position) by the caller so repeated
// calls are reproducible.
struct DropState {
    uint64_t key = 0;
    bool training = false;
};

namespace detail {

// Truncated normal init, ViT-style: N(0, std) redrawn until within 2 std.
template <typename T>
void trunc_normal_fill(TensorT<T>& t, std::mt19937& rng, double std_dev) {
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& v : t.value()) {
        double x = dist(rng);
        while (std::abs(x) > 2.0 * std_dev) x = dist(rng);
        v = static_cast<T>(x);
    }
}

} // namespace detail

// [b x 3*s*s] channel-major images -> [b*m^2 x 3*p*p] flattened patches in
// row-major patch order; per-patch features ordered (channel, dy, dx).
template <typename T>
TensorT<T> extract_patches(const TensorT<T>& images, int image_px, int patch_px) {
    int s = image_px, p = patch_px;
    if (p < 1 || s < 1 || s % p != 0)
        fail(Error::Kind::config, "image size " + std::to_string(s) + " is not divisible by patch size " +
                                      std::to_string(p));
    int m = s / p;
    if (images.ndim() != 2 || images.dim(1) != int64_t(3) * s * s)
        fail(Error::Kind::shape, "images " + TensorT<T>::shape_str(images.shape()) +
                                     " do not match 3x" + std::to_string(s) + "x" + std::to_string(s));
    int64_t b = images.dim(0), pdim = int64_t(3) * p * p;
    TensorT<T> patches = TensorT<T>::zeros({b * m * m, pdim});
    const T* iv = images.value().data();
    T* pv = patches.value().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        const T* img = iv + bi * 3 * s * s;
        for (int py = 0; py < m; ++py)
            for (int px = 0; px < m; ++px) {
                T* dst = pv + ((bi * m + py) * m + px) * pdim;
                for (int ch = 0; ch < 3; ++ch)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx)
                            dst[(ch * p + dy) * p + dx] =
                                img[(ch * s + py * p + dy) * s + px * p + dx];
            }
    }
    return patches;
}

// Elementwise inverted dropout via a keyed mask; identity when rate is 0
// or the state is not training.
template <typename T>
TensorT<T> dropout_op(TapeT<T>* tape, TensorT<T> x, double rate, const DropState& drop, uint64_t salt) {
    if (rate <= 0.0 || !drop.training) return x;
    if (rate >= 1.0) fail(Error::Kind::config, "dropout rate must be < 1");
    std::mt19937_64 rng(detail::mix_key(drop.key, salt));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TensorT<T> mask = TensorT<T>::zeros(x.shape());
    T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& v : mask.value()) v = unit(rng) >= rate ? keep_scale : T(0);
    return mul(tape, x, mask);
}

// Per-sample residual-branch dropout (stochastic depth). The mask is
// constant across a sample's tokens and channels.
template <typename T>
TensorT<T> drop_path_op(TapeT<T>* tape, TensorT<T> x, double rate, const DropState& drop,
                        uint64_t salt, int64_t b) {
    if (rate <= 0.0 || !drop.training) return x;
    if (rate >= 1.0) fail(Error::Kind::config, "drop_path rate must be < 1");
    std::mt19937_64 rng(detail::mix_key(drop.key, salt));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int64_t rows_per_sample = x.dim(0) / b, d = x.dim(1);
    TensorT<T> mask = TensorT<T>::zeros(x.shape());
    T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (int64_t bi = 0; bi < b; ++bi) {
        T m = unit(rng) >= rate ? keep_scale : T(0);
        T* block = mask.value().data() + bi * rows_per_sample * d;
        for (int64_t i = 0; i < rows_per_sample * d; ++i) block[i] = m;
    }
    return mul(tape, x, mask);
}

// One multi-head attention with per-head additive logit bias:
// softmax_rows(Q K^T / sqrt(d_k) + B) V, heads merged, output projected.
// `biases` holds one materialized N x N matrix per head (empty = none).
template <typename T>
TensorT<T> attention_with_bias(TapeT<T>* tape, TensorT<T> x, const BlockParamsT<T>& p,
                               std::vector<TensorT<T>> biases, int64_t b, int64_t n, int64_t h,
                               AttnCaptureT<T>* capture) {
    int64_t d = x.dim(1), dh = d / h;
    auto qkv = add_rowvec(tape, matmul(tape, x, p.qkv_w), p.qkv_b);
    auto q = split_heads(tape, slice_cols(tape, qkv, 0, d), b, n, h);
    auto k = split_heads(tape, slice_cols(tape, qkv, d, 2 * d), b, n, h);
    auto v = split_heads(tape, slice_cols(tape, qkv, 2 * d, 3 * d), b, n, h);
    auto logits = bmm_nt(tape, q, k, static_cast<T>(1.0 / std::sqrt(double(dh))));
    if (!biases.empty()) {
        if (static_cast<int64_t>(biases.size()) != h)
            fail(Error::Kind::config, "attention: expected " + std::to_string(h) + " head biases, got " +
                                          std::to_string(biases.size()));
        for (auto& bias : biases)
            if (bias.ndim() != 2 || bias.dim(0) != n || bias.dim(1) != n)
                fail(Error::Kind::config, "attention: bias shape " + TensorT<T>::shape_str(bias.shape()) +
                                              " does not match token count " + std::to_string(n));
        logits = add_head_bias(tape, logits, std::move(biases));
    }
    auto attn = softmax_rows(tape, logits);
    if (capture) capture->layers.push_back(attn.clone());
    auto ctx = merge_heads(tape, bmm(tape, attn, v), b, n, h);
    return add_rowvec(tape, matmul(tape, ctx, p.proj_w), p.proj_b);
}

template <typename T>
class ViTPModelT {
public:
    ViTPModelT(ModelConfig cfg, uint64_t seed) : cfg_(cfg), grid_(cfg.grid()) {
        cfg_.validate();
        sched_ = build_window_schedule(cfg_.mrfa_mode, cfg_.depth, cfg_.heads, grid_);
        if (cfg_.bias_mode == BiasMode::relative) index_map_ = relative_index_map(grid_);
        init_params(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    const GridShape& grid() const { return grid_; }
    const WindowSchedule& schedule() const { return sched_; }

    std::vector<ParamT<T>>& parameters() { return params_; }
    const std::vector<ParamT<T>>& parameters() const { return params_; }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    TensorT<T> param(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p.tensor;
        fail(Error::Kind::usage, "no parameter named '" + name + "'");
    }

    // Raw per-(layer, head) bias parameters: spatial matrices in absolute
    // mode, offset tables in relative mode. Empty when bias_mode is none.
    const std::vector<std::vector<TensorT<T>>>& bias_params() const { return bias_params_; }

    // images: [b x 3*image_px*image_px], channel-major per sample.
    TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& images, AttnCaptureT<T>* capture = nullptr,
                       const DropState& drop = {}) {
        int64_t b = images.dim(0);
        int64_t n = cfg_.tokens(), h = cfg_.heads;
        auto patches = extract_patches(images, cfg_.image_px, cfg_.patch_px);
        auto tokens = add_rowvec(tape, matmul(tape, patches, patch_w_), patch_b_);
        auto x = add_pos(tape, prepend_class(tape, tokens, cls_, b), pos_, b);
        for (int l = 0; l < cfg_.depth; ++l) {
            auto& blk = blocks_[static_cast<size_t>(l)];
            auto normed = layer_norm(tape, x, blk.ln1_g, blk.ln1_b);
            auto attn_out = attention_with_bias(tape, normed, blk, materialize_biases(tape, l), b, n,
                                                h, capture);
            attn_out = dropout_op(tape, attn_out, cfg_.dropout, drop, uint64_t(l) * 8 + 0);
            attn_out = drop_path_op(tape, attn_out, cfg_.drop_path, drop, uint64_t(l) * 8 + 1, b);
            x = add(tape, x, attn_out);
            auto normed2 = layer_norm(tape, x, blk.ln2_g, blk.ln2_b);
            auto hidden = gelu(tape, add_rowvec(tape, matmul(tape, normed2, blk.fc1_w), blk.fc1_b),
                               cfg_.gelu_kind);
            hidden = dropout_op(tape, hidden, cfg_.dropout, drop, uint64_t(l) * 8 + 2);
            auto mlp_out = add_rowvec(tape, matmul(tape, hidden, blk.fc2_w), blk.fc2_b);
            mlp_out = dropout_op(tape, mlp_out, cfg_.dropout, drop, uint64_t(l) * 8 + 3);
            mlp_out = drop_path_op(tape, mlp_out, cfg_.drop_path, drop, uint64_t(l) * 8 + 4, b);
            x = add(tape, x, mlp_out);
        }
        auto cls_rows = take_class_rows(tape, x, b);
        auto final_state = layer_norm(tape, cls_rows, ln_f_g_, ln_f_b_);
        return add_rowvec(tape, matmul(tape, final_state, head_w_), head_b_);
    }

    // The full N x N additive bias for (layer, head), as used in forward.
    TensorT<T> materialized_bias(TapeT<T>* tape, int layer, int head) {
        if (cfg_.bias_mode == BiasMode::none)
            fail(Error::Kind::usage, "materialized_bias: bias_mode is none");
        auto& raw = bias_params_[static_cast<size_t>(layer)][static_cast<size_t>(head)];
        if (cfg_.bias_mode == BiasMode::absolute) return pad_class_bias(tape, raw);
        return materialize_relative_bias(tape, raw, index_map_, grid_, true);
    }

private:
    void init_params(uint64_t seed) {
        int64_t d = cfg_.embed_dim, hid = cfg_.mlp_hidden(), c = cfg_.num_classes;
        int64_t pdim = 3 * cfg_.patch_px * cfg_.patch_px, n = cfg_.tokens();
        std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
        auto weight = [&](const std::string& name, std::vector<int64_t> shape) {
            auto t = TensorT<T>::zeros(std::move(shape), true);
            detail::trunc_normal_fill(t, rng, 0.02);
            params_.push_back({name, t, DecayGroup::weight});
            return t;
        };
        auto vec = [&](const std::string& name, std::vector<int64_t> shape, T fill_v) {
            auto t = TensorT<T>::full(std::move(shape), fill_v, true);
            params_.push_back({name, t, DecayGroup::none});
            return t;
        };
        patch_w_ = weight("patch_embed.w", {pdim, d});
        patch_b_ = vec("patch_embed.b", {d}, T(0));
        cls_ = vec("cls_token", {d}, T(0));
        pos_ = TensorT<T>::zeros({n, d}, true);
        detail::trunc_normal_fill(pos_, rng, 0.02);
        params_.push_back({"pos_embed", pos_, DecayGroup::none});
        blocks_.resize(static_cast<size_t>(cfg_.depth));
        bias_params_.resize(static_cast<size_t>(cfg_.depth));
        for (int l = 0; l < cfg_.depth; ++l) {
            auto& blk = blocks_[static_cast<size_t>(l)];
            std::string prefix = "blocks." + std::to_string(l) + ".";
            blk.ln1_g = vec(prefix + "ln1.g", {d}, T(1));
            blk.ln1_b = vec(prefix + "ln1.b", {d}, T(0));
            blk.qkv_w = weight(prefix + "attn.qkv.w", {d, 3 * d});
            blk.qkv_b = vec(prefix + "attn.qkv.b", {3 * d}, T(0));
            blk.proj_w = weight(prefix + "attn.proj.w", {d, d});
            blk.proj_b = vec(prefix + "attn.proj.b", {d}, T(0));
            blk.ln2_g = vec(prefix + "ln2.g", {d}, T(1));
            blk.ln2_b = vec(prefix + "ln2.b", {d}, T(0));
            blk.fc1_w = weight(prefix + "mlp.fc1.w", {d, hid});
            blk.fc1_b = vec(prefix + "mlp.fc1.b", {hid}, T(0));
            blk.fc2_w = weight(prefix + "mlp.fc2.w", {hid, d});
            blk.fc2_b = vec(prefix + "mlp.fc2.b", {d}, T(0));
            init_layer_biases(l, prefix);
        }
        ln_f_g_ = vec("ln_f.g", {d}, T(1));
        ln_f_b_ = vec("ln_f.b", {d}, T(0));
        head_w_ = weight("head.w", {d, c});
        head_b_ = vec("head.b", {c}, T(0));
    }

    // Bias parameters draw nothing from the init RNG, so weight streams
    // are identical across bias modes (the v=0 equivalence relies on it).
    void init_layer_biases(int l, const std::string& prefix) {
        if (cfg_.bias_mode == BiasMode::none) return;
        auto v = static_cast<T>(cfg_.suppression_v);
        auto& row = bias_params_[static_cast<size_t>(l)];
        for (int hd = 0; hd < cfg_.heads; ++hd) {
            int side = sched_.sides[static_cast<size_t>(l)][static_cast<size_t>(hd)];
            TensorT<T> raw = cfg_.bias_mode == BiasMode::absolute
                                 ? build_absolute_bias<T>(side, grid_, v, false)
                                 : build_relative_table<T>(side, grid_, v);
            if (cfg_.learnable_bias) {
                raw.set_requires_grad(true);
                params_.push_back({prefix + "attn.bias." + std::to_string(hd), raw,
                                   cfg_.decay_enabled ? DecayGroup::focal_bias : DecayGroup::none});
            }
            row.push_back(raw);
        }
    }

    std::vector<TensorT<T>> materialize_biases(TapeT<T>* tape, int layer) {
        std::vector<TensorT<T>> out;
        if (cfg_.bias_mode == BiasMode::none) return out;
        out.reserve(static_cast<size_t>(cfg_.heads));
        for (int hd = 0; hd < cfg_.heads; ++hd) out.push_back(materialized_bias(tape, layer, hd));
        return out;
    }

    ModelConfig cfg_;
    GridShape grid_;
    WindowSchedule sched_;
    std::shared_ptr<const std::vector<int32_t>> index_map_;
    std::vector<ParamT<T>> params_;
    std::vector<BlockParamsT<T>> blocks_;
    std::vector<std::vector<TensorT<T>>> bias_params_;
    TensorT<T> patch_w_, patch_b_, cls_, pos_, ln_f_g_, ln_f_b_, head_w_, head_b_;
};

using ViTPModel = ViTPModelT<float>;

// Re-seats every parameter at a generic O(1) point and returns a matching
// random image batch. Fixed-step finite differences are only trustworthy
// when token rows entering layer_norm have O(1) variance: near the tiny-std
// training init the (eps / row_std)^2 truncation term swamps a 1e-5
// comparison even for a correct gradient. Weight matrices get U(-0.3, 0.3),
// norm gains stay near 1, vector biases stay small, and bias tables are
// randomized inside the window while suppression plateaus (entries at large
// negative v, detected as <= -50) are left intact.
template <typename T>
TensorT<T> randomize_for_gradcheck(ViTPModelT<T>& model, int batch, uint64_t seed) {
    std::mt19937 rng(static_cast<uint32_t>(detail::mix_key(seed, 0x67726164)));
    std::uniform_real_distribution<double> w(-0.3, 0.3), gain(0.8, 1.2), small(-0.2, 0.2),
        token(-1.0, 1.0), window(-0.5, 0.5), pixel(-2.0, 2.0);
    for (auto& p : model.parameters()) {
        bool is_gain = p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, ".g") == 0;
        bool is_token = p.name == "cls_token" || p.name == "pos_embed";
        bool is_bias_table = p.name.find("attn.bias") != std::string::npos;
        for (auto& v : p.tensor.value()) {
            if (is_bias_table)
                v = v <= T(-50) ? v : static_cast<T>(window(rng));
            else if (is_gain)
                v = static_cast<T>(gain(rng));
            else if (is_token)
                v = static_cast<T>(token(rng));
            else if (p.decay == DecayGroup::weight)
                v = static_cast<T>(w(rng));
            else
                v = static_cast<T>(small(rng));
        }
    }
    const auto& cfg = model.config();
    auto images = TensorT<T>::zeros({int64_t(batch), int64_t(3) * cfg.image_px * cfg.image_px});
    for (auto& v : images.value()) v = static_cast<T>(pixel(rng));
    return images;
}

} // namespace vitp
