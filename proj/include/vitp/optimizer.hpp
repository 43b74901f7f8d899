#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vitp/errors.hpp"
#include "vitp/model.hpp"

namespace vitp {

// AdamW with linear warmup and a half-cosine ramp to zero. The peak rate
// follows the batch-size rule unless base_lr pins it explicitly. bias_decay
// defaults to weight_decay when left at the -1 sentinel.
struct OptimizerConfig {
    int batch_size = 128;
    double base_lr = 0.0; // 0 = derive as 5e-4 * batch_size / 256
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.3;
    double bias_decay = -1.0; // -1 = follow weight_decay
    int warmup_epochs = 20;
    int total_epochs = 100;
    int64_t steps_per_epoch = 1; // set by the harness once the dataset is known
    double grad_clip = 0.0;      // 0 = off

    double peak_lr() const {
        return base_lr > 0.0 ? base_lr : 5e-4 * static_cast<double>(batch_size) / 256.0;
    }
    double resolved_bias_decay() const { return bias_decay < 0.0 ? weight_decay : bias_decay; }
    int64_t warmup_steps() const { return static_cast<int64_t>(warmup_epochs) * steps_per_epoch; }
    int64_t total_steps() const { return static_cast<int64_t>(total_epochs) * steps_per_epoch; }

    void validate() const {
        if (batch_size < 1)
            fail(Error::Kind::config, "batch_size must be >= 1, got " + std::to_string(batch_size));
        if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs > total_epochs)
            fail(Error::Kind::config,
                 "warmup_epochs must lie in [0, total_epochs], got " +
                     std::to_string(warmup_epochs) + " of " + std::to_string(total_epochs));
        if (steps_per_epoch < 1)
            fail(Error::Kind::config,
                 "steps_per_epoch must be >= 1, got " + std::to_string(steps_per_epoch));
        if (base_lr < 0.0 || weight_decay < 0.0 || grad_clip < 0.0)
            fail(Error::Kind::config, "learning rates, decay and clip must be nonnegative");
        if (bias_decay < 0.0 && bias_decay != -1.0)
            fail(Error::Kind::config, "bias_decay must be nonnegative (or -1 to follow weight_decay)");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            fail(Error::Kind::config, "betas must lie in [0, 1)");
        if (eps <= 0.0) fail(Error::Kind::config, "adam eps must be positive");
    }
};

// Linear ramp 0 -> peak over the warmup steps, then half-cosine peak -> 0 at
// total steps; zero afterwards. Continuous at the junction since cos(0) = 1.
inline double lr_at(int64_t step, const OptimizerConfig& cfg) {
    if (step < 0) fail(Error::Kind::usage, "lr_at: negative step " + std::to_string(step));
    double peak = cfg.peak_lr();
    int64_t warmup = cfg.warmup_steps(), total = cfg.total_steps();
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total) return 0.0;
    double frac = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * frac));
}

// Decoupled-decay Adam over the model's parameter registry. Parameter handles
// share storage with the model, so step() mutates the live weights. Decay is
// multiplicative, theta *= (1 - lr*lambda), applied per group before the
// adaptive update: weight matrices use weight_decay, learnable focal biases
// use bias_decay, and everything tagged DecayGroup::none (norm gains, vector
// biases, token/position embeddings) is left untouched.
template <typename T>
class AdamWT {
  public:
    struct Slot {
        std::string name;
        std::vector<T> m, v;
    };

    AdamWT(OptimizerConfig cfg, std::vector<ParamT<T>> params)
        : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
        slots_.reserve(params_.size());
        for (const auto& p : params_) {
            auto n = static_cast<size_t>(p.tensor.numel());
            slots_.push_back({p.name, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
        }
    }

    // lr is the schedule value for this step (lr_at output, or 1 to exercise
    // the raw per-step decay factor).
    void step(double lr) {
        ++t_;
        T clip_scale = grad_clip_scale();
        T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
        T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));
        auto b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        auto eps = static_cast<T>(cfg_.eps), lrt = static_cast<T>(lr);
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto& val = p.tensor.value();
            double lambda = p.decay == DecayGroup::weight      ? cfg_.weight_decay
                            : p.decay == DecayGroup::focal_bias ? cfg_.resolved_bias_decay()
                                                                : 0.0;
            if (lambda > 0.0) {
                auto factor = static_cast<T>(1.0 - lr * lambda);
                for (auto& v : val) v *= factor;
            }
            const T* g = p.tensor.has_grad() ? p.tensor.grad().data() : nullptr;
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            for (size_t k = 0; k < val.size(); ++k) {
                T gk = g ? g[k] * clip_scale : T(0);
                m[k] = b1 * m[k] + (T(1) - b1) * gk;
                v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
                val[k] -= lrt * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_)
            if (p.tensor.has_grad()) p.tensor.zero_grad();
    }

    int64_t steps_taken() const { return t_; }
    void set_steps_taken(int64_t t) { t_ = t; }
    const OptimizerConfig& config() const { return cfg_; }
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

  private:
    T grad_clip_scale() const {
        if (cfg_.grad_clip <= 0.0) return T(1);
        double sq = 0.0;
        for (const auto& p : params_)
            if (p.tensor.has_grad())
                for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        double norm = std::sqrt(sq);
        return norm > cfg_.grad_clip ? static_cast<T>(cfg_.grad_clip / norm) : T(1);
    }

    OptimizerConfig cfg_;
    std::vector<ParamT<T>> params_;
    std::vector<Slot> slots_;
    int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

} // namespace vitp
