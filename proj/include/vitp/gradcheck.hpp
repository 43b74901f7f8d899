#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vitp/ops.hpp"
#include "vitp/tensor.hpp"

// Finite-difference oracle. Meant to run on a 64-bit rebuild of the graph:
// central differences with eps around 1e-3 keep truncation and roundoff
// error both far below the 1e-5 acceptance threshold in double precision.

namespace vitp {

// Two-sided difference at a single coordinate; restores x[i] afterwards.
// Truncation error is (eps^2/6) * f''', around 1e-9 absolute at eps 1e-3
// for unit-curvature objectives.
template <typename T>
T central_diff_3pt(const std::function<T()>& value, std::vector<T>& xv, size_t i, T eps) {
    T saved = xv[i];
    xv[i] = saved + eps;
    T up = value();
    xv[i] = saved - eps;
    T down = value();
    xv[i] = saved;
    return (up - down) / (T(2) * eps);
}

// Five-point stencil at base step eps: truncation drops to O(eps^4), which
// matters for coordinates whose gradient has cancelled down toward the skip
// threshold, where the 3-point truncation term is no longer small relative
// to the gradient itself.
template <typename T>
T central_diff_5pt(const std::function<T()>& value, std::vector<T>& xv, size_t i, T eps) {
    T saved = xv[i];
    xv[i] = saved + eps;
    T up1 = value();
    xv[i] = saved - eps;
    T down1 = value();
    xv[i] = saved + T(2) * eps;
    T up2 = value();
    xv[i] = saved - T(2) * eps;
    T down2 = value();
    xv[i] = saved;
    return (T(8) * (up1 - down1) - (up2 - down2)) / (T(12) * eps);
}

// Central-difference estimate of d(value)/d(x[i]) for every element of x.
// `value` must recompute the scalar objective from the current contents of
// x; the perturbed entry is restored after each evaluation.
template <typename T>
std::vector<T> numeric_gradient(const std::function<T()>& value, TensorT<T> x, T eps) {
    std::vector<T> num(static_cast<size_t>(x.numel()));
    auto& xv = x.value();
    for (size_t i = 0; i < num.size(); ++i)
        num[i] = central_diff_3pt(value, xv, i, eps);
    return num;
}

// Largest elementwise relative discrepancy, |a-n| / max(|a|,|n|,1e-8),
// over entries where |a| exceeds skip_below.
template <typename T>
T max_rel_err(const std::vector<T>& analytic, const std::vector<T>& numeric, T skip_below = T(0)) {
    if (analytic.size() != numeric.size())
        fail(Error::Kind::usage, "max_rel_err: size mismatch " + std::to_string(analytic.size()) +
                                     " vs " + std::to_string(numeric.size()));
    T worst = T(0);
    for (size_t i = 0; i < analytic.size(); ++i) {
        T a = analytic[i], n = numeric[i];
        if (skip_below > T(0) && std::abs(a) <= skip_below) continue;
        T denom = std::max({std::abs(a), std::abs(n), T(1e-8)});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

// Compares the tape gradient of f at `point` against finite differences.
// f builds the graph from the current contents of `point` and returns the
// scalar objective; it is called with a null tape for the probe passes.
template <typename T>
T grad_check(const std::function<TensorT<T>(TapeT<T>*)>& f, TensorT<T> point, T eps,
             T skip_below = T(0)) {
    point.set_requires_grad(true);
    point.zero_grad();
    TapeT<T> tape;
    TensorT<T> loss = f(&tape);
    tape.backward(loss);
    std::vector<T> analytic = point.has_grad()
                                  ? point.grad()
                                  : std::vector<T>(static_cast<size_t>(point.numel()), T(0));
    std::function<T()> value = [&f]() { return f(nullptr).item(); };
    std::vector<T> numeric = numeric_gradient(value, point, eps);
    return max_rel_err(analytic, numeric, skip_below);
}

// Result of a whole-model gradient sweep.
template <typename T>
struct ParamGradReport {
    T max_rel_err = T(0);
    std::string worst_param;
    T worst_analytic = T(0);
    T worst_numeric = T(0);
    size_t checked = 0;
    size_t skipped = 0;
};

// Sweeps every coordinate of every named parameter. One tape backward pass
// supplies all analytic gradients; each surviving coordinate is probed with
// the 3-point stencil first and re-probed with the 5-point stencil when the
// initial discrepancy exceeds `escalate_above`, so the cheap stencil handles
// the bulk and the accurate one settles the near-cancelled coordinates.
// `params` is any range of {name, tensor} records sharing storage with the
// graph that f builds.
template <typename T, typename Params>
ParamGradReport<T> grad_check_params(const std::function<TensorT<T>(TapeT<T>*)>& f, Params& params,
                                     T eps, T skip_below, T escalate_above = T(1e-6)) {
    ParamGradReport<T> report;
    for (auto& p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
    }
    TapeT<T> tape;
    TensorT<T> loss = f(&tape);
    tape.backward(loss);
    std::function<T()> value = [&f]() { return f(nullptr).item(); };
    for (auto& p : params) {
        std::vector<T> analytic = p.tensor.has_grad()
                                      ? p.tensor.grad()
                                      : std::vector<T>(static_cast<size_t>(p.tensor.numel()), T(0));
        auto& xv = p.tensor.value();
        for (size_t i = 0; i < xv.size(); ++i) {
            T a = analytic[i];
            if (std::abs(a) <= skip_below) {
                ++report.skipped;
                continue;
            }
            ++report.checked;
            T n = central_diff_3pt(value, xv, i, eps);
            T err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), T(1e-8)});
            if (err > escalate_above) {
                n = central_diff_5pt(value, xv, i, eps);
                err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), T(1e-8)});
            }
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = p.name;
                report.worst_analytic = a;
                report.worst_numeric = n;
            }
        }
    }
    return report;
}

} // namespace vitp
