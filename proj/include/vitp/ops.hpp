#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "vitp/tensor.hpp"

// Differentiable primitives. Every op computes its forward result into a
// fresh buffer and, when a tape is supplied and any input requires a
// gradient, records a closure that accumulates (+=) into the inputs'
// grad buffers. Accumulation order is fixed by the tape, so repeated
// runs are bit-identical.

namespace vitp {

namespace detail {

// C += alpha * A(m x k) * B(k x n)
template <typename T>
void gemm_nn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, T alpha = T(1)) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            T av = alpha * a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += alpha * A(m x k) * B(n x k)^T
template <typename T>
void gemm_nt(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, T alpha = T(1)) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += alpha * acc;
        }
    }
}

// C += alpha * A(k x m)^T * B(k x n)
template <typename T>
void gemm_tn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, T alpha = T(1)) {
    for (int64_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            T av = alpha * arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        fail(Error::Kind::shape, std::string(op) + ": shapes " + TensorT<T>::shape_str(a.shape()) +
                                     " and " + TensorT<T>::shape_str(b.shape()) + " differ");
}

} // namespace detail

template <typename T>
TensorT<T> add(TapeT<T>* tape, TensorT<T> a, TensorT<T> b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> out = TensorT<T>::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (tape && out.requires_grad()) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(TapeT<T>* tape, TensorT<T> a, TensorT<T> b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> out = TensorT<T>::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (tape && out.requires_grad()) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.ensure_grad();
                const auto& bv2 = b.value();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.ensure_grad();
                const auto& av2 = a.value();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(TapeT<T>* tape, TensorT<T> a, T s) {
    TensorT<T> out = TensorT<T>::zeros(a.shape(), a.requires_grad());
    const auto& av = a.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = s * av[i];
    if (tape && out.requires_grad()) {
        tape->record([a, out, s]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            auto& ga = a.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum(TapeT<T>* tape, TensorT<T> a) {
    T acc = T(0);
    for (T v : a.value()) acc += v;
    TensorT<T> out = TensorT<T>::from({1}, {acc}, a.requires_grad());
    if (tape && out.requires_grad()) {
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            T g = out.grad()[0];
            auto& ga = a.ensure_grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

// a[m x k] * b[k x n] -> [m x n]; backward dA = dC*B^T, dB = A^T*dC.
template <typename T>
TensorT<T> matmul(TapeT<T>* tape, TensorT<T> a, TensorT<T> b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        fail(Error::Kind::shape, "matmul: incompatible shapes " + TensorT<T>::shape_str(a.shape()) +
                                     " and " + TensorT<T>::shape_str(b.shape()));
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> out = TensorT<T>::zeros({m, n}, a.requires_grad() || b.requires_grad());
    detail::gemm_nn(out.value().data(), a.value().data(), b.value().data(), m, k, n);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            if (a.requires_grad())
                detail::gemm_nt(a.ensure_grad().data(), g, b.value().data(), m, n, k);
            if (b.requires_grad())
                detail::gemm_tn(b.ensure_grad().data(), a.value().data(), g, k, m, n);
        });
    }
    return out;
}

// Batched a[B x m x k] * b[B x k x n] -> [B x m x n].
template <typename T>
TensorT<T> bmm(TapeT<T>* tape, TensorT<T> a, TensorT<T> b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        fail(Error::Kind::shape, "bmm: incompatible shapes " + TensorT<T>::shape_str(a.shape()) +
                                     " and " + TensorT<T>::shape_str(b.shape()));
    int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    TensorT<T> out = TensorT<T>::zeros({bs, m, n}, a.requires_grad() || b.requires_grad());
    for (int64_t i = 0; i < bs; ++i)
        detail::gemm_nn(out.value().data() + i * m * n, a.value().data() + i * m * k,
                        b.value().data() + i * k * n, m, k, n);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out, bs, m, k, n]() mutable {
            if (!out.has_grad()) return;
            for (int64_t i = 0; i < bs; ++i) {
                const T* g = out.grad().data() + i * m * n;
                if (a.requires_grad())
                    detail::gemm_nt(a.ensure_grad().data() + i * m * k, g,
                                    b.value().data() + i * k * n, m, n, k);
                if (b.requires_grad())
                    detail::gemm_tn(b.ensure_grad().data() + i * k * n,
                                    a.value().data() + i * m * k, g, k, m, n);
            }
        });
    }
    return out;
}

// Batched alpha * a[B x m x k] * b[B x n x k]^T -> [B x m x n]. This is
// Q K^T with alpha = 1/sqrt(d_k) folded in.
template <typename T>
TensorT<T> bmm_nt(TapeT<T>* tape, TensorT<T> a, TensorT<T> b, T alpha = T(1)) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        fail(Error::Kind::shape, "bmm_nt: incompatible shapes " + TensorT<T>::shape_str(a.shape()) +
                                     " and " + TensorT<T>::shape_str(b.shape()));
    int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    TensorT<T> out = TensorT<T>::zeros({bs, m, n}, a.requires_grad() || b.requires_grad());
    for (int64_t i = 0; i < bs; ++i)
        detail::gemm_nt(out.value().data() + i * m * n, a.value().data() + i * m * k,
                        b.value().data() + i * n * k, m, k, n, alpha);
    if (tape && out.requires_grad()) {
        tape->record([a, b, out, bs, m, k, n, alpha]() mutable {
            if (!out.has_grad()) return;
            for (int64_t i = 0; i < bs; ++i) {
                const T* g = out.grad().data() + i * m * n;
                if (a.requires_grad())
                    detail::gemm_nn(a.ensure_grad().data() + i * m * k, g,
                                    b.value().data() + i * n * k, m, n, k, alpha);
                if (b.requires_grad())
                    detail::gemm_tn(b.ensure_grad().data() + i * n * k, g,
                                    a.value().data() + i * m * k, n, m, k, alpha);
            }
        });
    }
    return out;
}

// Softmax over the last dimension, stabilized by row-max subtraction so a
// -100 bias entry never produces a non-finite intermediate.
template <typename T>
TensorT<T> softmax_rows(TapeT<T>* tape, TensorT<T> x) {
    if (x.ndim() < 1) fail(Error::Kind::shape, "softmax_rows: rank-0 input");
    int64_t n = x.dim(x.ndim() - 1);
    int64_t rows = x.numel() / n;
    TensorT<T> out = TensorT<T>::zeros(x.shape(), x.requires_grad());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * n;
        T* orow = ov + r * n;
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int64_t j = 0; j < n; ++j) orow[j] /= denom;
    }
    if (tape && out.requires_grad()) {
        tape->record([x, out, rows, n]() mutable {
            if (!out.has_grad()) return;
            const T* p = out.value().data();
            const T* g = out.grad().data();
            T* gx = x.ensure_grad().data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* prow = p + r * n;
                const T* grow = g + r * n;
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j) dot += grow[j] * prow[j];
                T* gxrow = gx + r * n;
                for (int64_t j = 0; j < n; ++j) gxrow[j] += prow[j] * (grow[j] - dot);
            }
        });
    }
    return out;
}

// Per-row standardization over the last dimension followed by the affine
// gamma/beta map. Variance is the population variance with eps inside the
// square root, so constant rows map to beta.
template <typename T>
TensorT<T> layer_norm(TapeT<T>* tape, TensorT<T> x, TensorT<T> gamma, TensorT<T> beta, T eps = T(1e-6)) {
    int64_t d = x.dim(x.ndim() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        fail(Error::Kind::shape, "layer_norm: gamma/beta length must match last dim " + std::to_string(d));
    if (eps <= T(0)) fail(Error::Kind::usage, "layer_norm: eps must be positive");
    int64_t rows = x.numel() / d;
    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    TensorT<T> out = TensorT<T>::zeros(x.shape(), rg);

    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * d));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const T* xv = x.value().data();
    const T* gv = gamma.value().data();
    const T* bv = beta.value().data();
    T* ov = out.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= T(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            T c = row[j] - mean;
            var += c * c;
        }
        var /= T(d);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        T* hrow = xhat->data() + r * d;
        T* orow = ov + r * d;
        for (int64_t j = 0; j < d; ++j) {
            hrow[j] = (row[j] - mean) * is;
            orow[j] = gv[j] * hrow[j] + bv[j];
        }
    }
    if (tape && rg) {
        tape->record([x, gamma, beta, out, xhat, inv_std, rows, d]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            const T* gv2 = gamma.value().data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* grow = g + r * d;
                const T* hrow = xhat->data() + r * d;
                if (gamma.requires_grad()) {
                    auto& gg = gamma.ensure_grad();
                    for (int64_t j = 0; j < d; ++j) gg[j] += grow[j] * hrow[j];
                }
                if (beta.requires_grad()) {
                    auto& gb = beta.ensure_grad();
                    for (int64_t j = 0; j < d; ++j) gb[j] += grow[j];
                }
                if (x.requires_grad()) {
                    T is = (*inv_std)[static_cast<size_t>(r)];
                    T mean_gh = T(0), mean_ghh = T(0);
                    for (int64_t j = 0; j < d; ++j) {
                        T gh = grow[j] * gv2[j];
                        mean_gh += gh;
                        mean_ghh += gh * hrow[j];
                    }
                    mean_gh /= T(d);
                    mean_ghh /= T(d);
                    T* gx = x.ensure_grad().data() + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        T gh = grow[j] * gv2[j];
                        gx[j] += is * (gh - mean_gh - hrow[j] * mean_ghh);
                    }
                }
            }
        });
    }
    return out;
}

enum class GeluKind { erf, tanh_approx };

template <typename T>
TensorT<T> gelu(TapeT<T>* tape, TensorT<T> x, GeluKind kind = GeluKind::erf) {
    TensorT<T> out = TensorT<T>::zeros(x.shape(), x.requires_grad());
    const auto& xv = x.value();
    auto& ov = out.value();
    if (kind == GeluKind::erf) {
        const T inv_sqrt2 = T(0.7071067811865475244L);
        for (size_t i = 0; i < ov.size(); ++i)
            ov[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
    } else {
        const T c = T(0.7978845608028653559L); // sqrt(2/pi)
        for (size_t i = 0; i < ov.size(); ++i) {
            T u = c * (xv[i] + T(0.044715) * xv[i] * xv[i] * xv[i]);
            ov[i] = T(0.5) * xv[i] * (T(1) + std::tanh(u));
        }
    }
    if (tape && out.requires_grad()) {
        tape->record([x, out, kind]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad();
            const auto& xv2 = x.value();
            auto& gx = x.ensure_grad();
            if (kind == GeluKind::erf) {
                const T inv_sqrt2 = T(0.7071067811865475244L);
                const T inv_sqrt2pi = T(0.3989422804014326779L);
                for (size_t i = 0; i < g.size(); ++i) {
                    T cdf = T(0.5) * (T(1) + std::erf(xv2[i] * inv_sqrt2));
                    T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xv2[i] * xv2[i]);
                    gx[i] += g[i] * (cdf + xv2[i] * pdf);
                }
            } else {
                const T c = T(0.7978845608028653559L);
                for (size_t i = 0; i < g.size(); ++i) {
                    T xi = xv2[i];
                    T u = c * (xi + T(0.044715) * xi * xi * xi);
                    T th = std::tanh(u);
                    T sech2 = T(1) - th * th;
                    T du = c * (T(1) + T(3) * T(0.044715) * xi * xi);
                    gx[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * xi * sech2 * du);
                }
            }
        });
    }
    return out;
}

// Mean over the batch of -log softmax(logits)[label]. Backward is
// (softmax - onehot) / batch.
template <typename T>
TensorT<T> cross_entropy_mean(TapeT<T>* tape, TensorT<T> logits, const std::vector<int>& labels,
                              T smoothing = T(0)) {
    if (logits.ndim() != 2 || logits.dim(0) != static_cast<int64_t>(labels.size()))
        fail(Error::Kind::shape, "cross_entropy_mean: logits " + TensorT<T>::shape_str(logits.shape()) +
                                     " vs " + std::to_string(labels.size()) + " labels");
    if (smoothing < T(0) || smoothing >= T(1))
        fail(Error::Kind::usage, "cross_entropy_mean: smoothing " + std::to_string(smoothing) +
                                     " outside [0,1)");
    int64_t b = logits.dim(0), c = logits.dim(1);
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= c)
            fail(Error::Kind::input, "cross_entropy_mean: label " + std::to_string(labels[i]) +
                                         " out of range [0," + std::to_string(c) + ") at index " +
                                         std::to_string(i));
    // target distribution q = (1-smoothing)*onehot + smoothing/c
    T off = smoothing / static_cast<T>(c);
    T on = T(1) - smoothing + off;
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(b * c));
    const T* lv = logits.value().data();
    T loss = T(0);
    for (int64_t i = 0; i < b; ++i) {
        const T* row = lv + i * c;
        T* prow = probs->data() + i * c;
        T mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int64_t j = 0; j < c; ++j) prow[j] /= denom;
        int lbl = labels[static_cast<size_t>(i)];
        if (off > T(0))
            for (int64_t j = 0; j < c; ++j) loss -= (j == lbl ? on : off) * std::log(prow[j]);
        else
            loss -= std::log(prow[lbl]);
    }
    loss /= T(b);
    TensorT<T> out = TensorT<T>::from({1}, {loss}, logits.requires_grad());
    if (tape && out.requires_grad()) {
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        tape->record([logits, out, probs, labels_copy, b, c, on, off]() mutable {
            if (!out.has_grad()) return;
            T g = out.grad()[0] / T(b);
            T* gl = logits.ensure_grad().data();
            for (int64_t i = 0; i < b; ++i) {
                const T* prow = probs->data() + i * c;
                T* grow = gl + i * c;
                int lbl = (*labels_copy)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < c; ++j)
                    grow[j] += g * (prow[j] - (j == lbl ? on : off));
            }
        });
    }
    return out;
}

// x[R x d] + broadcast v[d] over rows.
template <typename T>
TensorT<T> add_rowvec(TapeT<T>* tape, TensorT<T> x, TensorT<T> v) {
    int64_t d = x.dim(x.ndim() - 1);
    if (v.numel() != d)
        fail(Error::Kind::shape, "add_rowvec: vector length " + std::to_string(v.numel()) +
                                     " vs last dim " + std::to_string(d));
    int64_t rows = x.numel() / d;
    TensorT<T> out = TensorT<T>::zeros(x.shape(), x.requires_grad() || v.requires_grad());
    const T* xv = x.value().data();
    const T* vv = v.value().data();
    T* ov = out.value().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + vv[j];
    if (tape && out.requires_grad()) {
        tape->record([x, v, out, rows, d]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            if (x.requires_grad()) {
                T* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < rows * d; ++i) gx[i] += g[i];
            }
            if (v.requires_grad()) {
                T* gv = v.ensure_grad().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gv[j] += g[r * d + j];
            }
        });
    }
    return out;
}

// Columns [lo, hi) of a 2-D tensor.
template <typename T>
TensorT<T> slice_cols(TapeT<T>* tape, TensorT<T> x, int64_t lo, int64_t hi) {
    if (x.ndim() != 2 || lo < 0 || hi > x.dim(1) || lo >= hi)
        fail(Error::Kind::shape, "slice_cols: bad range [" + std::to_string(lo) + "," + std::to_string(hi) +
                                     ") for " + TensorT<T>::shape_str(x.shape()));
    int64_t r = x.dim(0), d = x.dim(1), w = hi - lo;
    TensorT<T> out = TensorT<T>::zeros({r, w}, x.requires_grad());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < w; ++j) ov[i * w + j] = xv[i * d + lo + j];
    if (tape && out.requires_grad()) {
        tape->record([x, out, r, d, w, lo]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            T* gx = x.ensure_grad().data();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < w; ++j) gx[i * d + lo + j] += g[i * w + j];
        });
    }
    return out;
}

// [b*N x D] -> [b*H x N x dh], grouping columns by head. Pure permutation.
template <typename T>
TensorT<T> split_heads(TapeT<T>* tape, TensorT<T> x, int64_t b, int64_t n, int64_t h) {
    if (x.ndim() != 2 || x.dim(0) != b * n || x.dim(1) % h != 0)
        fail(Error::Kind::shape, "split_heads: " + TensorT<T>::shape_str(x.shape()) + " with b=" +
                                     std::to_string(b) + " n=" + std::to_string(n) + " h=" + std::to_string(h));
    int64_t d = x.dim(1), dh = d / h;
    TensorT<T> out = TensorT<T>::zeros({b * h, n, dh}, x.requires_grad());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < h; ++hi)
            for (int64_t t = 0; t < n; ++t) {
                const T* src = xv + (bi * n + t) * d + hi * dh;
                T* dst = ov + ((bi * h + hi) * n + t) * dh;
                for (int64_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
    if (tape && out.requires_grad()) {
        tape->record([x, out, b, n, h, d, dh]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            T* gx = x.ensure_grad().data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t hi = 0; hi < h; ++hi)
                    for (int64_t t = 0; t < n; ++t) {
                        const T* src = g + ((bi * h + hi) * n + t) * dh;
                        T* dst = gx + (bi * n + t) * d + hi * dh;
                        for (int64_t j = 0; j < dh; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

// Inverse of split_heads: [b*H x N x dh] -> [b*N x D].
template <typename T>
TensorT<T> merge_heads(TapeT<T>* tape, TensorT<T> x, int64_t b, int64_t n, int64_t h) {
    if (x.ndim() != 3 || x.dim(0) != b * h || x.dim(1) != n)
        fail(Error::Kind::shape, "merge_heads: " + TensorT<T>::shape_str(x.shape()) + " with b=" +
                                     std::to_string(b) + " n=" + std::to_string(n) + " h=" + std::to_string(h));
    int64_t dh = x.dim(2), d = h * dh;
    TensorT<T> out = TensorT<T>::zeros({b * n, d}, x.requires_grad());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < h; ++hi)
            for (int64_t t = 0; t < n; ++t) {
                const T* src = xv + ((bi * h + hi) * n + t) * dh;
                T* dst = ov + (bi * n + t) * d + hi * dh;
                for (int64_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
    if (tape && out.requires_grad()) {
        tape->record([x, out, b, n, h, d, dh]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            T* gx = x.ensure_grad().data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t hi = 0; hi < h; ++hi)
                    for (int64_t t = 0; t < n; ++t) {
                        const T* src = g + (bi * n + t) * d + hi * dh;
                        T* dst = gx + ((bi * h + hi) * n + t) * dh;
                        for (int64_t j = 0; j < dh; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

// logits[b*H x N x N] + bias[h] broadcast over the batch, h = index % H.
// Gradients for bias h accumulate over all samples that used it.
template <typename T>
TensorT<T> add_head_bias(TapeT<T>* tape, TensorT<T> logits, std::vector<TensorT<T>> biases) {
    int64_t bh = logits.dim(0), n = logits.dim(1);
    int64_t h = static_cast<int64_t>(biases.size());
    if (logits.ndim() != 3 || logits.dim(2) != n || bh % h != 0)
        fail(Error::Kind::shape, "add_head_bias: logits " + TensorT<T>::shape_str(logits.shape()) +
                                     " with " + std::to_string(h) + " head biases");
    bool rg = logits.requires_grad();
    for (auto& bt : biases) {
        if (bt.numel() != n * n)
            fail(Error::Kind::shape, "add_head_bias: bias " + TensorT<T>::shape_str(bt.shape()) +
                                         " does not match attention size " + std::to_string(n));
        rg = rg || bt.requires_grad();
    }
    TensorT<T> out = TensorT<T>::zeros(logits.shape(), rg);
    const T* lv = logits.value().data();
    T* ov = out.value().data();
    for (int64_t i = 0; i < bh; ++i) {
        const T* bv = biases[static_cast<size_t>(i % h)].value().data();
        const T* src = lv + i * n * n;
        T* dst = ov + i * n * n;
        for (int64_t j = 0; j < n * n; ++j) dst[j] = src[j] + bv[j];
    }
    if (tape && rg) {
        tape->record([logits, biases, out, bh, n, h]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            if (logits.requires_grad()) {
                T* gl = logits.ensure_grad().data();
                for (int64_t i = 0; i < bh * n * n; ++i) gl[i] += g[i];
            }
            for (int64_t hi = 0; hi < h; ++hi) {
                auto& bt = biases[static_cast<size_t>(hi)];
                if (!bt.requires_grad()) continue;
                T* gb = bt.ensure_grad().data();
                for (int64_t i = hi; i < bh; i += h) {
                    const T* src = g + i * n * n;
                    for (int64_t j = 0; j < n * n; ++j) gb[j] += src[j];
                }
            }
        });
    }
    return out;
}

// out[i] = table.flat[index[i]]. Backward scatter-adds, so table entries
// shared by many positions sum their gradients.
template <typename T>
TensorT<T> gather_table(TapeT<T>* tape, TensorT<T> table,
                        std::shared_ptr<const std::vector<int32_t>> index,
                        std::vector<int64_t> out_shape) {
    int64_t n = TensorT<T>::numel_of(out_shape);
    if (static_cast<int64_t>(index->size()) != n)
        fail(Error::Kind::shape, "gather_table: index size " + std::to_string(index->size()) +
                                     " vs output " + TensorT<T>::shape_str(out_shape));
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape), table.requires_grad());
    const T* tv = table.value().data();
    T* ov = out.value().data();
    int64_t tn = table.numel();
    for (int64_t i = 0; i < n; ++i) {
        int32_t idx = (*index)[static_cast<size_t>(i)];
        if (idx < 0 || idx >= tn)
            fail(Error::Kind::input, "gather_table: index " + std::to_string(idx) + " out of range");
        ov[i] = tv[idx];
    }
    if (tape && out.requires_grad()) {
        tape->record([table, out, index, n]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            T* gt = table.ensure_grad().data();
            for (int64_t i = 0; i < n; ++i) gt[(*index)[static_cast<size_t>(i)]] += g[i];
        });
    }
    return out;
}

// Embeds a spatial [S x S] bias into [S+1 x S+1] with the class token at
// index 0; its row and column stay exactly zero and carry no gradient.
template <typename T>
TensorT<T> pad_class_bias(TapeT<T>* tape, TensorT<T> spatial) {
    if (spatial.ndim() != 2 || spatial.dim(0) != spatial.dim(1))
        fail(Error::Kind::shape, "pad_class_bias: expected square matrix, got " +
                                     TensorT<T>::shape_str(spatial.shape()));
    int64_t s = spatial.dim(0), t = s + 1;
    TensorT<T> out = TensorT<T>::zeros({t, t}, spatial.requires_grad());
    const T* sv = spatial.value().data();
    T* ov = out.value().data();
    for (int64_t i = 0; i < s; ++i)
        for (int64_t j = 0; j < s; ++j) ov[(i + 1) * t + (j + 1)] = sv[i * s + j];
    if (tape && out.requires_grad()) {
        tape->record([spatial, out, s, t]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            T* gs = spatial.ensure_grad().data();
            for (int64_t i = 0; i < s; ++i)
                for (int64_t j = 0; j < s; ++j) gs[i * s + j] += g[(i + 1) * t + (j + 1)];
        });
    }
    return out;
}

// Inserts the class token as row 0 of every sample block:
// patches[b*S x D] -> [b*(S+1) x D].
template <typename T>
TensorT<T> prepend_class(TapeT<T>* tape, TensorT<T> patches, TensorT<T> cls, int64_t b) {
    int64_t d = patches.dim(1);
    if (patches.dim(0) % b != 0 || cls.numel() != d)
        fail(Error::Kind::shape, "prepend_class: patches " + TensorT<T>::shape_str(patches.shape()) +
                                     " b=" + std::to_string(b) + " cls " + TensorT<T>::shape_str(cls.shape()));
    int64_t s = patches.dim(0) / b, n = s + 1;
    TensorT<T> out = TensorT<T>::zeros({b * n, d}, patches.requires_grad() || cls.requires_grad());
    const T* pv = patches.value().data();
    const T* cv = cls.value().data();
    T* ov = out.value().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        T* block = ov + bi * n * d;
        for (int64_t j = 0; j < d; ++j) block[j] = cv[j];
        const T* src = pv + bi * s * d;
        for (int64_t i = 0; i < s * d; ++i) block[d + i] = src[i];
    }
    if (tape && out.requires_grad()) {
        tape->record([patches, cls, out, b, s, n, d]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            if (cls.requires_grad()) {
                T* gc = cls.ensure_grad().data();
                for (int64_t bi = 0; bi < b; ++bi) {
                    const T* row = g + bi * n * d;
                    for (int64_t j = 0; j < d; ++j) gc[j] += row[j];
                }
            }
            if (patches.requires_grad()) {
                T* gp = patches.ensure_grad().data();
                for (int64_t bi = 0; bi < b; ++bi) {
                    const T* src = g + bi * n * d + d;
                    T* dst = gp + bi * s * d;
                    for (int64_t i = 0; i < s * d; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

// x[b*N x D] + pos[N x D] tiled over the batch.
template <typename T>
TensorT<T> add_pos(TapeT<T>* tape, TensorT<T> x, TensorT<T> pos, int64_t b) {
    int64_t d = x.dim(1);
    if (x.dim(0) % b != 0 || pos.numel() != (x.dim(0) / b) * d)
        fail(Error::Kind::shape, "add_pos: x " + TensorT<T>::shape_str(x.shape()) + " pos " +
                                     TensorT<T>::shape_str(pos.shape()) + " b=" + std::to_string(b));
    int64_t n = x.dim(0) / b;
    TensorT<T> out = TensorT<T>::zeros(x.shape(), x.requires_grad() || pos.requires_grad());
    const T* xv = x.value().data();
    const T* pv = pos.value().data();
    T* ov = out.value().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < n * d; ++i) ov[bi * n * d + i] = xv[bi * n * d + i] + pv[i];
    if (tape && out.requires_grad()) {
        tape->record([x, pos, out, b, n, d]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            if (x.requires_grad()) {
                T* gx = x.ensure_grad().data();
                for (int64_t i = 0; i < b * n * d; ++i) gx[i] += g[i];
            }
            if (pos.requires_grad()) {
                T* gp = pos.ensure_grad().data();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t i = 0; i < n * d; ++i) gp[i] += g[bi * n * d + i];
            }
        });
    }
    return out;
}

// Row 0 of every sample block: x[b*N x D] -> [b x D].
template <typename T>
TensorT<T> take_class_rows(TapeT<T>* tape, TensorT<T> x, int64_t b) {
    int64_t d = x.dim(1);
    if (x.dim(0) % b != 0)
        fail(Error::Kind::shape, "take_class_rows: rows " + std::to_string(x.dim(0)) +
                                     " not divisible by b=" + std::to_string(b));
    int64_t n = x.dim(0) / b;
    TensorT<T> out = TensorT<T>::zeros({b, d}, x.requires_grad());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < d; ++j) ov[bi * d + j] = xv[bi * n * d + j];
    if (tape && out.requires_grad()) {
        tape->record([x, out, b, n, d]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad().data();
            T* gx = x.ensure_grad().data();
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t j = 0; j < d; ++j) gx[bi * n * d + j] += g[bi * d + j];
        });
    }
    return out;
}

} // namespace vitp
