#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vitp/errors.hpp"

namespace vitp {

// Dense row-major tensor with an optional gradient buffer. TensorT is a
// cheap handle: copies alias the same storage, so parameters can be held
// by both the model and the optimizer. Compute type T is float in the
// training path; tests instantiate double to tighten finite-difference
// oracles.
template <typename T>
class TensorT {
public:
    struct Storage {
        std::vector<int64_t> shape;
        std::vector<T> value;
        std::vector<T> grad; // empty until ensure_grad()
        bool requires_grad = false;
    };

    TensorT() = default;

    static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        TensorT t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = std::move(shape);
        t.s_->value.assign(static_cast<size_t>(numel_of(t.s_->shape)), T(0));
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static TensorT full(std::vector<int64_t> shape, T v, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        std::fill(t.s_->value.begin(), t.s_->value.end(), v);
        return t;
    }

    static TensorT from(std::vector<int64_t> shape, std::vector<T> data, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            fail(Error::Kind::shape, "tensor data length " + std::to_string(data.size()) +
                                         " does not match shape " + shape_str(shape));
        TensorT t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = std::move(shape);
        t.s_->value = std::move(data);
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return s_ != nullptr; }
    const std::vector<int64_t>& shape() const { return s_->shape; }
    int ndim() const { return static_cast<int>(s_->shape.size()); }
    int64_t dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(s_->value.size()); }

    std::vector<T>& value() { return s_->value; }
    const std::vector<T>& value() const { return s_->value; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool b) { s_->requires_grad = b; }
    bool has_grad() const { return !s_->grad.empty(); }

    // Allocates (zero-filled) the gradient buffer on first use.
    std::vector<T>& ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
        return s_->grad;
    }

    std::vector<T>& grad() {
        if (s_->grad.empty()) fail(Error::Kind::usage, "gradient not populated");
        return s_->grad;
    }
    const std::vector<T>& grad() const {
        if (s_->grad.empty()) fail(Error::Kind::usage, "gradient not populated");
        return s_->grad;
    }

    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) fail(Error::Kind::usage, "item() on non-scalar tensor " + shape_str(s_->shape));
        return s_->value[0];
    }

    // Deep copy (value only, fresh grad slot).
    TensorT clone() const {
        TensorT t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = s_->shape;
        t.s_->value = s_->value;
        t.s_->requires_grad = s_->requires_grad;
        return t;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> v(s_->value.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(s_->value[i]);
        return TensorT<U>::from(s_->shape, std::move(v), s_->requires_grad);
    }

    bool same_storage(const TensorT& o) const { return s_ == o.s_; }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d <= 0) fail(Error::Kind::shape, "non-positive extent in shape " + shape_str(shape));
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int64_t>& shape) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

private:
    std::shared_ptr<Storage> s_;
};

// Execution-ordered record of differentiable operations. Ops push their
// backward closure as they run, so the record is topologically sorted by
// construction; backward() replays it once in reverse. Single-threaded;
// independent tapes may live on different threads.
template <typename T>
class TapeT {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and visits every recorded op exactly once,
    // newest first. Grad buffers accumulate additively across fan-out.
    void backward(TensorT<T> loss) {
        if (!loss.defined() || loss.numel() != 1)
            fail(Error::Kind::usage, "backward requires a scalar loss tensor");
        loss.ensure_grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

} // namespace vitp
